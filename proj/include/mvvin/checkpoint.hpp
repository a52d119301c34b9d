#pragma once

// Checkpoint persistence: theta, phi, optimizer moments, resolved config and
// its hash, and the training progress counters. JSON with full double
// round-trip precision, so identical state produces identical bytes.

#include <fstream>
#include <string>

#include "json.hpp"
#include "mvvin/config.hpp"
#include "mvvin/meta.hpp"

namespace mvvin {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig cfg;
  ParamSet theta, phi;
  Adam adam;  // shared moments for the theta+phi union
  std::int64_t outer_step = 0;
};

inline nlohmann::json paramset_to_json(const ParamSet& ps) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : ps) j[name] = {{"shape", t->shape}, {"data", t->data}};
  return j;
}

inline ParamSet paramset_from_json(const nlohmann::json& j) {
  ParamSet ps;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto shape = it.value().at("shape").get<std::vector<int>>();
    auto data = it.value().at("data").get<std::vector<double>>();
    ps.add(it.key(), tensor(shape, std::move(data)));
  }
  return ps;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json moments = nlohmann::json::object();
  for (const auto& [k, v] : ck.adam.m) moments["m"][k] = v;
  for (const auto& [k, v] : ck.adam.v) moments["v"][k] = v;
  if (!moments.contains("m")) moments["m"] = nlohmann::json::object();
  if (!moments.contains("v")) moments["v"] = nlohmann::json::object();
  return nlohmann::json{{"version", kCheckpointVersion},
                        {"config", to_json(ck.cfg)},
                        {"config_hash", config_hash(ck.cfg)},
                        {"outer_step", ck.outer_step},
                        {"adam",
                         {{"lr", ck.adam.lr},
                          {"beta1", ck.adam.beta1},
                          {"beta2", ck.adam.beta2},
                          {"eps", ck.adam.eps},
                          {"step_count", ck.adam.step_count},
                          {"moments", moments}}},
                        {"theta", paramset_to_json(ck.theta)},
                        {"phi", paramset_to_json(ck.phi)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version");
    ck.cfg = config_from_json(j.at("config"));
    if (j.at("config_hash").get<std::uint64_t>() != config_hash(ck.cfg))
      throw CheckpointError("checkpoint config hash mismatch");
    ck.outer_step = j.at("outer_step").get<std::int64_t>();
    const auto& a = j.at("adam");
    ck.adam.lr = a.at("lr").get<double>();
    ck.adam.beta1 = a.at("beta1").get<double>();
    ck.adam.beta2 = a.at("beta2").get<double>();
    ck.adam.eps = a.at("eps").get<double>();
    ck.adam.step_count = a.at("step_count").get<std::int64_t>();
    for (auto it = a.at("moments").at("m").begin(); it != a.at("moments").at("m").end(); ++it)
      ck.adam.m[it.key()] = it.value().get<std::vector<double>>();
    for (auto it = a.at("moments").at("v").begin(); it != a.at("moments").at("v").end(); ++it)
      ck.adam.v[it.key()] = it.value().get<std::vector<double>>();
    ck.theta = paramset_from_json(j.at("theta"));
    ck.phi = paramset_from_json(j.at("phi"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw CheckpointError("cannot write checkpoint " + path);
  f << checkpoint_to_json(ck).dump(1) << '\n';
  if (!f) throw CheckpointError("checkpoint write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// dims compatibility: the parameters a config would construct must match the
// checkpoint's stored shapes exactly
inline void check_checkpoint_compat(const Checkpoint& ck, const RunConfig& cfg) {
  ParamSet ref_theta = init_theta(cfg, 0);
  ParamSet ref_phi = init_phi(cfg, 0);
  auto check = [](const ParamSet& ref, const ParamSet& got, const char* which) {
    if (ref.count() != got.count())
      throw CheckpointError(std::string(which) + ": parameter set mismatch with config");
    for (const auto& [name, t] : ref) {
      if (!got.has(name))
        throw CheckpointError(std::string(which) + ": missing parameter " + name);
      if (got.at(name)->shape != t->shape)
        throw CheckpointError(std::string(which) + ": shape mismatch for " + name + " (" +
                              shape_str(got.at(name)->shape) + " vs " + shape_str(t->shape) + ")");
    }
  };
  check(ref_theta, ck.theta, "theta");
  check(ref_phi, ck.phi, "phi");
}

}  // namespace mvvin
