#pragma once

// Run configuration: versioned JSON schema, strict unknown-key rejection,
// dotted-path overrides, and the two bundled presets.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvvin/rng.hpp"
#include "mvvin/tensor.hpp"

namespace mvvin {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct ConvLayerCfg {
  int out_channels = 0;
  int kh = 0, kw = 0;
  int sh = 1, sw = 1;
};

struct EnvBlock {
  std::string scene_pack = "data/scenes";
  double fov_deg = 90.0;
  int depth_rows = 24;
  int depth_cols = 32;
  int max_steps = 100;
};

struct ModalityBlock {
  bool rgb = true;
  bool depth = false;
  bool segmentation = false;
  bool region_feature = false;
  bool region_proposal = false;

  int rgb_channels_in = 8;
  int rgb_channels_out = 8;
  std::vector<ConvLayerCfg> depth_chain = {{8, 3, 3, 3, 4}, {8, 2, 2, 1, 1}};
  int seg_dim_in = 16;
  int seg_dim_out = 8;
  int region_feature_dim_in = 16;
  int region_feature_dim_out = 8;
  int attention_hidden = 32;
  int region_proposal_dim_out = 10;
  int target_dim_in = 300;
  int target_dim_out = 8;
  int action_dim_out = 10;
};

struct ModelBlock {
  int grid_h = 7;
  int grid_w = 7;
  int aggregate_channels = 8;
  int lstm_hidden = 64;
};

struct MetaBlock {
  int k = 6;
  double inner_lr = 1e-2;          // psi
  double outer_lr = 1e-3;          // Adam rate
  double gamma = 0.99;
  double entropy_beta = 0.01;
  double reward_success = 5.0;
  double reward_step = -0.01;
  std::string phi_objective = "imitate";  // imitate | meta
  bool readapt_every_k = true;
  bool adaptation_enabled = true;
  int outer_steps = 100;
  int tasks_per_outer_step = 4;
  int workers = 1;
  int phi_channels = 8;
  int validate_every = 0;          // 0 = no periodic validation
  int validate_episodes = 40;
};

struct EvalBlock {
  int episodes_per_scene = 50;
  std::string spl_variant = "standard";  // standard | paper_literal
  bool adapt = true;
  int workers = 1;
};

struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;
  EnvBlock env;
  ModalityBlock modalities;
  ModelBlock model;
  MetaBlock meta;
  EvalBlock eval;

  int embedding_dim() const { return model.aggregate_channels * model.grid_h * model.grid_w; }
};

// ---------------------------------------------------------------------------
// json <-> struct

namespace detail {

inline void expect_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                        const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json chain = nlohmann::json::array();
  for (const auto& l : c.modalities.depth_chain)
    chain.push_back({{"out_channels", l.out_channels},
                     {"kh", l.kh},
                     {"kw", l.kw},
                     {"sh", l.sh},
                     {"sw", l.sw}});
  return nlohmann::json{
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"env",
       {{"scene_pack", c.env.scene_pack},
        {"fov_deg", c.env.fov_deg},
        {"depth_rows", c.env.depth_rows},
        {"depth_cols", c.env.depth_cols},
        {"max_steps", c.env.max_steps}}},
      {"modalities",
       {{"rgb", c.modalities.rgb},
        {"depth", c.modalities.depth},
        {"segmentation", c.modalities.segmentation},
        {"region_feature", c.modalities.region_feature},
        {"region_proposal", c.modalities.region_proposal},
        {"rgb_channels_in", c.modalities.rgb_channels_in},
        {"rgb_channels_out", c.modalities.rgb_channels_out},
        {"depth_chain", chain},
        {"seg_dim_in", c.modalities.seg_dim_in},
        {"seg_dim_out", c.modalities.seg_dim_out},
        {"region_feature_dim_in", c.modalities.region_feature_dim_in},
        {"region_feature_dim_out", c.modalities.region_feature_dim_out},
        {"attention_hidden", c.modalities.attention_hidden},
        {"region_proposal_dim_out", c.modalities.region_proposal_dim_out},
        {"target_dim_in", c.modalities.target_dim_in},
        {"target_dim_out", c.modalities.target_dim_out},
        {"action_dim_out", c.modalities.action_dim_out}}},
      {"model",
       {{"grid_h", c.model.grid_h},
        {"grid_w", c.model.grid_w},
        {"aggregate_channels", c.model.aggregate_channels},
        {"lstm_hidden", c.model.lstm_hidden}}},
      {"meta",
       {{"k", c.meta.k},
        {"inner_lr", c.meta.inner_lr},
        {"outer_lr", c.meta.outer_lr},
        {"gamma", c.meta.gamma},
        {"entropy_beta", c.meta.entropy_beta},
        {"reward_success", c.meta.reward_success},
        {"reward_step", c.meta.reward_step},
        {"phi_objective", c.meta.phi_objective},
        {"readapt_every_k", c.meta.readapt_every_k},
        {"adaptation_enabled", c.meta.adaptation_enabled},
        {"outer_steps", c.meta.outer_steps},
        {"tasks_per_outer_step", c.meta.tasks_per_outer_step},
        {"workers", c.meta.workers},
        {"phi_channels", c.meta.phi_channels},
        {"validate_every", c.meta.validate_every},
        {"validate_episodes", c.meta.validate_episodes}}},
      {"eval",
       {{"episodes_per_scene", c.eval.episodes_per_scene},
        {"spl_variant", c.eval.spl_variant},
        {"adapt", c.eval.adapt},
        {"workers", c.eval.workers}}}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::expect_keys;
  using detail::get_if;
  RunConfig c;
  expect_keys(j, {"schema_version", "seed", "env", "modalities", "model", "meta", "eval"},
              "config");
  get_if(j, "schema_version", c.schema_version, "config");
  if (c.schema_version != 1)
    throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
  get_if(j, "seed", c.seed, "config");
  if (j.contains("env")) {
    const auto& e = j.at("env");
    expect_keys(e, {"scene_pack", "fov_deg", "depth_rows", "depth_cols", "max_steps"},
                "config.env");
    get_if(e, "scene_pack", c.env.scene_pack, "config.env");
    get_if(e, "fov_deg", c.env.fov_deg, "config.env");
    get_if(e, "depth_rows", c.env.depth_rows, "config.env");
    get_if(e, "depth_cols", c.env.depth_cols, "config.env");
    get_if(e, "max_steps", c.env.max_steps, "config.env");
  }
  if (j.contains("modalities")) {
    const auto& m = j.at("modalities");
    expect_keys(m,
                {"rgb", "depth", "segmentation", "region_feature", "region_proposal",
                 "rgb_channels_in", "rgb_channels_out", "depth_chain", "seg_dim_in",
                 "seg_dim_out", "region_feature_dim_in", "region_feature_dim_out",
                 "attention_hidden", "region_proposal_dim_out", "target_dim_in",
                 "target_dim_out", "action_dim_out"},
                "config.modalities");
    auto& mm = c.modalities;
    get_if(m, "rgb", mm.rgb, "config.modalities");
    get_if(m, "depth", mm.depth, "config.modalities");
    get_if(m, "segmentation", mm.segmentation, "config.modalities");
    get_if(m, "region_feature", mm.region_feature, "config.modalities");
    get_if(m, "region_proposal", mm.region_proposal, "config.modalities");
    get_if(m, "rgb_channels_in", mm.rgb_channels_in, "config.modalities");
    get_if(m, "rgb_channels_out", mm.rgb_channels_out, "config.modalities");
    if (m.contains("depth_chain")) {
      mm.depth_chain.clear();
      for (const auto& lj : m.at("depth_chain")) {
        expect_keys(lj, {"out_channels", "kh", "kw", "sh", "sw"}, "config.modalities.depth_chain");
        ConvLayerCfg l;
        get_if(lj, "out_channels", l.out_channels, "depth_chain");
        get_if(lj, "kh", l.kh, "depth_chain");
        get_if(lj, "kw", l.kw, "depth_chain");
        get_if(lj, "sh", l.sh, "depth_chain");
        get_if(lj, "sw", l.sw, "depth_chain");
        mm.depth_chain.push_back(l);
      }
    }
    get_if(m, "seg_dim_in", mm.seg_dim_in, "config.modalities");
    get_if(m, "seg_dim_out", mm.seg_dim_out, "config.modalities");
    get_if(m, "region_feature_dim_in", mm.region_feature_dim_in, "config.modalities");
    get_if(m, "region_feature_dim_out", mm.region_feature_dim_out, "config.modalities");
    get_if(m, "attention_hidden", mm.attention_hidden, "config.modalities");
    get_if(m, "region_proposal_dim_out", mm.region_proposal_dim_out, "config.modalities");
    get_if(m, "target_dim_in", mm.target_dim_in, "config.modalities");
    get_if(m, "target_dim_out", mm.target_dim_out, "config.modalities");
    get_if(m, "action_dim_out", mm.action_dim_out, "config.modalities");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    expect_keys(m, {"grid_h", "grid_w", "aggregate_channels", "lstm_hidden"}, "config.model");
    get_if(m, "grid_h", c.model.grid_h, "config.model");
    get_if(m, "grid_w", c.model.grid_w, "config.model");
    get_if(m, "aggregate_channels", c.model.aggregate_channels, "config.model");
    get_if(m, "lstm_hidden", c.model.lstm_hidden, "config.model");
  }
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    expect_keys(m,
                {"k", "inner_lr", "outer_lr", "gamma", "entropy_beta", "reward_success",
                 "reward_step", "phi_objective", "readapt_every_k", "adaptation_enabled",
                 "outer_steps", "tasks_per_outer_step", "workers", "phi_channels",
                 "validate_every", "validate_episodes"},
                "config.meta");
    auto& mb = c.meta;
    get_if(m, "k", mb.k, "config.meta");
    get_if(m, "inner_lr", mb.inner_lr, "config.meta");
    get_if(m, "outer_lr", mb.outer_lr, "config.meta");
    get_if(m, "gamma", mb.gamma, "config.meta");
    get_if(m, "entropy_beta", mb.entropy_beta, "config.meta");
    get_if(m, "reward_success", mb.reward_success, "config.meta");
    get_if(m, "reward_step", mb.reward_step, "config.meta");
    get_if(m, "phi_objective", mb.phi_objective, "config.meta");
    get_if(m, "readapt_every_k", mb.readapt_every_k, "config.meta");
    get_if(m, "adaptation_enabled", mb.adaptation_enabled, "config.meta");
    get_if(m, "outer_steps", mb.outer_steps, "config.meta");
    get_if(m, "tasks_per_outer_step", mb.tasks_per_outer_step, "config.meta");
    get_if(m, "workers", mb.workers, "config.meta");
    get_if(m, "phi_channels", mb.phi_channels, "config.meta");
    get_if(m, "validate_every", mb.validate_every, "config.meta");
    get_if(m, "validate_episodes", mb.validate_episodes, "config.meta");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    expect_keys(e, {"episodes_per_scene", "spl_variant", "adapt", "workers"}, "config.eval");
    get_if(e, "episodes_per_scene", c.eval.episodes_per_scene, "config.eval");
    get_if(e, "spl_variant", c.eval.spl_variant, "config.eval");
    get_if(e, "adapt", c.eval.adapt, "config.eval");
    get_if(e, "workers", c.eval.workers, "config.eval");
  }

  // validation
  if (c.meta.k < 1) throw ConfigError("config.meta.k: must be >= 1");
  if (c.meta.inner_lr < 0) throw ConfigError("config.meta.inner_lr: must be >= 0");
  if (c.meta.gamma <= 0 || c.meta.gamma > 1)
    throw ConfigError("config.meta.gamma: must be in (0, 1]");
  if (c.meta.phi_objective != "imitate" && c.meta.phi_objective != "meta")
    throw ConfigError("config.meta.phi_objective: must be \"imitate\" or \"meta\"");
  if (c.eval.spl_variant != "standard" && c.eval.spl_variant != "paper_literal")
    throw ConfigError("config.eval.spl_variant: must be \"standard\" or \"paper_literal\"");
  if (c.env.max_steps < 1) throw ConfigError("config.env.max_steps: must be >= 1");
  if (c.meta.workers < 1 || c.eval.workers < 1) throw ConfigError("config: workers must be >= 1");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

// --set a.b.c value; values parsed as json when possible, else as string
inline void apply_override(nlohmann::json& j, const std::string& dotted,
                           const std::string& value) {
  nlohmann::json* cur = &j;
  size_t pos = 0;
  while (true) {
    const size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw ConfigError("bad override path: " + dotted);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*cur)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

inline std::uint64_t config_hash(const RunConfig& c) {
  return fnv1a(to_json(c).dump());
}

// ---------------------------------------------------------------------------
// presets

// tiny dims, seconds-scale tests
inline RunConfig desk_mini_config() {
  RunConfig c;  // defaults are the desk-mini preset
  return c;
}

// Table-I-faithful dims, used for shape validation
inline RunConfig paper_shapes_config() {
  RunConfig c;
  c.env.depth_rows = 384;
  c.env.depth_cols = 512;
  c.modalities.rgb_channels_in = 512;
  c.modalities.rgb_channels_out = 64;
  c.modalities.depth = true;
  c.modalities.depth_chain = {{64, 3, 3, 3, 3},
                              {64, 3, 3, 2, 3},
                              {64, 3, 3, 2, 3},
                              {64, 3, 3, 2, 1},
                              {64, 3, 3, 2, 2}};
  c.modalities.segmentation = true;
  c.modalities.seg_dim_in = 2048;
  c.modalities.seg_dim_out = 64;
  c.modalities.region_feature = true;
  c.modalities.region_feature_dim_in = 2048;
  c.modalities.region_feature_dim_out = 64;
  c.modalities.region_proposal = true;
  c.modalities.region_proposal_dim_out = 10;
  c.modalities.target_dim_in = 300;
  c.modalities.target_dim_out = 64;
  c.modalities.action_dim_out = 10;
  c.model.aggregate_channels = 64;
  c.model.lstm_hidden = 512;
  return c;
}

// <= 200 trainable scalars; used by the meta-gradient oracle suite
inline RunConfig oracle_mini_config() {
  RunConfig c;
  c.modalities.rgb = false;
  c.modalities.segmentation = true;
  c.modalities.seg_dim_in = 3;
  c.modalities.seg_dim_out = 2;
  c.modalities.target_dim_in = 4;
  c.modalities.target_dim_out = 2;
  c.modalities.action_dim_out = 2;
  c.model.grid_h = 1;
  c.model.grid_w = 1;
  c.model.aggregate_channels = 2;
  c.model.lstm_hidden = 3;
  c.meta.phi_channels = 2;
  c.env.max_steps = 16;
  return c;
}

}  // namespace mvvin
