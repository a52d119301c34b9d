#pragma once

// Evaluation: BFS optimal-path oracle, success rate, SPL (standard and
// paper-literal), the episode harness with timing, and metrics emission.

#include <chrono>
#include <deque>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvvin/meta.hpp"

namespace mvvin {

struct UnreachableError : std::runtime_error {
  explicit UnreachableError(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// BFS oracle over (x, y, heading, pitch) with the 5 non-Done actions, unit
// cost; Done is excluded from the count

inline int optimal_path_length(const GridScene& scene, const AgentPose& start,
                               const std::string& target) {
  auto encode = [&](const AgentPose& p) {
    const int pitch_idx = p.pitch / 30 + 1;  // {-30,0,30} -> {0,1,2}
    return ((p.y * scene.width + p.x) * 8 + p.heading) * 3 + pitch_idx;
  };
  std::vector<char> seen(static_cast<size_t>(scene.width) * scene.height * 8 * 3, 0);
  std::deque<std::pair<AgentPose, int>> q;
  q.emplace_back(start, 0);
  seen[static_cast<size_t>(encode(start))] = 1;
  while (!q.empty()) {
    auto [pose, dist] = q.front();
    q.pop_front();
    if (is_success(scene, pose, target)) return dist;
    for (int a = 0; a < kNumActions - 1; ++a) {
      StepResult r = step(scene, pose, static_cast<Action>(a));
      const size_t code = static_cast<size_t>(encode(r.pose));
      if (seen[code]) continue;
      seen[code] = 1;
      q.emplace_back(r.pose, dist + 1);
    }
  }
  throw UnreachableError("optimal_path_length: target '" + target + "' unreachable in scene " +
                         scene.id);
}

// ---------------------------------------------------------------------------
// metrics

struct EpisodeRecord {
  int S = 0;                      // success indicator
  int L = 0;                      // actions taken, excluding Done
  int P = 0;                      // optimal action count, excluding Done
  double inference_seconds = 0.0;
  std::string scene_id;
  std::string target;
  std::uint64_t seed = 0;
};

inline double success_rate(const std::vector<EpisodeRecord>& records) {
  if (records.empty()) throw ValueError("success_rate: empty record set");
  double s = 0.0;
  for (const auto& r : records) s += r.S;
  return s / static_cast<double>(records.size());
}

enum class SplVariant { Standard, PaperLiteral };

// standard: S * P / max(L, P) (optimal length in the numerator), with the
// P=L=0 success term defined as 1; paper_literal: S * L / max(L, P)
inline double spl(const std::vector<EpisodeRecord>& records, SplVariant variant) {
  if (records.empty()) throw ValueError("spl: empty record set");
  double total = 0.0;
  for (const auto& r : records) {
    if (!r.S) continue;
    if (r.L == 0 && r.P == 0) {
      total += 1.0;
      continue;
    }
    const double denom = static_cast<double>(std::max(r.L, r.P));
    const double numer = variant == SplVariant::Standard ? r.P : r.L;
    total += numer / denom;
  }
  return total / static_cast<double>(records.size());
}

struct SplitMetrics {
  int n = 0;
  double success = 0.0;
  double spl_standard = 0.0;
  double spl_paper_literal = 0.0;
};

struct MetricsReport {
  SplitMetrics all;
  SplitMetrics lge5;  // split on P >= 5 (reported under the L>=5 label)
  double total_inference_seconds = 0.0;
  double mean_inference_seconds = 0.0;
};

constexpr int kSplitThreshold = 5;

inline SplitMetrics split_metrics(const std::vector<EpisodeRecord>& records) {
  SplitMetrics m;
  m.n = static_cast<int>(records.size());
  if (records.empty()) return m;
  m.success = success_rate(records);
  m.spl_standard = spl(records, SplVariant::Standard);
  m.spl_paper_literal = spl(records, SplVariant::PaperLiteral);
  return m;
}

inline MetricsReport build_report(const std::vector<EpisodeRecord>& records) {
  MetricsReport rep;
  std::vector<EpisodeRecord> lge5;
  for (const auto& r : records) {
    rep.total_inference_seconds += r.inference_seconds;
    if (r.P >= kSplitThreshold) lge5.push_back(r);
  }
  rep.all = split_metrics(records);
  rep.lge5 = split_metrics(lge5);
  if (!records.empty())
    rep.mean_inference_seconds = rep.total_inference_seconds / static_cast<double>(records.size());
  return rep;
}

// ---------------------------------------------------------------------------
// evaluation harness

struct EvaluationResult {
  MetricsReport report;
  std::vector<EpisodeRecord> records;
};

inline void check_split_disjoint(const std::vector<const GridScene*>& eval_scenes,
                                 const std::set<std::string>& train_ids) {
  for (const GridScene* s : eval_scenes)
    if (train_ids.count(s->id))
      throw ValidationError("evaluation scene '" + s->id + "' overlaps the training split");
}

// Per episode: sample_task -> optional self-supervised adaptation (reward-
// blind) -> argmax rollout -> record. Timing covers the decision loop only;
// scene data is already resident. Episodes run in parallel workers; records
// are reduced in deterministic (scene, episode) order.
inline EvaluationResult run_evaluation(const RunConfig& cfg, const ParamSet& theta,
                                       const ParamSet& phi,
                                       const std::vector<const GridScene*>& scenes,
                                       int episodes_per_scene, bool adapt,
                                       const EmbeddingTable& table, std::uint64_t seed,
                                       std::uint64_t encoder_seed,
                                       const std::set<std::string>* train_ids = nullptr) {
  if (scenes.empty()) throw ValueError("run_evaluation: no scenes");
  if (episodes_per_scene < 1) throw ValueError("run_evaluation: episodes_per_scene must be >= 1");
  if (train_ids) check_split_disjoint(scenes, *train_ids);
  RunConfig ecfg = cfg;
  ecfg.meta.adaptation_enabled = adapt;

  const int n = static_cast<int>(scenes.size()) * episodes_per_scene;
  EvaluationResult out;
  out.records.resize(static_cast<size_t>(n));
  parallel_for(n, cfg.meta.workers, [&](int i) {
    const GridScene& scene = *scenes[static_cast<size_t>(i) / episodes_per_scene];
    const int ep = i % episodes_per_scene;
    const std::uint64_t ep_seed =
        mix_seed(seed, mix_seed(fnv1a(scene.id), static_cast<std::uint64_t>(ep)));
    const Task task = sample_task(scene, ep_seed);
    EpisodeRecord rec;
    rec.scene_id = scene.id;
    rec.target = task.target;
    rec.seed = ep_seed;
    rec.P = optimal_path_length(scene, task.start, task.target);

    Rng rng(mix_seed(ep_seed, fnv1a("eval-rollout")));
    const auto t0 = std::chrono::steady_clock::now();
    AdaptiveRollout ar = rollout_adaptive(scene, task, ecfg, theta, phi, SelectMode::Argmax, rng,
                                          table, encoder_seed);
    const auto t1 = std::chrono::steady_clock::now();
    rec.inference_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.S = ar.traj.success ? 1 : 0;
    rec.L = ar.traj.path_length;
    out.records[static_cast<size_t>(i)] = std::move(rec);
  });
  out.report = build_report(out.records);
  return out;
}

// ---------------------------------------------------------------------------
// emission

inline void emit_records_csv(const std::vector<EpisodeRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("emit_metrics: cannot write " + path);
  f << "scene_id,target,seed,S,L,P,split,inference_seconds,cumulative_seconds\n";
  double cum = 0.0;
  char buf[64];
  for (const auto& r : records) {
    cum += r.inference_seconds;
    f << r.scene_id << ',' << r.target << ',' << r.seed << ',' << r.S << ',' << r.L << ',' << r.P
      << ',' << (r.P >= kSplitThreshold ? "L>=5" : "L<5") << ',';
    std::snprintf(buf, sizeof buf, "%.9f", r.inference_seconds);
    f << buf << ',';
    std::snprintf(buf, sizeof buf, "%.9f", cum);
    f << buf << '\n';
  }
  if (!f) throw IoError("emit_metrics: write failed for " + path);
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
  auto split = [](const SplitMetrics& m) {
    return nlohmann::json{{"n", m.n},
                          {"success_rate", m.success},
                          {"spl_standard", m.spl_standard},
                          {"spl_paper_literal", m.spl_paper_literal}};
  };
  return nlohmann::json{{"all", split(rep.all)},
                        {"lge5", split(rep.lge5)},
                        {"total_inference_seconds", rep.total_inference_seconds},
                        {"mean_inference_seconds", rep.mean_inference_seconds}};
}

inline void emit_metrics(const MetricsReport& report, const std::vector<EpisodeRecord>& records,
                         const std::string& csv_path, const std::string& json_path) {
  emit_records_csv(records, csv_path);
  std::ofstream f(json_path);
  if (!f) throw IoError("emit_metrics: cannot write " + json_path);
  f << report_to_json(report).dump(2) << '\n';
  if (!f) throw IoError("emit_metrics: write failed for " + json_path);
}

// parse an emitted CSV back into records (round-trip support)
inline std::vector<EpisodeRecord> parse_records_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("parse_records_csv: cannot read " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("parse_records_csv: empty file " + path);
  std::vector<EpisodeRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t pos = 0;
    while (true) {
      const size_t c = line.find(',', pos);
      cells.push_back(line.substr(pos, c == std::string::npos ? c : c - pos));
      if (c == std::string::npos) break;
      pos = c + 1;
    }
    if (cells.size() != 9) throw ParseError("parse_records_csv: malformed row: " + line);
    EpisodeRecord r;
    r.scene_id = cells[0];
    r.target = cells[1];
    r.seed = std::stoull(cells[2]);
    r.S = std::stoi(cells[3]);
    r.L = std::stoi(cells[4]);
    r.P = std::stoi(cells[5]);
    r.inference_seconds = std::stod(cells[7]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mvvin
