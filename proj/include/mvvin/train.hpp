#pragma once

// Outer training loop: meta-task batches over the train split, periodic
// held-out validation (with test-time adaptation), CSV metrics, checkpoints,
// and bit-exact resume.

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "mvvin/checkpoint.hpp"
#include "mvvin/eval.hpp"
#include "mvvin/meta.hpp"
#include "mvvin/scenegen.hpp"

namespace mvvin {

inline std::uint64_t encoder_seed_of(const RunConfig& cfg) {
  return mix_seed(cfg.seed, fnv1a("encoder"));
}

// task batch for one outer step, a stateless function of (config seed, step)
inline std::vector<TaskSpec> make_batch(const RunConfig& cfg, const std::vector<GridScene>& train,
                                        std::int64_t step) {
  std::vector<TaskSpec> batch;
  for (int i = 0; i < cfg.meta.tasks_per_outer_step; ++i) {
    const size_t scene_idx =
        (static_cast<size_t>(step) * cfg.meta.tasks_per_outer_step + static_cast<size_t>(i)) %
        train.size();
    const std::uint64_t s =
        mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)), static_cast<std::uint64_t>(i));
    TaskSpec ts;
    ts.scene = &train[scene_idx];
    ts.task = sample_task(train[scene_idx], s);
    ts.rng_seed = mix_seed(s, fnv1a("rollout"));
    batch.push_back(std::move(ts));
  }
  return batch;
}

struct TrainResult {
  Checkpoint final_checkpoint;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Runs outer steps [resume.outer_step, cfg.meta.outer_steps). Appends to
// metrics.csv when resuming, creates it otherwise. The wall_time column is
// informational and not part of the determinism contract.
inline TrainResult train_loop(const RunConfig& cfg, const ScenePack& pack,
                              const std::string& run_dir, const Checkpoint* resume = nullptr) {
  if (pack.train.empty()) throw ValidationError("train_loop: empty train split");
  {
    // split overlap is a hard error
    const auto train_ids = scene_ids(pack.train);
    for (const auto& s : pack.val)
      if (train_ids.count(s.id)) throw ValidationError("train_loop: val overlaps train: " + s.id);
    for (const auto& s : pack.test)
      if (train_ids.count(s.id)) throw ValidationError("train_loop: test overlaps train: " + s.id);
  }

  Checkpoint ck;
  if (resume) {
    ck = *resume;
    check_checkpoint_compat(ck, cfg);
    ck.cfg = cfg;
  } else {
    ck.cfg = cfg;
    ck.theta = init_theta(cfg, cfg.seed);
    ck.phi = init_phi(cfg, cfg.seed);
    ck.adam = Adam(cfg.meta.outer_lr);
    ck.outer_step = 0;
  }

  MetaOptimizer opt(cfg.meta.outer_lr);
  opt.state() = ck.adam;

  const std::string metrics_path = run_dir + "/metrics.csv";
  std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::out);
  if (!metrics) throw IoError("train_loop: cannot write " + metrics_path);
  if (!resume) metrics << "outer_step,train_loss,val_success,val_spl,wall_time\n";

  EmbeddingTable table(cfg.modalities.target_dim_in, mix_seed(cfg.seed, fnv1a("embeddings")));
  const std::uint64_t enc_seed = encoder_seed_of(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  char buf[64];

  for (std::int64_t step = ck.outer_step; step < cfg.meta.outer_steps; ++step) {
    const auto batch = make_batch(cfg, pack.train, step);
    const OuterStats stats = meta_outer_step(batch, cfg, ck.theta, ck.phi, opt, table, enc_seed);

    std::string val_success, val_spl;
    if (cfg.meta.validate_every > 0 && (step + 1) % cfg.meta.validate_every == 0) {
      std::vector<const GridScene*> val_scenes;
      for (const auto& s : pack.val) val_scenes.push_back(&s);
      const int per_scene = std::max(
          1, cfg.meta.validate_episodes / static_cast<int>(val_scenes.size()));
      EvaluationResult ev = run_evaluation(
          cfg, ck.theta, ck.phi, val_scenes, per_scene, cfg.meta.adaptation_enabled, table,
          mix_seed(mix_seed(cfg.seed, fnv1a("validation")), static_cast<std::uint64_t>(step)),
          enc_seed);
      std::snprintf(buf, sizeof buf, "%.17g", ev.report.all.success);
      val_success = buf;
      std::snprintf(buf, sizeof buf, "%.17g", ev.report.all.spl_standard);
      val_spl = buf;
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::snprintf(buf, sizeof buf, "%.17g", stats.mean_nav_loss);
    metrics << step << ',' << buf << ',' << val_success << ',' << val_spl << ',';
    std::snprintf(buf, sizeof buf, "%.6f", wall);
    metrics << buf << '\n';
    metrics.flush();
    ck.outer_step = step + 1;
  }

  ck.adam = opt.state();
  TrainResult out;
  out.checkpoint_path = run_dir + "/checkpoint.json";
  out.metrics_path = metrics_path;
  save_checkpoint(ck, out.checkpoint_path);
  out.final_checkpoint = std::move(ck);
  return out;
}

}  // namespace mvvin
