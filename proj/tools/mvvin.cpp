// mvvin: train / eval / rollout / verify command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error,
// 4 verification/validation failure, 5 command parse error, 1 other.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvvin/checkpoint.hpp"
#include "mvvin/eval.hpp"
#include "mvvin/scenegen.hpp"
#include "mvvin/train.hpp"
#include "mvvin/verify.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitVerify = 4;
constexpr int kExitCommand = 5;

namespace fs = std::filesystem;
using nlohmann::json;

std::string timestamp_dir(const std::string& kind) {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm_utc);
  std::string base = "runs/" + kind + "-" + buf;
  std::string dir = base;
  for (int i = 1; fs::exists(dir); ++i) dir = base + "-" + std::to_string(i);
  return dir;
}

// --config accepts a path or a preset name; bare names also resolve against
// $MVVIN_CONFIG_DIR (default data/configs)
json load_config_json(const std::string& spec) {
  if (spec == "desk-mini") return mvvin::to_json(mvvin::desk_mini_config());
  if (spec == "paper-shapes") return mvvin::to_json(mvvin::paper_shapes_config());
  std::string path = spec;
  if (!fs::exists(path) && spec.find('/') == std::string::npos) {
    const char* dir = std::getenv("MVVIN_CONFIG_DIR");
    const std::string base = dir ? dir : "data/configs";
    if (fs::exists(base + "/" + spec)) path = base + "/" + spec;
    else if (fs::exists(base + "/" + spec + ".json")) path = base + "/" + spec + ".json";
  }
  std::ifstream in(path);
  if (!in) throw mvvin::ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mvvin::ConfigError(path + ": " + e.what());
  }
  return j;
}

mvvin::RunConfig resolve_config(const std::string& spec,
                                const std::vector<std::string>& overrides) {
  json j = load_config_json(spec);
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw mvvin::ConfigError("override must be key.path=value: " + ov);
    mvvin::apply_override(j, ov.substr(0, eq), ov.substr(eq + 1));
  }
  return mvvin::config_from_json(j);
}

void write_resolved_config(const mvvin::RunConfig& cfg, const std::string& run_dir) {
  std::ofstream f(run_dir + "/config.json");
  if (!f) throw mvvin::IoError("cannot write " + run_dir + "/config.json");
  f << mvvin::to_json(cfg).dump(2) << '\n';
}

// ablation shorthand: --modalities rgb,segmentation,region_feature
void apply_modalities(mvvin::RunConfig& cfg, const std::string& list) {
  auto& m = cfg.modalities;
  m.rgb = m.depth = m.segmentation = m.region_feature = m.region_proposal = false;
  std::string cur;
  auto setone = [&](const std::string& name) {
    if (name == "rgb") m.rgb = true;
    else if (name == "depth") m.depth = true;
    else if (name == "segmentation") m.segmentation = true;
    else if (name == "region_feature") m.region_feature = true;
    else if (name == "region_proposal") m.region_proposal = true;
    else throw mvvin::ConfigError("unknown modality: " + name);
  };
  for (char ch : list) {
    if (ch == ',') {
      setone(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) setone(cur);
  if (!m.rgb && !m.depth && !m.segmentation && !m.region_feature && !m.region_proposal)
    throw mvvin::ConfigError("--modalities: at least one modality required");
}

int cmd_train(const std::string& config_spec, const std::vector<std::string>& overrides,
              std::string run_dir, const std::string& resume_path) {
  mvvin::RunConfig cfg = resolve_config(config_spec, overrides);
  mvvin::ScenePack pack = mvvin::load_scene_pack(cfg.env.scene_pack);
  if (run_dir.empty()) run_dir = timestamp_dir("train");
  fs::create_directories(run_dir);
  write_resolved_config(cfg, run_dir);

  mvvin::TrainResult res;
  if (!resume_path.empty()) {
    mvvin::Checkpoint ck = mvvin::load_checkpoint(resume_path);
    res = mvvin::train_loop(cfg, pack, run_dir, &ck);
  } else {
    res = mvvin::train_loop(cfg, pack, run_dir);
  }
  std::cout << "checkpoint: " << res.checkpoint_path << "\n"
            << "metrics:    " << res.metrics_path << "\n";
  return 0;
}

void print_report(const mvvin::MetricsReport& rep) {
  auto row = [](const char* name, const mvvin::SplitMetrics& m) {
    std::printf("%-6s %8d %10.4f %10.4f %14.4f\n", name, m.n, m.spl_standard * 100.0,
                m.success * 100.0, m.spl_paper_literal * 100.0);
  };
  std::printf("%-6s %8s %10s %10s %14s\n", "split", "N", "SPL", "Success", "SPL(literal)");
  row("All", rep.all);
  row("L>=5", rep.lge5);
  std::printf("total inference %.3f s, mean %.6f s/episode\n", rep.total_inference_seconds,
              rep.mean_inference_seconds);
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& overrides,
             const std::string& modalities, std::string run_dir) {
  mvvin::Checkpoint ck = mvvin::load_checkpoint(ckpt_path);
  json j = mvvin::to_json(ck.cfg);
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw mvvin::ConfigError("override must be key.path=value: " + ov);
    mvvin::apply_override(j, ov.substr(0, eq), ov.substr(eq + 1));
  }
  mvvin::RunConfig cfg = mvvin::config_from_json(j);
  if (!modalities.empty()) apply_modalities(cfg, modalities);
  mvvin::check_checkpoint_compat(ck, cfg);

  mvvin::ScenePack pack = mvvin::load_scene_pack(cfg.env.scene_pack);
  std::vector<const mvvin::GridScene*> test_scenes;
  for (const auto& s : pack.test) test_scenes.push_back(&s);
  const auto train_ids = mvvin::scene_ids(pack.train);

  mvvin::EmbeddingTable table(cfg.modalities.target_dim_in,
                              mvvin::mix_seed(cfg.seed, mvvin::fnv1a("embeddings")));
  mvvin::RunConfig ecfg = cfg;
  ecfg.meta.workers = cfg.eval.workers;
  mvvin::EvaluationResult ev = mvvin::run_evaluation(
      ecfg, ck.theta, ck.phi, test_scenes, cfg.eval.episodes_per_scene, cfg.eval.adapt, table,
      mvvin::mix_seed(cfg.seed, mvvin::fnv1a("evaluation")), mvvin::encoder_seed_of(cfg),
      &train_ids);

  if (run_dir.empty()) run_dir = timestamp_dir("eval");
  fs::create_directories(run_dir);
  write_resolved_config(cfg, run_dir);
  mvvin::emit_metrics(ev.report, ev.records, run_dir + "/episodes.csv",
                      run_dir + "/report.json");
  print_report(ev.report);
  std::cout << "records: " << run_dir << "/episodes.csv\n";
  return 0;
}

int cmd_rollout(const std::string& ckpt_path, const std::string& scene_path,
                const std::string& command, const std::string& trace_path, std::uint64_t seed,
                int max_steps) {
  mvvin::Checkpoint ck = mvvin::load_checkpoint(ckpt_path);
  mvvin::RunConfig cfg = ck.cfg;
  if (max_steps > 0) cfg.env.max_steps = max_steps;
  mvvin::GridScene scene = mvvin::scene_load(scene_path);
  const std::string target = mvvin::parse_target(command, scene.targets);

  // start pose: seeded uniform free cell + heading, level pitch
  mvvin::Rng rng(mvvin::mix_seed(seed, mvvin::fnv1a("rollout-start")));
  std::vector<std::pair<int, int>> free_cells;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.free_at(x, y)) free_cells.emplace_back(x, y);
  const auto [sx, sy] = free_cells[static_cast<size_t>(
      rng.uniform_int(0, static_cast<int>(free_cells.size()) - 1))];
  mvvin::Task task;
  task.command = command;
  task.target = target;
  task.start = mvvin::AgentPose{sx, sy, rng.uniform_int(0, 7), 0};

  mvvin::EmbeddingTable table(cfg.modalities.target_dim_in,
                              mvvin::mix_seed(cfg.seed, mvvin::fnv1a("embeddings")));
  mvvin::Rng roll_rng(mvvin::mix_seed(seed, mvvin::fnv1a("rollout-policy")));
  const std::uint64_t enc_seed = mvvin::encoder_seed_of(cfg);
  mvvin::AdaptiveRollout ar = mvvin::rollout_adaptive(
      scene, task, cfg, ck.theta, ck.phi, mvvin::SelectMode::Argmax, roll_rng, table, enc_seed);

  std::ofstream tf(trace_path);
  if (!tf) throw mvvin::IoError("cannot write trace " + trace_path);
  tf << json{{"type", "header"},
             {"scene", scene.id},
             {"command", command},
             {"target", target},
             {"seed", seed},
             {"config_hash", mvvin::config_hash(cfg)},
             {"success", ar.traj.success},
             {"steps", ar.traj.steps.size()},
             {"path_length", ar.traj.path_length}}
            .dump()
     << '\n';
  mvvin::RenderConfig rcfg = mvvin::render_config(cfg);
  for (size_t i = 0; i < ar.traj.steps.size(); ++i) {
    const auto& s = ar.traj.steps[i];
    json line{{"type", "step"},
              {"step", i},
              {"pose", {{"x", s.pose.x}, {"y", s.pose.y}, {"heading", s.pose.heading},
                        {"pitch", s.pose.pitch}}},
              {"action", mvvin::action_name(s.action)},
              {"reward", s.reward},
              {"prob", s.prob},
              {"value", s.value_snapshot},
              {"collided", s.collided},
              {"segment", s.segment},
              {"attention_scores", s.attn_scores}};
    if (!s.attn_scores.empty()) {
      // name the top-scored region (the highlighted-box analog)
      mvvin::Observation obs =
          mvvin::render_observation(scene, s.pose, ar.traj.encoder_seed, rcfg);
      size_t best = 0;
      for (size_t r = 1; r < s.attn_scores.size(); ++r)
        if (s.attn_scores[r] > s.attn_scores[best]) best = r;
      if (best < obs.regions.size())
        line["top_region"] = {
            {"class", mvvin::object_classes()[static_cast<size_t>(
                          obs.regions[best].object_class)]},
            {"score", s.attn_scores[best]},
            {"box", obs.regions[best].box}};
    }
    tf << line.dump() << '\n';
  }
  std::cout << (ar.traj.success ? "success" : "failure") << " in " << ar.traj.steps.size()
            << " steps; trace: " << trace_path << "\n";
  return 0;
}

int cmd_verify() {
  const auto checks = mvvin::run_verify_suite();
  bool all = true;
  for (const auto& c : checks) {
    std::printf("%-16s %s  %s\n", c.name.c_str(), c.pass ? "PASS" : "FAIL", c.detail.c_str());
    all = all && c.pass;
  }
  return all ? 0 : kExitVerify;
}

int cmd_make_scenes(const std::string& out_dir, std::uint64_t seed, int n_train, int n_val,
                    int n_test) {
  mvvin::write_scene_pack(out_dir, seed, n_train, n_val, n_test);
  std::cout << "scene pack written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MVV-IN navigation: training, evaluation, rollout tracing, verification"};
  app.require_subcommand(1);

  std::string config_spec = "desk-mini";
  std::vector<std::string> overrides;
  std::string run_dir, resume_path;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  int outer_steps_flag = -1;

  auto* train = app.add_subcommand("train", "meta-train on the train split");
  train->add_option("--config", config_spec, "config path or preset (desk-mini, paper-shapes)");
  train->add_option("--set", overrides, "override, key.path=value (repeatable)");
  train->add_option("--run-dir", run_dir, "output directory (default: timestamped under runs/)");
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--seed", seed_flag, "seed shorthand")->each([&](const std::string&) {
    seed_set = true;
  });
  train->add_option("--outer-steps", outer_steps_flag, "outer step count shorthand");

  std::string ckpt_path, modalities;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  eval->add_option("--set", overrides, "config override, key.path=value (repeatable)");
  eval->add_option("--modalities", modalities, "ablation list, e.g. rgb,segmentation");
  eval->add_option("--run-dir", run_dir, "output directory");

  std::string scene_path, command_text, trace_path = "trace.jsonl";
  int max_steps_flag = 0;
  auto* roll = app.add_subcommand("rollout", "single traced episode from a text command");
  roll->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  roll->add_option("--scene", scene_path, "scene json")->required();
  roll->add_option("--command", command_text, "natural-language command")->required();
  roll->add_option("--trace", trace_path, "JSONL trace output path");
  roll->add_option("--seed", seed_flag, "start pose seed");
  roll->add_option("--max-steps", max_steps_flag, "episode cap override");

  auto* verify = app.add_subcommand("verify", "run the oracle self-check suite");
  (void)verify;

  std::string scenes_out = "data/scenes";
  std::uint64_t scenes_seed = 20240817;
  int n_train = 20, n_val = 5, n_test = 5;
  auto* mkscenes = app.add_subcommand("make-scenes", "regenerate the procedural scene pack");
  mkscenes->add_option("--out", scenes_out, "pack root directory");
  mkscenes->add_option("--seed", scenes_seed, "generation seed");
  mkscenes->add_option("--train", n_train, "train scenes per room type");
  mkscenes->add_option("--val", n_val, "val scenes per room type");
  mkscenes->add_option("--test", n_test, "test scenes per room type");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      if (seed_set) overrides.push_back("seed=" + std::to_string(seed_flag));
      if (outer_steps_flag >= 0)
        overrides.push_back("meta.outer_steps=" + std::to_string(outer_steps_flag));
      return cmd_train(config_spec, overrides, run_dir, resume_path);
    }
    if (*eval) return cmd_eval(ckpt_path, overrides, modalities, run_dir);
    if (*roll)
      return cmd_rollout(ckpt_path, scene_path, command_text, trace_path, seed_flag,
                         max_steps_flag);
    if (*verify) return cmd_verify();
    if (*mkscenes) return cmd_make_scenes(scenes_out, scenes_seed, n_train, n_val, n_test);
  } catch (const mvvin::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const mvvin::CommandError& e) {
    std::cerr << "command error: " << e.what() << "\n";
    return kExitCommand;
  } catch (const mvvin::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitVerify;
  } catch (const mvvin::OracleError& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitVerify;
  } catch (const mvvin::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mvvin::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mvvin::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
