#pragma once

// Full navigation network: parameter construction from config, the per-step
// multimodal forward pass, the LSTM memory step, action selection, rollouts.

#include <string>
#include <vector>

#include "mvvin/command.hpp"
#include "mvvin/config.hpp"
#include "mvvin/env.hpp"
#include "mvvin/processors.hpp"

namespace mvvin {

inline RenderConfig render_config(const RunConfig& c) {
  RenderConfig r;
  r.rgb_channels = c.modalities.rgb_channels_in;
  r.grid_h = c.model.grid_h;
  r.grid_w = c.model.grid_w;
  r.depth_rows = c.env.depth_rows;
  r.depth_cols = c.env.depth_cols;
  r.seg_dim = c.modalities.seg_dim_in;
  r.region_feature_dim = c.modalities.region_feature_dim_in;
  return r;
}

// channel count entering the pointwise aggregation conv, in the fixed
// modality order: rgb, segmentation, depth, region_feature, region_proposal,
// target, action
inline int aggregate_in_channels(const RunConfig& c) {
  const auto& m = c.modalities;
  int ch = 0;
  if (m.rgb) ch += m.rgb_channels_out;
  if (m.segmentation) ch += m.seg_dim_out;
  if (m.depth) ch += m.depth_chain.empty() ? 0 : m.depth_chain.back().out_channels;
  if (m.region_feature) ch += m.region_feature_dim_out;
  if (m.region_proposal) ch += m.region_proposal_dim_out;
  ch += m.target_dim_out;
  ch += m.action_dim_out;
  return ch;
}

inline std::vector<std::string> enabled_modalities(const RunConfig& c) {
  std::vector<std::string> out;
  if (c.modalities.rgb) out.push_back("rgb");
  if (c.modalities.segmentation) out.push_back("segmentation");
  if (c.modalities.depth) out.push_back("depth");
  if (c.modalities.region_feature) out.push_back("region_feature");
  if (c.modalities.region_proposal) out.push_back("region_proposal");
  out.push_back("target");
  out.push_back("action");
  return out;
}

// navigation parameters (theta)
inline ParamSet init_theta(const RunConfig& c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a("theta")));
  ParamSet ps;
  const auto& m = c.modalities;
  if (m.rgb)
    add_conv_params(ps, "proc.rgb.0", m.rgb_channels_in,
                    ConvLayerCfg{m.rgb_channels_out, 1, 1, 1, 1}, rng);
  if (m.segmentation) add_linear_params(ps, "proc.seg.0", m.seg_dim_in, m.seg_dim_out, rng);
  if (m.depth) {
    int cin = 1;
    for (size_t i = 0; i < m.depth_chain.size(); ++i) {
      add_conv_params(ps, "proc.depth." + std::to_string(i), cin, m.depth_chain[i], rng);
      cin = m.depth_chain[i].out_channels;
    }
  }
  if (m.region_feature) {
    add_linear_params(ps, "proc.regfeat.value", m.region_feature_dim_in, m.region_feature_dim_out,
                      rng);
    add_linear_params(ps, "proc.regfeat.score0", m.region_feature_dim_out, m.attention_hidden,
                      rng);
    add_linear_params(ps, "proc.regfeat.score1", m.attention_hidden, 1, rng);
  }
  if (m.region_proposal) add_linear_params(ps, "proc.prop", 4, m.region_proposal_dim_out, rng);
  add_linear_params(ps, "proc.target.0", m.target_dim_in, m.target_dim_out, rng);
  add_linear_params(ps, "proc.action.0", kNumActions, m.action_dim_out, rng);
  add_conv_params(ps, "agg", aggregate_in_channels(c),
                  ConvLayerCfg{c.model.aggregate_channels, 1, 1, 1, 1}, rng);

  const int d_e = c.embedding_dim();
  const int lstm_in = d_e + m.action_dim_out;
  const int n = c.model.lstm_hidden;
  ps.add("lstm.wih", uniform_init({4 * n, lstm_in}, lstm_in, rng.next_u64()));
  ps.add("lstm.whh", uniform_init({4 * n, n}, n, rng.next_u64()));
  ps.add("lstm.b", zeros({4 * n}));
  // small head init keeps the starting policy near uniform
  ps.add("head.policy.w", uniform_init({n, kNumActions}, n, rng.next_u64(), 0.1));
  ps.add("head.policy.b", zeros({kNumActions}));
  ps.add("head.value.w", uniform_init({n, 1}, n, rng.next_u64(), 0.1));
  ps.add("head.value.b", zeros({1}));
  return ps;
}

// interaction-loss network parameters (phi)
inline ParamSet init_phi(const RunConfig& c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a("phi")));
  ParamSet ps;
  const int cin = c.model.lstm_hidden + 2 * kNumActions;
  const int k = c.meta.phi_channels;
  ps.add("phi.conv0.w", he_scaled_init({k, cin, 3}, cin * 3, rng.next_u64()));
  ps.add("phi.conv0.b", zeros({k}));
  ps.add("phi.conv1.w", he_scaled_init({k, k, 3}, k * 3, rng.next_u64()));
  ps.add("phi.conv1.b", zeros({k}));
  ps.add("phi.head.w", uniform_init({k, 1}, k, rng.next_u64()));
  ps.add("phi.head.b", zeros({1}));
  return ps;
}

// ---------------------------------------------------------------------------
// forward pieces

struct EmbedOutput {
  TensorPtr e;
  std::vector<double> attn_scores;  // empty when region attention is off/empty
};

inline TensorPtr action_onehot(int prev_action) {
  std::vector<double> oh(static_cast<size_t>(kNumActions), 0.0);
  if (prev_action >= 0) oh[static_cast<size_t>(prev_action)] = 1.0;  // -1 = episode start
  return tensor({kNumActions}, std::move(oh));
}

inline EmbedOutput embed_step(const RunConfig& c, const ParamSet& ps, const Observation& obs,
                              const std::vector<double>& target_vec, int prev_action) {
  const auto& m = c.modalities;
  EmbedOutput out;
  std::vector<ATensor> ats;

  if (m.rgb) {
    TensorPtr rgb = tensor(obs.rgb_shape, obs.rgb_feat);
    ats.push_back(process_conv(rgb, ps, "proc.rgb", {ConvLayerCfg{m.rgb_channels_out, 1, 1, 1, 1}}));
  }
  if (m.segmentation) {
    TensorPtr seg = tensor({m.seg_dim_in}, obs.seg_feat);
    ats.push_back(process_linear(seg, ps, "proc.seg"));
  }
  if (m.depth) {
    TensorPtr depth = tensor({obs.depth_rows, obs.depth_cols}, obs.depth_map);
    ats.push_back(process_conv(depth, ps, "proc.depth", m.depth_chain));
  }
  if (m.region_feature) {
    if (obs.regions.empty()) {
      ats.push_back(ATensor::vec(zeros({m.region_feature_dim_out})));
    } else {
      AttentionOutput att = region_self_attention(obs.regions, ps, "proc.regfeat");
      ats.push_back(std::move(att.pooled));
      out.attn_scores = std::move(att.scores);
    }
  }
  if (m.region_proposal)
    ats.push_back(process_proposals(obs.regions, ps, "proc.prop", m.region_proposal_dim_out));

  TensorPtr tgt = tensor({m.target_dim_in}, target_vec);
  ats.push_back(process_linear(tgt, ps, "proc.target"));
  ats.push_back(ATensor::vec(
      linear_apply(action_onehot(prev_action), ps.at("proc.action.0.w"), ps.at("proc.action.0.b"),
                   true)));

  out.e = aggregate(ats, ps, "agg", c.model.grid_h, c.model.grid_w);
  return out;
}

struct MemoryState {
  TensorPtr h, c;
};

inline MemoryState zero_state(const RunConfig& cfg) {
  return {zeros({cfg.model.lstm_hidden}), zeros({cfg.model.lstm_hidden})};
}

inline MemoryState detach_state(const MemoryState& s) {
  return {detach(s.h), detach(s.c)};
}

struct PolicyOutput {
  TensorPtr logits;  // [6]
  TensorPtr value;   // [1]
};

// one decoder step: action embedding + step embedding -> LSTM -> heads
inline std::pair<PolicyOutput, MemoryState> memory_step(const RunConfig& c, const ParamSet& ps,
                                                        const TensorPtr& e, int prev_action,
                                                        const MemoryState& state) {
  TensorPtr act_feat = linear_apply(action_onehot(prev_action), ps.at("proc.action.0.w"),
                                    ps.at("proc.action.0.b"), true);
  TensorPtr x = concat_vec({e, act_feat});
  TensorPtr hc = lstm_cell(x, state.h, state.c, ps.at("lstm.wih"), ps.at("lstm.whh"),
                           ps.at("lstm.b"));
  MemoryState next{lstm_h(hc), lstm_c(hc)};
  PolicyOutput po;
  po.logits = linear_apply(next.h, ps.at("head.policy.w"), ps.at("head.policy.b"), false);
  po.value = linear_apply(next.h, ps.at("head.value.w"), ps.at("head.value.b"), false);
  return {po, next};
}

enum class SelectMode { Sample, Argmax };

// argmax ties break toward the smallest action index; sampling consumes one
// uniform draw
inline Action select_action(const PolicyOutput& policy, SelectMode mode, Rng& rng) {
  const auto& logits = policy.logits->data;
  if (mode == SelectMode::Argmax) {
    int best = 0;
    for (int i = 1; i < kNumActions; ++i)
      if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
    return static_cast<Action>(best);
  }
  TensorPtr probs = softmax(policy.logits);
  const double u = rng.uniform01();
  double acc = 0.0;
  for (int i = 0; i < kNumActions; ++i) {
    acc += probs->data[static_cast<size_t>(i)];
    if (u < acc) return static_cast<Action>(i);
  }
  return static_cast<Action>(kNumActions - 1);
}

// ---------------------------------------------------------------------------
// rollout

struct StepRecord {
  AgentPose pose;           // pose the observation was rendered from
  int prev_action = -1;
  Action action = Action::Done;
  double reward = 0.0;
  bool collided = false;
  double prob = 0.0;        // softmax probability of the taken action
  double logprob = 0.0;
  std::vector<double> logits_snapshot;
  double value_snapshot = 0.0;
  std::vector<double> attn_scores;
  int segment = 0;          // which parameter variant produced this step
  // live graph references under the parameters used at this step
  TensorPtr logits, value, h;
};

struct Trajectory {
  Task task;
  std::string scene_id;
  std::uint64_t encoder_seed = 0;
  std::vector<StepRecord> steps;
  bool done_signaled = false;
  bool truncated = false;
  bool success = false;
  int path_length = 0;  // actions taken, excluding Done
};

// Incremental episode driver; the meta layer interleaves adaptation between
// calls to do_step.
class EpisodeRunner {
 public:
  EpisodeRunner(const GridScene& scene, const Task& task, const RunConfig& cfg,
                const EmbeddingTable& table, std::uint64_t encoder_seed)
      : scene_(scene), cfg_(cfg), rcfg_(render_config(cfg)), encoder_seed_(encoder_seed) {
    traj_.task = task;
    traj_.scene_id = scene.id;
    traj_.encoder_seed = encoder_seed;
    pose_ = task.start;
    target_vec_ = table.lookup(task.target);
    state_ = zero_state(cfg);
  }

  bool finished() const { return finished_; }
  const Trajectory& trajectory() const { return traj_; }
  Trajectory take_trajectory() { return std::move(traj_); }
  int steps_taken() const { return static_cast<int>(traj_.steps.size()); }

  void detach_memory() { state_ = detach_state(state_); }

  // one environment step under the given parameters
  void do_step(const ParamSet& params, SelectMode mode, Rng& rng, int segment) {
    if (finished_) throw ValueError("EpisodeRunner: episode already finished");
    Observation obs = render_observation(scene_, pose_, encoder_seed_, rcfg_);
    EmbedOutput emb = embed_step(cfg_, params, obs, target_vec_, prev_action_);
    auto [po, next_state] = memory_step(cfg_, params, emb.e, prev_action_, state_);
    Action a = select_action(po, mode, rng);

    StepRecord rec;
    rec.pose = pose_;
    rec.prev_action = prev_action_;
    rec.action = a;
    rec.segment = segment;
    rec.logits = po.logits;
    rec.value = po.value;
    rec.h = next_state.h;
    rec.logits_snapshot = po.logits->data;
    rec.value_snapshot = po.value->data[0];
    rec.attn_scores = std::move(emb.attn_scores);
    {
      TensorPtr probs = softmax(po.logits);
      rec.prob = probs->data[static_cast<size_t>(a)];
      TensorPtr lp = log_softmax(po.logits);
      rec.logprob = lp->data[static_cast<size_t>(a)];
    }

    StepResult sr = step(scene_, pose_, a);
    rec.collided = sr.collided;
    rec.reward = cfg_.meta.reward_step;
    if (sr.done_signaled) {
      traj_.done_signaled = true;
      traj_.success = is_success(scene_, pose_, traj_.task.target);
      if (traj_.success) rec.reward += cfg_.meta.reward_success;
      finished_ = true;
    }
    pose_ = sr.pose;
    prev_action_ = static_cast<int>(a);
    state_ = next_state;
    traj_.steps.push_back(std::move(rec));

    if (!finished_ && steps_taken() >= cfg_.env.max_steps) {
      traj_.truncated = true;
      finished_ = true;
    }
    if (finished_) {
      traj_.path_length = static_cast<int>(traj_.steps.size()) - (traj_.done_signaled ? 1 : 0);
    }
  }

  const AgentPose& pose() const { return pose_; }

 private:
  const GridScene& scene_;
  const RunConfig& cfg_;
  RenderConfig rcfg_;
  std::uint64_t encoder_seed_;
  Trajectory traj_;
  AgentPose pose_;
  std::vector<double> target_vec_;
  MemoryState state_;
  int prev_action_ = -1;
  bool finished_ = false;
};

// plain rollout under fixed parameters (no adaptation)
inline Trajectory rollout(const GridScene& scene, const Task& task, const RunConfig& cfg,
                          const ParamSet& params, int max_steps, SelectMode mode, Rng& rng,
                          const EmbeddingTable& table, std::uint64_t encoder_seed) {
  RunConfig c = cfg;
  c.env.max_steps = max_steps;
  EpisodeRunner runner(scene, task, c, table, encoder_seed);
  while (!runner.finished()) runner.do_step(params, mode, rng, 0);
  return runner.take_trajectory();
}

// Teacher-forced recomputation: rebuilds logits/value/h for steps
// [0, upto) under `params`, forcing the recorded actions and re-rendering the
// recorded poses. Pure in params; used by losses on adapted parameters and by
// the finite-difference oracles.
struct ReplayOutput {
  std::vector<TensorPtr> logits, value, h;
};

inline ReplayOutput replay(const GridScene& scene, const Trajectory& traj, const RunConfig& cfg,
                           const ParamSet& params, const EmbeddingTable& table, size_t upto) {
  ReplayOutput out;
  RenderConfig rcfg = render_config(cfg);
  std::vector<double> target_vec = table.lookup(traj.task.target);
  MemoryState state = zero_state(cfg);
  upto = std::min(upto, traj.steps.size());
  for (size_t i = 0; i < upto; ++i) {
    const StepRecord& rec = traj.steps[i];
    Observation obs = render_observation(scene, rec.pose, traj.encoder_seed, rcfg);
    EmbedOutput emb = embed_step(cfg, params, obs, target_vec, rec.prev_action);
    auto [po, next_state] = memory_step(cfg, params, emb.e, rec.prev_action, state);
    out.logits.push_back(po.logits);
    out.value.push_back(po.value);
    out.h.push_back(next_state.h);
    state = next_state;
  }
  return out;
}

}  // namespace mvvin
