#pragma once

// Self-check suite shared by `mvvin verify` and the acceptance tests:
// gradient oracles, Table-style shape pipelines, attention properties,
// metric hand-oracles, BFS/Dijkstra cross-check, meta-gradient oracles.

#include <functional>
#include <queue>
#include <string>
#include <vector>

#include "mvvin/eval.hpp"
#include "mvvin/gradcheck.hpp"
#include "mvvin/model.hpp"
#include "mvvin/meta.hpp"
#include "mvvin/scenegen.hpp"

namespace mvvin {

// ---------------------------------------------------------------------------
// gradcheck instances

struct GradInstance {
  ParamSet params;
  ScalarFn fn;
};

inline const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> ops = {"add_mul",   "linear",    "conv2d",
                                               "conv1d",    "lstm_cell", "softmax",
                                               "attention", "aggregate", "composite"};
  return ops;
}

namespace detail {

inline TensorPtr rand_tensor(std::vector<int> shape, Rng& rng, double s = 1.0) {
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (double& v : d) v = rng.normal(0.0, s);
  return tensor(std::move(shape), std::move(d));
}

inline std::vector<Region> rand_regions(int n, int dim, Rng& rng) {
  std::vector<Region> rs;
  for (int i = 0; i < n; ++i) {
    Region r;
    r.object_class = rng.uniform_int(0, 15);
    r.feature.resize(static_cast<size_t>(dim));
    for (double& v : r.feature) v = rng.normal();
    r.box = {rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()};
    r.confidence = rng.uniform(0.1, 1.0);
    r.azimuth = rng.uniform(-0.7, 0.7);
    rs.push_back(std::move(r));
  }
  return rs;
}

}  // namespace detail

inline GradInstance make_grad_instance(const std::string& op, std::uint64_t seed) {
  Rng rng(mix_seed(seed, fnv1a("gradcheck-" + op)));
  GradInstance gi;
  if (op == "add_mul") {
    gi.params.add("a", detail::rand_tensor({5}, rng));
    gi.params.add("b", detail::rand_tensor({5}, rng));
    gi.fn = [](ParamSet& p) {
      return sum(mul(add(p.at("a"), p.at("b")), sub(p.at("a"), scale(p.at("b"), 0.5))));
    };
  } else if (op == "linear") {
    gi.params.add("x", detail::rand_tensor({5}, rng));
    gi.params.add("w", detail::rand_tensor({5, 4}, rng, 0.5));
    gi.params.add("b", detail::rand_tensor({4}, rng, 0.5));
    gi.fn = [](ParamSet& p) {
      return sum(linear_apply(p.at("x"), p.at("w"), p.at("b"), true));
    };
  } else if (op == "conv2d") {
    gi.params.add("x", detail::rand_tensor({2, 5, 6}, rng));
    gi.params.add("w", detail::rand_tensor({3, 2, 2, 2}, rng, 0.5));
    gi.params.add("b", detail::rand_tensor({3}, rng, 0.5));
    gi.fn = [](ParamSet& p) {
      return sum(conv2d_apply(p.at("x"), p.at("w"), p.at("b"), 2, 1, true));
    };
  } else if (op == "conv1d") {
    gi.params.add("x", detail::rand_tensor({3, 7}, rng));
    gi.params.add("w", detail::rand_tensor({2, 3, 3}, rng, 0.5));
    gi.params.add("b", detail::rand_tensor({2}, rng, 0.5));
    gi.fn = [](ParamSet& p) {
      return sum(relu(conv1d_same(p.at("x"), p.at("w"), p.at("b"))));
    };
  } else if (op == "lstm_cell") {
    gi.params.add("x", detail::rand_tensor({4}, rng));
    gi.params.add("h", detail::rand_tensor({3}, rng, 0.5));
    gi.params.add("c", detail::rand_tensor({3}, rng, 0.5));
    gi.params.add("wih", detail::rand_tensor({12, 4}, rng, 0.5));
    gi.params.add("whh", detail::rand_tensor({12, 3}, rng, 0.5));
    gi.params.add("b", detail::rand_tensor({12}, rng, 0.5));
    gi.fn = [](ParamSet& p) {
      TensorPtr hc = lstm_cell(p.at("x"), p.at("h"), p.at("c"), p.at("wih"), p.at("whh"),
                               p.at("b"));
      // second chained step exercises both outputs
      TensorPtr hc2 = lstm_cell(p.at("x"), lstm_h(hc), lstm_c(hc), p.at("wih"), p.at("whh"),
                                p.at("b"));
      return sum(hc2);
    };
  } else if (op == "softmax") {
    gi.params.add("z", detail::rand_tensor({6}, rng));
    gi.fn = [](ParamSet& p) {
      TensorPtr probs = softmax(p.at("z"));
      TensorPtr lp = log_softmax(p.at("z"));
      return add(pick(lp, 1), sum(mul(probs, p.at("z"))));
    };
  } else if (op == "attention") {
    const int dim = 4, dout = 3;
    gi.params.add("proc.regfeat.value.w", detail::rand_tensor({dim, dout}, rng, 0.5));
    gi.params.add("proc.regfeat.value.b", detail::rand_tensor({dout}, rng, 0.5));
    gi.params.add("proc.regfeat.score0.w", detail::rand_tensor({dout, 3}, rng, 0.5));
    gi.params.add("proc.regfeat.score0.b", detail::rand_tensor({3}, rng, 0.5));
    gi.params.add("proc.regfeat.score1.w", detail::rand_tensor({3, 1}, rng, 0.5));
    gi.params.add("proc.regfeat.score1.b", detail::rand_tensor({1}, rng, 0.5));
    auto regions = detail::rand_regions(4, dim, rng);
    gi.fn = [regions](ParamSet& p) {
      return sum(region_self_attention(regions, p, "proc.regfeat").pooled.t);
    };
  } else if (op == "aggregate") {
    RunConfig c = oracle_mini_config();
    gi.params = init_theta(c, rng.next_u64());
    Rng data_rng(rng.next_u64());
    auto seg = detail::rand_tensor({c.modalities.seg_dim_in}, data_rng);
    auto tgt = detail::rand_tensor({c.modalities.target_dim_in}, data_rng);
    gi.fn = [c, seg, tgt](ParamSet& p) {
      std::vector<ATensor> ats;
      ats.push_back(process_linear(seg, p, "proc.seg"));
      ats.push_back(process_linear(tgt, p, "proc.target"));
      ats.push_back(ATensor::vec(linear_apply(action_onehot(2), p.at("proc.action.0.w"),
                                              p.at("proc.action.0.b"), true)));
      return sum(aggregate(ats, p, "agg", c.model.grid_h, c.model.grid_w));
    };
  } else if (op == "composite") {
    // frozen trajectory, teacher-forced replay through the full network into
    // the navigation loss
    RunConfig c = oracle_mini_config();
    c.env.max_steps = 6;
    auto scene = std::make_shared<GridScene>(
        generate_scene("kitchen", mix_seed(seed, fnv1a("composite-scene")), "gradcheck"));
    auto table = std::make_shared<EmbeddingTable>(c.modalities.target_dim_in, rng.next_u64());
    gi.params = init_theta(c, rng.next_u64());
    // jitter all parameters (zero-init biases would park ReLU pre-activations
    // exactly on the kink for zero inputs such as the step-0 action one-hot)
    Rng jitter(rng.next_u64());
    for (auto& [name, t] : gi.params)
      for (double& v : t->data) v += jitter.normal(0.0, 0.05);
    Task task = sample_task(*scene, rng.next_u64());
    Rng roll_rng(rng.next_u64());
    auto traj = std::make_shared<Trajectory>(rollout(*scene, task, c, gi.params, c.env.max_steps,
                                                     SelectMode::Sample, roll_rng, *table,
                                                     rng.next_u64()));
    // freeze the advantages at the base parameters: navigation_loss detaches
    // (R - V) in its policy term, so the FD probe must see the same constants
    // the analytic gradient sees
    std::vector<double> rewards;
    for (const auto& s : traj->steps) rewards.push_back(s.reward);
    auto R = std::make_shared<std::vector<double>>(discounted_returns(rewards, c.meta.gamma));
    auto adv = std::make_shared<std::vector<double>>();
    {
      ReplayOutput base = replay(*scene, *traj, c, gi.params, *table, traj->steps.size());
      for (size_t t = 0; t < traj->steps.size(); ++t)
        adv->push_back((*R)[t] - base.value[t]->data[0]);
    }
    gi.fn = [c, scene, table, traj, R, adv](ParamSet& p) {
      ReplayOutput rep = replay(*scene, *traj, c, p, *table, traj->steps.size());
      TensorPtr total;
      for (size_t t = 0; t < traj->steps.size(); ++t) {
        const int a = static_cast<int>(traj->steps[t].action);
        TensorPtr lp = log_softmax(rep.logits[t]);
        TensorPtr term = scale(pick(lp, a), -(*adv)[t]);
        TensorPtr delta = sub(scalar((*R)[t]), rep.value[t]);
        term = add(term, scale(mul(delta, delta), 0.5));
        TensorPtr probs = softmax(rep.logits[t]);
        term = sub(term, scale(neg(sum(mul(probs, lp))), c.meta.entropy_beta));
        total = total ? add(total, term) : term;
      }
      return total;
    };
  } else {
    throw ValueError("make_grad_instance: unknown op " + op);
  }
  return gi;
}

// grad-check one op on `instances` random instances; resamples seeds whose
// loss surface has a ReLU kink too close to the FD probe
inline double gradcheck_op(const std::string& op, int instances, double h = 1e-6,
                           std::uint64_t seed0 = 1) {
  // A kink only corrupts the FD probe when a ReLU pre-activation can cross
  // zero within +/- h of an evaluation point; large graphs (composite) see
  // many benign small pre-activations, so they get the tighter band.
  const double kink_band = (op == "composite" || op == "aggregate") ? 10.0 * h : 100.0 * h;
  double worst = 0.0;
  int done = 0;
  std::uint64_t seed = seed0;
  int guard = 0;
  while (done < instances) {
    if (++guard > instances * 20)
      throw ValueError("gradcheck_op: could not find kink-free instances for " + op);
    GradInstance gi = make_grad_instance(op, seed++);
    GradCheckResult r = grad_check(gi.fn, gi.params, h);
    if (r.min_relu_preact < kink_band) continue;  // kink within probe range; resample
    worst = std::max(worst, r.max_rel_error);
    ++done;
  }
  return worst;
}

// ---------------------------------------------------------------------------
// independent Dijkstra (priority queue, same state space as the BFS oracle)

inline int dijkstra_path_length(const GridScene& scene, const AgentPose& start,
                                const std::string& target) {
  auto encode = [&](const AgentPose& p) {
    return ((p.y * scene.width + p.x) * 8 + p.heading) * 3 + (p.pitch / 30 + 1);
  };
  const size_t n = static_cast<size_t>(scene.width) * scene.height * 8 * 3;
  std::vector<int> dist(n, -1);
  using Item = std::pair<int, int>;  // (distance, state code)
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  std::vector<AgentPose> pose_of(n);
  dist[static_cast<size_t>(encode(start))] = 0;
  pose_of[static_cast<size_t>(encode(start))] = start;
  pq.emplace(0, encode(start));
  while (!pq.empty()) {
    auto [d, code] = pq.top();
    pq.pop();
    if (d != dist[static_cast<size_t>(code)]) continue;
    const AgentPose pose = pose_of[static_cast<size_t>(code)];
    if (is_success(scene, pose, target)) return d;
    for (int a = 0; a < kNumActions - 1; ++a) {
      StepResult r = step(scene, pose, static_cast<Action>(a));
      const int nc = encode(r.pose);
      if (dist[static_cast<size_t>(nc)] == -1 || d + 1 < dist[static_cast<size_t>(nc)]) {
        dist[static_cast<size_t>(nc)] = d + 1;
        pose_of[static_cast<size_t>(nc)] = r.pose;
        pq.emplace(d + 1, nc);
      }
    }
  }
  throw UnreachableError("dijkstra_path_length: unreachable target " + target);
}

// ---------------------------------------------------------------------------
// 1-D analytic meta toy: L_int = theta^2/2, L_nav = (theta-1)^2/2, psi = 0.1

struct MetaToyResult {
  double fd_oracle;     // expected -0.09
  double first_order;   // expected -0.1
};

inline MetaToyResult meta_toy() {
  const double psi = 0.1;
  CompositeFn composite = [psi](const std::vector<double>& th) {
    const double adapted = th[0] - psi * th[0];  // grad of theta^2/2 is theta
    return 0.5 * (adapted - 1.0) * (adapted - 1.0);
  };
  MetaToyResult r;
  r.fd_oracle = fd_meta_gradient(composite, {1.0}, 1e-4)[0];
  // first-order: dL_nav/dtheta' at theta' = 0.9, via the autodiff graph
  ParamSet adapted;
  adapted.add("theta", tensor({1}, {1.0 - psi * 1.0}));
  TensorPtr d = sub(adapted.at("theta"), scalar(1.0));
  TensorPtr loss = scale(mul(d, d), 0.5);
  backward(loss);
  r.first_order = adapted.at("theta")->grad[0];
  return r;
}

// ---------------------------------------------------------------------------
// end-to-end meta-gradient oracle trial on an oracle-mini network:
// returns the inner product between the first-order and FD meta-gradients

inline double meta_oracle_trial(std::uint64_t seed) {
  RunConfig c = oracle_mini_config();
  c.meta.k = 3;
  c.env.max_steps = 10;
  for (int attempt = 0; attempt < 16; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    GridScene scene = generate_scene("bedroom", rng.next_u64(), "oracle");
    EmbeddingTable table(c.modalities.target_dim_in, rng.next_u64());
    ParamSet theta = init_theta(c, rng.next_u64());
    ParamSet phi = init_phi(c, rng.next_u64());
    Task task = sample_task(scene, rng.next_u64());
    Rng roll_rng(rng.next_u64());
    Trajectory traj = rollout(scene, task, c, theta, c.env.max_steps, SelectMode::Sample,
                              roll_rng, table, rng.next_u64());
    if (traj.steps.size() <= static_cast<size_t>(c.meta.k)) continue;  // no post-window steps

    FrozenTaskObjective obj;
    obj.scene = &scene;
    obj.traj = std::move(traj);
    obj.cfg = c;
    obj.theta_template = theta.clone();
    obj.phi = phi.clone();
    obj.table = &table;

    const std::vector<double> x0 = theta.flatten();
    const auto g_fd =
        fd_meta_gradient([&obj](const std::vector<double>& x) { return obj.composite(x); }, x0,
                         1e-5);
    const auto g_fo = obj.first_order_gradient(x0);
    double dot = 0.0, nfd = 0.0;
    for (size_t i = 0; i < g_fd.size(); ++i) {
      dot += g_fd[i] * g_fo[i];
      nfd += g_fd[i] * g_fd[i];
    }
    if (nfd == 0.0) continue;  // degenerate trial (no gradient signal)
    return dot;
  }
  throw OracleError("meta_oracle_trial: no usable trajectory for seed");
}

// ---------------------------------------------------------------------------
// named checks

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline VerifyCheck check_gradients(int instances) {
  VerifyCheck c{"grad_check", true, ""};
  double worst = 0.0;
  for (const auto& op : gradcheck_ops()) {
    const double e = gradcheck_op(op, instances);
    worst = std::max(worst, e);
    if (e >= 1e-4) {
      c.pass = false;
      c.detail += op + " rel_err=" + std::to_string(e) + "; ";
    }
  }
  if (c.pass) c.detail = "max rel err " + std::to_string(worst) + " over all ops";
  return c;
}

inline VerifyCheck check_shapes() {
  VerifyCheck c{"table_shapes", false, ""};
  RunConfig cfg = paper_shapes_config();
  Rng rng(7);
  ParamSet theta = init_theta(cfg, 7);
  auto expect = [&](const std::vector<int>& got, const std::vector<int>& want,
                    const std::string& what) {
    if (got != want)
      throw ShapeError(what + ": got " + shape_str(got) + ", want " + shape_str(want));
  };
  ATensor rgb = process_conv(detail::rand_tensor({512, 7, 7}, rng), theta, "proc.rgb",
                             {ConvLayerCfg{cfg.modalities.rgb_channels_out, 1, 1, 1, 1}});
  expect(rgb.t->shape, {64, 7, 7}, "rgb");
  ATensor depth =
      process_conv(detail::rand_tensor({1, 384, 512}, rng), theta, "proc.depth",
                   cfg.modalities.depth_chain);
  expect(depth.t->shape, {64, 7, 7}, "depth");
  ATensor seg = process_linear(detail::rand_tensor({2048}, rng), theta, "proc.seg");
  expect(seg.t->shape, {64}, "segmentation");
  auto regions = detail::rand_regions(5, 2048, rng);
  AttentionOutput att = region_self_attention(regions, theta, "proc.regfeat");
  expect(att.pooled.t->shape, {64}, "region_feature");
  ATensor prop = process_proposals(regions, theta, "proc.prop", 10);
  expect(prop.t->shape, {10}, "region_proposal");
  ATensor tgt = process_linear(detail::rand_tensor({300}, rng), theta, "proc.target");
  expect(tgt.t->shape, {64}, "target");
  TensorPtr act = linear_apply(action_onehot(3), theta.at("proc.action.0.w"),
                               theta.at("proc.action.0.b"), true);
  expect(act->shape, {10}, "action");
  TensorPtr e = aggregate({rgb, seg, depth, att.pooled, prop, tgt, ATensor::vec(act)}, theta,
                          "agg", 7, 7);
  expect(e->shape, {3136}, "aggregate");

  // negative fixture: a broken stride chain produces an off-grid map that
  // must be rejected when it reaches the aggregator
  bool rejected = false;
  try {
    std::vector<ConvLayerCfg> broken = cfg.modalities.depth_chain;
    broken[4].sh = 5;  // final map is no longer 7x7
    ATensor bad =
        process_conv(detail::rand_tensor({1, 384, 512}, rng), theta, "proc.depth", broken);
    aggregate({rgb, seg, bad, att.pooled, prop, tgt, ATensor::vec(act)}, theta, "agg", 7, 7);
  } catch (const ShapeError&) {
    rejected = true;
  }
  if (!rejected) {
    c.detail = "broken stride chain was not rejected";
    return c;
  }
  c.pass = true;
  c.detail = "all Table-style chains exact; broken stride rejected";
  return c;
}

inline VerifyCheck check_attention_properties() {
  VerifyCheck c{"attention", false, ""};
  RunConfig cfg = desk_mini_config();
  cfg.modalities.region_feature = true;
  ParamSet theta = init_theta(cfg, 11);
  Rng rng(13);
  auto regions = detail::rand_regions(6, cfg.modalities.region_feature_dim_in, rng);
  AttentionOutput a = region_self_attention(regions, theta, "proc.regfeat");
  double s = 0.0;
  for (double v : a.scores) s += v;
  if (std::fabs(s - 1.0) > 1e-6) {
    c.detail = "scores do not sum to 1";
    return c;
  }
  // permutation invariance (bit-exact pooled output)
  std::vector<Region> shuffled = {regions[3], regions[0], regions[5],
                                  regions[1], regions[4], regions[2]};
  AttentionOutput b = region_self_attention(shuffled, theta, "proc.regfeat");
  if (a.pooled.t->data != b.pooled.t->data) {
    c.detail = "pooled output not bit-invariant under permutation";
    return c;
  }
  // 7 identical regions -> exactly 1/7 each
  std::vector<Region> same(7, regions[0]);
  AttentionOutput u = region_self_attention(same, theta, "proc.regfeat");
  for (double v : u.scores)
    if (v != 1.0 / 7.0) {
      c.detail = "identical regions do not score exactly 1/7";
      return c;
    }
  c.pass = true;
  c.detail = "probability vector, permutation-invariant, symmetric case exact";
  return c;
}

inline VerifyCheck check_metrics_oracle() {
  VerifyCheck c{"metrics", false, ""};
  auto rec = [](int S, int L, int P) {
    EpisodeRecord r;
    r.S = S;
    r.L = L;
    r.P = P;
    return r;
  };
  const std::vector<EpisodeRecord> rs = {rec(1, 8, 4), rec(1, 5, 5), rec(0, 3, 2), rec(1, 10, 10)};
  if (success_rate(rs) != 0.75) {
    c.detail = "success_rate mismatch";
    return c;
  }
  const double std_spl = (4.0 / 8.0 + 1.0 + 0.0 + 1.0) / 4.0;
  const double lit_spl = (8.0 / 8.0 + 1.0 + 0.0 + 1.0) / 4.0;
  if (spl(rs, SplVariant::Standard) != std_spl || spl(rs, SplVariant::PaperLiteral) != lit_spl) {
    c.detail = "spl mismatch";
    return c;
  }
  c.pass = true;
  c.detail = "hand-computed record sets match";
  return c;
}

inline VerifyCheck check_bfs_dijkstra(int n_scenes) {
  VerifyCheck c{"bfs_dijkstra", true, ""};
  int compared = 0;
  for (int i = 0; i < n_scenes; ++i) {
    const std::string room = room_types()[static_cast<size_t>(i) % room_types().size()];
    GridScene scene = generate_scene(room, mix_seed(23, static_cast<std::uint64_t>(i)), "xcheck");
    for (int j = 0; j < 3; ++j) {
      Task t = sample_task(scene, mix_seed(29, static_cast<std::uint64_t>(i * 16 + j)));
      const int p_bfs = optimal_path_length(scene, t.start, t.target);
      const int p_dij = dijkstra_path_length(scene, t.start, t.target);
      ++compared;
      if (p_bfs != p_dij) {
        c.pass = false;
        c.detail = "BFS " + std::to_string(p_bfs) + " != Dijkstra " + std::to_string(p_dij) +
                   " on " + room;
        return c;
      }
    }
  }
  c.detail = std::to_string(compared) + " tasks agree";
  return c;
}

inline VerifyCheck check_meta_oracle(int trials, double min_agreement) {
  VerifyCheck c{"meta_oracle", false, ""};
  const MetaToyResult toy = meta_toy();
  if (std::fabs(toy.fd_oracle - (-0.09)) > 1e-6) {
    c.detail = "1-D toy FD oracle " + std::to_string(toy.fd_oracle) + " != -0.09";
    return c;
  }
  if (std::fabs(toy.first_order - (-0.1)) > 1e-6) {
    c.detail = "1-D toy first-order " + std::to_string(toy.first_order) + " != -0.1";
    return c;
  }
  int agree = 0;
  for (int i = 0; i < trials; ++i)
    if (meta_oracle_trial(mix_seed(31, static_cast<std::uint64_t>(i))) > 0.0) ++agree;
  const double frac = static_cast<double>(agree) / trials;
  c.pass = frac >= min_agreement;
  c.detail = "toy exact (-0.09 vs -0.1); sign agreement " + std::to_string(agree) + "/" +
             std::to_string(trials);
  return c;
}

inline std::vector<VerifyCheck> run_verify_suite() {
  std::vector<VerifyCheck> out;
  out.push_back(check_gradients(3));
  out.push_back(check_shapes());
  out.push_back(check_attention_properties());
  out.push_back(check_metrics_oracle());
  out.push_back(check_bfs_dijkstra(6));
  out.push_back(check_meta_oracle(12, 0.9));
  return out;
}

}  // namespace mvvin
