#pragma once

// Learning objectives: the actor-critic navigation loss, the learned
// interaction loss (phi), k-step inner SGD adaptation, the first-order outer
// update, and the finite-difference meta-gradient oracle.

#include <atomic>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "mvvin/model.hpp"

namespace mvvin {

// ---------------------------------------------------------------------------
// small deterministic worker pool: results land in index order regardless of
// worker count

inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  const int nw = std::min(workers, n);
  for (int w = 0; w < nw; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// navigation loss (actor-critic)

inline std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> R(rewards.size());
  double acc = 0.0;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    R[i] = acc;
  }
  return R;
}

// sum_t [ -logpi(a_t) * (R_t - V_t)_detached + 0.5 (R_t - V_t)^2 - beta H_t ].
// `frozen_adv` pins the detached advantages to externally supplied constants;
// the finite-difference oracles need this so the factor that autodiff treats
// as a constant does not silently vary under parameter perturbation.
inline TensorPtr navigation_loss(const std::vector<TensorPtr>& logits,
                                 const std::vector<TensorPtr>& values,
                                 const std::vector<int>& actions,
                                 const std::vector<double>& returns, double beta,
                                 const std::vector<double>* frozen_adv = nullptr) {
  if (logits.empty()) throw ValueError("navigation_loss: empty trajectory window");
  if (logits.size() != values.size() || logits.size() != actions.size() ||
      logits.size() != returns.size())
    throw ValueError("navigation_loss: window component sizes differ");
  if (frozen_adv && frozen_adv->size() != logits.size())
    throw ValueError("navigation_loss: frozen advantage size mismatch");
  TensorPtr total;
  for (size_t t = 0; t < logits.size(); ++t) {
    TensorPtr lp = log_softmax(logits[t]);
    TensorPtr logprob = pick(lp, actions[t]);
    const double adv =
        frozen_adv ? (*frozen_adv)[t] : returns[t] - values[t]->data[0];  // detached advantage
    TensorPtr policy_term = scale(logprob, -adv);
    TensorPtr delta = sub(scalar(returns[t]), values[t]);
    TensorPtr value_term = scale(mul(delta, delta), 0.5);
    TensorPtr term = add(policy_term, value_term);
    if (beta != 0.0) {
      TensorPtr p = softmax(logits[t]);
      TensorPtr entropy = neg(sum(mul(p, lp)));
      term = sub(term, scale(entropy, beta));
    }
    total = total ? add(total, term) : term;
  }
  return total;
}

// nav loss over trajectory steps [begin, end) from the recorded live graph
inline TensorPtr navigation_loss_from_traj(const Trajectory& traj, size_t begin, size_t end,
                                           double gamma, double beta) {
  std::vector<double> rewards;
  for (const auto& s : traj.steps) rewards.push_back(s.reward);
  const auto R = discounted_returns(rewards, gamma);
  std::vector<TensorPtr> logits, values;
  std::vector<int> actions;
  std::vector<double> returns;
  for (size_t t = begin; t < end && t < traj.steps.size(); ++t) {
    logits.push_back(traj.steps[t].logits);
    values.push_back(traj.steps[t].value);
    actions.push_back(static_cast<int>(traj.steps[t].action));
    returns.push_back(R[t]);
  }
  return navigation_loss(logits, values, actions, returns, beta);
}

// ---------------------------------------------------------------------------
// interaction loss (reward-free by construction: consumes only hidden states,
// logits and action one-hots)

struct InteractionWindow {
  std::vector<TensorPtr> columns;  // per step: [lstm_hidden + 12]
};

inline InteractionWindow window_from_steps(const std::vector<TensorPtr>& hs,
                                           const std::vector<TensorPtr>& logits,
                                           const std::vector<int>& actions) {
  if (hs.empty() || hs.size() != logits.size() || hs.size() != actions.size())
    throw ValueError("window_from_steps: inconsistent window");
  InteractionWindow w;
  for (size_t i = 0; i < hs.size(); ++i)
    w.columns.push_back(concat_vec({hs[i], logits[i], action_onehot(actions[i])}));
  return w;
}

inline InteractionWindow window_from_traj(const Trajectory& traj, size_t begin, size_t end,
                                          bool detached) {
  InteractionWindow w;
  for (size_t t = begin; t < end && t < traj.steps.size(); ++t) {
    TensorPtr h = traj.steps[t].h;
    TensorPtr lg = traj.steps[t].logits;
    if (detached) {
      h = detach(h);
      lg = detach(lg);
    }
    w.columns.push_back(concat_vec({h, lg, action_onehot(static_cast<int>(traj.steps[t].action))}));
  }
  return w;
}

// temporal convs (zero 'same' padding) + mean pool + linear head -> scalar
inline TensorPtr interaction_loss(const InteractionWindow& window, const ParamSet& phi) {
  if (window.columns.empty()) throw ValueError("interaction_loss: empty window");
  TensorPtr x = stack_cols(window.columns);
  x = relu(conv1d_same(x, phi.at("phi.conv0.w"), phi.at("phi.conv0.b")));
  x = relu(conv1d_same(x, phi.at("phi.conv1.w"), phi.at("phi.conv1.b")));
  TensorPtr pooled = mean_time(x);
  return linear_apply(pooled, phi.at("phi.head.w"), phi.at("phi.head.b"), false);
}

// ---------------------------------------------------------------------------
// inner adaptation: theta' = theta - psi * grad_theta L_int. Returns a fresh
// ParamSet; theta itself is never mutated.

inline ParamSet inner_adapt(ParamSet& theta, const InteractionWindow& window,
                            const ParamSet& phi, double psi) {
  ParamSet adapted = theta.clone();
  if (psi == 0.0) return adapted;
  theta.zero_grad();
  TensorPtr lint = interaction_loss(window, phi);
  backward(lint);
  for (auto& [name, t] : adapted) {
    const TensorPtr& src = theta.at(name);
    if (src->grad.size() != src->data.size()) continue;
    for (size_t i = 0; i < t->data.size(); ++i) t->data[i] -= psi * src->grad[i];
  }
  return adapted;
}

// ---------------------------------------------------------------------------
// adaptive rollout: adapt after every k steps (or once, per config), memory
// state detached at adaptation boundaries (truncated BPTT)

struct AdaptiveRollout {
  Trajectory traj;
  std::vector<ParamSet> variants;      // variants[0] is a clone of the input theta
  std::vector<size_t> segment_starts;  // step index where each variant took over
};

inline AdaptiveRollout rollout_adaptive(const GridScene& scene, const Task& task,
                                        const RunConfig& cfg, const ParamSet& theta,
                                        const ParamSet& phi, SelectMode mode, Rng& rng,
                                        const EmbeddingTable& table, std::uint64_t encoder_seed) {
  AdaptiveRollout out;
  out.variants.push_back(theta.clone());
  out.segment_starts.push_back(0);
  EpisodeRunner runner(scene, task, cfg, table, encoder_seed);
  const int k = cfg.meta.k;
  const bool adapt = cfg.meta.adaptation_enabled;
  int adaptations = 0;
  while (!runner.finished()) {
    const int seg = static_cast<int>(out.variants.size()) - 1;
    runner.do_step(out.variants.back(), mode, rng, seg);
    const int n = runner.steps_taken();
    const bool boundary = adapt && n % k == 0 && !runner.finished() &&
                          (cfg.meta.readapt_every_k || adaptations == 0);
    if (boundary) {
      InteractionWindow w = window_from_traj(runner.trajectory(),
                                             static_cast<size_t>(n - k),
                                             static_cast<size_t>(n), /*detached=*/false);
      out.variants.push_back(inner_adapt(out.variants.back(), w, phi, cfg.meta.inner_lr));
      out.segment_starts.push_back(static_cast<size_t>(n));
      runner.detach_memory();
      ++adaptations;
    }
  }
  out.traj = runner.take_trajectory();
  return out;
}

// ---------------------------------------------------------------------------
// outer step

struct TaskSpec {
  const GridScene* scene;
  Task task;
  std::uint64_t rng_seed;
};

struct OuterStats {
  double mean_nav_loss = 0.0;
  double mean_success = 0.0;
};

namespace detail {

// per-task gradient contribution for the meta objective
struct TaskGrads {
  GradMap theta;
  GradMap phi;
  double nav_loss_value = 0.0;
  double success = 0.0;
};

inline TaskGrads meta_task_grads(const TaskSpec& ts, const RunConfig& cfg, const ParamSet& theta,
                                 const ParamSet& phi, const EmbeddingTable& table,
                                 std::uint64_t encoder_seed) {
  TaskGrads out;
  ParamSet phi_local = phi.clone();
  Rng rng(ts.rng_seed);
  AdaptiveRollout ar = rollout_adaptive(*ts.scene, ts.task, cfg, theta, phi_local,
                                        SelectMode::Sample, rng, table, encoder_seed);
  const Trajectory& traj = ar.traj;
  out.success = traj.success ? 1.0 : 0.0;
  const size_t k = static_cast<size_t>(cfg.meta.k);
  const size_t nav_begin = std::min(k, traj.steps.size());
  if (nav_begin >= traj.steps.size()) {
    // episode ended within the first window; nothing to meta-train on
    return out;
  }

  // navigation gradients: per-segment backward (memory detached at
  // boundaries), first-order sum across parameter variants
  for (size_t seg = 0; seg < ar.variants.size(); ++seg) {
    const size_t seg_begin = ar.segment_starts[seg];
    const size_t seg_end =
        seg + 1 < ar.segment_starts.size() ? ar.segment_starts[seg + 1] : traj.steps.size();
    const size_t b = std::max(seg_begin, nav_begin);
    if (b >= seg_end) continue;
    TensorPtr loss = navigation_loss_from_traj(traj, b, seg_end, cfg.meta.gamma,
                                               cfg.meta.entropy_beta);
    out.nav_loss_value += loss->data[0];
    ar.variants[seg].zero_grad();
    backward(loss);
    accumulate(out.theta, grads_of(ar.variants[seg]));
  }

  // phi gradients
  if (cfg.meta.phi_objective == "imitate") {
    // regress each window's interaction loss onto the realized navigation
    // loss of the remainder (both reward-free at adaptation time; rewards
    // only enter phi's training target)
    for (size_t seg = 0; seg + 1 < ar.segment_starts.size(); ++seg) {
      const size_t wb = ar.segment_starts[seg];
      const size_t we = ar.segment_starts[seg + 1];
      const size_t rb = std::max(we, nav_begin);
      if (rb >= traj.steps.size()) continue;
      TensorPtr target_loss = navigation_loss_from_traj(traj, rb, traj.steps.size(),
                                                        cfg.meta.gamma, cfg.meta.entropy_beta);
      const double target = target_loss->data[0];
      InteractionWindow w = window_from_traj(traj, wb, we, /*detached=*/true);
      TensorPtr lint = interaction_loss(w, phi_local);
      TensorPtr diff = sub(lint, scalar(target));
      TensorPtr imit = mul(diff, diff);
      phi_local.zero_grad();
      backward(imit);
      accumulate(out.phi, grads_of(phi_local));
    }
  } else if (cfg.meta.inner_lr != 0.0 && !ar.variants.empty() && ar.variants.size() > 1) {
    // direct Eq.-5 gradient through the first inner update, via the
    // finite-difference Hessian-vector trick:
    //   dL_nav/dphi = -psi * d/dphi [ grad_theta L_int(theta, phi) . v ],
    //   v = dL_nav/dtheta', and the directional derivative is evaluated as
    //   (L_int(theta + eps v) - L_int(theta - eps v)) / (2 eps)
    double vnorm = 0.0;
    for (const auto& [name, g] : out.theta)
      for (double x : g) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
    if (vnorm > 0.0) {
      const double eps = 1e-4 / vnorm;
      auto perturbed_lint = [&](double sign) {
        ParamSet tp = theta.clone();
        for (auto& [name, t] : tp) {
          auto it = out.theta.find(name);
          if (it == out.theta.end()) continue;
          for (size_t i = 0; i < t->data.size(); ++i) t->data[i] += sign * eps * it->second[i];
        }
        ReplayOutput rep = replay(*ts.scene, traj, cfg, tp, table, k);
        std::vector<int> acts;
        for (size_t t = 0; t < k && t < traj.steps.size(); ++t)
          acts.push_back(static_cast<int>(traj.steps[t].action));
        return interaction_loss(window_from_steps(rep.h, rep.logits, acts), phi_local);
      };
      TensorPtr lp = perturbed_lint(+1.0);
      TensorPtr lm = perturbed_lint(-1.0);
      TensorPtr j = scale(sub(lp, lm), -cfg.meta.inner_lr / (2.0 * eps));
      phi_local.zero_grad();
      backward(j);
      accumulate(out.phi, grads_of(phi_local));
    }
  }
  return out;
}

}  // namespace detail

// Adam over the union of theta and phi, stepped atomically.
class MetaOptimizer {
 public:
  explicit MetaOptimizer(double lr) : adam_(lr) {}

  void step(ParamSet& theta, ParamSet& phi, const GradMap& gtheta, const GradMap& gphi) {
    ++adam_.step_count;
    apply(theta, gtheta);
    apply(phi, gphi);
  }

  Adam& state() { return adam_; }

 private:
  void apply(ParamSet& params, const GradMap& grads) {
    const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(adam_.step_count));
    const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(adam_.step_count));
    for (auto& [k, t] : params) {
      auto it = grads.find(k);
      const size_t n = t->data.size();
      auto& mk = adam_.m[k];
      auto& vk = adam_.v[k];
      if (mk.empty()) mk.assign(n, 0.0);
      if (vk.empty()) vk.assign(n, 0.0);
      for (size_t i = 0; i < n; ++i) {
        const double g = it == grads.end() ? 0.0 : it->second[i];
        mk[i] = adam_.beta1 * mk[i] + (1.0 - adam_.beta1) * g;
        vk[i] = adam_.beta2 * vk[i] + (1.0 - adam_.beta2) * g * g;
        t->data[i] -= adam_.lr * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + adam_.eps);
      }
    }
  }

  Adam adam_;
};

// one outer update over a batch of meta-tasks; deterministic reduction in
// task order, independent of worker count
inline OuterStats meta_outer_step(const std::vector<TaskSpec>& batch, const RunConfig& cfg,
                                  ParamSet& theta, ParamSet& phi, MetaOptimizer& opt,
                                  const EmbeddingTable& table, std::uint64_t encoder_seed) {
  if (batch.empty()) throw ValueError("meta_outer_step: empty batch");
  std::vector<detail::TaskGrads> results(batch.size());
  parallel_for(static_cast<int>(batch.size()), cfg.meta.workers, [&](int i) {
    ParamSet theta_local = theta.clone();
    results[static_cast<size_t>(i)] = detail::meta_task_grads(
        batch[static_cast<size_t>(i)], cfg, theta_local, phi, table, encoder_seed);
  });
  GradMap gtheta, gphi;
  OuterStats stats;
  for (const auto& r : results) {
    accumulate(gtheta, r.theta);
    accumulate(gphi, r.phi);
    stats.mean_nav_loss += r.nav_loss_value;
    stats.mean_success += r.success;
  }
  stats.mean_nav_loss /= static_cast<double>(batch.size());
  stats.mean_success /= static_cast<double>(batch.size());
  opt.step(theta, phi, gtheta, gphi);
  return stats;
}

// plain actor-critic comparison path: same rollout and loss conventions, no
// adaptation machinery (used by the Eq.-5 collapse check and as the psi=0
// reference)
inline OuterStats actor_critic_outer_step(const std::vector<TaskSpec>& batch,
                                          const RunConfig& cfg, ParamSet& theta, ParamSet& phi,
                                          MetaOptimizer& opt, const EmbeddingTable& table,
                                          std::uint64_t encoder_seed) {
  if (batch.empty()) throw ValueError("actor_critic_outer_step: empty batch");
  RunConfig plain = cfg;
  plain.meta.inner_lr = 0.0;
  std::vector<detail::TaskGrads> results(batch.size());
  parallel_for(static_cast<int>(batch.size()), cfg.meta.workers, [&](int i) {
    ParamSet theta_local = theta.clone();
    results[static_cast<size_t>(i)] = detail::meta_task_grads(
        batch[static_cast<size_t>(i)], plain, theta_local, phi, table, encoder_seed);
  });
  GradMap gtheta;
  OuterStats stats;
  for (const auto& r : results) {
    accumulate(gtheta, r.theta);
    stats.mean_nav_loss += r.nav_loss_value;
    stats.mean_success += r.success;
  }
  stats.mean_nav_loss /= static_cast<double>(batch.size());
  stats.mean_success /= static_cast<double>(batch.size());
  opt.step(theta, phi, gtheta, GradMap{});
  return stats;
}

// ---------------------------------------------------------------------------
// finite-difference meta-gradient oracle

struct OracleError : std::runtime_error {
  explicit OracleError(const std::string& m) : std::runtime_error(m) {}
};

using CompositeFn = std::function<double(const std::vector<double>&)>;

// central differences of composite(theta) per coordinate; rejects
// non-deterministic objectives
inline std::vector<double> fd_meta_gradient(const CompositeFn& composite,
                                            const std::vector<double>& theta0, double h) {
  const double f0 = composite(theta0);
  const double f1 = composite(theta0);
  if (f0 != f1) throw OracleError("fd_meta_gradient: objective is non-deterministic");
  if (!std::isfinite(f0)) throw OracleError("fd_meta_gradient: non-finite objective");
  std::vector<double> g(theta0.size());
  std::vector<double> x = theta0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = composite(x);
    x[i] = saved - h;
    const double fm = composite(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Builders over a frozen trajectory (teacher-forced replays, pure in the
// parameter vector):
//   composite(theta) = L_nav(theta - psi grad_theta L_int(theta, window),
//                            steps >= k)
struct FrozenTaskObjective {
  const GridScene* scene;
  Trajectory traj;
  RunConfig cfg;
  ParamSet theta_template;  // defines names/shapes for unflattening
  ParamSet phi;
  const EmbeddingTable* table;

  std::vector<int> actions(size_t begin, size_t end) const {
    std::vector<int> a;
    for (size_t t = begin; t < end && t < traj.steps.size(); ++t)
      a.push_back(static_cast<int>(traj.steps[t].action));
    return a;
  }

  ParamSet adapt(const std::vector<double>& flat) const {
    ParamSet th = theta_template.clone();
    th.unflatten(flat);
    const size_t k = static_cast<size_t>(cfg.meta.k);
    ReplayOutput rep = replay(*scene, traj, cfg, th, *table, k);
    InteractionWindow w = window_from_steps(rep.h, rep.logits, actions(0, k));
    return inner_adapt(th, w, phi, cfg.meta.inner_lr);
  }

  // nav loss over steps >= k under the given adapted parameters; the detached
  // advantages are frozen at the recorded trajectory values so the composite
  // is the exact function the first-order gradient differentiates
  TensorPtr nav_loss_graph(ParamSet& adapted) const {
    const size_t k = static_cast<size_t>(cfg.meta.k);
    ReplayOutput rep = replay(*scene, traj, cfg, adapted, *table, traj.steps.size());
    std::vector<double> rewards;
    for (const auto& s : traj.steps) rewards.push_back(s.reward);
    const auto R = discounted_returns(rewards, cfg.meta.gamma);
    std::vector<TensorPtr> logits, values;
    std::vector<int> acts;
    std::vector<double> returns, advs;
    for (size_t t = k; t < traj.steps.size(); ++t) {
      logits.push_back(rep.logits[t]);
      values.push_back(rep.value[t]);
      acts.push_back(static_cast<int>(traj.steps[t].action));
      returns.push_back(R[t]);
      advs.push_back(R[t] - traj.steps[t].value_snapshot);
    }
    return navigation_loss(logits, values, acts, returns, cfg.meta.entropy_beta, &advs);
  }

  double composite(const std::vector<double>& flat) const {
    ParamSet adapted = adapt(flat);
    return nav_loss_graph(adapted)->data[0];
  }

  // first-order meta-gradient: dL_nav/dtheta' at theta' = adapt(theta)
  std::vector<double> first_order_gradient(const std::vector<double>& flat) const {
    ParamSet adapted = adapt(flat);
    adapted.zero_grad();
    TensorPtr loss = nav_loss_graph(adapted);
    backward(loss);
    std::vector<double> g;
    for (auto& [name, t] : adapted) {
      t->ensure_grad();
      g.insert(g.end(), t->grad.begin(), t->grad.end());
    }
    return g;
  }
};

}  // namespace mvvin
