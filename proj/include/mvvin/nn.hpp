#pragma once

// Named parameter collections and the two optimizers the training loop uses.

#include <map>
#include <string>
#include <vector>

#include "mvvin/rng.hpp"
#include "mvvin/tensor.hpp"

namespace mvvin {

// Named map of tensors with deterministic (lexicographic) iteration order.
class ParamSet {
 public:
  using Map = std::map<std::string, TensorPtr>;

  void add(const std::string& name, TensorPtr t) {
    if (items_.count(name)) throw ValueError("ParamSet: duplicate name " + name);
    t->requires_grad = true;
    items_.emplace(name, std::move(t));
  }

  TensorPtr& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ValueError("ParamSet: unknown name " + name);
    return it->second;
  }
  const TensorPtr& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ValueError("ParamSet: unknown name " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return items_.count(name) != 0; }

  Map::iterator begin() { return items_.begin(); }
  Map::iterator end() { return items_.end(); }
  Map::const_iterator begin() const { return items_.begin(); }
  Map::const_iterator end() const { return items_.end(); }
  size_t count() const { return items_.size(); }

  std::int64_t num_scalars() const {
    std::int64_t n = 0;
    for (auto& [k, v] : items_) n += v->size();
    return n;
  }

  void zero_grad() {
    for (auto& [k, v] : items_) v->zero_grad();
  }

  // deep copy; fresh leaf tensors, grads not copied
  ParamSet clone() const {
    ParamSet out;
    for (auto& [k, v] : items_) out.add(k, tensor(v->shape, v->data, true));
    return out;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    for (auto& [k, v] : items_) out.insert(out.end(), v->data.begin(), v->data.end());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    size_t off = 0;
    for (auto& [k, v] : items_) {
      if (off + v->data.size() > flat.size()) throw ValueError("ParamSet: unflatten size mismatch");
      std::copy(flat.begin() + off, flat.begin() + off + v->data.size(), v->data.begin());
      off += v->data.size();
    }
    if (off != flat.size()) throw ValueError("ParamSet: unflatten size mismatch");
  }

 private:
  Map items_;
};

using GradMap = std::map<std::string, std::vector<double>>;

inline GradMap grads_of(const ParamSet& ps) {
  GradMap out;
  for (auto& [k, v] : ps) {
    if (v->grad.size() == v->data.size())
      out[k] = v->grad;
    else
      out[k].assign(v->data.size(), 0.0);
  }
  return out;
}

inline void accumulate(GradMap& into, const GradMap& from) {
  for (auto& [k, g] : from) {
    auto& dst = into[k];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    if (dst.size() != g.size()) throw ShapeError("accumulate: gradient size mismatch for " + k);
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

inline GradMap flat_grads(const ParamSet& ps, const std::vector<double>& flat) {
  GradMap out;
  size_t off = 0;
  for (auto& [k, v] : ps) {
    out[k].assign(flat.begin() + off, flat.begin() + off + v->data.size());
    off += v->data.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// initializers

// zero-mean normals with std sqrt(2/fan_in), the ReLU-era scaling
inline TensorPtr he_scaled_init(std::vector<int> shape, int fan_in, std::uint64_t seed) {
  if (fan_in < 1) throw ValueError("he_scaled_init: fan_in must be >= 1");
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (double& v : d) v = rng.normal(0.0, stddev);
  return tensor(std::move(shape), std::move(d));
}

inline TensorPtr uniform_init(std::vector<int> shape, int fan_in, std::uint64_t seed,
                              double gain = 1.0) {
  Rng rng(seed);
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (double& v : d) v = rng.uniform(-bound, bound);
  return tensor(std::move(shape), std::move(d));
}

// ---------------------------------------------------------------------------
// optimizers

inline void sgd_update(ParamSet& params, const GradMap& grads, double lr) {
  if (lr < 0.0) throw ValueError("sgd_update: lr must be >= 0");
  for (auto& [k, t] : params) {
    auto it = grads.find(k);
    if (it == grads.end()) continue;
    if (it->second.size() != t->data.size())
      throw ShapeError("sgd_update: gradient size mismatch for " + k);
    for (size_t i = 0; i < t->data.size(); ++i) t->data[i] -= lr * it->second[i];
  }
}

class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  GradMap m, v;

  Adam() = default;
  explicit Adam(double lr_) : lr(lr_) {}

  void step(ParamSet& params, const GradMap& grads) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [k, t] : params) {
      auto it = grads.find(k);
      const size_t n = t->data.size();
      auto& mk = m[k];
      auto& vk = v[k];
      if (mk.empty()) mk.assign(n, 0.0);
      if (vk.empty()) vk.assign(n, 0.0);
      if (mk.size() != n || vk.size() != n)
        throw ShapeError("adam: moment size mismatch for " + k);
      for (size_t i = 0; i < n; ++i) {
        const double g = it == grads.end() ? 0.0 : it->second[i];
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g;
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g * g;
        const double mhat = mk[i] / bc1;
        const double vhat = vk[i] / bc2;
        t->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace mvvin
