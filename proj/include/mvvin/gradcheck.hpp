#pragma once

// Finite-difference oracle for gradients: central differences against the
// reverse-mode pass, reported as max relative error over all parameters.

#include <cmath>
#include <functional>

#include "mvvin/nn.hpp"
#include "mvvin/tensor.hpp"

namespace mvvin {

// f rebuilds its graph from the current param values on every call.
using ScalarFn = std::function<TensorPtr(ParamSet&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double min_relu_preact = std::numeric_limits<double>::infinity();
};

inline GradCheckResult grad_check(const ScalarFn& f, ParamSet& params, double h) {
  GradCheckResult res;
  KinkMonitor monitor;
  struct Guard {
    ~Guard() { kink_monitor() = nullptr; }
  } guard;
  kink_monitor() = &monitor;

  params.zero_grad();
  TensorPtr loss = f(params);
  if (!std::isfinite(loss->data[0])) throw ValueError("grad_check: non-finite loss");
  backward(loss);
  GradMap analytic = grads_of(params);

  for (auto& [name, t] : params) {
    for (size_t i = 0; i < t->data.size(); ++i) {
      const double saved = t->data[i];
      t->data[i] = saved + h;
      const double fp = f(params)->data[0];
      t->data[i] = saved - h;
      const double fm = f(params)->data[0];
      t->data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValueError("grad_check: non-finite perturbed loss");
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[name][i];
      const double rel = std::fabs(ad - fd) / std::max(1.0, std::fabs(fd));
      res.max_rel_error = std::max(res.max_rel_error, rel);
    }
  }
  res.min_relu_preact = monitor.min_abs;
  return res;
}

}  // namespace mvvin
