#pragma once

// Reverse-mode autodiff over dense row-major tensors. Define-by-run: every
// forward op links its output to its parents and stores a backward closure;
// backward() topologically sorts the reachable graph (the tape) and runs it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mvvin {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& m) : std::runtime_error(m) {}
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<TensorPtr> parents;
  // reads this->grad, accumulates into parents' grads
  std::function<void(Tensor&)> backprop;

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

inline std::int64_t numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline TensorPtr tensor(std::vector<int> shape, std::vector<double> data,
                        bool requires_grad = false) {
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

inline TensorPtr zeros(std::vector<int> shape, bool requires_grad = false) {
  std::vector<double> d(static_cast<size_t>(numel(shape)), 0.0);
  return tensor(std::move(shape), std::move(d), requires_grad);
}

inline TensorPtr scalar(double v, bool requires_grad = false) {
  return tensor({1}, {v}, requires_grad);
}

// Records the tape used by one backward pass (reverse-topological execution
// order runs back-to-front over `order`).
struct Tape {
  std::vector<Tensor*> order;
};

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
}

// ---------------------------------------------------------------------------
// kink monitor: lets gradient-check harnesses reject instances whose ReLU
// pre-activations sit too close to the kink.

struct KinkMonitor {
  double min_abs = std::numeric_limits<double>::infinity();
};

inline KinkMonitor*& kink_monitor() {
  thread_local KinkMonitor* m = nullptr;
  return m;
}

// ---------------------------------------------------------------------------
// ops

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  auto out = std::make_shared<Tensor>();
  out->shape = a->shape;
  out->data.resize(a->data.size());
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  out->parents = {a, b};
  out->backprop = [a, b](Tensor& self) {
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      a->grad[i] += self.grad[i];
      b->grad[i] += self.grad[i];
    }
  };
  return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "sub");
  auto out = std::make_shared<Tensor>();
  out->shape = a->shape;
  out->data.resize(a->data.size());
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
  out->parents = {a, b};
  out->backprop = [a, b](Tensor& self) {
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      a->grad[i] += self.grad[i];
      b->grad[i] -= self.grad[i];
    }
  };
  return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  auto out = std::make_shared<Tensor>();
  out->shape = a->shape;
  out->data.resize(a->data.size());
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  out->parents = {a, b};
  out->backprop = [a, b](Tensor& self) {
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      a->grad[i] += self.grad[i] * b->data[i];
      b->grad[i] += self.grad[i] * a->data[i];
    }
  };
  return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
  auto out = std::make_shared<Tensor>();
  out->shape = a->shape;
  out->data.resize(a->data.size());
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * s;
  out->parents = {a};
  out->backprop = [a, s](Tensor& self) {
    a->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * s;
  };
  return out;
}

inline TensorPtr neg(const TensorPtr& a) { return scale(a, -1.0); }

inline TensorPtr sum(const TensorPtr& a) {
  auto out = std::make_shared<Tensor>();
  out->shape = {1};
  double s = 0.0;
  for (double v : a->data) s += v;
  out->data = {s};
  out->parents = {a};
  out->backprop = [a](Tensor& self) {
    a->ensure_grad();
    for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += self.grad[0];
  };
  return out;
}

inline TensorPtr mean(const TensorPtr& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->size()));
}

inline TensorPtr relu(const TensorPtr& a) {
  if (auto* m = kink_monitor()) {
    for (double v : a->data) m->min_abs = std::min(m->min_abs, std::fabs(v));
  }
  auto out = std::make_shared<Tensor>();
  out->shape = a->shape;
  out->data.resize(a->data.size());
  for (size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  out->parents = {a};
  out->backprop = [a](Tensor& self) {
    a->ensure_grad();
    // subgradient at 0 is 0
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (a->data[i] > 0.0) a->grad[i] += self.grad[i];
  };
  return out;
}

// y = x.W + b with x:[d0], W:[d0,k], b:[k]
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
  if (x->shape.size() != 1)
    throw ShapeError("linear: input must be 1-d, got " + shape_str(x->shape));
  if (W->shape.size() != 2 || W->shape[0] != x->shape[0])
    throw ShapeError("linear: weight " + shape_str(W->shape) + " incompatible with input " +
                     shape_str(x->shape));
  const int d0 = W->shape[0], k = W->shape[1];
  if (b->shape != std::vector<int>{k})
    throw ShapeError("linear: bias " + shape_str(b->shape) + " vs expected (" +
                     std::to_string(k) + ")");
  auto out = std::make_shared<Tensor>();
  out->shape = {k};
  out->data.assign(static_cast<size_t>(k), 0.0);
  for (int j = 0; j < k; ++j) {
    double acc = b->data[j];
    for (int i = 0; i < d0; ++i) acc += x->data[i] * W->data[static_cast<size_t>(i) * k + j];
    out->data[j] = acc;
  }
  out->parents = {x, W, b};
  out->backprop = [x, W, b, d0, k](Tensor& self) {
    x->ensure_grad();
    W->ensure_grad();
    b->ensure_grad();
    for (int j = 0; j < k; ++j) {
      const double g = self.grad[j];
      b->grad[j] += g;
      for (int i = 0; i < d0; ++i) {
        x->grad[i] += g * W->data[static_cast<size_t>(i) * k + j];
        W->grad[static_cast<size_t>(i) * k + j] += g * x->data[i];
      }
    }
  };
  return out;
}

// Eq.-3 style layer: ReLU(F.W + B) or plain affine.
inline TensorPtr linear_apply(const TensorPtr& F, const TensorPtr& W, const TensorPtr& B,
                              bool activate) {
  TensorPtr y = linear(F, W, B);
  return activate ? relu(y) : y;
}

// valid cross-correlation, x:[C,H,W], w:[K,C,kh,kw], b:[K] -> [K,H',W']
inline TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int sh,
                        int sw) {
  if (sh < 1 || sw < 1) throw ValueError("conv2d: stride must be >= 1");
  if (x->shape.size() != 3)
    throw ShapeError("conv2d: input must be 3-d (C,H,W), got " + shape_str(x->shape));
  if (w->shape.size() != 4 || w->shape[1] != x->shape[0])
    throw ShapeError("conv2d: kernels " + shape_str(w->shape) + " incompatible with input " +
                     shape_str(x->shape));
  const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
  const int K = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (kh > H || kw > W)
    throw ShapeError("conv2d: kernel " + shape_str(w->shape) + " larger than input " +
                     shape_str(x->shape));
  if (b->shape != std::vector<int>{K})
    throw ShapeError("conv2d: bias " + shape_str(b->shape) + " vs expected (" +
                     std::to_string(K) + ")");
  const int Ho = (H - kh) / sh + 1;
  const int Wo = (W - kw) / sw + 1;
  auto out = std::make_shared<Tensor>();
  out->shape = {K, Ho, Wo};
  out->data.assign(static_cast<size_t>(K) * Ho * Wo, 0.0);
  auto xat = [&](int c, int i, int j) {
    return x->data[(static_cast<size_t>(c) * H + i) * W + j];
  };
  auto wat = [&](int k, int c, int i, int j) {
    return w->data[((static_cast<size_t>(k) * C + c) * kh + i) * kw + j];
  };
  for (int k = 0; k < K; ++k)
    for (int oi = 0; oi < Ho; ++oi)
      for (int oj = 0; oj < Wo; ++oj) {
        double acc = b->data[k];
        for (int c = 0; c < C; ++c)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) acc += xat(c, oi * sh + u, oj * sw + v) * wat(k, c, u, v);
        out->data[(static_cast<size_t>(k) * Ho + oi) * Wo + oj] = acc;
      }
  out->parents = {x, w, b};
  out->backprop = [x, w, b, sh, sw, C, H, W, K, kh, kw, Ho, Wo](Tensor& self) {
    x->ensure_grad();
    w->ensure_grad();
    b->ensure_grad();
    for (int k = 0; k < K; ++k)
      for (int oi = 0; oi < Ho; ++oi)
        for (int oj = 0; oj < Wo; ++oj) {
          const double g = self.grad[(static_cast<size_t>(k) * Ho + oi) * Wo + oj];
          if (g == 0.0) continue;
          b->grad[k] += g;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const size_t xi = (static_cast<size_t>(c) * H + oi * sh + u) * W + oj * sw + v;
                const size_t wi = ((static_cast<size_t>(k) * C + c) * kh + u) * kw + v;
                x->grad[xi] += g * w->data[wi];
                w->grad[wi] += g * x->data[xi];
              }
        }
  };
  return out;
}

inline TensorPtr conv2d_apply(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int sh,
                              int sw, bool activate) {
  TensorPtr y = conv2d(x, w, b, sh, sw);
  return activate ? relu(y) : y;
}

// temporal conv with zero 'same' padding, x:[C,T], w:[K,C,kt], b:[K] -> [K,T]
inline TensorPtr conv1d_same(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->shape.size() != 2)
    throw ShapeError("conv1d_same: input must be 2-d (C,T), got " + shape_str(x->shape));
  if (w->shape.size() != 3 || w->shape[1] != x->shape[0])
    throw ShapeError("conv1d_same: kernels " + shape_str(w->shape) + " incompatible with input " +
                     shape_str(x->shape));
  const int C = x->shape[0], T = x->shape[1];
  const int K = w->shape[0], kt = w->shape[2];
  const int pad = (kt - 1) / 2;
  if (b->shape != std::vector<int>{K})
    throw ShapeError("conv1d_same: bias " + shape_str(b->shape) + " vs expected (" +
                     std::to_string(K) + ")");
  auto out = std::make_shared<Tensor>();
  out->shape = {K, T};
  out->data.assign(static_cast<size_t>(K) * T, 0.0);
  for (int k = 0; k < K; ++k)
    for (int t = 0; t < T; ++t) {
      double acc = b->data[k];
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < kt; ++u) {
          const int ti = t + u - pad;
          if (ti < 0 || ti >= T) continue;
          acc += x->data[static_cast<size_t>(c) * T + ti] *
                 w->data[(static_cast<size_t>(k) * C + c) * kt + u];
        }
      out->data[static_cast<size_t>(k) * T + t] = acc;
    }
  out->parents = {x, w, b};
  out->backprop = [x, w, b, C, T, K, kt, pad](Tensor& self) {
    x->ensure_grad();
    w->ensure_grad();
    b->ensure_grad();
    for (int k = 0; k < K; ++k)
      for (int t = 0; t < T; ++t) {
        const double g = self.grad[static_cast<size_t>(k) * T + t];
        if (g == 0.0) continue;
        b->grad[k] += g;
        for (int c = 0; c < C; ++c)
          for (int u = 0; u < kt; ++u) {
            const int ti = t + u - pad;
            if (ti < 0 || ti >= T) continue;
            x->grad[static_cast<size_t>(c) * T + ti] +=
                g * w->data[(static_cast<size_t>(k) * C + c) * kt + u];
            w->grad[(static_cast<size_t>(k) * C + c) * kt + u] +=
                g * x->data[static_cast<size_t>(c) * T + ti];
          }
      }
  };
  return out;
}

inline TensorPtr softmax(const TensorPtr& x) {
  if (x->shape.size() != 1 || x->shape[0] < 1)
    throw ShapeError("softmax: input must be non-empty 1-d, got " + shape_str(x->shape));
  auto out = std::make_shared<Tensor>();
  out->shape = x->shape;
  out->data.resize(x->data.size());
  double mx = *std::max_element(x->data.begin(), x->data.end());
  double z = 0.0;
  for (size_t i = 0; i < x->data.size(); ++i) {
    out->data[i] = std::exp(x->data[i] - mx);
    z += out->data[i];
  }
  for (double& v : out->data) v /= z;
  out->parents = {x};
  out->backprop = [x](Tensor& self) {
    x->ensure_grad();
    double dot = 0.0;
    for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.data[i];
    for (size_t i = 0; i < self.grad.size(); ++i)
      x->grad[i] += self.data[i] * (self.grad[i] - dot);
  };
  return out;
}

inline TensorPtr log_softmax(const TensorPtr& x) {
  if (x->shape.size() != 1 || x->shape[0] < 1)
    throw ShapeError("log_softmax: input must be non-empty 1-d, got " + shape_str(x->shape));
  auto out = std::make_shared<Tensor>();
  out->shape = x->shape;
  out->data.resize(x->data.size());
  double mx = *std::max_element(x->data.begin(), x->data.end());
  double z = 0.0;
  for (double v : x->data) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = x->data[i] - lz;
  out->parents = {x};
  out->backprop = [x](Tensor& self) {
    x->ensure_grad();
    double gs = 0.0;
    for (double g : self.grad) gs += g;
    for (size_t i = 0; i < self.grad.size(); ++i)
      x->grad[i] += self.grad[i] - std::exp(self.data[i]) * gs;
  };
  return out;
}

inline TensorPtr pick(const TensorPtr& x, int idx) {
  if (idx < 0 || idx >= x->size()) throw ValueError("pick: index out of range");
  auto out = std::make_shared<Tensor>();
  out->shape = {1};
  out->data = {x->data[static_cast<size_t>(idx)]};
  out->parents = {x};
  out->backprop = [x, idx](Tensor& self) {
    x->ensure_grad();
    x->grad[static_cast<size_t>(idx)] += self.grad[0];
  };
  return out;
}

inline TensorPtr slice_vec(const TensorPtr& x, int begin, int end) {
  if (x->shape.size() != 1 || begin < 0 || end > x->shape[0] || begin >= end)
    throw ValueError("slice_vec: bad range");
  auto out = std::make_shared<Tensor>();
  out->shape = {end - begin};
  out->data.assign(x->data.begin() + begin, x->data.begin() + end);
  out->parents = {x};
  out->backprop = [x, begin, end](Tensor& self) {
    x->ensure_grad();
    for (int i = begin; i < end; ++i) x->grad[i] += self.grad[static_cast<size_t>(i - begin)];
  };
  return out;
}

inline TensorPtr concat_vec(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ValueError("concat_vec: empty input");
  int n = 0;
  for (auto& p : parts) {
    if (p->shape.size() != 1)
      throw ShapeError("concat_vec: parts must be 1-d, got " + shape_str(p->shape));
    n += p->shape[0];
  }
  auto out = std::make_shared<Tensor>();
  out->shape = {n};
  out->data.reserve(static_cast<size_t>(n));
  for (auto& p : parts) out->data.insert(out->data.end(), p->data.begin(), p->data.end());
  out->parents = parts;
  out->backprop = [parts](Tensor& self) {
    size_t off = 0;
    for (auto& p : parts) {
      p->ensure_grad();
      for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->data.size();
    }
  };
  return out;
}

// channelwise concat of [c_i,H,W] maps
inline TensorPtr concat_channels(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ValueError("concat_channels: empty input");
  const int H = parts[0]->shape.size() == 3 ? parts[0]->shape[1] : -1;
  const int W = parts[0]->shape.size() == 3 ? parts[0]->shape[2] : -1;
  int C = 0;
  for (auto& p : parts) {
    if (p->shape.size() != 3 || p->shape[1] != H || p->shape[2] != W)
      throw ShapeError("concat_channels: inconsistent spatial dims, got " + shape_str(p->shape));
    C += p->shape[0];
  }
  auto out = std::make_shared<Tensor>();
  out->shape = {C, H, W};
  out->data.reserve(static_cast<size_t>(C) * H * W);
  for (auto& p : parts) out->data.insert(out->data.end(), p->data.begin(), p->data.end());
  out->parents = parts;
  out->backprop = [parts](Tensor& self) {
    size_t off = 0;
    for (auto& p : parts) {
      p->ensure_grad();
      for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->data.size();
    }
  };
  return out;
}

// broadcast a k-vector to a [k,H,W] map (every spatial cell gets the vector)
inline TensorPtr tile_vec(const TensorPtr& v, int H, int W) {
  if (v->shape.size() != 1)
    throw ShapeError("tile_vec: input must be 1-d, got " + shape_str(v->shape));
  const int k = v->shape[0];
  auto out = std::make_shared<Tensor>();
  out->shape = {k, H, W};
  out->data.resize(static_cast<size_t>(k) * H * W);
  for (int c = 0; c < k; ++c)
    std::fill_n(out->data.begin() + static_cast<size_t>(c) * H * W, static_cast<size_t>(H) * W,
                v->data[c]);
  out->parents = {v};
  out->backprop = [v, H, W, k](Tensor& self) {
    v->ensure_grad();
    for (int c = 0; c < k; ++c) {
      double acc = 0.0;
      for (int i = 0; i < H * W; ++i) acc += self.grad[static_cast<size_t>(c) * H * W + i];
      v->grad[c] += acc;
    }
  };
  return out;
}

inline TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
  if (numel(shape) != x->size())
    throw ShapeError("reshape: " + shape_str(x->shape) + " -> " + shape_str(shape) +
                     " changes element count");
  auto out = std::make_shared<Tensor>();
  out->shape = std::move(shape);
  out->data = x->data;
  out->parents = {x};
  out->backprop = [x](Tensor& self) {
    x->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
  };
  return out;
}

inline TensorPtr flatten(const TensorPtr& x) {
  return reshape(x, {static_cast<int>(x->size())});
}

// columns: list of [C] vectors -> [C,T]
inline TensorPtr stack_cols(const std::vector<TensorPtr>& cols) {
  if (cols.empty()) throw ValueError("stack_cols: empty input");
  const int C = cols[0]->shape[0];
  const int T = static_cast<int>(cols.size());
  for (auto& c : cols)
    if (c->shape != std::vector<int>{C})
      throw ShapeError("stack_cols: inconsistent column shape " + shape_str(c->shape));
  auto out = std::make_shared<Tensor>();
  out->shape = {C, T};
  out->data.resize(static_cast<size_t>(C) * T);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) out->data[static_cast<size_t>(c) * T + t] = cols[t]->data[c];
  out->parents = cols;
  out->backprop = [cols, C, T](Tensor& self) {
    for (int t = 0; t < T; ++t) {
      cols[t]->ensure_grad();
      for (int c = 0; c < C; ++c)
        cols[t]->grad[c] += self.grad[static_cast<size_t>(c) * T + t];
    }
  };
  return out;
}

// mean over the time axis of [C,T] -> [C]
inline TensorPtr mean_time(const TensorPtr& x) {
  if (x->shape.size() != 2)
    throw ShapeError("mean_time: input must be 2-d (C,T), got " + shape_str(x->shape));
  const int C = x->shape[0], T = x->shape[1];
  auto out = std::make_shared<Tensor>();
  out->shape = {C};
  out->data.assign(static_cast<size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int t = 0; t < T; ++t) acc += x->data[static_cast<size_t>(c) * T + t];
    out->data[c] = acc / T;
  }
  out->parents = {x};
  out->backprop = [x, C, T](Tensor& self) {
    x->ensure_grad();
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) x->grad[static_cast<size_t>(c) * T + t] += self.grad[c] / T;
  };
  return out;
}

// broadcast a [1] tensor to an [n] vector
inline TensorPtr tile_scalar(const TensorPtr& s, int n) {
  if (s->size() != 1) throw ShapeError("tile_scalar: input must be scalar");
  auto out = std::make_shared<Tensor>();
  out->shape = {n};
  out->data.assign(static_cast<size_t>(n), s->data[0]);
  out->parents = {s};
  out->backprop = [s](Tensor& self) {
    s->ensure_grad();
    double acc = 0.0;
    for (double g : self.grad) acc += g;
    s->grad[0] += acc;
  };
  return out;
}

inline TensorPtr detach(const TensorPtr& x) {
  return tensor(x->shape, x->data, false);
}

// ---------------------------------------------------------------------------
// LSTM cell, fused. Gate row order: input, forget, cell candidate, output.
// Returns [2n] = (h', c'); slice with lstm_h / lstm_c.

inline TensorPtr lstm_cell(const TensorPtr& x, const TensorPtr& h, const TensorPtr& c,
                           const TensorPtr& Wih, const TensorPtr& Whh, const TensorPtr& b) {
  if (x->shape.size() != 1 || h->shape.size() != 1 || c->shape.size() != 1)
    throw ShapeError("lstm_cell: x/h/c must be 1-d");
  const int m = x->shape[0], n = h->shape[0];
  if (c->shape[0] != n) throw ShapeError("lstm_cell: h and c size mismatch");
  if (Wih->shape != std::vector<int>{4 * n, m})
    throw ShapeError("lstm_cell: Wih " + shape_str(Wih->shape) + " vs expected (" +
                     std::to_string(4 * n) + "," + std::to_string(m) + ")");
  if (Whh->shape != std::vector<int>{4 * n, n})
    throw ShapeError("lstm_cell: Whh " + shape_str(Whh->shape) + " vs expected (" +
                     std::to_string(4 * n) + "," + std::to_string(n) + ")");
  if (b->shape != std::vector<int>{4 * n})
    throw ShapeError("lstm_cell: bias " + shape_str(b->shape) + " vs expected (" +
                     std::to_string(4 * n) + ")");
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

  std::vector<double> pre(static_cast<size_t>(4 * n));
  for (int r = 0; r < 4 * n; ++r) {
    double acc = b->data[r];
    for (int i = 0; i < m; ++i) acc += Wih->data[static_cast<size_t>(r) * m + i] * x->data[i];
    for (int i = 0; i < n; ++i) acc += Whh->data[static_cast<size_t>(r) * n + i] * h->data[i];
    pre[r] = acc;
  }
  auto gi = std::make_shared<std::vector<double>>(static_cast<size_t>(4 * n));
  std::vector<double>& g = *gi;
  for (int j = 0; j < n; ++j) {
    g[j] = sigmoid(pre[j]);                  // i
    g[n + j] = sigmoid(pre[n + j]);          // f
    g[2 * n + j] = std::tanh(pre[2 * n + j]);  // g
    g[3 * n + j] = sigmoid(pre[3 * n + j]);  // o
  }
  auto out = std::make_shared<Tensor>();
  out->shape = {2 * n};
  out->data.resize(static_cast<size_t>(2 * n));
  auto tc = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double cn = g[n + j] * c->data[j] + g[j] * g[2 * n + j];
    out->data[n + j] = cn;
    (*tc)[j] = std::tanh(cn);
    out->data[j] = g[3 * n + j] * (*tc)[j];
  }
  out->parents = {x, h, c, Wih, Whh, b};
  out->backprop = [x, h, c, Wih, Whh, b, gi, tc, m, n](Tensor& self) {
    x->ensure_grad();
    h->ensure_grad();
    c->ensure_grad();
    Wih->ensure_grad();
    Whh->ensure_grad();
    b->ensure_grad();
    const std::vector<double>& g = *gi;
    std::vector<double> dpre(static_cast<size_t>(4 * n));
    for (int j = 0; j < n; ++j) {
      const double dh = self.grad[j];
      const double th = (*tc)[j];
      const double dc_total = self.grad[n + j] + dh * g[3 * n + j] * (1.0 - th * th);
      const double dov = dh * th;
      dpre[3 * n + j] = dov * g[3 * n + j] * (1.0 - g[3 * n + j]);
      dpre[j] = dc_total * g[2 * n + j] * g[j] * (1.0 - g[j]);
      dpre[n + j] = dc_total * c->data[j] * g[n + j] * (1.0 - g[n + j]);
      dpre[2 * n + j] = dc_total * g[j] * (1.0 - g[2 * n + j] * g[2 * n + j]);
      c->grad[j] += dc_total * g[n + j];
    }
    for (int r = 0; r < 4 * n; ++r) {
      const double dp = dpre[r];
      if (dp == 0.0) continue;
      b->grad[r] += dp;
      for (int i = 0; i < m; ++i) {
        x->grad[i] += dp * Wih->data[static_cast<size_t>(r) * m + i];
        Wih->grad[static_cast<size_t>(r) * m + i] += dp * x->data[i];
      }
      for (int i = 0; i < n; ++i) {
        h->grad[i] += dp * Whh->data[static_cast<size_t>(r) * n + i];
        Whh->grad[static_cast<size_t>(r) * n + i] += dp * h->data[i];
      }
    }
  };
  return out;
}

inline TensorPtr lstm_h(const TensorPtr& hc) {
  return slice_vec(hc, 0, hc->shape[0] / 2);
}
inline TensorPtr lstm_c(const TensorPtr& hc) {
  return slice_vec(hc, hc->shape[0] / 2, hc->shape[0]);
}

// ---------------------------------------------------------------------------
// backward pass

inline Tape backward(const TensorPtr& loss) {
  if (loss->size() != 1) throw ValueError("backward: loss must be scalar, got " +
                                          shape_str(loss->shape));
  Tape tape;
  std::unordered_set<Tensor*> visited;
  // iterative post-order DFS
  std::vector<std::pair<Tensor*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor* p = node->parents[idx++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  for (Tensor* t : tape.order) t->zero_grad();
  loss->grad[0] = 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
  return tape;
}

}  // namespace mvvin
