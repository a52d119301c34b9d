#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mvvin/nn.hpp"
#include "mvvin/rng.hpp"
#include "mvvin/tensor.hpp"

using namespace mvvin;

namespace {

// naive strided valid cross-correlation, the shape-law and value oracle
std::vector<double> naive_conv2d(const std::vector<double>& x, int c, int h, int w,
                                 const std::vector<double>& k, int ko, int kh, int kw, int sh,
                                 int sw, const std::vector<double>& b) {
  const int oh = (h - kh) / sh + 1;
  const int ow = (w - kw) / sw + 1;
  std::vector<double> out(static_cast<size_t>(ko) * oh * ow, 0.0);
  for (int o = 0; o < ko; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = b[static_cast<size_t>(o)];
        for (int ci = 0; ci < c; ++ci)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v)
              acc += x[(static_cast<size_t>(ci) * h + i * sh + u) * w + j * sw + v] *
                     k[((static_cast<size_t>(o) * c + ci) * kh + u) * kw + v];
        out[(static_cast<size_t>(o) * oh + i) * ow + j] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("linear_apply hand examples") {
  TensorPtr F = tensor({2}, {1.0, 2.0});
  TensorPtr W = tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  TensorPtr B = tensor({2}, {-3.0, 0.0});
  TensorPtr y = linear_apply(F, W, B, true);
  CHECK(y->data == std::vector<double>{0.0, 2.0});

  TensorPtr z = linear_apply(tensor({1}, {1.0}), tensor({1, 1}, {2.0}), tensor({1}, {0.0}), false);
  CHECK(z->data == std::vector<double>{2.0});

  TensorPtr zero =
      linear_apply(zeros({3}), tensor({3, 2}, {1, 2, 3, 4, 5, 6}), zeros({2}), true);
  CHECK(zero->data == std::vector<double>{0.0, 0.0});

  CHECK_THROWS_AS(linear_apply(tensor({3}, {1, 2, 3}), W, B, true), ShapeError);
}

TEST_CASE("conv2d shapes and values") {
  // all-ones 3x3 through an all-ones 3x3 kernel -> 9
  TensorPtr x = tensor({1, 3, 3}, std::vector<double>(9, 1.0));
  TensorPtr k = tensor({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  TensorPtr y = conv2d(x, k, zeros({1}), 1, 1);
  CHECK(y->shape == std::vector<int>{1, 1, 1});
  CHECK(y->data[0] == 9.0);

  // 1x1 conv keeps the grid
  Rng rng(5);
  std::vector<double> xd(512 * 7 * 7), kd(64 * 512);
  for (auto& v : xd) v = rng.normal();
  for (auto& v : kd) v = rng.normal();
  TensorPtr big = conv2d(tensor({512, 7, 7}, xd), tensor({64, 512, 1, 1}, kd), zeros({64}), 1, 1);
  CHECK(big->shape == std::vector<int>{64, 7, 7});

  CHECK_THROWS_AS(conv2d(x, tensor({1, 1, 4, 4}, std::vector<double>(16, 1.0)), zeros({1}), 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, k, zeros({1}), 0, 1), ValueError);
}

TEST_CASE("depth chain shape arithmetic layer by layer") {
  const int strides[5][2] = {{3, 3}, {2, 3}, {2, 3}, {2, 1}, {2, 2}};
  const int expect[5][2] = {{128, 170}, {63, 56}, {31, 18}, {15, 16}, {7, 7}};
  Rng rng(11);
  std::vector<double> xd(static_cast<size_t>(384) * 512);
  for (auto& v : xd) v = rng.normal();
  TensorPtr cur = tensor({1, 384, 512}, std::move(xd));
  int cin = 1;
  for (int l = 0; l < 5; ++l) {
    std::vector<double> kd(static_cast<size_t>(64) * cin * 9, 0.01);
    cur = conv2d(cur, tensor({64, cin, 3, 3}, std::move(kd)), zeros({64}), strides[l][0],
                 strides[l][1]);
    CHECK(cur->shape == std::vector<int>{64, expect[l][0], expect[l][1]});
    cin = 64;
  }
}

TEST_CASE("conv2d matches a naive loop on random instances (shape law property)") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = rng.uniform_int(1, 3), kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
    const int h = kh + rng.uniform_int(0, 5), w = kw + rng.uniform_int(0, 5);
    const int ko = rng.uniform_int(1, 3), sh = rng.uniform_int(1, 3), sw = rng.uniform_int(1, 3);
    std::vector<double> xd(static_cast<size_t>(c) * h * w), kd(static_cast<size_t>(ko) * c * kh * kw),
        bd(static_cast<size_t>(ko));
    for (auto& v : xd) v = rng.normal();
    for (auto& v : kd) v = rng.normal();
    for (auto& v : bd) v = rng.normal();
    TensorPtr y = conv2d(tensor({c, h, w}, xd), tensor({ko, c, kh, kw}, kd), tensor({ko}, bd), sh,
                         sw);
    const int oh = (h - kh) / sh + 1, ow = (w - kw) / sw + 1;
    CHECK(y->shape == std::vector<int>{ko, oh, ow});
    const auto ref = naive_conv2d(xd, c, h, w, kd, ko, kh, kw, sh, sw, bd);
    REQUIRE(y->data.size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("relu") {
  TensorPtr y = relu(tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(y->data == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(relu(zeros({4}))->data == std::vector<double>(4, 0.0));
  TensorPtr pos = tensor({3}, {1.0, 2.5, 0.25});
  CHECK(relu(pos)->data == pos->data);
}

TEST_CASE("softmax properties and examples") {
  TensorPtr u = softmax(tensor({3}, {0.0, 0.0, 0.0}));
  for (double v : u->data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  TensorPtr p = softmax(tensor({2}, {std::log(2.0), 0.0}));
  CHECK(p->data[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p->data[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  TensorPtr big = softmax(tensor({2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big->data[0]));
  CHECK(big->data[0] == doctest::Approx(1.0));
  CHECK(big->data[1] == doctest::Approx(0.0));

  // probability vector + shift invariance
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> z(6);
    for (auto& v : z) v = rng.normal(0.0, 3.0);
    TensorPtr a = softmax(tensor({6}, z));
    double s = 0.0;
    for (double v : a->data) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-6);
    std::vector<double> shifted = z;
    for (auto& v : shifted) v += 7.25;
    TensorPtr b = softmax(tensor({6}, shifted));
    for (int i = 0; i < 6; ++i) CHECK(std::fabs(a->data[i] - b->data[i]) < 1e-6);
  }
}

TEST_CASE("lstm cell") {
  // all-zero params, zero state -> zero outputs
  TensorPtr hc = lstm_cell(tensor({2}, {0.3, -0.7}), zeros({3}), zeros({3}), zeros({12, 2}),
                           zeros({12, 3}), zeros({12}));
  CHECK(hc->data == std::vector<double>(6, 0.0));

  // n=1 hand case: unit weights, zero bias, zero input/state
  TensorPtr one = lstm_cell(tensor({1}, {0.0}), zeros({1}), zeros({1}),
                            tensor({4, 1}, {1, 1, 1, 1}), tensor({4, 1}, {1, 1, 1, 1}),
                            zeros({4}));
  CHECK(one->data == std::vector<double>{0.0, 0.0});

  // h' strictly inside (-1, 1)
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(4), h(3), c(3), wih(48), whh(36), b(12);
    for (auto& v : x) v = rng.normal(0.0, 2.0);
    for (auto& v : h) v = rng.normal(0.0, 2.0);
    for (auto& v : c) v = rng.normal(0.0, 2.0);
    for (auto& v : wih) v = rng.normal(0.0, 2.0);
    for (auto& v : whh) v = rng.normal(0.0, 2.0);
    for (auto& v : b) v = rng.normal(0.0, 2.0);
    TensorPtr out = lstm_cell(tensor({4}, x), tensor({3}, h), tensor({3}, c),
                              tensor({12, 4}, wih), tensor({12, 3}, whh), tensor({12}, b));
    for (int i = 0; i < 3; ++i) {
      CHECK(out->data[static_cast<size_t>(i)] > -1.0);
      CHECK(out->data[static_cast<size_t>(i)] < 1.0);
    }
  }

  CHECK_THROWS_AS(lstm_cell(tensor({2}, {1.0, 1.0}), zeros({3}), zeros({3}), zeros({12, 3}),
                            zeros({12, 3}), zeros({12})),
                  ShapeError);
}

TEST_CASE("backward basics") {
  ParamSet p;
  p.add("x", tensor({1}, {3.0}));
  TensorPtr loss = mul(p.at("x"), p.at("x"));
  backward(loss);
  CHECK(p.at("x")->grad[0] == doctest::Approx(6.0).epsilon(1e-12));

  // leaf not reachable gets zero grad
  p.add("y", tensor({1}, {2.0}));
  p.zero_grad();
  backward(mul(p.at("x"), p.at("x")));
  CHECK(p.at("y")->grad[0] == 0.0);

  // dead ReLU unit blocks gradient
  ParamSet q;
  q.add("x", tensor({1}, {1.0}));
  TensorPtr dead = sum(relu(linear(q.at("x"), tensor({1, 1}, {-2.0}), tensor({1}, {0.0}))));
  backward(dead);
  CHECK(q.at("x")->grad[0] == 0.0);

  CHECK_THROWS_AS(backward(tensor({2}, {1.0, 2.0})), ValueError);
}

TEST_CASE("sgd and adam updates") {
  ParamSet p;
  p.add("w", tensor({1}, {1.0}));
  GradMap g{{"w", {0.5}}};
  sgd_update(p, g, 0.1);
  CHECK(p.at("w")->data[0] == doctest::Approx(0.95).epsilon(1e-15));

  sgd_update(p, g, 0.0);  // lr = 0 is identity
  CHECK(p.at("w")->data[0] == doctest::Approx(0.95).epsilon(1e-15));
  sgd_update(p, GradMap{{"w", {0.0}}}, 0.3);  // zero grad is identity
  CHECK(p.at("w")->data[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK_THROWS_AS(sgd_update(p, GradMap{{"w", {1.0, 2.0}}}, 0.1), ShapeError);

  // Adam: zero grads at step 1 leave params bit-unchanged
  ParamSet a;
  a.add("w", tensor({2}, {1.0, -2.0}));
  Adam adam(0.01);
  adam.step(a, GradMap{{"w", {0.0, 0.0}}});
  CHECK(a.at("w")->data == std::vector<double>{1.0, -2.0});

  // first step moves by about -lr * sign(g)
  Adam adam2(0.01);
  ParamSet b;
  b.add("w", tensor({1}, {0.0}));
  adam2.step(b, GradMap{{"w", {0.37}}});
  CHECK(b.at("w")->data[0] == doctest::Approx(-0.01).epsilon(1e-4));

  // constant gradient: two steps move monotonically against sign(g)
  adam2.step(b, GradMap{{"w", {0.37}}});
  CHECK(b.at("w")->data[0] < -0.01);
}

TEST_CASE("he init statistics and determinism") {
  TensorPtr t = he_scaled_init({100000}, 100, 99);
  double mean = 0.0;
  for (double v : t->data) mean += v;
  mean /= static_cast<double>(t->data.size());
  double var = 0.0;
  for (double v : t->data) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / static_cast<double>(t->data.size()));
  const double want = std::sqrt(2.0 / 100.0);  // 0.1414...
  CHECK(std::fabs(stddev - want) / want < 0.05);
  const double se = want / std::sqrt(static_cast<double>(t->data.size()));
  CHECK(std::fabs(mean) < 3.0 * se);

  TensorPtr again = he_scaled_init({100000}, 100, 99);
  CHECK(t->data == again->data);
  TensorPtr other = he_scaled_init({16}, 100, 100);
  CHECK(other->data != he_scaled_init({16}, 100, 101)->data);
}

TEST_CASE("conv1d_same, stack/mean, tiling helpers") {
  // kt=1 conv1d is a pointwise linear map over time
  TensorPtr x = tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  TensorPtr w = tensor({1, 2, 1}, {1.0, 10.0});
  TensorPtr y = conv1d_same(x, w, tensor({1}, {0.5}));
  CHECK(y->shape == std::vector<int>{1, 3});
  CHECK(y->data == std::vector<double>{41.5, 52.5, 63.5});

  // zero same-padding at the borders
  TensorPtr w3 = tensor({1, 1, 3}, {1.0, 1.0, 1.0});
  TensorPtr z = conv1d_same(tensor({1, 3}, {1.0, 2.0, 3.0}), w3, zeros({1}));
  CHECK(z->data == std::vector<double>{3.0, 6.0, 5.0});

  TensorPtr m = mean_time(tensor({2, 2}, {1.0, 3.0, 10.0, 20.0}));
  CHECK(m->data == std::vector<double>{2.0, 15.0});

  TensorPtr tiled = tile_vec(tensor({2}, {1.0, 2.0}), 2, 3);
  CHECK(tiled->shape == std::vector<int>{2, 2, 3});
  CHECK(tiled->data[0] == 1.0);
  CHECK(tiled->data[11] == 2.0);

  TensorPtr sc = stack_cols({tensor({2}, {1.0, 2.0}), tensor({2}, {3.0, 4.0})});
  CHECK(sc->shape == std::vector<int>{2, 2});
  CHECK(sc->data == std::vector<double>{1.0, 3.0, 2.0, 4.0});
}

TEST_CASE("determinism of rng primitives") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(7);
  const double u = c.uniform01();
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK(fnv1a("theta") != fnv1a("phi"));
}
