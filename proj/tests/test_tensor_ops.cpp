#include "doctest.h"

#include <cmath>
#include <random>

#include "credtx/errors.hpp"
#include "credtx/gradcheck.hpp"
#include "credtx/ops.hpp"
#include "credtx/tensor.hpp"

using namespace credtx;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Plain triple-loop product used as the oracle for matmul and friends.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("tensor construction keeps data length equal to the shape product") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(shape_numel(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  auto r = t.reshaped({3, 2});
  CHECK(r.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("non-finite values are reported") {
  Tensor t({2}, 0.0);
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("t"), NumericError);
}

TEST_CASE("parameter grads match value shape and zero out") {
  Parameter p("w", random_tensor({3, 4}, 1));
  CHECK(p.grad.shape() == p.value.shape());
  p.grad.fill(2.0);
  std::vector<Parameter> ps{p};
  zero_grads(ps);
  for (double g : ps[0].grad.data()) CHECK(g == 0.0);
}

TEST_CASE("matmul") {
  const auto a = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(a, Tensor::from_rows({{1, 0}, {0, 1}})) == a);
  CHECK(matmul(a, Tensor::from_rows({{5, 6}, {7, 8}})) == Tensor::from_rows({{19, 22}, {43, 50}}));
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = random_tensor({4, 7}, seed);
    const auto y = random_tensor({7, 3}, seed + 100);
    check_close(matmul(x, y), naive_matmul(x, y), 1e-14);
    check_close(matmul_tn(x.transposed(), y), naive_matmul(x, y), 1e-14);
    check_close(matmul_nt(x, y.transposed()), naive_matmul(x, y), 1e-14);
  }
}

TEST_CASE("linear backward matches finite differences") {
  std::vector<Parameter> ps{Parameter("x", random_tensor({3, 4}, 1)), Parameter("w", random_tensor({4, 5}, 2)),
                            Parameter("b", random_tensor({5}, 3))};
  const auto r = random_tensor({3, 5}, 4);
  auto f = [&](bool grads) {
    const auto y = linear(ps[0].value, ps[1].value, &ps[2].value);
    if (grads) {
      ps[0].grad = linear_backward(ps[0].value, ps[1].value, r, ps[1].grad, &ps[2].grad);
    }
    return dot(y, r);
  };
  CHECK(gradient_check(ps, f).max_rel_error < 1e-7);
}

TEST_CASE("conv1d forward") {
  const auto x = Tensor::from_rows({{1, 2, 3, 4}});
  const Tensor w({1, 1, 3}, {1, 0, -1});
  const auto out = conv1d(x, w, Tensor({1}, 0.0), 1).output;
  CHECK(out == Tensor::from_rows({{-2, -2}}));

  const auto ident = conv1d(x, Tensor({1, 1, 1}, 1.0), Tensor({1}, 0.0), 1).output;
  CHECK(ident == x);

  // Direct summation oracle with stride 2 and several channels.
  const auto xx = random_tensor({3, 9}, 5);
  const auto ww = random_tensor({2, 3, 3}, 6);
  const auto bb = random_tensor({2}, 7);
  const auto got = conv1d(xx, ww, bb, 2).output;
  REQUIRE(got.shape() == Shape{2, 4});
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 4; ++i) {
      double s = bb[o];
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 3; ++t) s += xx(c, 2 * i + t) * ww(o, c, t);
      CHECK(std::abs(got(o, i) - s) < 1e-14);
    }

  CHECK_THROWS_AS(conv1d(x, Tensor({1, 1, 5}), Tensor({1}), 1), DimensionError);
  CHECK_THROWS_AS(conv1d(x, w, Tensor({1}), 0), ConfigError);
  CHECK_THROWS_AS(conv1d(x, Tensor({1, 2, 3}), Tensor({1}), 1), DimensionError);
}

TEST_CASE("conv1d backward matches finite differences") {
  for (std::size_t stride : {1u, 2u}) {
    std::vector<Parameter> ps{Parameter("x", random_tensor({2, 8}, 11)),
                              Parameter("w", random_tensor({3, 2, 3}, 12)),
                              Parameter("b", random_tensor({3}, 13))};
    const std::size_t l_out = conv1d_output_length(8, 3, stride);
    const auto r = random_tensor({3, l_out}, 14);
    auto f = [&](bool grads) {
      auto res = conv1d(ps[0].value, ps[1].value, ps[2].value, stride);
      if (grads) {
        auto g = conv1d_backward(res.cache, r);
        ps[0].grad = g.input;
        ps[1].grad = g.weight;
        ps[2].grad = g.bias;
      }
      return dot(res.output, r);
    };
    CHECK(gradient_check(ps, f).max_rel_error < 1e-4);
  }
}

TEST_CASE("maxpool1d") {
  const auto x = Tensor::from_rows({{1, 3, 2, 5}});
  CHECK(maxpool1d(x, 2, 2).output == Tensor::from_rows({{3, 5}}));
  const auto y = Tensor::from_rows({{1, 7, 2}, {-4, -1, -9}});
  CHECK(maxpool1d(y, 3, 1).output == Tensor::from_rows({{7}, {-1}}));

  // Gradient routes to the argmax; distinct values keep FD away from ties.
  std::vector<Parameter> ps{Parameter("x", Tensor({2, 8}, {0.1, 0.9, 0.3, 0.7, 0.2, 0.5, 0.8, 0.4, -0.3, -0.1,
                                                          -0.6, 0.25, 0.65, 0.15, -0.2, 0.35}))};
  const auto r = random_tensor({2, 3}, 21);
  auto f = [&](bool grads) {
    auto res = maxpool1d(ps[0].value, 3, 2);
    if (grads) ps[0].grad = maxpool1d_backward(res.cache, r);
    return dot(res.output, r);
  };
  CHECK(gradient_check(ps, f).max_rel_error < 1e-4);
}

TEST_CASE("softmax rows") {
  CHECK(softmax_rows(Tensor::from_rows({{0, 0}})) == Tensor::from_rows({{0.5, 0.5}}));
  for (double c : {-50.0, 0.0, 3.25, 700.0}) {
    const auto s = softmax_rows(Tensor({1, 4}, c));
    for (double v : s.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  // Extended-precision oracle on shifted logits.
  const auto x = Tensor::from_rows({{1000, 0}, {-3, 2.5}, {10, 10.5}});
  const auto s = softmax_rows(x);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    const long double m = std::max(x(i, 0), x(i, 1));
    const long double e0 = std::exp(static_cast<long double>(x(i, 0)) - m);
    const long double e1 = std::exp(static_cast<long double>(x(i, 1)) - m);
    CHECK(std::abs(s(i, 0) - static_cast<double>(e0 / (e0 + e1))) < 1e-15);
    CHECK(std::abs(s(i, 1) - static_cast<double>(e1 / (e0 + e1))) < 1e-15);
  }
  CHECK(s.all_finite());
  CHECK(s(0, 0) == doctest::Approx(1.0));

  std::vector<Parameter> ps{Parameter("x", random_tensor({3, 5}, 31, -2, 2))};
  const auto r = random_tensor({3, 5}, 32);
  auto f = [&](bool grads) {
    auto y = softmax_rows(ps[0].value);
    if (grads) ps[0].grad = softmax_rows_backward(y, r);
    return dot(y, r);
  };
  CHECK(gradient_check(ps, f).max_rel_error < 1e-6);
}

TEST_CASE("elementwise activations") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
  const auto r = elementwise(Activation::relu, Tensor::vector({-3, 3})).output;
  CHECK(r == Tensor::vector({0, 3}));
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);

  for (auto kind : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
    // Keep relu inputs away from the kink.
    auto x = random_tensor({4, 6}, 41, -2, 2);
    for (auto& v : x.data())
      if (std::abs(v) < 0.05) v = 0.3;
    std::vector<Parameter> ps{Parameter("x", x)};
    const auto g = random_tensor({4, 6}, 42);
    auto f = [&](bool grads) {
      auto res = elementwise(kind, ps[0].value);
      if (grads) ps[0].grad = elementwise_backward(res.cache, g);
      return dot(res.output, g);
    };
    CHECK(gradient_check(ps, f).max_rel_error < 1e-4);
  }
}

TEST_CASE("layer norm") {
  const Tensor gain({2}, 1.0), shift({2}, 0.0);
  const auto z = layer_norm(Tensor::from_rows({{3, 3}}), gain, shift, 1e-5).output;
  CHECK(z == Tensor::from_rows({{0, 0}}));

  // Variance of [1,-1] is 1, so the output is ±1/sqrt(1+eps).
  const auto y = layer_norm(Tensor::from_rows({{1, -1}}), gain, shift, 1e-5).output;
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(std::abs(y(0, 0) - expect) < 1e-15);
  CHECK(std::abs(y(0, 1) + expect) < 1e-15);

  std::vector<Parameter> ps{Parameter("x", random_tensor({3, 5}, 51, -2, 2)),
                            Parameter("g", random_tensor({5}, 52, 0.5, 1.5)),
                            Parameter("s", random_tensor({5}, 53))};
  const auto r = random_tensor({3, 5}, 54);
  auto f = [&](bool grads) {
    auto res = layer_norm(ps[0].value, ps[1].value, ps[2].value, 1e-5);
    if (grads) {
      auto gr = layer_norm_backward(res.cache, r);
      ps[0].grad = gr.input;
      ps[1].grad = gr.gain;
      ps[2].grad = gr.shift;
    }
    return dot(res.output, r);
  };
  CHECK(gradient_check(ps, f).max_rel_error < 1e-4);
}

TEST_CASE("gradient_check harness") {
  std::vector<Parameter> ps{Parameter("p", random_tensor({6}, 61))};
  auto quad = [&](bool grads) {
    if (grads) ps[0].grad = ps[0].value;
    return 0.5 * dot(ps[0].value, ps[0].value);
  };
  CHECK(gradient_check(ps, quad).max_rel_error < 1e-9);

  auto corrupted = [&](bool grads) {
    if (grads) {
      ps[0].grad = ps[0].value;
      for (auto& g : ps[0].grad.data()) g *= 1.1;
    }
    return 0.5 * dot(ps[0].value, ps[0].value);
  };
  CHECK(gradient_check(ps, corrupted).max_rel_error > 1e-2);

  // Values are restored after probing.
  const Tensor before = ps[0].value;
  gradient_check(ps, quad);
  CHECK(ps[0].value == before);
}
