#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "metaformer/ops.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

using namespace metaformer;
using oracle::randn;

namespace {

std::vector<double> iota_values(int n, double start = 1.0) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction and shape checks") {
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dtype() == DType::f32);
  CHECK(Tensor<double>::dtype() == DType::f64);
  CHECK_THROWS_AS(Tensor<float>::zeros({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>::from_vector({2, 2}, {1, 2, 3}), std::invalid_argument);
  auto s = Tensor<double>::scalar(3.5);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 3.5);
  auto c = Tensor<float>::from_vector({3}, {1, 2, 3}).cast<double>();
  CHECK(c.data()[2] == 3.0);
}

TEST_CASE("backward on simple losses") {
  Rng rng(1);
  auto x = randn({2, 3, 4}, rng);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));

  SUBCASE("non-scalar loss is rejected") {
    CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
  }
  SUBCASE("leaves off the loss path get zero gradient") {
    auto y = randn({3}, rng);
    auto z = randn({3}, rng);
    y.zero_grad();
    backward(sum(add(y, y)));
    CHECK(z.grad_or_zeros() == std::vector<double>(3, 0.0));
  }
  SUBCASE("graph visits every node once") {
    auto a = randn({4}, rng);
    auto b = add(a, a);
    auto loss = sum(mul(b, b));
    const auto graph = Graph<double>::trace(loss);
    CHECK(graph.node_count() == 3);
    a.zero_grad();
    graph.backward();
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.grad()[i] == doctest::Approx(8 * a.data()[i]));
  }
}

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 identity channel map") {
    Rng rng(2);
    auto x = randn({1, 2, 2, 2}, rng, false);
    auto w = Tensor<double>::from_vector({2, 2, 1, 1}, {1, 0, 0, 1});
    CHECK(to_vec(conv2d(x, w)) == to_vec(x));
  }
  SUBCASE("all-ones 3x3 kernel sums the image") {
    auto x = Tensor<double>::from_vector({1, 1, 3, 3}, iota_values(9));
    auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == 45.0);
  }
  SUBCASE("depthwise delta kernel is the identity") {
    Rng rng(3);
    auto x = randn({1, 2, 4, 5}, rng, false);
    std::vector<double> k(18, 0.0);
    k[4] = k[13] = 1.0;
    Conv2dOptions opt;
    opt.padding = {1, 1};
    opt.groups = 2;
    CHECK(to_vec(conv2d(x, Tensor<double>::from_vector({2, 1, 3, 3}, k), {}, opt)) == to_vec(x));
  }
  SUBCASE("matches the direct oracle for strided grouped convs") {
    Rng rng(4);
    auto x = randn({2, 4, 7, 6}, rng, false);
    auto w = randn({6, 2, 3, 3}, rng, false);
    auto b = randn({6}, rng, false);
    Conv2dOptions opt;
    opt.stride = {2, 2};
    opt.padding = {1, 1};
    opt.groups = 2;
    auto y = conv2d(x, w, b, opt);
    CHECK(y.shape() == Shape{2, 6, 4, 3});
    auto ref = oracle::conv2d(to_vec(x), 2, 4, 7, 6, to_vec(w), 6, 3, 2, 1, 2, to_vec(b));
    CHECK(oracle::max_abs_diff(y.data(), ref) < 1e-12);
  }
  SUBCASE("errors name the offending dimension") {
    auto x = Tensor<double>::zeros({1, 3, 4, 4});
    CHECK_THROWS_WITH_AS(conv2d(x, Tensor<double>::zeros({2, 2, 1, 1})),
                         doctest::Contains("dim 1"), std::invalid_argument);
    Conv2dOptions opt;
    opt.groups = 2;
    CHECK_THROWS_AS(conv2d(x, Tensor<double>::zeros({2, 1, 1, 1}), {}, opt), std::invalid_argument);
  }
}

TEST_CASE("avg_pool2d_excl examples") {
  auto x = Tensor<double>::from_vector({1, 1, 3, 3}, iota_values(9));
  auto y = avg_pool2d_excl(x, 3);
  CHECK(y.data()[4] == doctest::Approx(5.0));
  CHECK(y.data()[0] == doctest::Approx(3.0));
  CHECK(y.data()[1] == doctest::Approx(3.5));
  CHECK(to_vec(avg_pool2d_excl(x, 1)) == to_vec(x));
  auto c = avg_pool2d_excl(Tensor<double>::full({2, 3, 5, 4}, 0.7), 5);
  for (double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(avg_pool2d_excl(x, 2), std::invalid_argument);
  CHECK_THROWS_AS(avg_pool2d_excl(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(avg_pool2d_excl(x, -3), std::invalid_argument);
}

TEST_CASE("avg_pool2d_excl interior equals zero-padded k*k average") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const int k = seed % 2 ? 5 : 3, r = k / 2;
    auto x = randn({1, 2, 9, 8}, rng, false);
    auto y = avg_pool2d_excl(x, k);
    std::vector<double> w(static_cast<std::size_t>(2 * k * k), 1.0 / (k * k));
    Conv2dOptions opt;
    opt.padding = {r, r};
    opt.groups = 2;
    auto z = conv2d(x, Tensor<double>::from_vector({2, 1, k, k}, w), {}, opt);
    for (int c = 0; c < 2; ++c)
      for (int i = r; i < 9 - r; ++i)
        for (int j = r; j < 8 - r; ++j) {
          const auto idx = (c * 9 + i) * 8 + j;
          CHECK(std::abs(y.data()[idx] - z.data()[idx]) < 1e-12);
        }
  }
}

TEST_CASE("linearity of conv2d and avg_pool2d_excl") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto x = randn({2, 3, 6, 5}, rng, false);
    auto y = randn({2, 3, 6, 5}, rng, false);
    const double a = rng.normal(), b = rng.normal();
    auto combo = add(scale(x, a), scale(y, b));
    auto w = randn({4, 3, 3, 3}, rng, false);
    Conv2dOptions opt;
    opt.padding = {1, 1};
    auto lhs = conv2d(combo, w, {}, opt);
    auto rhs = add(scale(conv2d(x, w, {}, opt), a), scale(conv2d(y, w, {}, opt), b));
    for (std::size_t i = 0; i < lhs.data().size(); ++i) {
      CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) <= 1e-6 * std::max(1.0, std::abs(rhs.data()[i])));
    }
    auto pl = avg_pool2d_excl(combo, 3);
    auto pr = add(scale(avg_pool2d_excl(x, 3), a), scale(avg_pool2d_excl(y, 3), b));
    for (std::size_t i = 0; i < pl.data().size(); ++i) {
      CHECK(std::abs(pl.data()[i] - pr.data()[i]) <= 1e-6 * std::max(1.0, std::abs(pr.data()[i])));
    }
  }
}

TEST_CASE("softmax_lastdim examples") {
  auto a = softmax_lastdim(Tensor<double>::from_vector({2}, {0, 0}));
  CHECK(a.data()[0] == 0.5);
  auto b = softmax_lastdim(Tensor<double>::from_vector({2}, {1000, 1000}));
  CHECK(b.data()[1] == 0.5);
  auto c = softmax_lastdim(Tensor<double>::from_vector({2}, {std::log(1.0), std::log(3.0)}));
  CHECK(c.data()[0] == doctest::Approx(0.25));
  CHECK(c.data()[1] == doctest::Approx(0.75));
  Rng rng(5);
  auto d = softmax_lastdim(randn({3, 4, 7}, rng, false, 10.0));
  for (int r = 0; r < 12; ++r) {
    double s = 0;
    for (int i = 0; i < 7; ++i) s += d.data()[r * 7 + i];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  auto n = softmax_lastdim(Tensor<double>::from_vector({2}, {NAN, 1.0}));
  CHECK(std::isnan(n.data()[0]));
}

TEST_CASE("activations") {
  Rng rng(6);
  auto x = randn({200}, rng, false, 3.0);
  auto exact = gelu(x), approx = gelu_tanh(x);
  for (std::size_t i = 0; i < 200; ++i) {
    const double v = x.data()[i];
    CHECK(exact.data()[i] == doctest::Approx(0.5 * v * (1 + std::erf(v / std::sqrt(2.0)))));
    CHECK(std::abs(exact.data()[i] - approx.data()[i]) < 1e-3);
    CHECK(relu(x).data()[i] == std::max(0.0, v));
    CHECK(silu(x).data()[i] == doctest::Approx(v / (1 + std::exp(-v))));
  }
  CHECK(activation_from_string("silu") == Activation::silu);
  CHECK_THROWS_AS(activation_from_string("tanh"), std::invalid_argument);
}

TEST_CASE("shape ops") {
  Rng rng(7);
  auto x = randn({2, 3, 4}, rng, false);
  auto p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.data()[(1 * 2 + 1) * 3 + 2] == x.data()[(1 * 3 + 2) * 4 + 1]);
  auto n = narrow(x, 1, 1, 2);
  CHECK(n.shape() == Shape{2, 2, 4});
  CHECK(n.data()[0] == x.data()[4]);
  CHECK_THROWS_AS(reshape(x, {5, 5}), std::invalid_argument);
  CHECK_THROWS_AS(narrow(x, 1, 2, 2), std::invalid_argument);
  auto g = global_avg_pool(Tensor<double>::from_vector({1, 2, 1, 2}, {1, 3, 5, 7}));
  CHECK(g.shape() == Shape{1, 2});
  CHECK(g.data()[1] == 6.0);
}

// Every differentiable op against central finite differences on 20 seeds.
TEST_CASE("op gradients match finite differences") {
  for (const auto& op : fixture::op_cases()) {
    for (int seed = 0; seed < 20; ++seed) {
      CAPTURE(op.name);
      CAPTURE(seed);
      Rng rng(1000 + seed);
      const auto leaves = op.leaves(rng);
      const auto res = oracle::fd_check(
          [&] { return oracle::project(op.apply(leaves), 77 + seed); }, leaves, seed);
      CHECK(res.max_rel < 1e-4);
    }
  }
}

TEST_CASE("ops are deterministic") {
  for (const auto& op : fixture::op_cases()) {
    Rng a(5), b(5);
    const auto la = op.leaves(a), lb = op.leaves(b);
    auto ya = op.apply(la), yb = op.apply(lb);
    CHECK(to_vec(ya) == to_vec(yb));
    backward(oracle::project(ya, 1));
    backward(oracle::project(yb, 1));
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i].grad_or_zeros() == lb[i].grad_or_zeros());
  }
}
