#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "metaformer/norm.hpp"
#include "oracles.hpp"

using namespace metaformer;
using oracle::randn;

namespace {

std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> alternating(int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = i % 2 ? 1.0 : -1.0;
  return v;
}

}  // namespace

TEST_CASE("norm kind strings") {
  CHECK(norm_kind_from_string("mln") == NormKind::mln);
  CHECK(norm_kind_from_string("none") == NormKind::none);
  CHECK(to_string(NormKind::bn) == "bn");
  CHECK_THROWS_AS(norm_kind_from_string("group"), std::invalid_argument);
}

TEST_CASE("mln examples") {
  auto gamma = Tensor<double>::full({3}, 1.0), beta = Tensor<double>::zeros({3});
  auto flat = mln(Tensor<double>::full({2, 3, 2, 2}, 4.2), gamma, beta);
  for (double v : flat.data()) CHECK(std::abs(v) < 1e-9);
  auto pm = Tensor<double>::from_vector({1, 3, 2, 2}, alternating(12));
  auto y = mln(pm, gamma, beta, 1e-12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(y.data()[i] == doctest::Approx(pm.data()[i]));
}

TEST_CASE("layer_norm_channel examples") {
  Rng rng(1);
  auto x = randn({2, 1, 3, 3}, rng, false);
  auto y = layer_norm_channel(x, Tensor<double>::full({1}, 2.0), Tensor<double>::full({1}, 0.3));
  for (double v : y.data()) CHECK(v == doctest::Approx(0.3));
  // channels {-1, +1} at every position
  std::vector<double> v(2 * 4);
  for (int i = 0; i < 4; ++i) v[i] = -1, v[4 + i] = 1;
  auto z = layer_norm_channel(Tensor<double>::from_vector({1, 2, 2, 2}, v),
                              Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), 1e-12);
  for (std::size_t i = 0; i < 8; ++i) CHECK(z.data()[i] == doctest::Approx(v[i]));
}

TEST_CASE("batch_norm examples and running statistics") {
  Rng rng(2);
  auto x = randn({3, 2, 4, 4}, rng, false);
  auto p = NormParams<double>::make(NormKind::bn, 2);
  auto e = batch_norm(x, p, Mode::eval);
  for (std::size_t i = 0; i < e.data().size(); ++i) {
    CHECK(e.data()[i] == doctest::Approx(x.data()[i] / std::sqrt(1 + 1e-5)));
  }

  std::vector<double> c(2 * 16, 0.0);
  for (int i = 0; i < 16; ++i) c[i] = 5.0, c[16 + i] = -2.0;
  auto q = NormParams<double>::make(NormKind::bn, 2);
  q.bias.mutable_data()[1] = 0.25;
  auto t = batch_norm(Tensor<double>::from_vector({1, 2, 4, 4}, c), q, Mode::train);
  for (int i = 0; i < 16; ++i) {
    CHECK(std::abs(t.data()[i]) < 1e-9);
    CHECK(t.data()[16 + i] == doctest::Approx(0.25));
  }

  auto r = NormParams<double>::make(NormKind::bn, 2);
  batch_norm(x, r, Mode::train);
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0, sq = 0;
    const int n = 3 * 16;
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 16; ++k) mean += x.data()[(b * 2 + ch) * 16 + k];
    mean /= n;
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 16; ++k) sq += std::pow(x.data()[(b * 2 + ch) * 16 + k] - mean, 2);
    CHECK(r.running_mean.data()[ch] == doctest::Approx(0.1 * mean));
    CHECK(r.running_var.data()[ch] == doctest::Approx(0.9 + 0.1 * sq / (n - 1)));
  }

  auto one = NormParams<double>::make(NormKind::bn, 2);
  CHECK_THROWS_AS(batch_norm(Tensor<double>::zeros({1, 2, 1, 1}), one, Mode::train),
                  std::invalid_argument);
}

TEST_CASE("norms match brute-force statistics on 100 random inputs") {
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int B = 2, C = 3, H = 4, W = 4;
    auto x = randn({B, C, H, W}, rng, false, 1.0 + seed % 5);
    auto g = randn({C}, rng, false), b = randn({C}, rng, false);
    const auto xv = vec(x), gv = vec(g), bv = vec(b);
    CHECK(oracle::max_abs_diff(mln(x, g, b).data(), oracle::mln(xv, B, C, H, W, gv, bv, 1e-5)) < 1e-10);
    CHECK(oracle::max_abs_diff(layer_norm_channel(x, g, b).data(),
                               oracle::layer_norm_channel(xv, B, C, H, W, gv, bv, 1e-5)) < 1e-10);
    auto p = NormParams<double>::make(NormKind::bn, C);
    p.weight = g;
    p.bias = b;
    CHECK(oracle::max_abs_diff(batch_norm(x, p, Mode::train).data(),
                               oracle::batch_norm_train(xv, B, C, H, W, gv, bv, 1e-5)) < 1e-10);
  }
}

TEST_CASE("mln output statistics before affine") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(50 + seed);
    auto x = randn({2, 4, 5, 5}, rng, false, 3.0);
    auto y = mln(x, Tensor<double>::full({4}, 1.0), Tensor<double>::zeros({4}));
    for (int b = 0; b < 2; ++b) {
      double m = 0, v = 0;
      for (int i = 0; i < 100; ++i) m += y.data()[b * 100 + i];
      m /= 100;
      for (int i = 0; i < 100; ++i) v += std::pow(y.data()[b * 100 + i] - m, 2);
      v /= 100;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(v - 1) < 1e-3);
    }
  }
}

TEST_CASE("shift invariance and pre-normalized inputs") {
  Rng rng(3);
  auto x = randn({2, 3, 4, 4}, rng, false);
  auto shifted = add(x, Tensor<double>::full({2, 3, 4, 4}, 7.5));
  auto g = Tensor<double>::full({3}, 1.0), b = Tensor<double>::zeros({3});
  CHECK(oracle::max_abs_diff(mln(x, g, b).data(), mln(shifted, g, b).data()) < 1e-9);
  CHECK(oracle::max_abs_diff(layer_norm_channel(x, g, b).data(),
                             layer_norm_channel(shifted, g, b).data()) < 1e-9);
  auto p1 = NormParams<double>::make(NormKind::bn, 3), p2 = NormParams<double>::make(NormKind::bn, 3);
  CHECK(oracle::max_abs_diff(batch_norm(x, p1, Mode::train).data(),
                             batch_norm(shifted, p2, Mode::train).data()) < 1e-9);

  auto pre = mln(x, g, b, 0.0);
  CHECK(oracle::max_abs_diff(mln(pre, g, b).data(), pre.data()) < 1e-4);
  auto pre_ln = layer_norm_channel(x, g, b, 0.0);
  CHECK(oracle::max_abs_diff(layer_norm_channel(pre_ln, g, b).data(), pre_ln.data()) < 1e-4);
}

TEST_CASE("apply_norm none is the identity") {
  Rng rng(4);
  auto x = randn({1, 2, 3, 3}, rng, false);
  auto p = NormParams<double>::make(NormKind::none, 2);
  CHECK(apply_norm(x, p, Mode::train).same_storage(x));
  CHECK(p.trainable_count() == 0);
  CHECK(NormParams<double>::make(NormKind::bn, 5).trainable_count() == 10);
}

TEST_CASE("norm gradients match finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(200 + seed);
    auto x = randn({2, 3, 3, 4}, rng);
    auto g = randn({3}, rng), b = randn({3}, rng);
    CHECK(oracle::fd_check([&] { return oracle::project(mln(x, g, b), seed); }, {x, g, b}, seed).max_rel < 1e-4);
    CHECK(oracle::fd_check([&] { return oracle::project(layer_norm_channel(x, g, b), seed); }, {x, g, b}, seed).max_rel < 1e-4);
    auto p = NormParams<double>::make(NormKind::bn, 3);
    p.weight = g;
    p.bias = b;
    CHECK(oracle::fd_check([&] { return oracle::project(batch_norm(x, p, Mode::train), seed); }, {x, g, b}, seed).max_rel < 1e-4);
    CHECK(oracle::fd_check([&] { return oracle::project(batch_norm(x, p, Mode::eval), seed); }, {x, g, b}, seed).max_rel < 1e-4);
  }
}
