#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "metaformer/block.hpp"
#include "metaformer/model.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace metaformer;

/// Random values for every trainable tensor (scale 0.5), row-softmaxed
/// uniform values for frozen matrices.
template <typename T>
void randomize(const std::vector<ParamRef<T>>& params, Rng& rng) {
  for (const auto& p : params) {
    auto t = p.tensor;
    auto v = t.mutable_data();
    if (p.role == ParamRole::trainable) {
      for (auto& x : v) x = static_cast<T>(0.5 * rng.normal());
    } else if (p.init == InitRule::uniform_row_softmax) {
      const auto n = static_cast<std::size_t>(t.dim(1));
      for (std::size_t r = 0; r < v.size() / n; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < n; ++c) total += v[r * n + c] = std::exp(rng.uniform());
        for (std::size_t c = 0; c < n; ++c) v[r * n + c] /= total;
      }
    }
  }
}

inline std::vector<MixerKind> all_mixers() {
  return {MixerKind::pooling, MixerKind::identity, MixerKind::random_matrix,
          MixerKind::depthwise_conv, MixerKind::attention, MixerKind::spatial_fc};
}
inline std::vector<NormKind> all_norms() {
  return {NormKind::mln, NormKind::ln, NormKind::bn, NormKind::none};
}
inline std::vector<Activation> all_activations() {
  return {Activation::gelu, Activation::relu, Activation::silu};
}

inline BlockConfig block_config(MixerKind mixer, NormKind norm, Activation act, std::int64_t tokens) {
  BlockConfig c;
  c.mixer.kind = mixer;
  c.mixer.token_count = tokens;
  c.norm = norm;
  c.activation = act;
  return c;
}

/// Max relative FD error of a [2,8,6,6] block over its input and every
/// trainable tensor, train mode with a fixed drop-path stream.
inline double block_gradient_error(const BlockConfig& config, std::uint64_t seed) {
  Block<double> block(config, 8);
  std::vector<ParamRef<double>> params;
  block.collect("", params);
  Rng rng(seed);
  randomize(params, rng);
  auto x = oracle::randn({2, 8, 6, 6}, rng);
  std::vector<Tensor<double>> leaves{x};
  for (const auto& p : params) {
    if (p.role == ParamRole::trainable) leaves.push_back(p.tensor);
  }
  auto loss = [&] {
    Rng drop(seed + 1);
    return oracle::project(block.forward(x, Mode::train, drop), seed + 2);
  };
  return oracle::fd_check(loss, leaves, seed, 6).max_rel;
}

inline std::string describe(const BlockConfig& c) {
  return std::string(to_string(c.mixer.kind)) + "/" + std::string(to_string(c.norm)) + "/" +
         std::string(to_string(c.activation));
}

}  // namespace fixture
