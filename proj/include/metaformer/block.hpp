#pragma once

#include <string>
#include <vector>

#include "metaformer/mixers.hpp"
#include "metaformer/norm.hpp"
#include "metaformer/ops.hpp"
#include "metaformer/params.hpp"
#include "metaformer/rng.hpp"

namespace metaformer {

inline constexpr int kMlpRatio = 4;

struct BlockConfig {
  MixerConfig mixer;
  NormKind norm = NormKind::mln;
  Activation activation = Activation::gelu;
  bool use_residual = true;
  bool use_channel_mlp = true;
  bool use_layer_scale = true;
  double layer_scale_init = 1e-5;
  double drop_path_rate = 0.0;

  bool operator==(const BlockConfig&) const = default;

  void validate(std::int64_t channels) const;
};

template <typename T>
struct BlockParams {
  NormParams<T> norm1;
  TokenMixer<T> mixer;
  NormParams<T> norm2;
  Tensor<T> fc1_weight;  // [4C, C, 1, 1]
  Tensor<T> fc1_bias;    // [4C]
  Tensor<T> fc2_weight;  // [C, 4C, 1, 1]
  Tensor<T> fc2_bias;    // [C]
  Tensor<T> layer_scale_1;  // [C]
  Tensor<T> layer_scale_2;  // [C]

  /// Zero-filled tensors shaped for `config` at width `channels`; members
  /// disabled by the config stay undefined. Norm affines start at 1/0 and
  /// LayerScale at config.layer_scale_init.
  static BlockParams allocate(const BlockConfig& config, std::int64_t channels);
};

/// fc2(act(fc1(x))) with 1x1 convolutions; hidden width 4C.
template <typename T>
Tensor<T> channel_mlp(const Tensor<T>& x, const Tensor<T>& fc1_weight,
                      const Tensor<T>& fc1_bias, const Tensor<T>& fc2_weight,
                      const Tensor<T>& fc2_bias, Activation activation);

/// Stochastic depth on a residual branch. In train mode each sample is
/// zeroed with probability p and otherwise scaled by 1/(1-p); eval mode and
/// p = 0 return x untouched without consuming randomness.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Mode mode, Rng& rng);

/// y = x + drop_path(ls1 ⊙ mixer(norm1(x)))
/// z = y + drop_path(ls2 ⊙ mlp(norm2(y)))
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockConfig& config,
                        BlockParams<T>& params, Mode mode, Rng& rng);

template <typename T>
class Block {
 public:
  Block() = default;
  Block(BlockConfig config, std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng& rng) {
    return block_forward(x, config_, params_, mode, rng);
  }

  const BlockConfig& config() const { return config_; }
  std::int64_t channels() const { return channels_; }
  BlockParams<T>& params() { return params_; }
  const BlockParams<T>& params() const { return params_; }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) const;

 private:
  BlockConfig config_;
  std::int64_t channels_ = 0;
  BlockParams<T> params_;
};

/// Appends a norm's tensors (affine + batch-norm buffers) under `prefix`.
template <typename T>
void collect_norm(const NormParams<T>& norm, const std::string& prefix,
                  std::vector<ParamRef<T>>& out);

}  // namespace metaformer
