#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metaformer/params.hpp"
#include "metaformer/tensor.hpp"

namespace metaformer {

enum class MixerKind { pooling, identity, random_matrix, depthwise_conv, attention, spatial_fc };

std::string_view to_string(MixerKind kind);
MixerKind mixer_kind_from_string(std::string_view name);

struct MixerConfig {
  MixerKind kind = MixerKind::pooling;
  int pool_size = 3;   // pooling
  int kernel = 3;      // depthwise_conv
  int heads = 0;       // attention; 0 selects channels / 32 (at least 1)
  std::int64_t token_count = 0;  // random_matrix / spatial_fc, bound at build time

  bool operator==(const MixerConfig&) const = default;

  /// Number of attention heads actually used at this width.
  int resolved_heads(std::int64_t channels) const;
  /// Throws std::invalid_argument describing the first violated invariant.
  void validate(std::int64_t channels) const;
};

/// Learnable/frozen tensors of one mixer; unused members stay undefined.
template <typename T>
struct MixerParams {
  Tensor<T> weight;  // random_matrix [N,N] | depthwise_conv [C,1,k,k] | spatial_fc [N,N]
  Tensor<T> bias;    // depthwise_conv [C] | spatial_fc [N]
  Tensor<T> qkv_weight;   // attention [3C, C]
  Tensor<T> qkv_bias;     // attention [3C]
  Tensor<T> proj_weight;  // attention [C, C]
  Tensor<T> proj_bias;    // attention [C]
};

/// avg_pool2d_excl(x, K) - x.
template <typename T>
Tensor<T> pooling_mixer(const Tensor<T>& x, int pool_size);

template <typename T>
Tensor<T> identity_mixer(const Tensor<T>& x);

/// Tokens X [N, C] per sample mixed as W_R · X. w_r is [N, N], N = H·W.
template <typename T>
Tensor<T> random_matrix_mixer(const Tensor<T>& x, const Tensor<T>& w_r);

template <typename T>
Tensor<T> depthwise_conv_mixer(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& bias);

/// Multi-head self-attention over the H·W tokens, no positional encoding.
template <typename T>
Tensor<T> attention_mixer(const Tensor<T>& x, const MixerParams<T>& params, int heads);

/// One fully connected layer across the token axis, shared over channels.
template <typename T>
Tensor<T> spatial_fc_mixer(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias);

/// Runtime token mixer: configuration plus its parameter tensors.
template <typename T>
class TokenMixer {
 public:
  TokenMixer() = default;
  /// Allocates zero-filled parameters; initialization is done by the model
  /// builder following each parameter's InitRule.
  TokenMixer(MixerConfig config, std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x) const;

  const MixerConfig& config() const { return config_; }
  std::int64_t channels() const { return channels_; }
  const MixerParams<T>& params() const { return params_; }
  MixerParams<T>& params() { return params_; }

  /// Appends this mixer's parameters with names prefixed by `prefix`.
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) const;

 private:
  MixerConfig config_;
  std::int64_t channels_ = 0;
  MixerParams<T> params_;
};

}  // namespace metaformer
