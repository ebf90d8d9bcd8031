#pragma once

#include <string_view>

#include "metaformer/ops.hpp"
#include "metaformer/tensor.hpp"

namespace metaformer {

/// mln: statistics over (C, H, W) per sample (GroupNorm with one group).
/// ln: statistics over C per (sample, position).
/// bn: statistics over (B, H, W) per channel, running averages for eval.
/// none: identity.
enum class NormKind { mln, ln, bn, none };

std::string_view to_string(NormKind kind);
NormKind norm_kind_from_string(std::string_view name);

template <typename T>
struct NormParams {
  NormKind kind = NormKind::mln;
  Tensor<T> weight;  // gamma [C]
  Tensor<T> bias;    // beta [C]
  Tensor<T> running_mean;  // bn only
  Tensor<T> running_var;   // bn only, unbiased
  double eps = 1e-5;
  double momentum = 0.1;

  /// gamma = 1, beta = 0, running_mean = 0, running_var = 1.
  static NormParams make(NormKind kind, std::int64_t channels);

  std::int64_t trainable_count() const;
};

/// Modified layer norm: per-sample mean and biased variance over all of
/// (C, H, W), per-channel affine.
template <typename T>
Tensor<T> mln(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
              double eps = 1e-5);

/// Channel layer norm: statistics over C at every (b, h, w).
template <typename T>
Tensor<T> layer_norm_channel(const Tensor<T>& x, const Tensor<T>& gamma,
                             const Tensor<T>& beta, double eps = 1e-5);

/// Batch norm. Train mode normalizes with batch statistics (biased variance)
/// and updates the running buffers; eval mode uses the running buffers.
/// Throws std::invalid_argument in train mode when B*H*W < 2.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, NormParams<T>& params, Mode mode);

/// Dispatches on params.kind.
template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, NormParams<T>& params, Mode mode);

}  // namespace metaformer
