#pragma once

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "metaformer/tensor.hpp"

// Differentiable primitives. Every function records a graph node when an
// input requires grad; shape errors throw std::invalid_argument.
namespace metaformer {

/// Training mode enables stochastic depth and batch statistics.
enum class Mode { train, eval };

struct Conv2dOptions {
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> padding{0, 0};
  int groups = 1;
};

/// Cross-correlation with zero padding. weight is [Cout, Cin/groups, Kh, Kw];
/// bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias = {}, const Conv2dOptions& options = {});

/// Stride-1 average pooling with padding k/2 whose border windows divide by
/// the number of in-bounds cells. Output shape equals input shape.
template <typename T>
Tensor<T> avg_pool2d_excl(const Tensor<T>& input, int k);

/// x · Wᵀ + b over the last axis; weight is [out, in], bias [out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias = {});

/// Batched [..., M, K] × [..., K, N] with identical leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x[b, c, ...] * v[c]
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& v);

/// x[b, ...] * factors[b]; factors are constants (no gradient).
template <typename T>
Tensor<T> sample_scale(const Tensor<T>& x, std::span<const T> factors);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// [B, C, H, W] → [B, C], mean over the spatial grid.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> axes);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::initializer_list<int> axes) {
  return permute(x, std::span<const int>(axes.begin(), axes.size()));
}
/// Slice [start, start + length) along one axis.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start,
                 std::int64_t length);

enum class Activation { gelu, relu, silu };

std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

/// Exact erf formulation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// tanh approximation; never used by default.
template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act);

}  // namespace metaformer
