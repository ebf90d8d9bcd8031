#include "metaformer/mixers.hpp"

#include <cmath>
#include <stdexcept>

#include "metaformer/ops.hpp"

namespace metaformer {

std::string_view to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::pooling: return "pooling";
    case MixerKind::identity: return "identity";
    case MixerKind::random_matrix: return "random_matrix";
    case MixerKind::depthwise_conv: return "depthwise_conv";
    case MixerKind::attention: return "attention";
    case MixerKind::spatial_fc: return "spatial_fc";
  }
  return "?";
}

MixerKind mixer_kind_from_string(std::string_view name) {
  for (auto k : {MixerKind::pooling, MixerKind::identity, MixerKind::random_matrix,
                 MixerKind::depthwise_conv, MixerKind::attention, MixerKind::spatial_fc}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown mixer kind '" + std::string(name) + "'");
}

int MixerConfig::resolved_heads(std::int64_t channels) const {
  if (heads > 0) return heads;
  if (channels >= 32 && channels % 32 == 0) return static_cast<int>(channels / 32);
  return 1;
}

void MixerConfig::validate(std::int64_t channels) const {
  switch (kind) {
    case MixerKind::pooling:
      if (pool_size < 1 || pool_size % 2 == 0) {
        throw std::invalid_argument("pool_size must be a positive odd integer, got " +
                                    std::to_string(pool_size));
      }
      break;
    case MixerKind::depthwise_conv:
      if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("kernel must be a positive odd integer, got " +
                                    std::to_string(kernel));
      }
      break;
    case MixerKind::attention: {
      if (heads < 0) throw std::invalid_argument("heads must be >= 1");
      const int h = resolved_heads(channels);
      if (channels % h != 0) {
        throw std::invalid_argument("heads " + std::to_string(h) +
                                    " does not divide channel dim " + std::to_string(channels));
      }
      break;
    }
    case MixerKind::random_matrix:
    case MixerKind::spatial_fc:
      if (token_count < 1) {
        throw std::invalid_argument("token_count must be >= 1, got " +
                                    std::to_string(token_count));
      }
      break;
    case MixerKind::identity:
      break;
  }
}

namespace {

void check_image(std::string_view op, const Shape& s) {
  if (s.size() != 4) {
    throw std::invalid_argument(std::string(op) + ": input must be [B,C,H,W], got " +
                                to_string(s));
  }
}

template <typename T>
void check_tokens(std::string_view op, const Tensor<T>& x, const Tensor<T>& w) {
  check_image(op, x.shape());
  const std::int64_t n = x.dim(2) * x.dim(3);
  if (w.dim(0) != n) {
    throw std::invalid_argument(std::string(op) + ": expected N = " +
                                std::to_string(w.dim(0)) + " tokens, got N = " +
                                std::to_string(n) + " (" + std::to_string(x.dim(2)) + "x" +
                                std::to_string(x.dim(3)) + ")");
  }
}

}  // namespace

template <typename T>
Tensor<T> pooling_mixer(const Tensor<T>& x, int pool_size) {
  return sub(avg_pool2d_excl(x, pool_size), x);
}

template <typename T>
Tensor<T> identity_mixer(const Tensor<T>& x) {
  return x;
}

template <typename T>
Tensor<T> random_matrix_mixer(const Tensor<T>& x, const Tensor<T>& w_r) {
  check_tokens("random_matrix_mixer", x, w_r);
  const auto& s = x.shape();
  auto tokens = reshape(x, {s[0], s[1], s[2] * s[3]});
  return reshape(linear(tokens, w_r), s);
}

template <typename T>
Tensor<T> depthwise_conv_mixer(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& bias) {
  check_image("depthwise_conv_mixer", x.shape());
  const int k = static_cast<int>(weight.dim(2));
  if (k % 2 == 0) {
    throw std::invalid_argument("depthwise_conv_mixer: kernel must be odd, got " +
                                std::to_string(k));
  }
  Conv2dOptions opt;
  opt.padding = {k / 2, k / 2};
  opt.groups = static_cast<int>(x.dim(1));
  return conv2d(x, weight, bias, opt);
}

template <typename T>
Tensor<T> attention_mixer(const Tensor<T>& x, const MixerParams<T>& p, int heads) {
  check_image("attention_mixer", x.shape());
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], N = s[2] * s[3];
  if (heads < 1 || C % heads != 0) {
    throw std::invalid_argument("attention_mixer: heads " + std::to_string(heads) +
                                " does not divide channel dim " + std::to_string(C));
  }
  const std::int64_t d = C / heads;
  auto tokens = permute(reshape(x, {B, C, N}), {0, 2, 1});               // [B,N,C]
  auto qkv = reshape(linear(tokens, p.qkv_weight, p.qkv_bias), {B, N, 3, heads, d});
  qkv = permute(qkv, {2, 0, 3, 1, 4});                                     // [3,B,h,N,d]
  auto part = [&](int i) { return reshape(narrow(qkv, 0, i, 1), {B, heads, N, d}); };
  auto q = part(0), k = part(1), v = part(2);
  auto scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), T(1) / std::sqrt(static_cast<T>(d)));
  auto mixed = matmul(softmax_lastdim(scores), v);                          // [B,h,N,d]
  auto merged = reshape(permute(mixed, {0, 2, 1, 3}), {B, N, C});
  auto projected = linear(merged, p.proj_weight, p.proj_bias);             // [B,N,C]
  return reshape(permute(projected, {0, 2, 1}), s);
}

template <typename T>
Tensor<T> spatial_fc_mixer(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias) {
  check_tokens("spatial_fc_mixer", x, weight);
  const auto& s = x.shape();
  auto tokens = reshape(x, {s[0], s[1], s[2] * s[3]});
  return reshape(linear(tokens, weight, bias), s);
}

template <typename T>
TokenMixer<T>::TokenMixer(MixerConfig config, std::int64_t channels)
    : config_(config), channels_(channels) {
  config_.validate(channels);
  const std::int64_t C = channels;
  const std::int64_t N = config_.token_count;
  auto trainable = [](Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  };
  switch (config_.kind) {
    case MixerKind::pooling:
    case MixerKind::identity:
      break;
    case MixerKind::random_matrix:
      params_.weight = Tensor<T>::zeros({N, N});
      break;
    case MixerKind::depthwise_conv:
      params_.weight = trainable({C, 1, config_.kernel, config_.kernel});
      params_.bias = trainable({C});
      break;
    case MixerKind::attention:
      params_.qkv_weight = trainable({3 * C, C});
      params_.qkv_bias = trainable({3 * C});
      params_.proj_weight = trainable({C, C});
      params_.proj_bias = trainable({C});
      break;
    case MixerKind::spatial_fc:
      params_.weight = trainable({N, N});
      params_.bias = trainable({N});
      break;
  }
}

template <typename T>
Tensor<T> TokenMixer<T>::forward(const Tensor<T>& x) const {
  switch (config_.kind) {
    case MixerKind::pooling: return pooling_mixer(x, config_.pool_size);
    case MixerKind::identity: return identity_mixer(x);
    case MixerKind::random_matrix: return random_matrix_mixer(x, params_.weight);
    case MixerKind::depthwise_conv: return depthwise_conv_mixer(x, params_.weight, params_.bias);
    case MixerKind::attention:
      return attention_mixer(x, params_, config_.resolved_heads(channels_));
    case MixerKind::spatial_fc: return spatial_fc_mixer(x, params_.weight, params_.bias);
  }
  throw std::invalid_argument("unknown mixer kind");
}

template <typename T>
void TokenMixer<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
  const auto& p = params_;
  auto add = [&](const char* name, const Tensor<T>& t, ParamRole role, InitRule init) {
    out.push_back({prefix + name, t, role, init});
  };
  switch (config_.kind) {
    case MixerKind::pooling:
    case MixerKind::identity:
      break;
    case MixerKind::random_matrix:
      add("weight", p.weight, ParamRole::frozen, InitRule::uniform_row_softmax);
      break;
    case MixerKind::depthwise_conv:
    case MixerKind::spatial_fc:
      add("weight", p.weight, ParamRole::trainable, InitRule::trunc_normal);
      add("bias", p.bias, ParamRole::trainable, InitRule::zeros);
      break;
    case MixerKind::attention:
      add("qkv.weight", p.qkv_weight, ParamRole::trainable, InitRule::trunc_normal);
      add("qkv.bias", p.qkv_bias, ParamRole::trainable, InitRule::zeros);
      add("proj.weight", p.proj_weight, ParamRole::trainable, InitRule::trunc_normal);
      add("proj.bias", p.proj_bias, ParamRole::trainable, InitRule::zeros);
      break;
  }
}

#define METAFORMER_INSTANTIATE_MIXERS(T)                                                   \
  template Tensor<T> pooling_mixer(const Tensor<T>&, int);                                 \
  template Tensor<T> identity_mixer(const Tensor<T>&);                                     \
  template Tensor<T> random_matrix_mixer(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> depthwise_conv_mixer(const Tensor<T>&, const Tensor<T>&,              \
                                          const Tensor<T>&);                               \
  template Tensor<T> attention_mixer(const Tensor<T>&, const MixerParams<T>&, int);        \
  template Tensor<T> spatial_fc_mixer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template class TokenMixer<T>;

METAFORMER_INSTANTIATE_MIXERS(float)
METAFORMER_INSTANTIATE_MIXERS(double)

}  // namespace metaformer
