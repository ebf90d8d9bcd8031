#include "metaformer/block.hpp"

#include <stdexcept>

namespace metaformer {

void BlockConfig::validate(std::int64_t channels) const {
  mixer.validate(channels);
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw std::invalid_argument("drop_path_rate must be in [0, 1), got " +
                                std::to_string(drop_path_rate));
  }
  if (use_layer_scale && !(layer_scale_init > 0.0)) {
    throw std::invalid_argument("layer_scale_init must be > 0 when LayerScale is enabled");
  }
}

template <typename T>
BlockParams<T> BlockParams<T>::allocate(const BlockConfig& config, std::int64_t channels) {
  config.validate(channels);
  const std::int64_t C = channels;
  const std::int64_t hidden = kMlpRatio * C;
  auto trainable = [](Shape shape, T value = T(0)) {
    auto t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
  };
  BlockParams p;
  p.norm1 = NormParams<T>::make(config.norm, C);
  p.mixer = TokenMixer<T>(config.mixer, C);
  if (config.use_layer_scale) {
    p.layer_scale_1 = trainable({C}, static_cast<T>(config.layer_scale_init));
  }
  if (config.use_channel_mlp) {
    p.norm2 = NormParams<T>::make(config.norm, C);
    p.fc1_weight = trainable({hidden, C, 1, 1});
    p.fc1_bias = trainable({hidden});
    p.fc2_weight = trainable({C, hidden, 1, 1});
    p.fc2_bias = trainable({C});
    if (config.use_layer_scale) {
      p.layer_scale_2 = trainable({C}, static_cast<T>(config.layer_scale_init));
    }
  }
  return p;
}

template <typename T>
Tensor<T> channel_mlp(const Tensor<T>& x, const Tensor<T>& fc1_weight,
                      const Tensor<T>& fc1_bias, const Tensor<T>& fc2_weight,
                      const Tensor<T>& fc2_bias, Activation activation) {
  auto hidden = activate(conv2d(x, fc1_weight, fc1_bias), activation);
  return conv2d(hidden, fc2_weight, fc2_bias);
}

template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("drop_path: probability must be in [0, 1), got " +
                                std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  const auto keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> factors(static_cast<std::size_t>(x.dim(0)));
  for (auto& f : factors) f = rng.uniform() < p ? T(0) : keep_scale;
  return sample_scale(x, std::span<const T>(factors));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockConfig& config,
                        BlockParams<T>& params, Mode mode, Rng& rng) {
  auto branch = params.mixer.forward(apply_norm(x, params.norm1, mode));
  if (config.use_layer_scale) branch = channel_scale(branch, params.layer_scale_1);
  branch = drop_path(branch, config.drop_path_rate, mode, rng);
  auto y = config.use_residual ? add(x, branch) : branch;
  if (!config.use_channel_mlp) return y;

  auto mlp = channel_mlp(apply_norm(y, params.norm2, mode), params.fc1_weight,
                         params.fc1_bias, params.fc2_weight, params.fc2_bias,
                         config.activation);
  if (config.use_layer_scale) mlp = channel_scale(mlp, params.layer_scale_2);
  mlp = drop_path(mlp, config.drop_path_rate, mode, rng);
  return config.use_residual ? add(y, mlp) : mlp;
}

template <typename T>
void collect_norm(const NormParams<T>& norm, const std::string& prefix,
                  std::vector<ParamRef<T>>& out) {
  if (norm.kind == NormKind::none) return;
  out.push_back({prefix + "weight", norm.weight, ParamRole::trainable, InitRule::ones});
  out.push_back({prefix + "bias", norm.bias, ParamRole::trainable, InitRule::zeros});
  if (norm.kind == NormKind::bn) {
    out.push_back({prefix + "running_mean", norm.running_mean, ParamRole::buffer, InitRule::zeros});
    out.push_back({prefix + "running_var", norm.running_var, ParamRole::buffer, InitRule::ones});
  }
}

template <typename T>
Block<T>::Block(BlockConfig config, std::int64_t channels)
    : config_(config), channels_(channels), params_(BlockParams<T>::allocate(config, channels)) {}

template <typename T>
void Block<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) const {
  const auto& p = params_;
  collect_norm(p.norm1, prefix + "norm1.", out);
  p.mixer.collect(prefix + "mixer.", out);
  if (config_.use_channel_mlp) {
    collect_norm(p.norm2, prefix + "norm2.", out);
    out.push_back({prefix + "mlp.fc1.weight", p.fc1_weight, ParamRole::trainable, InitRule::trunc_normal});
    out.push_back({prefix + "mlp.fc1.bias", p.fc1_bias, ParamRole::trainable, InitRule::zeros});
    out.push_back({prefix + "mlp.fc2.weight", p.fc2_weight, ParamRole::trainable, InitRule::trunc_normal});
    out.push_back({prefix + "mlp.fc2.bias", p.fc2_bias, ParamRole::trainable, InitRule::zeros});
  }
  if (config_.use_layer_scale) {
    out.push_back({prefix + "layer_scale_1", p.layer_scale_1, ParamRole::trainable, InitRule::layer_scale});
    if (config_.use_channel_mlp) {
      out.push_back({prefix + "layer_scale_2", p.layer_scale_2, ParamRole::trainable, InitRule::layer_scale});
    }
  }
}

#define METAFORMER_INSTANTIATE_BLOCK(T)                                                     \
  template struct BlockParams<T>;                                                           \
  template class Block<T>;                                                                  \
  template Tensor<T> channel_mlp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                 const Tensor<T>&, const Tensor<T>&, Activation);           \
  template Tensor<T> drop_path(const Tensor<T>&, double, Mode, Rng&);                       \
  template Tensor<T> block_forward(const Tensor<T>&, const BlockConfig&, BlockParams<T>&,   \
                                   Mode, Rng&);                                             \
  template void collect_norm(const NormParams<T>&, const std::string&,                      \
                             std::vector<ParamRef<T>>&);

METAFORMER_INSTANTIATE_BLOCK(float)
METAFORMER_INSTANTIATE_BLOCK(double)

}  // namespace metaformer
