#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "metaformer/block.hpp"
#include "metaformer/mixers.hpp"
#include "metaformer/norm.hpp"
#include "metaformer/ops.hpp"
#include "metaformer/params.hpp"
#include "metaformer/rng.hpp"

namespace metaformer {

inline constexpr int kNumStages = 4;

/// Invalid model configuration. what() starts with the offending field path,
/// e.g. "custom.mixers[2].pool_size: ...".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& message)
      : std::invalid_argument(path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct PatchEmbedSpec {
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  bool operator==(const PatchEmbedSpec&) const = default;
};

/// Declarative description of a 4-stage MetaFormer classifier.
struct ModelConfig {
  std::array<std::int64_t, kNumStages> dims{64, 128, 320, 512};
  std::array<int, kNumStages> depths{2, 2, 6, 2};
  std::array<MixerConfig, kNumStages> mixers{};
  NormKind norm = NormKind::mln;
  Activation activation = Activation::gelu;
  bool use_layer_scale = true;
  double layer_scale_init = 1e-5;
  double drop_path = 0.1;  // peak stochastic-depth rate d_r of the top block
  bool use_residual = true;
  bool use_channel_mlp = true;
  int num_classes = 1000;
  int in_channels = 3;
  int input_size = 224;  // binds random_matrix / spatial_fc token counts
  std::array<PatchEmbedSpec, kNumStages> patch{
      PatchEmbedSpec{7, 4, 2}, PatchEmbedSpec{3, 2, 1}, PatchEmbedSpec{3, 2, 1},
      PatchEmbedSpec{3, 2, 1}};
  /// Set for named variants, which must follow the [L/6, L/6, L/2, L/6] plan.
  std::string variant;

  bool operator==(const ModelConfig&) const = default;

  int total_blocks() const;
  bool resolution_bound() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// floor((in + 2·pad − kernel) / stride) + 1, or 0 when the kernel does not fit.
std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding);

/// Token grid side length of every stage for a square input.
std::array<std::int64_t, kNumStages> stage_grids(const ModelConfig& config, std::int64_t input_size);

/// [L/6, L/6, L/2, L/6]; throws std::invalid_argument unless L is a positive
/// multiple of 6.
std::array<int, kNumStages> stage_plan(int total_blocks);

/// rate_i = d_r · i / (n − 1) over the global block index.
std::vector<double> drop_path_schedule(double peak_rate, int total_blocks);

/// S12, S24, S36, M36, M48.
ModelConfig named_variant(std::string_view name);
std::vector<std::string> variant_names();

/// S12-based ablation presets: identity, random_matrix, depthwise_conv,
/// pool5, pool7, pool9, ln, bn, no_norm, relu, silu, no_residual,
/// no_channel_mlp, hybrid_pool_attn, hybrid_attn_attn, hybrid_pool_fc,
/// hybrid_fc_fc.
ModelConfig ablation_config(std::string_view name);
std::vector<std::string> ablation_names();

/// Parses {"variant": NAME} or {"custom": {...}}; unknown fields are rejected.
ModelConfig config_from_json(const nlohmann::json& j);
/// Canonical {"custom": {...}} form with every field spelled out.
nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig load_config_file(const std::string& path);

/// Per-block configs in global order, with drop-path rates from the schedule
/// and resolution-bound token counts filled in.
std::vector<BlockConfig> block_configs(const ModelConfig& config);

/// Strided convolution that downsamples into the next stage's token grid.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      const PatchEmbedSpec& spec);

template <typename T>
class Model {
 public:
  /// Shapes every tensor for `config` without drawing random values.
  static Model allocate(const ModelConfig& config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// images [B, in_channels, H, W] → logits [B, num_classes].
  Tensor<T> forward(const Tensor<T>& images, Mode mode, Rng& rng);
  Tensor<T> forward(const Tensor<T>& images) {
    Rng rng(0);
    return forward(images, Mode::eval, rng);
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<std::vector<Block<T>>>& stages() const { return stages_; }
  std::vector<std::vector<Block<T>>>& stages() { return stages_; }

  /// Every tensor in canonical order with hierarchical names such as
  /// "stage3.block2.mlp.fc1.weight".
  std::vector<ParamRef<T>> parameters() const;
  std::vector<Tensor<T>> trainable_parameters() const;

  void zero_grad();
  /// Toggles gradient recording on trainable parameters (inference only
  /// needs false).
  void set_trainable(bool enabled);

  Model clone() const;
  template <typename U>
  Model<U> cast() const;

 private:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}

  ModelConfig config_;
  std::array<Tensor<T>, kNumStages> embed_weight_;
  std::array<Tensor<T>, kNumStages> embed_bias_;
  std::vector<std::vector<Block<T>>> stages_;
  NormParams<T> final_norm_;
  Tensor<T> head_weight_;
  Tensor<T> head_bias_;
};

/// Allocates and initializes every parameter from `seed`: truncated normal
/// (std 0.02, ±2σ) weights, zero biases, unit norm scales, LayerScale = ε,
/// row-softmaxed uniform frozen mixing matrices. Values are drawn in double
/// so build<float> and build<double> agree up to rounding.
template <typename T>
Model<T> build(const ModelConfig& config, std::uint64_t seed);

}  // namespace metaformer
