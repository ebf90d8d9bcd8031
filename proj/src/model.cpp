#include "metaformer/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace metaformer {

using nlohmann::json;

int ModelConfig::total_blocks() const {
  return std::accumulate(depths.begin(), depths.end(), 0);
}

bool ModelConfig::resolution_bound() const {
  for (const auto& m : mixers) {
    if (m.kind == MixerKind::random_matrix || m.kind == MixerKind::spatial_fc) return true;
  }
  return false;
}

std::int64_t conv_output_size(std::int64_t in, int kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

std::array<std::int64_t, kNumStages> stage_grids(const ModelConfig& config,
                                                 std::int64_t input_size) {
  std::array<std::int64_t, kNumStages> grids{};
  std::int64_t side = input_size;
  for (int s = 0; s < kNumStages; ++s) {
    const auto& p = config.patch[s];
    side = side > 0 ? conv_output_size(side, p.kernel, p.stride, p.padding) : 0;
    grids[s] = side;
  }
  return grids;
}

void ModelConfig::validate() const {
  auto at = [](std::string_view field, int i) {
    return std::string(field) + "[" + std::to_string(i) + "]";
  };
  for (int s = 0; s < kNumStages; ++s) {
    if (dims[s] < 1) throw ConfigError(at("dims", s), "must be positive");
    if (depths[s] < 1) throw ConfigError(at("depths", s), "must be positive");
    const auto& p = patch[s];
    if (p.kernel < 1 || p.stride < 1 || p.padding < 0) {
      throw ConfigError(at("patch", s), "kernel and stride must be >= 1, padding >= 0");
    }
  }
  if (num_classes < 1) throw ConfigError("num_classes", "must be positive");
  if (in_channels < 1) throw ConfigError("in_channels", "must be positive");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ConfigError("drop_path", "must be in [0, 1)");
  if (use_layer_scale && !(layer_scale_init > 0.0)) {
    throw ConfigError("layer_scale_init", "must be > 0 when LayerScale is enabled");
  }
  if (input_size < 32) throw ConfigError("input_size", "must be at least 32");
  const auto grids = stage_grids(*this, input_size);
  for (int s = 0; s < kNumStages; ++s) {
    if (grids[s] < 1) {
      throw ConfigError("input_size", std::to_string(input_size) +
                                          " leaves no tokens at stage " + std::to_string(s + 1));
    }
  }
  for (int s = 0; s < kNumStages; ++s) {
    auto m = mixers[s];
    m.token_count = std::max<std::int64_t>(1, grids[s] * grids[s]);
    try {
      m.validate(dims[s]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(at("mixers", s), e.what());
    }
  }
  if (!variant.empty()) {
    const int L = total_blocks();
    if (L % 6 != 0) throw ConfigError("depths", "named variants need a multiple of 6 blocks");
    const auto plan = stage_plan(L);
    for (int s = 0; s < kNumStages; ++s) {
      if (depths[s] != plan[s]) {
        throw ConfigError(at("depths", s), "named variants follow the [L/6, L/6, L/2, L/6] plan");
      }
    }
  }
}

std::array<int, kNumStages> stage_plan(int total_blocks) {
  if (total_blocks <= 0 || total_blocks % 6 != 0) {
    throw std::invalid_argument("stage_plan: total blocks must be a positive multiple of 6, got " +
                                std::to_string(total_blocks));
  }
  const int sixth = total_blocks / 6;
  return {sixth, sixth, 3 * sixth, sixth};
}

std::vector<double> drop_path_schedule(double peak_rate, int total_blocks) {
  if (!(peak_rate >= 0.0 && peak_rate < 1.0)) {
    throw std::invalid_argument("drop_path_schedule: peak rate must be in [0, 1)");
  }
  std::vector<double> rates(static_cast<std::size_t>(std::max(total_blocks, 0)), 0.0);
  if (total_blocks < 2) return rates;
  for (int i = 0; i < total_blocks; ++i) {
    rates[i] = peak_rate * static_cast<double>(i) / static_cast<double>(total_blocks - 1);
  }
  rates.back() = peak_rate;
  return rates;
}

ModelConfig named_variant(std::string_view name) {
  ModelConfig c;
  c.variant = std::string(name);
  const std::array<std::int64_t, 4> small{64, 128, 320, 512};
  const std::array<std::int64_t, 4> medium{96, 192, 384, 768};
  int blocks = 0;
  if (name == "S12") {
    c.dims = small, blocks = 12, c.layer_scale_init = 1e-5, c.drop_path = 0.1;
  } else if (name == "S24") {
    c.dims = small, blocks = 24, c.layer_scale_init = 1e-5, c.drop_path = 0.1;
  } else if (name == "S36") {
    c.dims = small, blocks = 36, c.layer_scale_init = 1e-6, c.drop_path = 0.2;
  } else if (name == "M36") {
    c.dims = medium, blocks = 36, c.layer_scale_init = 1e-6, c.drop_path = 0.3;
  } else if (name == "M48") {
    c.dims = medium, blocks = 48, c.layer_scale_init = 1e-6, c.drop_path = 0.4;
  } else {
    throw ConfigError("variant", "unknown variant '" + std::string(name) +
                                     "' (expected S12, S24, S36, M36 or M48)");
  }
  c.depths = stage_plan(blocks);
  return c;
}

std::vector<std::string> variant_names() { return {"S12", "S24", "S36", "M36", "M48"}; }

ModelConfig ablation_config(std::string_view name) {
  ModelConfig c = named_variant("S12");
  c.variant.clear();
  auto all = [&](MixerKind kind) {
    for (auto& m : c.mixers) m.kind = kind;
  };
  auto top = [&](MixerKind kind, int stages) {
    for (int s = kNumStages - stages; s < kNumStages; ++s) c.mixers[s].kind = kind;
  };
  if (name == "baseline") {
  } else if (name == "identity") {
    all(MixerKind::identity);
  } else if (name == "random_matrix") {
    all(MixerKind::random_matrix);
  } else if (name == "depthwise_conv") {
    all(MixerKind::depthwise_conv);
  } else if (name == "pool5" || name == "pool7" || name == "pool9") {
    for (auto& m : c.mixers) m.pool_size = name.back() - '0';
  } else if (name == "ln") {
    c.norm = NormKind::ln;
  } else if (name == "bn") {
    c.norm = NormKind::bn;
  } else if (name == "no_norm") {
    c.norm = NormKind::none;
  } else if (name == "relu") {
    c.activation = Activation::relu;
  } else if (name == "silu") {
    c.activation = Activation::silu;
  } else if (name == "no_residual") {
    c.use_residual = false;
  } else if (name == "no_channel_mlp") {
    c.use_channel_mlp = false;
  } else if (name == "hybrid_pool_attn") {
    top(MixerKind::attention, 1);
    c.norm = NormKind::ln;
  } else if (name == "hybrid_attn_attn") {
    top(MixerKind::attention, 2);
    c.norm = NormKind::ln;
  } else if (name == "hybrid_pool_fc") {
    top(MixerKind::spatial_fc, 1);
  } else if (name == "hybrid_fc_fc") {
    top(MixerKind::spatial_fc, 2);
  } else {
    throw ConfigError("ablation", "unknown ablation '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> ablation_names() {
  return {"baseline", "identity", "random_matrix", "depthwise_conv", "pool5", "pool7",
          "pool9", "ln", "bn", "no_norm", "relu", "silu", "no_residual", "no_channel_mlp",
          "hybrid_pool_attn", "hybrid_attn_attn", "hybrid_pool_fc", "hybrid_fc_fc"};
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(path, "must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
}

template <typename V>
V get_number(const json& obj, const std::string& path, const char* key, V fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  const std::string p = path + "." + key;
  if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer()) throw ConfigError(p, "must be an integer");
    return v.get<V>();
  } else {
    if (!v.is_number()) throw ConfigError(p, "must be a number");
    return v.get<V>();
  }
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError(path + "." + key, "must be a boolean");
  return obj.at(key).get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key,
                       std::string fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError(path + "." + key, "must be a string");
  return obj.at(key).get<std::string>();
}

template <typename V>
std::array<V, kNumStages> get_stage_array(const json& obj, const std::string& path,
                                          const char* key, bool required,
                                          std::array<V, kNumStages> fallback) {
  const std::string p = path + "." + key;
  if (!obj.contains(key)) {
    if (required) throw ConfigError(p, "is required");
    return fallback;
  }
  const auto& arr = obj.at(key);
  if (!arr.is_array() || arr.size() != kNumStages) {
    throw ConfigError(p, "must be an array of exactly 4 integers");
  }
  std::array<V, kNumStages> out{};
  for (int i = 0; i < kNumStages; ++i) {
    if (!arr[i].is_number_integer()) {
      throw ConfigError(p + "[" + std::to_string(i) + "]", "must be an integer");
    }
    out[i] = arr[i].get<V>();
  }
  return out;
}

MixerConfig mixer_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
  if (!j.contains("kind")) throw ConfigError(path + ".kind", "is required");
  MixerConfig m;
  try {
    m.kind = mixer_kind_from_string(get_string(j, path, "kind", ""));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".kind", e.what());
  }
  switch (m.kind) {
    case MixerKind::pooling:
      reject_unknown(j, path, {"kind", "pool_size"});
      m.pool_size = get_number<int>(j, path, "pool_size", 3);
      if (m.pool_size < 1 || m.pool_size % 2 == 0) {
        throw ConfigError(path + ".pool_size", "must be a positive odd integer");
      }
      break;
    case MixerKind::depthwise_conv:
      reject_unknown(j, path, {"kind", "kernel"});
      m.kernel = get_number<int>(j, path, "kernel", 3);
      if (m.kernel < 1 || m.kernel % 2 == 0) {
        throw ConfigError(path + ".kernel", "must be a positive odd integer");
      }
      break;
    case MixerKind::attention:
      reject_unknown(j, path, {"kind", "heads"});
      m.heads = get_number<int>(j, path, "heads", 0);
      if (j.contains("heads") && m.heads < 1) throw ConfigError(path + ".heads", "must be >= 1");
      break;
    default:
      reject_unknown(j, path, {"kind"});
  }
  return m;
}

json mixer_to_json(const MixerConfig& m) {
  json j{{"kind", std::string(to_string(m.kind))}};
  if (m.kind == MixerKind::pooling) j["pool_size"] = m.pool_size;
  if (m.kind == MixerKind::depthwise_conv) j["kernel"] = m.kernel;
  if (m.kind == MixerKind::attention && m.heads > 0) j["heads"] = m.heads;
  return j;
}

ModelConfig custom_from_json(const json& c) {
  const std::string path = "custom";
  reject_unknown(c, path,
                 {"dims", "depths", "mixers", "norm", "activation", "layer_scale_init",
                  "drop_path", "num_classes", "input_size", "in_channels", "use_layer_scale",
                  "use_residual", "use_channel_mlp", "patch"});
  ModelConfig m;
  m.dims = get_stage_array<std::int64_t>(c, path, "dims", true, m.dims);
  m.depths = get_stage_array<int>(c, path, "depths", true, m.depths);
  if (c.contains("mixers")) {
    const auto& arr = c.at("mixers");
    if (!arr.is_array() || arr.size() != kNumStages) {
      throw ConfigError(path + ".mixers", "must be an array of exactly 4 mixer objects");
    }
    for (int s = 0; s < kNumStages; ++s) {
      m.mixers[s] = mixer_from_json(arr[s], path + ".mixers[" + std::to_string(s) + "]");
    }
  }
  try {
    m.norm = norm_kind_from_string(get_string(c, path, "norm", "mln"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".norm", e.what());
  }
  try {
    m.activation = activation_from_string(get_string(c, path, "activation", "gelu"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".activation", e.what());
  }
  m.use_layer_scale = get_bool(c, path, "use_layer_scale", true);
  m.layer_scale_init = get_number<double>(c, path, "layer_scale_init", 1e-5);
  m.drop_path = get_number<double>(c, path, "drop_path", 0.0);
  m.use_residual = get_bool(c, path, "use_residual", true);
  m.use_channel_mlp = get_bool(c, path, "use_channel_mlp", true);
  m.num_classes = get_number<int>(c, path, "num_classes", 1000);
  m.input_size = get_number<int>(c, path, "input_size", 224);
  m.in_channels = get_number<int>(c, path, "in_channels", 3);
  if (c.contains("patch")) {
    const auto& arr = c.at("patch");
    if (!arr.is_array() || arr.size() != kNumStages) {
      throw ConfigError(path + ".patch", "must be an array of exactly 4 objects");
    }
    for (int s = 0; s < kNumStages; ++s) {
      const std::string p = path + ".patch[" + std::to_string(s) + "]";
      reject_unknown(arr[s], p, {"kernel", "stride", "padding"});
      m.patch[s].kernel = get_number<int>(arr[s], p, "kernel", m.patch[s].kernel);
      m.patch[s].stride = get_number<int>(arr[s], p, "stride", m.patch[s].stride);
      m.patch[s].padding = get_number<int>(arr[s], p, "padding", m.patch[s].padding);
    }
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.path(),
                      std::string(e.what()).substr(e.path().size() + 2));
  }
  return m;
}

}  // namespace

ModelConfig config_from_json(const json& j) {
  reject_unknown(j, "", {"variant", "custom"});
  if (j.contains("variant") == j.contains("custom")) {
    throw ConfigError("config", "exactly one of \"variant\" or \"custom\" is required");
  }
  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ConfigError("variant", "must be a string");
    auto c = named_variant(j.at("variant").get<std::string>());
    c.validate();
    return c;
  }
  return custom_from_json(j.at("custom"));
}

json config_to_json(const ModelConfig& c) {
  json mixers = json::array();
  for (const auto& m : c.mixers) mixers.push_back(mixer_to_json(m));
  json patch = json::array();
  for (const auto& p : c.patch) {
    patch.push_back({{"kernel", p.kernel}, {"stride", p.stride}, {"padding", p.padding}});
  }
  json custom{{"dims", c.dims},
              {"depths", c.depths},
              {"mixers", mixers},
              {"norm", std::string(to_string(c.norm))},
              {"activation", std::string(to_string(c.activation))},
              {"use_layer_scale", c.use_layer_scale},
              {"layer_scale_init", c.layer_scale_init},
              {"drop_path", c.drop_path},
              {"use_residual", c.use_residual},
              {"use_channel_mlp", c.use_channel_mlp},
              {"num_classes", c.num_classes},
              {"in_channels", c.in_channels},
              {"input_size", c.input_size},
              {"patch", patch}};
  return json{{"custom", custom}};
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config", "'" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::vector<BlockConfig> block_configs(const ModelConfig& config) {
  config.validate();
  const auto grids = stage_grids(config, config.input_size);
  const auto rates = drop_path_schedule(config.drop_path, config.total_blocks());
  std::vector<BlockConfig> out;
  std::size_t global = 0;
  for (int s = 0; s < kNumStages; ++s) {
    for (int b = 0; b < config.depths[s]; ++b) {
      BlockConfig bc;
      bc.mixer = config.mixers[s];
      if (bc.mixer.kind == MixerKind::random_matrix || bc.mixer.kind == MixerKind::spatial_fc) {
        bc.mixer.token_count = grids[s] * grids[s];
      }
      bc.norm = config.norm;
      bc.activation = config.activation;
      bc.use_residual = config.use_residual;
      bc.use_channel_mlp = config.use_channel_mlp;
      bc.use_layer_scale = config.use_layer_scale;
      bc.layer_scale_init = config.layer_scale_init;
      bc.drop_path_rate = rates[global++];
      out.push_back(bc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                      const PatchEmbedSpec& spec) {
  if (x.rank() == 4) {
    const auto kh = weight.dim(2);
    for (int axis : {2, 3}) {
      if (conv_output_size(x.dim(axis), static_cast<int>(kh), spec.stride, spec.padding) < 1) {
        throw std::invalid_argument("patch_embed: input " + to_string(x.shape()) +
                                    " too small for kernel " + std::to_string(kh) +
                                    " with padding " + std::to_string(spec.padding));
      }
    }
  }
  Conv2dOptions opt;
  opt.stride = {spec.stride, spec.stride};
  opt.padding = {spec.padding, spec.padding};
  return conv2d(x, weight, bias, opt);
}

template <typename T>
Model<T> Model<T>::allocate(const ModelConfig& config) {
  config.validate();
  Model m(config);
  auto trainable = [](Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  };
  const auto blocks = block_configs(config);
  std::size_t global = 0;
  std::int64_t in_ch = config.in_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const std::int64_t C = config.dims[s];
    const int k = config.patch[s].kernel;
    m.embed_weight_[s] = trainable({C, in_ch, k, k});
    m.embed_bias_[s] = trainable({C});
    std::vector<Block<T>> stage;
    for (int b = 0; b < config.depths[s]; ++b) stage.emplace_back(blocks[global++], C);
    m.stages_.push_back(std::move(stage));
    in_ch = C;
  }
  m.final_norm_ = NormParams<T>::make(config.norm, config.dims[3]);
  m.head_weight_ = trainable({config.num_classes, config.dims[3]});
  m.head_bias_ = trainable({config.num_classes});
  return m;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& images, Mode mode, Rng& rng) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw std::invalid_argument("forward: expected images [B," +
                                std::to_string(config_.in_channels) + ",H,W], got " +
                                to_string(images.shape()));
  }
  const std::int64_t H = images.dim(2), W = images.dim(3);
  if (H < 32 || W < 32) {
    throw std::invalid_argument("forward: input must be at least 32x32, got " +
                                std::to_string(H) + "x" + std::to_string(W));
  }
  if (config_.resolution_bound() && (H != config_.input_size || W != config_.input_size)) {
    throw std::invalid_argument(
        "forward: model has resolution-bound token mixers built for " +
        std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) +
        " input, got " + std::to_string(H) + "x" + std::to_string(W));
  }
  auto x = images;
  for (int s = 0; s < kNumStages; ++s) {
    x = patch_embed(x, embed_weight_[s], embed_bias_[s], config_.patch[s]);
    for (auto& block : stages_[s]) x = block.forward(x, mode, rng);
  }
  x = apply_norm(x, final_norm_, mode);
  return linear(global_avg_pool(x), head_weight_, head_bias_);
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() const {
  std::vector<ParamRef<T>> out;
  for (int s = 0; s < kNumStages; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1) + ".";
    out.push_back({stage + "embed.weight", embed_weight_[s], ParamRole::trainable, InitRule::trunc_normal});
    out.push_back({stage + "embed.bias", embed_bias_[s], ParamRole::trainable, InitRule::zeros});
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(stage + "block" + std::to_string(b) + ".", out);
    }
  }
  collect_norm(final_norm_, "norm.", out);
  out.push_back({"head.weight", head_weight_, ParamRole::trainable, InitRule::trunc_normal});
  out.push_back({"head.bias", head_bias_, ParamRole::trainable, InitRule::zeros});
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable_parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& p : parameters()) {
    if (p.role == ParamRole::trainable) out.push_back(p.tensor);
  }
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) p.tensor.zero_grad();
  }
}

template <typename T>
void Model<T>::set_trainable(bool enabled) {
  for (auto& p : parameters()) {
    if (p.role == ParamRole::trainable) p.tensor.set_requires_grad(enabled);
  }
}

template <typename T>
Model<T> Model<T>::clone() const {
  return cast<T>();
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  auto out = Model<U>::allocate(config_);
  const auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto from = src[i].tensor.data();
    auto to = dst[i].tensor.mutable_data();
    std::transform(from.begin(), from.end(), to.begin(), [](T v) { return static_cast<U>(v); });
    if (src[i].role == ParamRole::trainable) {
      dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
    }
  }
  return out;
}

template <typename T>
Model<T> build(const ModelConfig& config, std::uint64_t seed) {
  auto model = Model<T>::allocate(config);
  Rng rng(seed);
  for (auto& p : model.parameters()) {
    auto values = p.tensor.mutable_data();
    switch (p.init) {
      case InitRule::trunc_normal:
        for (auto& v : values) v = static_cast<T>(rng.truncated_normal(0.02, 2.0));
        break;
      case InitRule::zeros:
        std::fill(values.begin(), values.end(), T(0));
        break;
      case InitRule::ones:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case InitRule::layer_scale:
        std::fill(values.begin(), values.end(), static_cast<T>(config.layer_scale_init));
        break;
      case InitRule::uniform_row_softmax: {
        const auto n = static_cast<std::size_t>(p.tensor.dim(1));
        std::vector<double> row(n);
        for (std::size_t r = 0; r < values.size() / n; ++r) {
          double mx = 0.0, total = 0.0;
          for (auto& u : row) mx = std::max(mx, u = rng.uniform());
          for (auto& u : row) total += (u = std::exp(u - mx));
          for (std::size_t c = 0; c < n; ++c) values[r * n + c] = static_cast<T>(row[c] / total);
        }
        break;
      }
    }
  }
  return model;
}

#define METAFORMER_INSTANTIATE_MODEL(T)                                                    \
  template class Model<T>;                                                                 \
  template Model<T> build(const ModelConfig&, std::uint64_t);                              \
  template Tensor<T> patch_embed(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                 const PatchEmbedSpec&);

METAFORMER_INSTANTIATE_MODEL(float)
METAFORMER_INSTANTIATE_MODEL(double)
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

}  // namespace metaformer
