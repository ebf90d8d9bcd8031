#include "metaformer/analysis.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace metaformer {

namespace {

std::int64_t norm_params(NormKind kind, std::int64_t C) {
  return kind == NormKind::none ? 0 : 2 * C;
}

std::int64_t norm_macs(NormKind kind, std::int64_t numel) {
  switch (kind) {
    case NormKind::mln: return 5 * numel;
    case NormKind::bn: return 2 * numel;
    case NormKind::ln:
    case NormKind::none: return 0;
  }
  return 0;
}

struct MixerCost {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  std::int64_t macs = 0;
  std::int64_t token_macs = 0;
};

MixerCost mixer_cost(const MixerConfig& m, std::int64_t C, std::int64_t N) {
  MixerCost c;
  switch (m.kind) {
    case MixerKind::pooling:
    case MixerKind::identity:
      break;
    case MixerKind::random_matrix:
      c.frozen = N * N;
      c.macs = c.token_macs = N * N * C;
      break;
    case MixerKind::depthwise_conv:
      c.trainable = C * m.kernel * m.kernel + C;
      c.macs = C * m.kernel * m.kernel * N;
      break;
    case MixerKind::attention:
      c.trainable = 4 * C * C + 4 * C;
      c.token_macs = 2 * N * N * C;
      c.macs = 4 * C * C * N + c.token_macs;
      break;
    case MixerKind::spatial_fc:
      c.trainable = N * N + N;
      c.macs = c.token_macs = N * N * C;
      break;
  }
  return c;
}

}  // namespace

CostReport analyze(const ModelConfig& config, int input_size) {
  config.validate();
  if (input_size < 32) throw std::invalid_argument("analyze: input size must be at least 32");
  if (config.resolution_bound() && input_size != config.input_size) {
    throw std::invalid_argument("analyze: model has resolution-bound token mixers built for " +
                                std::to_string(config.input_size) + ", got " +
                                std::to_string(input_size));
  }
  const auto grids = stage_grids(config, input_size);
  for (int s = 0; s < kNumStages; ++s) {
    if (grids[s] < 1) {
      throw std::invalid_argument("analyze: input size " + std::to_string(input_size) +
                                  " leaves no tokens at stage " + std::to_string(s + 1));
    }
  }

  CostReport r;
  r.input_size = input_size;
  std::int64_t in_ch = config.in_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const std::int64_t C = config.dims[s];
    const std::int64_t N = grids[s] * grids[s];
    const std::int64_t k = config.patch[s].kernel;
    StageCost st;
    st.name = "stage" + std::to_string(s + 1);
    st.grid = grids[s];
    st.trainable_params = C * in_ch * k * k + C;
    st.macs = C * in_ch * k * k * N;

    const auto mixer = mixer_cost(config.mixers[s], C, N);
    std::int64_t block_params = norm_params(config.norm, C) + mixer.trainable;
    std::int64_t block_macs = norm_macs(config.norm, C * N) + mixer.macs;
    if (config.use_layer_scale) block_params += C;
    if (config.use_channel_mlp) {
      block_params += norm_params(config.norm, C) + 8 * C * C + 5 * C;
      block_macs += norm_macs(config.norm, C * N) + 8 * C * C * N;
      if (config.use_layer_scale) block_params += C;
    }
    const std::int64_t depth = config.depths[s];
    st.trainable_params += depth * block_params;
    st.frozen_params = depth * mixer.frozen;
    st.macs += depth * block_macs;
    st.token_mixing_macs = depth * mixer.token_macs;
    r.per_stage.push_back(st);
    in_ch = C;
  }

  const std::int64_t C4 = config.dims[3];
  StageCost head;
  head.name = "head";
  head.trainable_params = norm_params(config.norm, C4) + C4 * config.num_classes + config.num_classes;
  head.macs = norm_macs(config.norm, C4 * grids[3] * grids[3]) + C4 * config.num_classes;
  r.per_stage.push_back(head);

  for (const auto& st : r.per_stage) {
    r.trainable_params += st.trainable_params;
    r.frozen_params += st.frozen_params;
    r.macs += st.macs;
  }
  return r;
}

std::int64_t count_macs(const ModelConfig& config, int input_size) {
  return analyze(config, input_size).macs;
}

template <typename T>
ParamCounts count_params(const Model<T>& model) {
  ParamCounts c;
  for (const auto& p : model.parameters()) {
    if (p.role == ParamRole::trainable) c.trainable += p.tensor.numel();
    if (p.role == ParamRole::frozen) c.frozen += p.tensor.numel();
  }
  return c;
}

template ParamCounts count_params(const Model<float>&);
template ParamCounts count_params(const Model<double>&);

nlohmann::json report_to_json(const CostReport& r) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : r.per_stage) {
    stages.push_back({{"stage", st.name},
                      {"grid", st.grid},
                      {"trainable_params", st.trainable_params},
                      {"frozen_params", st.frozen_params},
                      {"macs", st.macs},
                      {"token_mixing_macs", st.token_mixing_macs}});
  }
  return {{"trainable_params", r.trainable_params},
          {"frozen_params", r.frozen_params},
          {"macs", r.macs},
          {"input_size", r.input_size},
          {"per_stage", stages}};
}

namespace {

std::string fixed1(double v, char unit) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%c", v, unit);
  return buf;
}

}  // namespace

std::string format_millions(std::int64_t n) { return fixed1(static_cast<double>(n) / 1e6, 'M'); }
std::string format_giga(std::int64_t n) { return fixed1(static_cast<double>(n) / 1e9, 'G'); }

std::string format_report(const CostReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %9s %12s %12s %10s\n", "stage", "tokens", "params",
                "frozen", "MACs");
  out << line;
  for (const auto& st : r.per_stage) {
    const std::string grid =
        st.grid > 0 ? std::to_string(st.grid) + "x" + std::to_string(st.grid) : "-";
    std::snprintf(line, sizeof line, "%-8s %9s %12s %12s %10s\n", st.name.c_str(), grid.c_str(),
                  format_millions(st.trainable_params).c_str(),
                  format_millions(st.frozen_params).c_str(), format_giga(st.macs).c_str());
    out << line;
  }
  std::snprintf(line, sizeof line, "%-8s %9s %12s %12s %10s\n", "total",
                (std::to_string(r.input_size) + "^2").c_str(),
                format_millions(r.trainable_params).c_str(),
                format_millions(r.frozen_params).c_str(), format_giga(r.macs).c_str());
  out << line;
  return out.str();
}

}  // namespace metaformer
