#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaformer/model.hpp"

namespace metaformer {

struct StageCost {
  std::string name;  // "stage1".."stage4" or "head"
  std::int64_t grid = 0;  // token grid side, 0 for the head entry
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;
  std::int64_t macs = 0;
  /// Part of `macs` that is quadratic in the token count (QKᵀ, AV, N×N token matmuls).
  std::int64_t token_mixing_macs = 0;
};

struct CostReport {
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;
  std::int64_t macs = 0;
  int input_size = 0;
  std::vector<StageCost> per_stage;
};

struct ParamCounts {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
};

/// Closed-form parameter and MAC accounting at batch size 1.
///
/// MAC rules: conv Cout·(Cin/g)·Kh·Kw·Hout·Wout, linear in·out per row,
/// N×N token matmuls N²·C, attention 4C²·N + 2N²·C. Normalization follows
/// the fvcore handlers: GroupNorm-style MLN 5 per element, eval BatchNorm 2
/// per element, channel LN (composite elementwise ops) and none 0. Pooling,
/// activations, residual adds, LayerScale, softmax and biases cost 0.
CostReport analyze(const ModelConfig& config, int input_size);
inline CostReport analyze(const ModelConfig& config) { return analyze(config, config.input_size); }

std::int64_t count_macs(const ModelConfig& config, int input_size);

/// Counts the tensors a built model actually holds. BatchNorm running
/// statistics are buffers and count toward neither total.
template <typename T>
ParamCounts count_params(const Model<T>& model);

nlohmann::json report_to_json(const CostReport& report);
/// Human table; counts rounded to 0.1M / 0.1G.
std::string format_report(const CostReport& report);
/// 11915176 → "11.9M", 1822000000 → "1.8G".
std::string format_millions(std::int64_t n);
std::string format_giga(std::int64_t n);

}  // namespace metaformer
