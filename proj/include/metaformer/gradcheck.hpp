#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metaformer/model.hpp"

namespace metaformer {

inline constexpr std::int64_t kGradcheckParamLimit = 200'000;

struct FdOptions {
  double h = 1e-5;
  /// Entries sampled per tensor; tensors at most this large are checked fully.
  int samples_per_tensor = 8;
  /// Denominator floor for the relative error |a − n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int checked = 0;
};

double relative_error(double analytic, double numeric, double floor);

/// Central-difference check of d loss / d leaf for every named leaf.
/// `loss` must rebuild its graph from the leaves' current values on each call.
std::vector<TensorCheck> finite_difference_check(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& leaves, const FdOptions& options);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int batch = 2;
  FdOptions fd;
  /// Negative control: scales the loss backward by 1.01.
  bool inject_fault = false;
};

struct GroupResult {
  std::string group;  // e.g. "stage2.block0", "stage1.embed", "head", "input"
  double max_rel_error = 0.0;
  int tensors = 0;
  int checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GroupResult> groups;
  double max_rel_error = 0.0;
  bool passed = false;

  nlohmann::json to_json() const;
};

/// f64 model gradient check: loss = Σ R ⊙ logits with a fixed random R, train
/// mode with identical drop-path draws per evaluation. Throws
/// std::invalid_argument when the model exceeds kGradcheckParamLimit.
GradcheckReport gradcheck_model(const ModelConfig& config, const GradcheckOptions& options);

}  // namespace metaformer
