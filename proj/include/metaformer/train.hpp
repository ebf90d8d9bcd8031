#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "metaformer/model.hpp"

namespace metaformer {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <typename T>
struct OptimState {
  AdamWOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

/// One decoupled-weight-decay Adam update:
///   θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)
/// `grads[i]` must match `params[i]` in size; an empty gradient counts as zero.
template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params,
                const std::vector<std::vector<T>>& grads, OptimState<T>& state, double lr);

/// Same as above using each tensor's accumulated gradient.
template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params, OptimState<T>& state, double lr);

/// Linear warmup from 0 to lr_peak, then half-cosine decay to 0 at total_steps.
double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps,
                 double lr_peak);

/// Mean over the batch of −Σ_c q_c · log softmax(logits)_c with
/// q = (1 − smoothing)·onehot + smoothing / classes.
template <typename T>
Tensor<T> label_smoothing_ce(const Tensor<T>& logits, std::span<const int> targets,
                             double smoothing);

inline constexpr int kSynthClasses = 4;

/// Seeded toy images: 0 filled disk, 1 filled square, 2 horizontal stripes,
/// 3 vertical stripes. Label = index % 4; pixels in [0, 1].
struct SynthBatch {
  Tensor<float> images;  // [B, 3, S, S]
  std::vector<int> labels;
};

void synth_sample(std::uint64_t seed, std::uint64_t index, int size, std::span<float> out,
                  int& label);
SynthBatch synth_batch(std::uint64_t seed, std::uint64_t first_index, int batch, int size);

struct TrainOptions {
  int steps = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Peak learning rate; defaults to batch_size / 1024 × 1e-3.
  std::optional<double> lr;
  /// Defaults to steps × 5 / 300 (5 of 300 epochs).
  std::optional<int> warmup_steps;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;

  double peak_lr() const { return lr.value_or(batch_size / 1024.0 * 1e-3); }
  int warmup() const { return warmup_steps.value_or(steps * 5 / 300); }
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  Model<float> model;
  std::vector<StepRecord> log;

  double initial_loss() const;
  /// Mean loss and accuracy over the last min(10, steps) steps.
  double final_loss() const;
  double final_accuracy() const;
};

/// Builds `config` from options.seed and trains it on the synthetic set.
/// Step s consumes samples s·B … s·B + B − 1.
TrainResult train_loop(const ModelConfig& config, const TrainOptions& options,
                       const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace metaformer
