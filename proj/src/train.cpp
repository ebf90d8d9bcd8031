#include "metaformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace metaformer {

template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params,
                const std::vector<std::vector<T>>& grads, OptimState<T>& state, double lr) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) +
                                " parameters but " + std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adamw_step: optimizer state tracks " +
                                std::to_string(state.m.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params[i].numel());
    if (!grads[i].empty() && grads[i].size() != n) {
      throw std::invalid_argument("adamw_step: gradient " + std::to_string(i) + " has " +
                                  std::to_string(grads[i].size()) + " values, parameter " +
                                  to_string(params[i].shape()) + " needs " + std::to_string(n));
    }
    if (state.m[i].size() != n) {
      throw std::invalid_argument("adamw_step: state shape mismatch at parameter " +
                                  std::to_string(i));
    }
  }

  const auto& o = state.options;
  state.t += 1;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].impl()->data.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][j]);
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      double value = static_cast<double>(theta[j]);
      value -= lr * o.weight_decay * value;
      value -= lr * m_hat / (std::sqrt(v_hat) + o.eps);
      theta[j] = static_cast<T>(value);
    }
  }
}

template <typename T>
void adamw_step(const std::vector<Tensor<T>>& params, OptimState<T>& state, double lr) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    const auto g = p.grad();
    grads.emplace_back(g.begin(), g.end());
  }
  adamw_step(params, grads, state, lr);
}

double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps,
                 double lr_peak) {
  if (total_steps < 1 || warmup_steps < 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument("cosine_lr: need 0 <= warmup (" + std::to_string(warmup_steps) +
                                ") < total (" + std::to_string(total_steps) + ")");
  }
  if (step < 0 || step > total_steps) {
    throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) {
    return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
Tensor<T> label_smoothing_ce(const Tensor<T>& logits, std::span<const int> targets,
                             double smoothing) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("label_smoothing_ce: logits must be [B, classes], got " +
                                to_string(logits.shape()));
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw std::invalid_argument("label_smoothing_ce: smoothing must be in [0, 1)");
  }
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != B) {
    throw std::invalid_argument("label_smoothing_ce: " + std::to_string(targets.size()) +
                                " targets for batch " + std::to_string(B));
  }
  for (int t : targets) {
    if (t < 0 || t >= K) {
      throw std::invalid_argument("label_smoothing_ce: target " + std::to_string(t) +
                                  " out of range [0, " + std::to_string(K) + ")");
    }
  }
  const auto x = logits.data();
  const double off = smoothing / static_cast<double>(K);
  const double on = 1.0 - smoothing + off;
  // softmax probabilities are kept for the backward pass
  auto probs = std::make_shared<std::vector<double>>(x.size());
  double total = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* row = x.data() + b * K;
    double mx = row[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    const double log_z = std::log(z) + mx;
    for (std::int64_t k = 0; k < K; ++k) {
      const double logp = static_cast<double>(row[k]) - log_z;
      (*probs)[b * K + k] = std::exp(logp);
      total -= (k == targets[b] ? on : off) * logp;
    }
  }
  std::vector<int> labels(targets.begin(), targets.end());
  return record_op<T>("label_smoothing_ce", {}, {static_cast<T>(total / B)}, {logits},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = logits.grad_target();
                        if (!gx) return;
                        const double scale = static_cast<double>(g[0]) / B;
                        for (std::int64_t b = 0; b < B; ++b) {
                          for (std::int64_t k = 0; k < K; ++k) {
                            const double q = k == labels[b] ? on : off;
                            gx[b * K + k] += static_cast<T>(scale * ((*probs)[b * K + k] - q));
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// synthetic data

void synth_sample(std::uint64_t seed, std::uint64_t index, int size, std::span<float> out,
                  int& label) {
  const auto S = static_cast<std::size_t>(size);
  if (size < 4 || out.size() != 3 * S * S) {
    throw std::invalid_argument("synth_sample: need size >= 4 and a [3,S,S] buffer");
  }
  Rng rng(mix_seed(seed, index));
  label = static_cast<int>(index % kSynthClasses);
  const double s = size;
  const double cx = s / 2 + rng.uniform(-0.1, 0.1) * s;
  const double cy = s / 2 + rng.uniform(-0.1, 0.1) * s;
  const double extent = rng.uniform(0.26, 0.38) * s;
  const double period = rng.uniform(0.12, 0.25) * s;
  const double phase = rng.uniform(0.0, period);
  float fg[3], bg[3];
  for (int c = 0; c < 3; ++c) {
    fg[c] = static_cast<float>(rng.uniform(0.6, 1.0));
    bg[c] = static_cast<float>(rng.uniform(0.0, 0.35));
  }
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool on = false;
      switch (label) {
        case 0: on = std::hypot(px - cx, py - cy) <= extent; break;
        case 1: on = std::abs(px - cx) <= extent && std::abs(py - cy) <= extent; break;
        case 2: on = std::fmod(py + phase, period) < period / 2; break;
        case 3: on = std::fmod(px + phase, period) < period / 2; break;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.08, 0.08);
        const double v = (on ? fg[c] : bg[c]) + noise;
        out[(c * S + y) * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

SynthBatch synth_batch(std::uint64_t seed, std::uint64_t first_index, int batch, int size) {
  if (batch < 1) throw std::invalid_argument("synth_batch: batch must be positive");
  const std::size_t per = 3 * static_cast<std::size_t>(size) * size;
  std::vector<float> pixels(per * batch);
  SynthBatch out;
  out.labels.resize(batch);
  for (int b = 0; b < batch; ++b) {
    synth_sample(seed, first_index + b, size, std::span<float>(pixels).subspan(b * per, per),
                 out.labels[b]);
  }
  out.images = Tensor<float>::from_vector({batch, 3, size, size}, std::move(pixels));
  return out;
}

// ---------------------------------------------------------------------------
// training loop

nlohmann::json StepRecord::to_json() const {
  return {{"step", step}, {"lr", lr}, {"loss", loss}, {"train_acc", train_acc}};
}

double TrainResult::initial_loss() const { return log.empty() ? 0.0 : log.front().loss; }

double TrainResult::final_loss() const {
  const std::size_t n = std::min<std::size_t>(10, log.size());
  double total = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) total += log[i].loss;
  return n ? total / n : 0.0;
}

double TrainResult::final_accuracy() const {
  const std::size_t n = std::min<std::size_t>(10, log.size());
  double total = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) total += log[i].train_acc;
  return n ? total / n : 0.0;
}

TrainResult train_loop(const ModelConfig& config, const TrainOptions& options,
                       const std::function<void(const StepRecord&)>& on_step) {
  if (options.steps < 0) throw std::invalid_argument("train_loop: steps must be >= 0");
  if (options.batch_size < 1) throw std::invalid_argument("train_loop: batch size must be >= 1");
  if (config.in_channels != 3) {
    throw std::invalid_argument("train_loop: synthetic images have 3 channels, config has " +
                                std::to_string(config.in_channels));
  }
  if (config.num_classes < kSynthClasses) {
    throw std::invalid_argument("train_loop: synthetic data has 4 classes, config has " +
                                std::to_string(config.num_classes));
  }
  TrainResult result{build<float>(config, options.seed), {}};
  if (options.steps == 0) return result;

  auto& model = result.model;
  const auto params = model.trainable_parameters();
  OptimState<float> state;
  state.options.weight_decay = options.weight_decay;
  const std::uint64_t data_seed = mix_seed(options.seed, 1);
  Rng drop_rng(mix_seed(options.seed, 2));
  const int B = options.batch_size;

  for (int step = 0; step < options.steps; ++step) {
    const double lr = cosine_lr(step, options.warmup(), options.steps, options.peak_lr());
    auto batch = synth_batch(data_seed, static_cast<std::uint64_t>(step) * B, B,
                             config.input_size);
    model.zero_grad();
    auto logits = model.forward(batch.images, Mode::train, drop_rng);
    auto loss = label_smoothing_ce(logits, std::span<const int>(batch.labels),
                                   options.label_smoothing);
    backward(loss);
    adamw_step(params, state, lr);

    int correct = 0;
    const auto z = logits.data();
    const auto K = logits.dim(1);
    for (int b = 0; b < B; ++b) {
      const auto row = z.subspan(b * K, K);
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      correct += pred == batch.labels[b];
    }
    StepRecord rec{step, lr, static_cast<double>(loss.item()), static_cast<double>(correct) / B};
    result.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

template void adamw_step(const std::vector<Tensor<float>>&, const std::vector<std::vector<float>>&,
                         OptimState<float>&, double);
template void adamw_step(const std::vector<Tensor<double>>&,
                         const std::vector<std::vector<double>>&, OptimState<double>&, double);
template void adamw_step(const std::vector<Tensor<float>>&, OptimState<float>&, double);
template void adamw_step(const std::vector<Tensor<double>>&, OptimState<double>&, double);
template Tensor<float> label_smoothing_ce(const Tensor<float>&, std::span<const int>, double);
template Tensor<double> label_smoothing_ce(const Tensor<double>&, std::span<const int>, double);

}  // namespace metaformer
