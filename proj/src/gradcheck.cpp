#include "metaformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "metaformer/analysis.hpp"

namespace metaformer {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<TensorCheck> finite_difference_check(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& leaves, const FdOptions& options) {
  for (const auto& [name, t] : leaves) {
    if (!t.requires_grad()) {
      throw std::invalid_argument("finite_difference_check: leaf '" + name + "' does not require grad");
    }
  }
  for (const auto& [name, t] : leaves) {
    auto copy = t;
    copy.zero_grad();
  }
  backward(loss());

  Rng rng(options.seed);
  std::vector<TensorCheck> out;
  for (const auto& [name, leaf] : leaves) {
    auto t = leaf;
    const auto analytic = t.grad_or_zeros();
    const auto n = static_cast<std::size_t>(t.numel());
    std::vector<std::size_t> picks(n);
    std::iota(picks.begin(), picks.end(), 0);
    if (n > static_cast<std::size_t>(options.samples_per_tensor)) {
      for (int i = 0; i < options.samples_per_tensor; ++i) {
        std::swap(picks[i], picks[i + rng.below(n - i)]);
      }
      picks.resize(options.samples_per_tensor);
    }
    TensorCheck check{name, 0.0, 0.0, 0};
    auto values = t.mutable_data();
    for (std::size_t idx : picks) {
      const double saved = values[idx];
      values[idx] = saved + options.h;
      const double up = loss().item();
      values[idx] = saved - options.h;
      const double down = loss().item();
      values[idx] = saved;
      const double numeric = (up - down) / (2 * options.h);
      check.max_rel_error =
          std::max(check.max_rel_error, relative_error(analytic[idx], numeric, options.floor));
      check.max_abs_error = std::max(check.max_abs_error, std::abs(analytic[idx] - numeric));
      ++check.checked;
    }
    out.push_back(check);
  }
  return out;
}

namespace {

Tensor<double> weighted_sum(const Tensor<double>& x, const std::vector<double>& weights,
                            double backward_scale) {
  const auto v = x.data();
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) total += weights[i] * v[i];
  return record_op<double>("weighted_sum", {}, {total}, {x},
                           [=](std::span<const double> g, std::span<const double>) {
                             double* gx = x.grad_target();
                             if (!gx) return;
                             for (std::size_t i = 0; i < weights.size(); ++i) {
                               gx[i] += g[0] * weights[i] * backward_scale;
                             }
                           });
}

std::string group_of(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  if (name.compare(0, 5, "stage") != 0) return name.substr(0, first);
  const auto second = name.find('.', first + 1);
  return name.substr(0, second);
}

}  // namespace

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json groups_json = nlohmann::json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"group", g.group},
                           {"max_rel_error", g.max_rel_error},
                           {"tensors", g.tensors},
                           {"checked", g.checked},
                           {"passed", g.passed}});
  }
  return {{"passed", passed}, {"max_rel_error", max_rel_error}, {"groups", groups_json}};
}

GradcheckReport gradcheck_model(const ModelConfig& config, const GradcheckOptions& options) {
  const auto cost = analyze(config);
  const auto total = cost.trainable_params + cost.frozen_params;
  if (total > kGradcheckParamLimit) {
    throw std::invalid_argument("gradcheck: model has " + std::to_string(total) +
                                " parameters, above the " + std::to_string(kGradcheckParamLimit) +
                                " limit for f64 finite differences; shrink dims/depths or "
                                "input_size");
  }
  auto model = build<double>(config, options.seed);
  Rng data_rng(mix_seed(options.seed, 11));
  const int S = config.input_size;
  std::vector<double> pixels(static_cast<std::size_t>(options.batch) * config.in_channels * S * S);
  for (auto& p : pixels) p = data_rng.normal();
  auto input = Tensor<double>::from_vector({options.batch, config.in_channels, S, S}, std::move(pixels));
  input.set_requires_grad(true);
  std::vector<double> weights(static_cast<std::size_t>(options.batch) * config.num_classes);
  for (auto& w : weights) w = data_rng.normal();

  const std::uint64_t drop_seed = mix_seed(options.seed, 12);
  const double scale = options.inject_fault ? 1.01 : 1.0;
  auto loss = [&]() {
    Rng rng(drop_seed);
    return weighted_sum(model.forward(input, Mode::train, rng), weights, scale);
  };

  std::vector<std::pair<std::string, Tensor<double>>> leaves{{"input", input}};
  for (const auto& p : model.parameters()) {
    if (p.role == ParamRole::trainable) leaves.emplace_back(p.name, p.tensor);
  }
  FdOptions fd = options.fd;
  fd.seed = mix_seed(options.seed, 13);
  const auto checks = finite_difference_check(loss, leaves, fd);

  GradcheckReport report;
  std::map<std::string, std::size_t> index;
  for (const auto& c : checks) {
    const auto g = group_of(c.name);
    auto [it, fresh] = index.emplace(g, report.groups.size());
    if (fresh) report.groups.push_back({g});
    auto& group = report.groups[it->second];
    group.max_rel_error = std::max(group.max_rel_error, c.max_rel_error);
    group.tensors += 1;
    group.checked += c.checked;
  }
  report.passed = true;
  for (auto& g : report.groups) {
    g.passed = g.max_rel_error < options.tolerance;
    report.passed = report.passed && g.passed;
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
  }
  return report;
}

}  // namespace metaformer
