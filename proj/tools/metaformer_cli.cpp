// metaformer: describe / gradcheck / train-toy / infer.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or input,
// failed gradient check), 2 runtime error (I/O, corrupt files).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "metaformer/analysis.hpp"
#include "metaformer/checkpoint.hpp"
#include "metaformer/gradcheck.hpp"
#include "metaformer/model.hpp"
#include "metaformer/train.hpp"

using namespace metaformer;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct DescribeArgs {
  std::string config;
  std::string variant;
  std::string ablation;
  std::optional<int> input_size;
  std::string format = "table";
};

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::string format = "table";
  bool inject_fault = false;
};

struct TrainArgs {
  std::string config;
  int steps = 0;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<double> lr;
  std::optional<int> warmup_steps;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  std::string out;
  std::string metrics;
};

struct InferArgs {
  std::string ckpt;
  std::string input;
  int topk = 5;
};

int run_describe(const DescribeArgs& a) {
  ModelConfig config;
  const int sources = !a.config.empty() + !a.variant.empty() + !a.ablation.empty();
  if (sources != 1) {
    throw std::invalid_argument("describe: give exactly one of --config, --variant, --ablation");
  }
  if (!a.config.empty()) config = load_config_file(a.config);
  if (!a.variant.empty()) config = named_variant(a.variant);
  if (!a.ablation.empty()) config = ablation_config(a.ablation);
  const int size = a.input_size.value_or(config.input_size);
  const auto report = analyze(config, size);
  if (a.format == "json") {
    std::cout << report_to_json(report).dump(2) << "\n";
  } else {
    std::cout << format_report(report);
  }
  return kOk;
}

int run_gradcheck(const GradcheckArgs& a) {
  const auto config = load_config_file(a.config);
  GradcheckOptions opt;
  opt.seed = a.seed;
  opt.tolerance = a.tolerance;
  opt.inject_fault = a.inject_fault;
  const auto report = gradcheck_model(config, opt);
  if (a.format == "json") {
    std::cout << report.to_json().dump(2) << "\n";
  } else {
    for (const auto& g : report.groups) {
      std::printf("%-4s %-16s max_rel_err=%.3e checked=%d\n", g.passed ? "PASS" : "FAIL",
                  g.group.c_str(), g.max_rel_error, g.checked);
    }
    std::printf("%s max_rel_err=%.3e tolerance=%.1e\n", report.passed ? "PASS" : "FAIL",
                report.max_rel_error, a.tolerance);
  }
  return report.passed ? kOk : kValidation;
}

int run_train(const TrainArgs& a) {
  const auto config = load_config_file(a.config);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch_size = a.batch_size;
  opt.seed = a.seed;
  opt.lr = a.lr;
  opt.warmup_steps = a.warmup_steps;
  opt.weight_decay = a.weight_decay;
  opt.label_smoothing = a.label_smoothing;
  if (opt.steps > 0 && opt.warmup() >= opt.steps) {
    throw std::invalid_argument("--warmup-steps must be smaller than --steps");
  }

  std::ofstream file;
  std::ostream* metrics = &std::cout;
  if (!a.metrics.empty()) {
    file.open(a.metrics, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open metrics file '" + a.metrics + "'");
    metrics = &file;
  }
  const auto result = train_loop(config, opt, [&](const StepRecord& r) {
    *metrics << r.to_json().dump() << "\n";
  });
  save(result.model, a.out);
  if (opt.steps > 0) {
    std::fprintf(stderr, "initial loss %.4f, final loss %.4f, train acc %.3f -> %s\n",
                 result.initial_loss(), result.final_loss(), result.final_accuracy(),
                 a.out.c_str());
  }
  return kOk;
}

int run_infer(const InferArgs& a) {
  if (a.topk < 1) throw std::invalid_argument("--topk must be >= 1");
  auto model = load(a.ckpt);
  model.set_trainable(false);
  const auto input = read_input(a.input);
  const auto output = model.forward(input);
  const auto logits = output.data();
  const std::size_t K = logits.size();
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(K);
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) total += probs[k] = std::exp(logits[k] - mx);
  for (auto& p : probs) p /= total;
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return probs[i] > probs[j]; });
  json top = json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(K, a.topk); ++i) {
    top.push_back({{"class", order[i]}, {"probability", probs[order[i]]}});
  }
  std::cout << json{{"topk", top}}.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MetaFormer / PoolFormer toolkit"};
  app.require_subcommand(1);

  DescribeArgs describe;
  auto* d = app.add_subcommand("describe", "Parameter and MAC report for a model config");
  d->add_option("--config", describe.config, "JSON model config");
  d->add_option("--variant", describe.variant, "Named variant")
      ->check(CLI::IsMember(variant_names()));
  d->add_option("--ablation", describe.ablation, "S12-based ablation preset")
      ->check(CLI::IsMember(ablation_names()));
  d->add_option("--input-size", describe.input_size, "Square input side (default: config's)");
  d->add_option("--format", describe.format, "table or json")
      ->check(CLI::IsMember({"table", "json"}));

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "f64 finite-difference check of a small model");
  g->add_option("--config", grad.config, "JSON model config")->required();
  g->add_option("--seed", grad.seed, "Seed")->capture_default_str();
  g->add_option("--tolerance", grad.tolerance, "Max relative error")->capture_default_str();
  g->add_option("--format", grad.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  g->add_flag("--inject-fault", grad.inject_fault)->group("");

  TrainArgs train;
  auto* t = app.add_subcommand("train-toy", "Train on the synthetic shapes dataset");
  t->add_option("--config", train.config, "JSON model config")->required();
  t->add_option("--steps", train.steps, "Optimizer steps")->required()->check(CLI::NonNegativeNumber);
  t->add_option("--batch-size", train.batch_size, "Batch size")->capture_default_str()
      ->check(CLI::PositiveNumber);
  t->add_option("--seed", train.seed, "Seed")->capture_default_str();
  t->add_option("--lr", train.lr, "Peak learning rate (default batch/1024 * 1e-3)");
  t->add_option("--warmup-steps", train.warmup_steps, "Warmup steps (default steps*5/300)");
  t->add_option("--weight-decay", train.weight_decay, "AdamW weight decay")->capture_default_str();
  t->add_option("--label-smoothing", train.label_smoothing, "Label smoothing")
      ->capture_default_str()->check(CLI::Range(0.0, 0.999));
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--metrics", train.metrics, "NDJSON metrics path (default stdout)");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Top-k class probabilities for one input container");
  i->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
  i->add_option("--input", infer.input, "Input container holding [1,3,H,W] \"input\"")->required();
  i->add_option("--topk", infer.topk, "Classes to print")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (d->parsed()) return run_describe(describe);
    if (g->parsed()) return run_gradcheck(grad);
    if (t->parsed()) return run_train(train);
    if (i->parsed()) return run_infer(infer);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}
