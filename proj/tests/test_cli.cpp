#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "metaformer/checkpoint.hpp"

using namespace metaformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("metaformer_cli_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

struct Cleanup {
  ~Cleanup() { fs::remove_all(scratch()); }
} cleanup;

std::string file(const std::string& name) { return (scratch() / name).string(); }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  const std::string err = file("stderr.txt");
  const std::string cmd = std::string("'") + METAFORMER_CLI + "' " + args + " 2>'" + err + "'";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.err = read_text(err);
  return r;
}

std::string config_path(const std::string& name) {
  return std::string(METAFORMER_SOURCE_DIR) + "/configs/" + name;
}

void write_json(const std::string& path, const json& j) { std::ofstream(path) << j.dump(2); }

std::string write_image(const std::string& name, int size, float fill_seed) {
  std::vector<float> v(3 * size * size);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fmod(fill_seed + 0.37f * i, 1.0f);
  write_input(file(name), Tensor<float>::from_vector({1, 3, size, size}, v));
  return file(name);
}

}  // namespace

TEST_CASE("describe") {
  auto s12 = cli("describe --variant S12");
  CHECK(s12.status == 0);
  CHECK(s12.out.find("11.9M") != std::string::npos);
  CHECK(s12.out.find("1.8G") != std::string::npos);
  CHECK(s12.out.find("56") != std::string::npos);  // stage-1 grid

  // 56,172,520 parameters print as 56.2M (the reference figure is 56.1M)
  auto m36 = cli("describe --variant M36");
  CHECK(m36.out.find("8.8G") != std::string::npos);
  CHECK(m36.out.find("56.2M") != std::string::npos);

  auto j = json::parse(cli("describe --variant S12 --format json").out);
  CHECK(j.at("trainable_params") == 11'915'176);
  CHECK(j.at("macs") == 1'822'678'528);
  CHECK(j.at("per_stage").size() == 5);

  auto rm = json::parse(cli("describe --ablation random_matrix --format json").out);
  CHECK(rm.at("frozen_params") == 21'133'602);

  auto toy = json::parse(cli("describe --config '" + config_path("toy.json") + "' --format json").out);
  CHECK(toy.at("input_size") == 32);
  auto big = json::parse(cli("describe --variant S12 --input-size 448 --format json").out);
  CHECK(big.at("input_size") == 448);

  CHECK(cli("describe --variant S12 --format json").out == cli("describe --variant S12 --format json").out);
}

TEST_CASE("exit codes") {
  CHECK(cli("").status == 1);
  CHECK(cli("describe --variant S18").status == 1);
  CHECK(cli("describe --variant S12 --frobnicate").status == 1);
  CHECK(cli("describe").status == 1);
  CHECK(cli("describe --variant S12 --ablation bn").status == 1);
  CHECK(cli("describe --ablation random_matrix --input-size 256").status == 1);
  CHECK(cli("describe --config /nonexistent.json").status == 2);

  write_json(file("unknown_field.json"), {{"custom", {{"dims", {8, 8, 8, 8}}, {"colour", "red"}}}});
  auto bad = cli("describe --config '" + file("unknown_field.json") + "'");
  CHECK(bad.status == 1);
  CHECK(bad.err.find("custom.colour") != std::string::npos);

  write_json(file("s12.json"), {{"variant", "S12"}});
  auto big = cli("gradcheck --config '" + file("s12.json") + "'");
  CHECK(big.status == 1);
  CHECK(big.err.find("200000") != std::string::npos);

  std::ofstream(file("junk.mfck")) << "not a checkpoint";
  CHECK(cli("infer --ckpt '" + file("junk.mfck") + "' --input '" + file("junk.mfck") + "'").status == 2);
}

TEST_CASE("gradcheck") {
  const std::string cfg = "--config '" + config_path("gradcheck_tiny.json") + "'";
  auto ok = cli("gradcheck " + cfg + " --format json");
  CHECK(ok.status == 0);
  auto j = json::parse(ok.out);
  CHECK(j.at("passed") == true);
  CHECK(j.at("max_rel_error").get<double>() < 1e-4);
  CHECK(j.at("groups").size() >= 6);
  CHECK(cli("gradcheck " + cfg + " --format json").out == ok.out);

  auto fault = cli("gradcheck " + cfg + " --inject-fault");
  CHECK(fault.status == 1);
  CHECK(fault.out.find("FAIL") != std::string::npos);
}

TEST_CASE("train-toy") {
  const std::string cfg = "--config '" + config_path("toy.json") + "'";
  auto zero = cli("train-toy " + cfg + " --steps 0 --seed 3 --out '" + file("zero.mfck") + "'");
  CHECK(zero.status == 0);
  const auto fresh = encode_container(model_container(build<float>(load_config_file(config_path("toy.json")), 3)));
  CHECK(read_text(file("zero.mfck")) == std::string(fresh.begin(), fresh.end()));

  const std::string flags = cfg + " --steps 3 --batch-size 4 --lr 1e-3 --seed 1";
  auto a = cli("train-toy " + flags + " --out '" + file("a.mfck") + "' --metrics '" + file("a.ndjson") + "'");
  auto b = cli("train-toy " + flags + " --out '" + file("b.mfck") + "'");
  CHECK(a.status == 0);
  CHECK(b.status == 0);
  CHECK(read_text(file("a.mfck")) == read_text(file("b.mfck")));
  CHECK(read_text(file("a.ndjson")) == b.out);

  std::istringstream lines(b.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    auto r = json::parse(line);
    CHECK(r.at("step") == count++);
    for (const char* key : {"lr", "loss", "train_acc"}) CHECK(r.contains(key));
  }
  CHECK(count == 3);
  CHECK(a.err.find("final loss") != std::string::npos);

  CHECK(cli("train-toy " + cfg + " --steps 5 --warmup-steps 5 --out '" + file("w.mfck") + "'").status == 1);
  CHECK(cli("train-toy " + cfg + " --steps 2 --out /nonexistent/dir/x.mfck").status == 2);
}

TEST_CASE("infer") {
  const std::string ckpt = file("infer.mfck");
  REQUIRE(cli("train-toy --config '" + config_path("toy.json") + "' --steps 0 --out '" + ckpt + "'").status == 0);
  const auto img = write_image("img.mfck", 32, 0.1f);

  auto r = cli("infer --ckpt '" + ckpt + "' --input '" + img + "' --topk 4");
  CHECK(r.status == 0);
  auto j = json::parse(r.out);
  REQUIRE(j.at("topk").size() == 4);
  double total = 0, prev = 1;
  for (const auto& e : j.at("topk")) {
    const double p = e.at("probability");
    total += p;
    CHECK(std::abs(p - 0.25) < 0.15);
    CHECK(p <= prev);
    prev = p;
  }
  CHECK(std::abs(total - 1) < 1e-6);
  CHECK(cli("infer --ckpt '" + ckpt + "' --input '" + img + "' --topk 4").out == r.out);
  CHECK(json::parse(cli("infer --ckpt '" + ckpt + "' --input '" + img + "' --topk 10").out).at("topk").size() == 4);
  CHECK(json::parse(cli("infer --ckpt '" + ckpt + "' --input '" + img + "'").out).at("topk").size() == 4);
  CHECK(cli("infer --ckpt '" + ckpt + "' --input '" + img + "' --topk 0").status == 1);

  // resolution-bound mixers refuse other sizes
  auto cfg = json::parse(read_text(config_path("toy.json")));
  cfg["custom"]["mixers"][3] = {{"kind", "spatial_fc"}};
  write_json(file("fc.json"), cfg);
  REQUIRE(cli("train-toy --config '" + file("fc.json") + "' --steps 0 --out '" + file("fc.mfck") + "'").status == 0);
  CHECK(cli("infer --ckpt '" + file("fc.mfck") + "' --input '" + img + "'").status == 0);
  const auto wide = write_image("wide.mfck", 64, 0.2f);
  auto mismatch = cli("infer --ckpt '" + file("fc.mfck") + "' --input '" + wide + "'");
  CHECK(mismatch.status == 1);
  CHECK(mismatch.err.find("32") != std::string::npos);
}
