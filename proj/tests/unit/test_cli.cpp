#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int run(std::vector<std::string> args) { return turbo::cli::run(std::move(args)); }

/// One workspace per test binary: a tiny dataset and backbone shared by the cases.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "turbo_cli_test";
  fs::path data = root / "data";
  fs::path home = root / "home";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(home);
    setenv("TURBO_I2I_HOME", home.c_str(), 1);
    REQUIRE(run({"gen-data", "--out", data.string(), "--n", "12", "--size", "16"}) == 0);
    REQUIRE(run({"pretrain", "--data", data.string(), "--holdout", "4", "--ae-steps", "2", "--core-steps", "2",
                 "--batch-size", "2"}) == 0);
  }
  ~Workspace() { fs::remove_all(root); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

std::vector<std::string> train_flags(const Workspace& w) {
  return {"--model", "backbone", "--data", w.data.string(), "--holdout", "4", "--steps", "1", "--batch-size", "2",
          "--eval-images", "4"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("usage errors exit with 2, validation errors with 1, help with 0") {
  CHECK(run({}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"bench", "--bogus"}) == 2);
  CHECK(run({"translate"}) == 2);  // missing --in / --domain
  CHECK(run({"--help"}) == 0);
  CHECK(run({"--version"}) == 0);
  CHECK(run({"bench", "--reps", "2"}) == 1);
  CHECK(run({"bench", "--size", "60", "--reps", "3"}) == 1);
  CHECK(run({"translate", "--model", "/nonexistent", "--in", "x.png", "--domain", "day"}) == 1);
  CHECK(run({"gen-data", "--out", (fs::temp_directory_path() / "turbo_cli_bad").string(), "--n", "0"}) == 1);
  CHECK(run({"bench", "--config", "/nonexistent.json"}) == 1);
}

TEST_CASE("gen-data and pretrain write their outputs and resolved configs") {
  auto& w = workspace();
  CHECK(fs::exists(w.data / "manifest.json"));
  CHECK(fs::exists(w.data / "config.json"));
  CHECK(fs::exists(w.home / "backbone" / "manifest.json"));
  const json cfg = json::parse(slurp(w.home / "backbone" / "config.json"));
  CHECK(cfg.at("pretrain").at("ae_steps") == 2);
}

TEST_CASE("translate twice gives byte-identical files at gamma = 1") {
  auto& w = workspace();
  REQUIRE(run(with({"train-unpaired"}, train_flags(w))) == 0);
  CHECK(fs::exists(w.home / "unpaired-FULL" / "manifest.json"));
  CHECK(fs::exists(w.home / "unpaired-FULL" / "history.jsonl"));
  CHECK(fs::exists(w.home / "unpaired-FULL" / "loss.jsonl"));

  const std::string in = (w.data / "day" / "0.png").string();
  REQUIRE(fs::exists(in));
  const fs::path a = w.root / "a.png", b = w.root / "b.png";
  REQUIRE(run({"translate", "--in", in, "--domain", "night", "--gamma", "1", "--seed", "7", "--out", a.string()}) == 0);
  REQUIRE(run({"translate", "--in", in, "--domain", "night", "--gamma", "1", "--seed", "8", "--out", b.string()}) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(json::parse(slurp(a.string() + ".config.json")).at("seed") == 7);
  CHECK(run({"translate", "--in", in, "--domain", "dusk", "--out", a.string()}) == 1);
}

TEST_CASE("config files supply defaults that explicit flags override") {
  auto& w = workspace();
  const fs::path cfg = w.root / "run.json";
  std::ofstream(cfg) << json{{"train-unpaired", {{"steps", 3}, {"batch_size", 2}, {"eval_images", 4}, {"lr", 0.5}}}}
                            .dump();
  const fs::path out = w.root / "cfg-run";
  REQUIRE(run({"train-unpaired", "--config", cfg.string(), "--model", "backbone", "--data", w.data.string(),
               "--holdout", "4", "--steps", "1", "--out", out.string()}) == 0);
  const json resolved = json::parse(slurp(out / "config.json"));
  CHECK(resolved.at("steps") == 1);
  CHECK(resolved.at("batch_size") == 2);
  CHECK(resolved.at("lr").get<double>() == 0.5);
}

TEST_CASE("evaluate on identical folders reports FID 0") {
  auto& w = workspace();
  const fs::path report = w.root / "eval.json";
  REQUIRE(run({"evaluate", "--source", (w.data / "day").string(), "--target", (w.data / "day").string(), "--out",
               report.string()}) == 0);
  CHECK(std::abs(json::parse(slurp(report)).at("fid").get<double>()) < 1e-6);
  REQUIRE(run({"evaluate", "--source", (w.data / "day").string(), "--target", (w.data / "night").string(), "--model",
               "unpaired-FULL", "--domain", "night", "--out", report.string()}) == 0);
  const json r = json::parse(slurp(report));
  CHECK(r.at("fid").get<double>() > 0.0);
  CHECK(r.contains("dino_struct"));
  CHECK(run({"evaluate", "--source", (w.data / "day").string(), "--target", (w.data / "day").string(), "--model",
             "unpaired-FULL"}) == 1);
}

TEST_CASE("ablate emits one CSV row per variant") {
  auto& w = workspace();
  const fs::path out = w.root / "ablation";
  REQUIRE(run(with({"ablate", "--variants", "A,B,C,D,FULL", "--out", out.string()}, train_flags(w))) == 0);
  std::ifstream csv(out / "ablation.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(csv, line);) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0].rfind("variant,pretrained,fid,dino_struct", 0) == 0);
  CHECK(lines[1].rfind("A,false,", 0) == 0);
  CHECK(lines[5].rfind("FULL,true,", 0) == 0);
  CHECK(fs::exists(out / "config.json"));
  CHECK(run(with({"ablate", "--variants", "A,E"}, train_flags(w))) == 1);
}

TEST_CASE("sweep, paired training and diversity finetuning run end to end") {
  auto& w = workspace();
  const fs::path sweep = w.root / "sweep";
  REQUIRE(run(with({"sweep", "--sizes", "3,8", "--out", sweep.string()}, train_flags(w))) == 0);
  CHECK(fs::exists(sweep / "sweep.csv"));
  CHECK(run(with({"sweep", "--sizes", "500"}, train_flags(w))) == 1);

  const fs::path paired = w.root / "paired";
  REQUIRE(run(with({"train-paired", "--pairs", "edges", "--out", paired.string()}, train_flags(w))) == 0);
  CHECK(json::parse(slurp(paired / "config.json")).at("pairs") == "edges");
  const fs::path div = w.root / "div";
  auto flags = train_flags(w);
  flags[1] = paired.string();
  REQUIRE(run(with({"finetune-diversity", "--gammas", "0,0.5,1", "--out", div.string()}, flags)) == 0);
  CHECK(json::parse(slurp(div / "config.json")).at("gamma_values").size() == 3);
  CHECK(run(with({"finetune-diversity", "--gammas", "0,1.5"}, flags)) == 1);
}

TEST_CASE("bench reports three timings with median <= p95") {
  auto& w = workspace();
  const fs::path out = w.root / "bench.json";
  REQUIRE(run({"bench", "--model", "backbone", "--size", "64", "--reps", "3", "--out", out.string()}) == 0);
  const json r = json::parse(slurp(out));
  CHECK(r.at("timings_ms").size() == 3);
  CHECK(r.at("median_ms").get<double>() <= r.at("p95_ms").get<double>());
}
