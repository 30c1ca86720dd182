// End-to-end acceptance run on the synthetic day/night benchmark. Prints one
// PASS/FAIL line per criterion and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "toy.hpp"
#include "turbo/trainer.hpp"

using namespace turbo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

const auto t0 = std::chrono::steady_clock::now();

void log(const std::string& msg) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
}

std::string num(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

perceptual::FeatureStats gaussian(std::vector<double> mean, std::vector<double> cov) {
  const int d = static_cast<int>(mean.size());
  return {Tensor({d}, std::move(mean)), Tensor({d, d}, std::move(cov)), 100};
}

Outcome closed_form_fid() {
  const auto a = gaussian({0, 0}, {1, 0, 0, 1}), b = gaussian({1, 0}, {1, 0, 0, 1});
  const double same = perceptual::frechet_distance(a, a);
  const double shift = perceptual::frechet_distance(a, b);
  const double scale = perceptual::frechet_distance(gaussian({0.5}, {1}), gaussian({0.5}, {4}));
  const bool ok = std::abs(same) < 1e-6 && std::abs(shift - 1.0) < 1e-6 && std::abs(scale - 1.0) < 1e-6;
  return {"closed-form FID oracles", ok,
          "a=b " + num(same, 3) + ", mean shift " + num(shift, 12) + ", variance 1 vs 4 " + num(scale, 12)};
}

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  const auto suite = testing::gradient_suite();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = secs < 300.0;
  std::string detail;
  for (const auto& e : suite) {
    int passed = 0;
    for (const auto& p : e.probes) passed += testing::probe_ok(p);
    ok = ok && passed == static_cast<int>(e.probes.size()) && e.probes.size() == 16;
    detail += e.name + " " + std::to_string(passed) + "/16 (worst " + num(testing::worst(e.probes), 2) + "), ";
  }
  return {"gradient suite", ok, detail + "runtime " + num(secs, 3) + " s"};
}

Outcome zero_delta_identity(const GeneratorState& backbone, const std::vector<TensorImage>& images) {
  const GeneratorState fresh = adapt_backbone(backbone, true, BranchKind::direct);
  Rng rng(2024, 7);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const TensorImage& x = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
    const LatentMap z = sample_noise(x.height(), x.width(), rng.next());
    const double gamma = rng.uniform(0.0, 1.0);
    const std::string target = backbone.config.domains[static_cast<std::size_t>(rng.uniform_int(0, 1))];
    const TensorImage a = translate(x, z, gamma, target, fresh), b = backbone_translate(x, z, gamma, target, backbone);
    for (std::size_t k = 0; k < a.chw().size(); ++k) worst = std::max(worst, std::abs(a.chw()[k] - b.chw()[k]));
  }
  return {"zero-delta identity", worst < 1e-6, "max abs diff over 10 probes " + num(worst, 3)};
}

Outcome gamma_determinism(const GeneratorState& tuned, const TensorImage& x, const std::string& target) {
  bool bitwise = true;
  const TensorImage ref = translate(x, sample_noise(x.height(), x.width(), 0), 1.0, target, tuned);
  std::vector<TensorImage> half;
  for (std::uint64_t s = 0; s < 8; ++s) {
    const LatentMap z = sample_noise(x.height(), x.width(), s);
    bitwise = bitwise && translate(x, z, 1.0, target, tuned) == ref;
    half.push_back(translate(x, z, 0.5, target, tuned));
  }
  const std::size_t n = half.front().chw().size();
  double mean_std = 0.0;
  std::size_t varying = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double m = 0.0, v = 0.0;
    for (const auto& h : half) m += h.chw()[k];
    m /= 8.0;
    for (const auto& h : half) v += (h.chw()[k] - m) * (h.chw()[k] - m);
    const double sd = std::sqrt(v / 8.0);
    mean_std += sd;
    varying += sd > 0.0;
  }
  mean_std /= static_cast<double>(n);
  return {"gamma determinism", bitwise && mean_std > 0.0,
          std::string("gamma=1 bitwise across 8 z: ") + (bitwise ? "yes" : "no") + "; gamma=0.5 mean per-pixel std " +
              num(mean_std, 4) + " (" + num(100.0 * static_cast<double>(varying) / static_cast<double>(n), 4) +
              "% of pixels vary)"};
}

double mean_pairwise_lpips(const std::vector<TensorImage>& outs) {
  const auto& net = *perceptual::default_feature_net();
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < outs.size(); ++i)
    for (std::size_t j = i + 1; j < outs.size(); ++j, ++pairs) sum += perceptual::lpips_like(net, outs[i], outs[j]);
  return sum / pairs;
}

Outcome noise_conflict(const GeneratorState& trained_b, const GeneratorState& backbone,
                       const std::vector<TensorImage>& inputs, const std::string& target) {
  double b_sens = 0.0, bb_sens = 0.0;
  for (const auto& x : inputs) {
    std::vector<TensorImage> b_out, bb_out;
    for (std::uint64_t s = 0; s < 8; ++s) {
      const LatentMap z = sample_noise(x.height(), x.width(), 100 + s);
      b_out.push_back(translate(x, z, 1.0, target, trained_b));
      bb_out.push_back(backbone_sample(z, target, backbone));
    }
    b_sens += mean_pairwise_lpips(b_out);
    bb_sens += mean_pairwise_lpips(bb_out);
  }
  b_sens /= static_cast<double>(inputs.size());
  bb_sens /= static_cast<double>(inputs.size());
  return {"noise conflict (Config B)", b_sens < 0.25 * bb_sens,
          "B z-sensitivity " + num(b_sens, 4) + " vs backbone gamma=0 " + num(bb_sens, 4) + " (ratio " +
              num(b_sens / bb_sens, 3) + ", need < 0.25)"};
}

std::map<std::string, std::string> checkpoint_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream f(e.path(), std::ios::binary);
    out[e.path().filename().string()] = {std::istreambuf_iterator<char>(f), {}};
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run on the synthetic two-domain benchmark"};
  int steps = 2000, batch = 4, finetune_steps = 500, scenes = 264, holdout = 64;
  double lr = 1e-4;
  PretrainConfig pc;
  std::string artifacts = "acceptance_artifacts";
  app.add_option("--steps", steps, "Unpaired training steps per run");
  app.add_option("--batch-size", batch);
  app.add_option("--lr", lr);
  app.add_option("--finetune-steps", finetune_steps);
  app.add_option("--ae-steps", pc.ae_steps);
  app.add_option("--core-steps", pc.core_steps);
  app.add_option("--scenes", scenes);
  app.add_option("--holdout", holdout);
  app.add_option("--artifacts", artifacts, "Directory for checkpoints, histories and CSVs");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(artifacts);
  const fs::path out(artifacts);

  std::vector<Outcome> results;
  results.push_back(closed_form_fid());
  log(results.back().name + " done");
  results.push_back(gradients());
  log(results.back().name + " done");

  const auto ds = data::gen_two_domain_dataset(scenes, data::SceneSpec{});
  const UnpairedData ud = split_unpaired(ds, holdout);
  std::vector<TensorImage> images;
  std::vector<int> domains;
  for (const auto& x : ud.x_train) images.push_back(x), domains.push_back(0);
  for (const auto& y : ud.y_train) images.push_back(y), domains.push_back(1);
  pc.progress = [](const std::string& m) { log("pretrain " + m); };
  pc.log_path = (out / "pretrain_loss.jsonl").string();
  const GeneratorState backbone = pretrain_backbone(images, domains, {}, pc);
  save_generator(out / "backbone", backbone);
  results.push_back(zero_delta_identity(backbone, ud.x_eval));

  TrainConfig tc;
  tc.steps = steps;
  tc.batch_size = batch;
  tc.adam.lr = lr;
  tc.progress = [](const std::string& m) { log(m); };
  json run_config = tc.to_json();
  run_config["scenes"] = scenes;
  run_config["holdout"] = holdout;
  run_config["pretrain"] = pc.to_json();
  std::ofstream(out / "config.json") << run_config.dump(2) << '\n';

  const std::vector<Variant> variants{Variant::FULL, Variant::A, Variant::B, Variant::C, Variant::D};
  const AblationResult abl = run_ablation(variants, backbone, ud, tc);
  {
    std::ofstream csv(out / "ablation.csv", std::ios::binary);
    write_ablation_csv(csv, abl.rows);
    write_ablation_csv(std::cerr, abl.rows);
  }
  for (std::size_t i = 0; i < abl.rows.size(); ++i) {
    save_generator(out / abl.rows[i].variant, abl.states[i]);
    abl.histories[i].save(out / "histories" / (abl.rows[i].variant + ".jsonl"));
  }
  const auto& full = abl.rows[0].metrics;
  const auto& cfg_a = abl.rows[1].metrics;
  const auto& cfg_b = abl.rows[2].metrics;
  const auto& cfg_d = abl.rows[4].metrics;
  const double fid0 = abl.histories[0].first_eval().at("fid").get<double>();

  results.push_back({"unpaired training trend", full.fid <= 0.5 * fid0 && full.dino < cfg_b.dino,
                     "FULL FID " + num(fid0, 4) + " -> " + num(full.fid, 4) + " (ratio " + num(full.fid / fid0, 3) +
                         ", need <= 0.5); DINO-Struct FULL " + num(full.dino, 4) + " vs B " + num(cfg_b.dino, 4)});
  results.push_back({"skip-connection effect",
                     full.dino < cfg_d.dino && full.psnr_identity >= cfg_d.psnr_identity + 3.0,
                     "DINO-Struct FULL " + num(full.dino, 4) + " vs D " + num(cfg_d.dino, 4) + "; identity PSNR FULL " +
                         num(full.psnr_identity, 4) + " dB vs D " + num(cfg_d.psnr_identity, 4) + " dB (gain " +
                         num(full.psnr_identity - cfg_d.psnr_identity, 3) + ", need >= 3)"});
  results.push_back({"pretraining effect", cfg_a.fid >= 1.5 * full.fid,
                     "FID A " + num(cfg_a.fid, 4) + " vs FULL " + num(full.fid, 4) + " (ratio " +
                         num(cfg_a.fid / full.fid, 3) + ", need >= 1.5)"});
  results.push_back(noise_conflict(abl.states[2], backbone, {ud.x_eval.begin(), ud.x_eval.begin() + 4}, ud.domain_y));
  log(results.back().name + " done");

  const int n_full = static_cast<int>(std::min(ud.x_train.size(), ud.y_train.size()));
  const SweepResult sweep = dataset_size_sweep({10, n_full}, backbone, ud, tc);
  {
    std::ofstream csv(out / "sweep.csv", std::ios::binary);
    write_sweep_csv(csv, sweep.rows);
    write_sweep_csv(std::cerr, sweep.rows);
  }
  results.push_back({"dataset-size sweep", sweep.rows[0].metrics.fid >= sweep.rows[1].metrics.fid,
                     "FID n=10 " + num(sweep.rows[0].metrics.fid, 4) + " vs n=" + std::to_string(n_full) + " " +
                         num(sweep.rows[1].metrics.fid, 4)});

  // The full-size sweep run repeats the FULL ablation run with the same config and seed.
  save_generator(out / "FULL_rerun", sweep.states[1]);
  const bool same = checkpoint_bytes(out / "FULL") == checkpoint_bytes(out / "FULL_rerun");
  results.push_back({"determinism", same,
                     std::string("FULL checkpoint vs independent rerun: ") + (same ? "bitwise identical" : "differ")});

  PairedData pairs = make_translation_pairs(ds, holdout);
  TrainConfig fc = tc;
  fc.steps = finetune_steps;
  fc.weights = LossWeights::paired_defaults();
  fc.eval_every = std::max(1, finetune_steps / 2);
  const TrainResult tuned = finetune_diversity(abl.states[0], pairs, fc);
  save_generator(out / "FULL_diversity", tuned.state);
  tuned.history.save(out / "histories" / "FULL_diversity.jsonl");
  results.push_back(gamma_determinism(tuned.state, ud.x_eval.front(), pairs.target_domain));

  const std::vector<std::string> order{"zero-delta identity",     "gamma determinism",      "gradient suite",
                                       "closed-form FID oracles", "unpaired training trend", "skip-connection effect",
                                       "pretraining effect",      "noise conflict (Config B)", "dataset-size sweep",
                                       "determinism"};
  std::sort(results.begin(), results.end(), [&](const Outcome& a, const Outcome& b) {
    return std::find(order.begin(), order.end(), a.name) < std::find(order.begin(), order.end(), b.name);
  });
  std::ostringstream summary;
  for (const auto& r : results) {
    char line[64];
    std::snprintf(line, sizeof line, "%s  %-28s ", r.pass ? "PASS" : "FAIL", r.name.c_str());
    summary << line << r.detail << '\n';
  }
  const auto passed = std::count_if(results.begin(), results.end(), [](const Outcome& o) { return o.pass; });
  summary << passed << '/' << results.size() << " criteria passed\n";
  std::cout << '\n' << summary.str();
  std::ofstream(out / "summary.txt") << summary.str();
  return passed == static_cast<long>(results.size()) ? 0 : 1;
}
