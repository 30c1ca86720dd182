#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "toy.hpp"
#include "turbo/errors.hpp"
#include "turbo/trainer.hpp"

using namespace turbo;
namespace fs = std::filesystem;

namespace {

data::TwoDomainDataset small_dataset(int n = 12) {
  data::SceneSpec spec;
  spec.size = 16;
  return data::gen_two_domain_dataset(n, spec);
}

/// Random backbone flagged as pretrained; the loops only need the flag.
GeneratorState fake_backbone() {
  GeneratorState s = init_generator({});
  s.pretrained = true;
  return s;
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.eval_every = 2;
  c.eval_images = 4;
  return c;
}

void check_report_totals(const nlohmann::json& report) {
  const LossReport r = LossReport::from_json(report);
  CHECK(r.total == doctest::Approx(r.weighted_sum()).epsilon(1e-9));
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

}  // namespace

TEST_CASE("pretraining with a zero learning rate leaves the initialization untouched") {
  const auto ds = small_dataset(4);
  std::vector<TensorImage> imgs{ds.x[0], ds.x[1], ds.y[0], ds.y[1]};
  PretrainConfig pc;
  pc.ae_steps = 2;
  pc.core_steps = 2;
  pc.batch_size = 2;
  pc.lr = 0.0;
  const GeneratorState out = pretrain_backbone(imgs, {0, 0, 1, 1}, {}, pc);
  const GeneratorState init = init_generator({});
  CHECK(out.pretrained);
  CHECK(out.params.checksum(false) == init.params.checksum(false));
  CHECK(out.params.checksum(true) == init.params.checksum(true));
  CHECK_THROWS_AS(pretrain_backbone({}, {}, {}, pc), ValidationError);
  CHECK_THROWS_AS(pretrain_backbone(imgs, {0, 1}, {}, pc), ValidationError);
}

TEST_CASE("a few pretraining steps improve autoencoder reconstruction and keep adapters at zero") {
  const auto ds = small_dataset(8);
  std::vector<TensorImage> imgs;
  std::vector<int> doms;
  for (int i = 0; i < 8; ++i) {
    imgs.push_back(ds.x[static_cast<std::size_t>(i)]);
    doms.push_back(0);
  }
  PretrainConfig pc;
  pc.ae_steps = 30;
  pc.core_steps = 2;
  pc.batch_size = 4;
  const GeneratorState init = init_generator({});
  const GeneratorState bb = pretrain_backbone(imgs, doms, {}, pc);
  const auto recon_psnr = [&](const GeneratorState& s) {
    double sum = 0.0;
    for (const auto& img : imgs) {
      ag::NoGradGuard guard;
      const std::array<TensorImage, 1> one{img};
      const ag::Var x(stack_images(one));
      const Tensor out = backbone_decode(s, encode(s, x).latent).value();
      sum += psnr(TensorImage(batch_item(out, 0)), img);
    }
    return sum / static_cast<double>(imgs.size());
  };
  CHECK(recon_psnr(bb) > recon_psnr(init));
  for (const auto& p : bb.params.all())
    if (p.trainable && !p.name.ends_with("lora_down")) {
      INFO(p.name);
      CHECK(std::ranges::all_of(p.var.value().values(), [](double v) { return v == 0.0; }));
    }
}

TEST_CASE("unpaired training: zero learning rate is a no-op and the backbone never moves") {
  const auto ud = split_unpaired(small_dataset(), 4);
  const GeneratorState s = make_variant(Variant::FULL, fake_backbone());
  TrainConfig c = quick(2);
  c.adam.lr = 0.0;
  const TrainResult r = train_unpaired(s, ud, c);
  CHECK(r.state.params.checksum(true) == s.params.checksum(true));
  CHECK(r.state.params.checksum(false) == s.params.checksum(false));

  c.adam.lr = 1e-3;
  const TrainResult moved = train_unpaired(s, ud, c);
  CHECK(moved.state.params.checksum(true) != s.params.checksum(true));
  CHECK(moved.state.params.checksum(false) == s.params.checksum(false));
}

TEST_CASE("unpaired training logs every step and evaluates at the cadence") {
  const auto ud = split_unpaired(small_dataset(), 4);
  const fs::path dir = fs::temp_directory_path() / "turbo_trainer_log";
  fs::remove_all(dir);
  TrainConfig c = quick(3);
  c.log_path = (dir / "loss.jsonl").string();
  const TrainResult r = train_unpaired(make_variant(Variant::FULL, fake_backbone()), ud, c);

  REQUIRE(r.history.steps.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.history.steps[i].at("step").get<int>() == static_cast<int>(i + 1));
    check_report_totals(r.history.steps[i].at("g"));
    check_report_totals(r.history.steps[i].at("d"));
    for (const char* term : {"cycle", "identity", "gan"})
      CHECK(LossReport::from_json(r.history.steps[i].at("g")).has(term));
  }
  std::vector<int> eval_steps;
  for (const auto& e : r.history.evals) eval_steps.push_back(e.at("step").get<int>());
  CHECK(eval_steps == std::vector<int>{0, 2, 3});
  for (const char* key : {"fid", "dino_struct", "psnr_identity"}) CHECK(r.history.last_eval().contains(key));

  std::ifstream log(c.log_path);
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) check_report_totals(nlohmann::json::parse(line));
  CHECK(lines == 6);  // one G and one D record per step

  r.history.save(dir / "history.jsonl");
  std::ifstream hist(dir / "history.jsonl");
  int records = 0;
  for (std::string line; std::getline(hist, line); ++records) CHECK_NOTHROW(nlohmann::json::parse(line));
  CHECK(records == 6);
  fs::remove_all(dir);
}

TEST_CASE("unpaired training rejects bad inputs") {
  auto ud = split_unpaired(small_dataset(), 4);
  const GeneratorState s = make_variant(Variant::FULL, fake_backbone());
  GeneratorState raw = s;
  raw.pretrained = false;
  CHECK_THROWS_AS(train_unpaired(raw, ud, quick(1)), ValidationError);
  TrainConfig bad = quick(1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train_unpaired(s, ud, bad), ValidationError);
  ud.domain_y = ud.domain_x;
  CHECK_THROWS_AS(train_unpaired(s, ud, quick(1)), ValidationError);
  ud.domain_y = "dusk";
  CHECK_THROWS(train_unpaired(s, ud, quick(1)));
}

TEST_CASE("paired training: terms, no-op at zero learning rate, misaligned pairs") {
  const auto ds = small_dataset();
  PairedData pd = make_edge_pairs(ds, 4, {}, 1);
  CHECK(pd.inputs.size() == pd.targets.size());
  const GeneratorState s = make_variant(Variant::FULL, fake_backbone());
  TrainConfig c = quick(2);
  c.weights = LossWeights::paired_defaults();
  c.adam.lr = 0.0;
  const TrainResult r = train_paired(s, pd, c);
  CHECK(r.state.params.checksum(true) == s.params.checksum(true));
  for (const auto& step : r.history.steps) {
    const LossReport g = LossReport::from_json(step.at("g"));
    for (const char* term : {"rec", "gan", "clip"}) CHECK(g.has(term));
    check_report_totals(step.at("g"));
  }
  CHECK(r.history.first_eval().contains("rec"));

  pd.targets.pop_back();
  CHECK_THROWS_AS(train_paired(s, pd, c), ValidationError);
}

TEST_CASE("diversity finetuning at gamma = 1 reproduces paired rec + gan losses") {
  const PairedData pd = make_translation_pairs(small_dataset(), 4);
  const GeneratorState s = make_variant(Variant::FULL, fake_backbone());
  TrainConfig c = quick(3);
  c.weights = LossWeights::paired_defaults();
  c.weights.lambda_clip = 0.0;
  c.gamma_values = {1.0};
  const TrainResult paired = train_paired(s, pd, c);
  const TrainResult div = finetune_diversity(s, pd, c);
  REQUIRE(paired.history.steps.size() == div.history.steps.size());
  for (std::size_t i = 0; i < paired.history.steps.size(); ++i) {
    const LossReport a = LossReport::from_json(paired.history.steps[i].at("g"));
    const LossReport b = LossReport::from_json(div.history.steps[i].at("g"));
    CHECK(std::abs(a.total - b.total) < 1e-6);
    CHECK(std::abs(a.value("rec") - b.value("rec")) < 1e-6);
  }

  TrainConfig bad = c;
  bad.gamma_values = {0.5, 1.2};
  CHECK_THROWS_AS(finetune_diversity(s, pd, bad), ValidationError);
}

TEST_CASE("gamma = 0 batches carry no reconstruction gradient") {
  testing::ToySetup t;
  const auto params = adaptation_params(t.state);
  t.state.params.enable_grad_only(params);
  const Loss l = diversity_loss(bind_noisy_translator(t.state, 1), t.x, t.y, t.z, 0.0, LossWeights{},
                                *perceptual::default_feature_net());
  ag::backward(l.total);
  double norm = 0.0;
  for (const auto& p : params) {
    const Tensor g = p.grad();
    for (double v : g.values()) norm += v * v;
  }
  CHECK(std::sqrt(norm) < 1e-9);
  t.state.params.enable_grad_only({});
}

TEST_CASE("ablation driver: variants, pretrained flags and CSV shape") {
  CHECK_THROWS_AS(parse_variant("E"), ValidationError);
  CHECK(parse_variants("A,FULL").size() == 2);
  CHECK_THROWS_AS(run_ablation({}, fake_backbone(), {}, quick(1)), ValidationError);

  const auto ud = split_unpaired(small_dataset(), 4);
  const auto res = run_ablation({Variant::A, Variant::B}, fake_backbone(), ud, quick(1));
  REQUIRE(res.rows.size() == 2);
  CHECK_FALSE(res.rows[0].pretrained);
  CHECK(res.rows[1].pretrained);
  CHECK(res.states[1].config.branch == BranchKind::controlnet);
  CHECK_FALSE(res.states[1].config.skips);

  std::ostringstream csv;
  write_ablation_csv(csv, res.rows);
  const auto rows = parse_csv(csv.str());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0][0] == "variant");
  for (const auto& row : rows) CHECK(row.size() == rows[0].size());
  CHECK(rows[1][1] == "false");
  CHECK(std::stod(rows[2][2]) == doctest::Approx(res.rows[1].metrics.fid));
}

TEST_CASE("variant layouts follow the ablation table") {
  const GeneratorState bb = fake_backbone();
  const GeneratorState a = make_variant(Variant::A, bb), d = make_variant(Variant::D, bb),
                       full = make_variant(Variant::FULL, bb), c = make_variant(Variant::C, bb);
  CHECK_FALSE(a.pretrained);
  GeneratorState moved = bb.clone();
  moved.params.get("dec.out.weight").mutable_value()[0] += 1.0;
  CHECK(make_variant(Variant::A, moved).params.checksum(false) == a.params.checksum(false));
  CHECK(make_variant(Variant::D, moved).params.checksum(false) != d.params.checksum(false));
  CHECK(d.params.checksum(false) == full.params.checksum(false));
  CHECK_FALSE(d.config.skips);
  CHECK(full.config.skips);
  CHECK(c.config.branch == BranchKind::adapter);
}

TEST_CASE("subset selection is reproducible and the sweep validates sizes") {
  CHECK(subset_indices(10, 10, 3) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(subset_indices(50, 10, 3) == subset_indices(50, 10, 3));
  CHECK(subset_indices(50, 10, 3) != subset_indices(50, 10, 4));
  CHECK_THROWS_AS(subset_indices(5, 6, 1), ValidationError);

  const auto ud = split_unpaired(small_dataset(), 4);
  CHECK_THROWS_AS(dataset_size_sweep({100}, fake_backbone(), ud, quick(1)), ValidationError);
  const auto sweep = dataset_size_sweep({3, 8}, fake_backbone(), ud, quick(1));
  REQUIRE(sweep.rows.size() == 2);
  std::ostringstream csv;
  write_sweep_csv(csv, sweep.rows);
  CHECK(parse_csv(csv.str()).size() == 3);
}

TEST_CASE("identical configs give bitwise identical checkpoints") {
  const auto ud = split_unpaired(small_dataset(), 4);
  const GeneratorState s = make_variant(Variant::FULL, fake_backbone());
  const TrainResult a = train_unpaired(s, ud, quick(2)), b = train_unpaired(s, ud, quick(2));
  const fs::path dir = fs::temp_directory_path() / "turbo_trainer_det";
  fs::remove_all(dir);
  save_generator(dir / "a", a.state);
  save_generator(dir / "b", b.state);
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    std::ifstream fa(entry.path(), std::ios::binary), fb(dir / "b" / entry.path().filename(), std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), {}), cb((std::istreambuf_iterator<char>(fb)), {});
    INFO(entry.path().filename());
    CHECK(ca == cb);
  }
  fs::remove_all(dir);
}

TEST_CASE("train config serializes and validates") {
  TrainConfig c = quick(5);
  c.seed = 42;
  const TrainConfig back = TrainConfig::from_json(c.to_json(), {});
  CHECK(back.steps == 5);
  CHECK(back.seed == 42);
  CHECK(back.adam.beta1 == 0.5);
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = quick(1);
  c.gamma_values = {};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
