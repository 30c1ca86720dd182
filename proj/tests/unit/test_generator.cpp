#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "turbo/errors.hpp"
#include "turbo/generator.hpp"

using namespace turbo;

namespace {

TensorImage random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return TensorImage(rng.uniform_tensor({3, h, w}, -1.0, 1.0));
}

// Stand-in for a trained model: every adaptation tensor gets small random values.
void perturb_adapters(GeneratorState& s, std::uint64_t seed, double stddev = 0.05) {
  Rng rng(seed);
  for (const auto& p : s.params.all())
    if (p.trainable) {
      Tensor& t = s.params.get(p.name).mutable_value();
      for (double& v : t.values()) v += rng.normal(0.0, stddev);
    }
}

double max_abs_diff(const TensorImage& a, const TensorImage& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.chw().size(); ++i) m = std::max(m, std::abs(a.chw()[i] - b.chw()[i]));
  return m;
}

bool same(std::span<const double> a, std::span<const double> b) { return std::ranges::equal(a, b); }

bool bitwise_equal(const TensorImage& a, const TensorImage& b) { return same(a.chw().values(), b.chw().values()); }

GeneratorState backbone() {
  GeneratorConfig cfg;
  cfg.skips = false;
  GeneratorState s = init_generator(cfg);
  s.pretrained = true;
  return s;
}

}  // namespace

TEST_CASE("encode produces latent and four halving taps") {
  const GeneratorState s = init_generator({});
  const auto [latent, taps] = encode(random_image(64, 64, 1), s);
  CHECK(latent.chw().shape() == Shape{4, 8, 8});
  const int sizes[] = {64, 32, 16, 8};
  for (int i = 0; i < 4; ++i) {
    CHECK(taps[i].dim(1) == sizes[i]);
    CHECK(taps[i].dim(2) == sizes[i]);
  }
  const auto again = encode(random_image(64, 64, 1), s);
  CHECK(same(again.first.chw().values(), latent.chw().values()));

  CHECK_THROWS_AS(encode(random_image(63, 63, 1), s), ShapeError);
  TensorImage bad = random_image(64, 64, 1);
  bad.at(3, 3, 0) = std::nan("");
  CHECK_THROWS_AS(encode(bad, s), ValidationError);
}

TEST_CASE("freshly adapted generator reproduces the backbone") {
  const GeneratorState bb = backbone();
  for (BranchKind kind : {BranchKind::direct, BranchKind::controlnet, BranchKind::adapter}) {
    const GeneratorState s = adapt_backbone(bb, kind == BranchKind::direct, kind);
    for (int probe = 0; probe < 4; ++probe) {
      const TensorImage x = random_image(64, 64, 10 + probe);
      const LatentMap z = sample_noise(64, 64, 20 + probe);
      const double gamma = probe / 3.0;
      const TensorImage out = translate(x, z, gamma, "night", s);
      if (kind == BranchKind::direct) {
        CHECK(max_abs_diff(out, backbone_translate(x, z, gamma, "night", bb)) < 1e-6);
      } else {
        // branch variants feed z to the core; zero residuals leave the backbone sample
        CHECK(max_abs_diff(out, backbone_sample(z, "night", bb)) < 1e-6);
        CHECK(max_abs_diff(forward_with_adapter_branch(x, z, "night", s, kind), backbone_sample(z, "night", bb)) < 1e-6);
      }
    }
  }
}

TEST_CASE("gamma semantics on a perturbed model") {
  GeneratorState s = adapt_backbone(backbone(), true, BranchKind::direct);
  perturb_adapters(s, 3);
  const TensorImage x = random_image(64, 64, 4);
  const LatentMap z1 = sample_noise(64, 64, 1), z2 = sample_noise(64, 64, 2);

  CHECK(bitwise_equal(translate(x, z1, 1.0, "day", s), translate(x, z2, 1.0, "day", s)));
  // gamma = 0: no skips, base weights, pure noise input
  CHECK(max_abs_diff(translate(x, z1, 0.0, "day", s), backbone_sample(z1, "day", s)) < 1e-12);

  const TensorImage mid = translate(x, z1, 0.5, "day", s);
  CHECK(max_abs_diff(mid, translate(x, z1, 0.0, "day", s)) > 0.0);
  CHECK(max_abs_diff(mid, translate(x, z1, 1.0, "day", s)) > 0.0);
  for (double v : mid.chw().values()) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("translate validates its arguments") {
  const GeneratorState s = init_generator({});
  const TensorImage x = random_image(64, 64, 1);
  const LatentMap z = sample_noise(64, 64, 1);
  CHECK_THROWS_AS(translate(x, z, 1.5, "night", s), ValidationError);
  CHECK_THROWS_AS(translate(x, z, -0.1, "night", s), ValidationError);
  CHECK_THROWS_AS(translate(x, sample_noise(32, 32, 1), 1.0, "night", s), ShapeError);
  CHECK_THROWS_AS(translate(x, z, 1.0, "dusk", s), ValidationError);
  CHECK(translate(random_image(32, 48, 2), sample_noise(32, 48, 1), 1.0, "night", s).chw().shape() == Shape{3, 32, 48});
}

TEST_CASE("merge_lora blends linearly") {
  GeneratorState s = init_generator({});
  perturb_adapters(s, 9, 0.2);
  const std::string layer = "core.block1.conv_a";
  const Tensor theta0 = s.params.get(layer + ".weight").value();
  const LoraParams lp = lora_params(s, layer);
  const Tensor theta0_copy = theta0, up_copy = lp.up;

  const Tensor w0 = merge_lora(theta0, lp, 0.0);
  const Tensor w1 = merge_lora(theta0, lp, 1.0);
  const Tensor wh = merge_lora(theta0, lp, 0.5);
  CHECK(same(w0.values(), theta0.values()));
  // gamma = 1 against an independent product up * down
  const int cout = lp.up.dim(0), r = lp.rank, k = lp.down.dim(1);
  double worst = 0, worst_mid = 0;
  for (int o = 0; o < cout; ++o)
    for (int j = 0; j < k; ++j) {
      double acc = 0;
      for (int q = 0; q < r; ++q) acc += lp.up[static_cast<std::size_t>(o) * r + q] * lp.down[static_cast<std::size_t>(q) * k + j];
      const std::size_t i = static_cast<std::size_t>(o) * k + j;
      worst = std::max(worst, std::abs(w1[i] - (theta0[i] + lp.scale * acc)));
      worst_mid = std::max(worst_mid, std::abs(wh[i] - 0.5 * (w0[i] + w1[i])));
    }
  CHECK(worst < 1e-12);
  CHECK(worst_mid < 1e-6);
  CHECK(same(theta0.values(), theta0_copy.values()));
  CHECK(same(lp.up.values(), up_copy.values()));

  CHECK_THROWS_AS(merge_lora(Tensor({3, 3}), lp, 1.0), ShapeError);
}

TEST_CASE("LoRA pairs start at zero with bounded rank") {
  const GeneratorState s = init_generator({});
  const auto layers = lora_layers(s);
  CHECK(layers.size() > 20);
  for (const auto& l : layers) {
    const LoraParams lp = lora_params(s, l);
    const Tensor& w = s.params.get(l + ".weight").value();
    const int k = static_cast<int>(w.size()) / w.dim(0);
    CHECK(lp.rank >= 1);
    CHECK(lp.rank <= std::min(w.dim(0), k));
    for (double v : lp.up.values()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(lora_params(s, "nope"), ValidationError);
}

TEST_CASE("skip contribution is linear in gamma") {
  GeneratorState s = init_generator({});
  perturb_adapters(s, 5);
  ag::NoGradGuard guard;
  const std::array<TensorImage, 1> xs{random_image(64, 64, 6)};
  const Encoded e = encode(s, ag::Var(stack_images(xs)), 0.0);
  const SkipFeatures full = skip_contribution(s, e.taps, 1.0);
  const SkipFeatures half = skip_contribution(s, e.taps, 0.5);
  const SkipFeatures none = skip_contribution(s, e.taps, 0.0);
  for (int i = 0; i < 4; ++i) {
    double dev = 0, mag = 0;
    for (std::size_t k = 0; k < full[i].value().size(); ++k) {
      dev = std::max(dev, std::abs(half[i].value()[k] - 0.5 * full[i].value()[k]));
      mag = std::max(mag, std::abs(full[i].value()[k]));
      CHECK(none[i].value()[k] == 0.0);
    }
    CHECK(mag > 0.0);
    CHECK(dev < 1e-12);
  }
  const GeneratorState no_skip = backbone();
  CHECK_THROWS_AS(skip_contribution(no_skip, e.taps, 1.0), ValidationError);
}

TEST_CASE("adapter branch entry point contract") {
  const GeneratorState direct = init_generator({});
  const TensorImage x = random_image(64, 64, 1);
  const LatentMap z = sample_noise(64, 64, 1);
  CHECK_THROWS_AS(forward_with_adapter_branch(x, z, "day", direct, BranchKind::direct), ValidationError);
  CHECK_THROWS_AS(forward_with_adapter_branch(x, z, "day", direct, BranchKind::controlnet), ValidationError);
  CHECK(parse_branch_kind("controlnet-style") == BranchKind::controlnet);
  CHECK(parse_branch_kind("lightweight-adapter") == BranchKind::adapter);
  CHECK_THROWS_AS(parse_branch_kind("lora"), ValidationError);
}

TEST_CASE("parameter partition") {
  const GeneratorState s = init_generator({});
  CHECK(s.trainable_count() > 0);
  CHECK(s.trainable_count() < s.frozen_count() / 2);
  for (const auto& p : s.params.all()) {
    const bool adapter = p.name.find("lora_") != std::string::npos || p.name.find("delta") != std::string::npos ||
                         p.name.rfind("skip.", 0) == 0;
    CHECK_MESSAGE(adapter == p.trainable, p.name);
  }
  GeneratorConfig dup;
  dup.domains = {"day", "day"};
  CHECK_THROWS_AS(init_generator(dup), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  GeneratorState s = adapt_backbone(backbone(), true, BranchKind::direct);
  perturb_adapters(s, 8);
  s.latent_scale = 3.5;
  const auto dir = std::filesystem::temp_directory_path() / "turbo_generator_roundtrip";
  std::filesystem::remove_all(dir);
  save_generator(dir, s);
  const GeneratorState r = load_generator(dir);
  CHECK(r.pretrained);
  CHECK(r.latent_scale == 3.5);
  CHECK(generator_config_hash(r) == generator_config_hash(s));
  CHECK(r.params.all().size() == s.params.all().size());
  const TensorImage x = random_image(64, 64, 2);
  const LatentMap z = sample_noise(64, 64, 3);
  // float32 storage
  CHECK(max_abs_diff(translate(x, z, 0.7, "night", r), translate(x, z, 0.7, "night", s)) < 1e-4);

  // saving the loaded state again is byte-stable
  const auto dir2 = dir.string() + "_again";
  save_generator(dir2, r);
  const GeneratorState r2 = load_generator(dir2);
  CHECK(r2.params.checksum(true) == r.params.checksum(true));
  CHECK(r2.params.checksum(false) == r.params.checksum(false));

  // tampered config hash
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  manifest["config_hash"] = "0000";
  std::ofstream(dir / "manifest.json") << manifest.dump();
  CHECK_THROWS_AS(load_generator(dir), ValidationError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
