#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "turbo/adversarial.hpp"
#include "turbo/errors.hpp"

using namespace turbo;
using ag::Var;

namespace {

std::shared_ptr<const perceptual::FeatureNet> net() { return perceptual::default_feature_net(); }

Tensor images(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  return rng.uniform_tensor({n, 3, size, size}, -1.0, 1.0);
}

std::vector<Var> constant_maps(double logit) {
  Tensor t({1, 1, 1, 1});
  t.fill(logit);
  return {Var(t)};
}

void check_probes(const std::vector<testing::ProbeResult>& probes) {
  for (const auto& p : probes) {
    INFO(p.label << " analytic=" << p.analytic << " numeric=" << p.numeric);
    CHECK((p.rel_err < 1e-3 || std::abs(p.analytic - p.numeric) < 1e-8));
  }
}

}  // namespace

TEST_CASE("zero heads give zero logits and the analytic BCE values") {
  Discriminator d(net(), 1);
  d.zero_heads();
  const Var real(images(2, 16, 1)), fake(images(2, 16, 2));
  for (const auto& m : d.score(real))
    for (double v : m.value().values()) CHECK(v == 0.0);
  CHECK(gan_loss_d(d, real, fake).total.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(gan_loss_g(d, fake).total.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("scores are deterministic and reject non-finite input") {
  Discriminator d(net(), 3);
  Rng rng(4);
  const TensorImage img(rng.uniform_tensor({3, 32, 32}, -1, 1));
  const auto a = d_score(d, img), b = d_score(d, img);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::ranges::equal(a[i].values(), b[i].values()));
  TensorImage bad = img;
  bad.at(0, 0, 0) = INFINITY;
  CHECK_THROWS_AS(d_score(d, bad), ValidationError);
}

TEST_CASE("saturated logits and loss bounds") {
  CHECK(bce_over_maps(constant_maps(1e6), 1.0).item() < 1e-9);
  CHECK(bce_over_maps(constant_maps(-1e6), 0.0).item() < 1e-9);
  const double worst = bce_over_maps(constant_maps(-1e6), 1.0).item() + bce_over_maps(constant_maps(1e6), 0.0).item();
  CHECK(worst >= 0.0);
  CHECK(worst <= 2.0 * (kLogitClamp + 1e-9));
}

TEST_CASE("generator loss falls as the fake logit rises") {
  double prev = INFINITY;
  for (double logit : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const double v = bce_over_maps(constant_maps(logit), 1.0).item();
    CHECK(v == doctest::Approx(std::log1p(std::exp(-logit))).epsilon(1e-12));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("score gradient w.r.t. input pixels matches finite differences") {
  Discriminator d(net(), 5);
  Var x(images(1, 16, 6));
  auto probes = testing::probe_gradients(
      [&] {
        Var total;
        for (const Var& m : d.score(x)) total = total.defined() ? ag::add(total, ag::mean(m)) : ag::mean(m);
        return total;
      },
      {x}, 16, 7);
  check_probes(probes);
}

TEST_CASE("discriminator loss gradient w.r.t. heads matches finite differences") {
  Discriminator d(net(), 8);
  const Var real(images(2, 16, 9)), fake(images(2, 16, 10));
  auto probes = testing::probe_gradients([&] { return gan_loss_d(d, real, fake).total; }, d.heads().vars(true), 16, 11);
  check_probes(probes);
}

TEST_CASE("generator loss gradient w.r.t. the fake image matches finite differences") {
  Discriminator d(net(), 12);
  Var fake(images(1, 16, 13));
  check_probes(testing::probe_gradients([&] { return gan_loss_g(d, fake).total; }, {fake}, 16, 14));
}

TEST_CASE("discriminator loss treats the fake as a constant") {
  Discriminator d(net(), 15);
  Var fake(images(2, 16, 16), true);
  const Var real(images(2, 16, 17));
  d.heads().enable_grad_only(d.heads().vars(true));
  ag::backward(gan_loss_d(d, real, fake).total);
  const Tensor g_fake = fake.grad();
  for (double g : g_fake.values()) CHECK(g == 0.0);
  // frozen backbone: no gradient ever reaches the feature net weights
  for (int s = 0; s < 4; ++s) CHECK_FALSE(net()->stage_weight(s).has_grad());
  CHECK_THROWS_AS(gan_loss_d(d, real, Var(images(1, 16, 1))), ShapeError);
}

TEST_CASE("head checkpoints round trip") {
  Discriminator d(net(), 18);
  const auto dir = std::filesystem::temp_directory_path() / "turbo_disc_roundtrip";
  std::filesystem::remove_all(dir);
  save_discriminator(dir, d);
  Discriminator e(net(), 99);
  load_discriminator(dir, e);
  const Var x(images(1, 16, 19));
  const auto a = d.score(x), b = e.score(x);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].value().size(); ++k)
      CHECK(a[i].value()[k] == doctest::Approx(b[i].value()[k]).epsilon(1e-5));
  std::filesystem::remove_all(dir);
}
