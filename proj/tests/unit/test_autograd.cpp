#include "doctest.h"
#include "gradcheck.hpp"
#include "turbo/autograd.hpp"
#include "turbo/errors.hpp"
#include "turbo/params.hpp"

using namespace turbo;
using ag::Var;

namespace {

Var param(Shape s, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return Var(rng.normal_tensor(std::move(s), stddev), true);
}

void check_probes(const std::function<Var()>& f, std::vector<Var> params, int count = 12) {
  auto probes = testing::probe_gradients(f, std::move(params), count, 1234, 1e-5);
  for (const auto& p : probes) {
    INFO(p.label << " analytic=" << p.analytic << " numeric=" << p.numeric);
    CHECK((p.rel_err < 1e-5 || std::abs(p.analytic - p.numeric) < 1e-9));
  }
}

}  // namespace

TEST_CASE("elementwise ops backpropagate correctly") {
  Var a = param({2, 3, 4, 4}, 1), b = param({2, 3, 4, 4}, 2);
  check_probes([&] { return ag::mean(ag::silu(ag::mul(a, b) + ag::scale(a, 0.3))); }, {a, b});
  check_probes([&] { return ag::sum(ag::tanh(ag::sub(a, ag::square(b)))); }, {a, b});
  check_probes([&] { return ag::mean_abs_diff(a, b); }, {a, b});
}

TEST_CASE("conv2d, film and upsample gradients") {
  Var x = param({2, 3, 7, 6}, 3), w = param({4, 3, 3, 3}, 4, 0.3), bias = param({4}, 5);
  Var mod = param({2, 8}, 6, 0.2);
  check_probes(
      [&] {
        Var h = ag::conv2d(x, w, bias, 2, 1);
        h = ag::film(h, mod);
        h = ag::upsample2x(h, 7, 6);
        return ag::mean(ag::square(ag::silu(h)));
      },
      {x, w, bias, mod}, 20);
}

TEST_CASE("normalization, pooling and cosine gradients") {
  Var x = param({2, 5, 3, 3}, 7);
  const std::vector<double> shift{0.1, -0.2, 0.3, 0.0, 0.5}, gain{1.5, 0.5, 2.0, 1.0, 0.7};
  Var t = param({2, 5}, 8);
  check_probes(
      [&] {
        Var n = ag::channel_unit_normalize(ag::channel_affine(x, shift, gain));
        return ag::sum(ag::row_cosine(ag::spatial_mean(n), t));
      },
      {x, t});
}

TEST_CASE("linear, matmul, gather and bce gradients") {
  Var x = param({3, 4}, 9), w = param({5, 4}, 10), b = param({5}, 11), m = param({5, 2}, 12);
  Var table = param({3, 4}, 13);
  const std::vector<int> ids{2, 0, 2};
  check_probes(
      [&] {
        Var h = ag::linear(ag::add(x, ag::gather_rows(table, ids)), w, b);
        return ag::bce_with_logits(ag::matmul(h, m), 1.0) + ag::bce_with_logits(h, 0.0);
      },
      {x, w, b, m, table});
}

TEST_CASE("bce clamps saturated logits") {
  Var logits(Tensor({4}, 100.0), true);
  Var loss = ag::bce_with_logits(logits, 1.0, 30.0);
  CHECK(loss.item() < 1e-9);
  ag::backward(loss);
  CHECK(logits.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing and shape errors are raised") {
  Var a = param({2, 2}, 1);
  {
    ag::NoGradGuard guard;
    Var out = ag::square(a);
    CHECK_FALSE(out.requires_grad());
  }
  CHECK(ag::square(a).requires_grad());
  CHECK_THROWS_AS(ag::add(a, param({3}, 2)), ShapeError);
  CHECK_THROWS_AS(ag::matmul(a, param({3, 1}, 2)), ShapeError);
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
  Var p = param({10}, 3);
  const Tensor before = p.value();
  Adam opt({p}, AdamConfig{0.0, 0.5, 0.999, 1e-8});
  ag::backward(ag::sum(ag::square(p)));
  opt.step();
  CHECK(p.value() == before);
}
