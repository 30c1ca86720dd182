#pragma once

// Small fixtures shared by the objective tests and the acceptance binary.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "turbo/adversarial.hpp"
#include "turbo/generator.hpp"
#include "turbo/objectives.hpp"

namespace turbo::testing {

/// Adds N(0, stddev) noise to every trainable parameter so no gradient path is
/// blocked by a zero-initialized factor.
inline void perturb_adapters(GeneratorState& s, std::uint64_t seed, double stddev = 0.05) {
  Rng rng(seed);
  for (const auto& p : s.params.all())
    if (p.trainable) {
      Tensor& t = s.params.get(p.name).mutable_value();
      for (double& v : t.values()) v += rng.normal(0.0, stddev);
    }
}

/// FULL-layout generator on 8x8 images with perturbed adapters, two
/// discriminators, an alignment head and a fixed pair of batches.
struct ToySetup {
  std::shared_ptr<const perceptual::FeatureNet> net = perceptual::default_feature_net();
  GeneratorState state;
  Discriminator d_x{net, 11};
  Discriminator d_y{net, 12};
  AlignmentHead head{net, GeneratorConfig{}.embed_dim, 13};
  ag::Var x, y, z;

  explicit ToySetup(int batch = 2, int size = 8) {
    GeneratorConfig cfg;
    state = adapt_backbone(init_generator(cfg), true, BranchKind::direct);
    perturb_adapters(state, 5);
    Rng rng(6);
    x = ag::Var(rng.uniform_tensor({batch, 3, size, size}, -0.9, 0.9));
    y = ag::Var(rng.uniform_tensor({batch, 3, size, size}, -0.9, 0.9));
    z = ag::Var(sample_noise_batch(batch, size, size, rng));
  }
};

struct SuiteEntry {
  std::string name;
  std::vector<ProbeResult> probes;
};

/// Analytic-vs-finite-difference probes of every training objective.
inline std::vector<SuiteEntry> gradient_suite(int probes = 16, double step = 1e-3) {
  ToySetup t;
  const auto& net = *t.net;
  const Translator g = bind_translator(t.state);
  const LossWeights wu = LossWeights::unpaired_defaults();
  LossWeights wp = LossWeights::paired_defaults();
  // The alignment target is a per-step constant, as in training.
  const Tensor target = domain_embedding(t.state, 1);
  const std::vector<ag::Var> gen = adaptation_params(t.state);
  std::vector<ag::Var> d_heads;
  for (const auto& p : t.d_y.heads().all()) d_heads.push_back(t.d_y.heads().get(p.name));

  std::vector<SuiteEntry> out;
  out.push_back({"unpaired_objective", probe_gradients(
                                           [&] {
                                             return unpaired_objective(g, &t.d_x, &t.d_y, t.x, t.y, 0, 1, wu, net)
                                                 .loss.total;
                                           },
                                           gen, probes, 1, step)});
  out.push_back({"paired_objective", probe_gradients(
                                         [&] {
                                           return paired_objective(g, &t.d_y, &t.head, t.x, t.y, 1, target, wp, net)
                                               .loss.total;
                                         },
                                         gen, probes, 2, step)});
  const NoisyTranslator gn = bind_noisy_translator(t.state, 1);
  out.push_back({"diversity_loss",
                 probe_gradients([&] { return diversity_loss(gn, t.x, t.y, t.z, 0.5, wp, net).total; }, gen, probes,
                                 3, step)});
  out.push_back({"gan_loss_g", probe_gradients([&] { return gan_loss_g(t.d_y, g(t.x, 1)).total; }, gen, probes, 4,
                                               step)});
  {
    ag::Var fake;
    {
      ag::NoGradGuard guard;
      fake = ag::Var(g(t.x, 1).value());
    }
    out.push_back({"gan_loss_d", probe_gradients([&] { return gan_loss_d(t.d_y, t.y, fake).total; }, d_heads,
                                                 probes, 5, step)});
  }
  for (auto& p : t.state.params.all()) t.state.params.get(p.name).set_requires_grad(false);
  return out;
}

/// A probe passes when the relative error is below `tol`, or both sides are
/// numerically zero.
inline bool probe_ok(const ProbeResult& p, double tol = 1e-3) {
  return p.rel_err < tol || std::abs(p.analytic - p.numeric) < 1e-9;
}

}  // namespace turbo::testing
