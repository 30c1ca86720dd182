#pragma once

#include <filesystem>
#include <fstream>
#include <functional>

#include "turbo/adversarial.hpp"
#include "turbo/generator.hpp"
#include "turbo/loss_report.hpp"
#include "turbo/perceptual.hpp"

namespace turbo {

struct LossWeights {
  double lambda_idt = 1.0;
  double lambda_gan = 0.5;
  double lambda_clip = 0.0;
  double lambda_l1 = 1.0;
  double lambda_lpips = 5.0;

  static LossWeights unpaired_defaults() { return {}; }
  static LossWeights paired_defaults() { return {0.0, 0.4, 4.0, 1.0, 5.0}; }

  /// Throws ValidationError on any negative or non-finite weight.
  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j, LossWeights base);
};

/// Deterministic translation of a batch into domain `domain`.
using Translator = std::function<ag::Var(const ag::Var& x, int domain)>;
/// Translation with explicit noise and interpolation coefficient.
using NoisyTranslator = std::function<ag::Var(const ag::Var& x, const ag::Var& z, double gamma)>;

/// gamma = 1 translation through the generator. Branch variants need noise:
/// when `noise` is given a fresh map is drawn per call, otherwise zeros.
Translator bind_translator(const GeneratorState& state, Rng* noise = nullptr);
NoisyTranslator bind_noisy_translator(const GeneratorState& state, int domain);

/// lambda_l1 * mean|a - b| + lambda_lpips * lpips_like(a, b), batch-averaged.
ag::Var rec_distance(const ag::Var& a, const ag::Var& b, const LossWeights& w, const perceptual::FeatureNet& net);
double rec_distance(const TensorImage& a, const TensorImage& b, const LossWeights& w,
                    const perceptual::FeatureNet& net);

Loss cycle_loss(const Translator& g, const ag::Var& x, const ag::Var& y, int cx, int cy, const LossWeights& w,
                const perceptual::FeatureNet& net);
Loss identity_loss(const Translator& g, const ag::Var& x, const ag::Var& y, int cx, int cy, const LossWeights& w,
                   const perceptual::FeatureNet& net);

struct UnpairedResult {
  Loss loss;
  ag::Var fake_x;  // G(y, cX)
  ag::Var fake_y;  // G(x, cY)
};

/// cycle + lambda_idt * identity + lambda_gan * (G adversarial in both directions).
UnpairedResult unpaired_objective(const Translator& g, const Discriminator* d_x, const Discriminator* d_y,
                                  const ag::Var& x, const ag::Var& y, int cx, int cy, const LossWeights& w,
                                  const perceptual::FeatureNet& net);

/// Projects pooled FeatureNet features into the domain-embedding space;
/// stands in for image-text alignment.
class AlignmentHead {
 public:
  AlignmentHead(std::shared_ptr<const perceptual::FeatureNet> net, int embed_dim, std::uint64_t seed);
  ag::Var project(const ag::Var& images) const;  // [N, E]
  /// Mean cosine between projections and the target embedding.
  ag::Var alignment(const ag::Var& images, const Tensor& embedding) const;
  /// Head's own objective: align real targets, de-align the conditioning inputs.
  Loss head_loss(const ag::Var& real, const ag::Var& inputs, const Tensor& embedding) const;
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  std::shared_ptr<const perceptual::FeatureNet> net_;
  ParamStore params_;
};

/// Effective domain embedding row (frozen table plus delta) used as the alignment target.
Tensor domain_embedding(const GeneratorState& state, int domain);

struct PairedResult {
  Loss loss;
  ag::Var fake;
};

/// rec(G(x), y) + lambda_gan * G adversarial + lambda_clip * (1 - alignment).
PairedResult paired_objective(const Translator& g, const Discriminator* d_y, const AlignmentHead* head,
                              const ag::Var& x, const ag::Var& y, int c, const Tensor& embedding,
                              const LossWeights& w, const perceptual::FeatureNet& net);

/// gamma * rec(G(x, z, gamma), y).
Loss diversity_loss(const NoisyTranslator& g, const ag::Var& x, const ag::Var& y, const ag::Var& z, double gamma,
                    const LossWeights& w, const perceptual::FeatureNet& net, ag::Var* output = nullptr);

/// Newline-delimited JSON records, one per step.
class LossLog {
 public:
  explicit LossLog(const std::filesystem::path& path);
  void write(long step, const std::string& phase, const LossReport& report);

 private:
  std::ofstream out_;
};

}  // namespace turbo
