#pragma once

#include <memory>
#include <vector>

#include "turbo/loss_report.hpp"
#include "turbo/params.hpp"
#include "turbo/perceptual.hpp"

namespace turbo {

inline constexpr double kLogitClamp = 30.0;

/// Frozen shared FeatureNet with trainable conv heads on stages 2-4; each
/// head maps features to a patch logit map (conv3x3 -> SiLU -> conv1x1).
class Discriminator {
 public:
  Discriminator(std::shared_ptr<const perceptual::FeatureNet> net, std::uint64_t seed, int hidden = 16);

  /// One logit map [N,1,h,w] per head; differentiable w.r.t. heads and images.
  std::vector<ag::Var> score(const ag::Var& images) const;

  ParamStore& heads() { return heads_; }
  const ParamStore& heads() const { return heads_; }
  const perceptual::FeatureNet& net() const { return *net_; }
  void zero_heads();
  Discriminator clone() const;

 private:
  std::shared_ptr<const perceptual::FeatureNet> net_;
  ParamStore heads_;
  int hidden_;
};

inline constexpr int kFirstHeadStage = 1;

/// Single-image scoring; throws ValidationError on non-finite input.
std::vector<Tensor> d_score(const Discriminator& d, const TensorImage& img);

/// BCE(real, 1) + BCE(fake, 0) averaged over heads; fake is detached.
Loss gan_loss_d(const Discriminator& d, const ag::Var& real, const ag::Var& fake);
/// Non-saturating generator loss -E[log sigmoid(D(fake))].
Loss gan_loss_g(const Discriminator& d, const ag::Var& fake);

/// Same losses from precomputed logit maps, for toy checks.
ag::Var bce_over_maps(const std::vector<ag::Var>& maps, double target);

void save_discriminator(const std::filesystem::path& dir, const Discriminator& d);
void load_discriminator(const std::filesystem::path& dir, Discriminator& d);

}  // namespace turbo
