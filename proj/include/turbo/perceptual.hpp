#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "turbo/autograd.hpp"
#include "turbo/image.hpp"

namespace turbo::perceptual {

struct FeatureNetConfig {
  std::uint64_t seed = 20240317;
  std::array<int, 4> channels{8, 16, 32, 32};
  std::array<int, 4> strides{2, 2, 2, 1};
};

/// Fixed convolutional pyramid with weights drawn once from a seed.
/// Each stage is conv3x3 -> SiLU -> per-channel standardization, with the
/// standardization constants measured on a seeded probe batch at construction.
/// Immutable after construction and safe to share across threads.
class FeatureNet {
 public:
  explicit FeatureNet(FeatureNetConfig config = {});

  const FeatureNetConfig& config() const { return config_; }
  std::uint64_t seed() const { return config_.seed; }
  int stage_channels(int stage) const { return config_.channels[static_cast<std::size_t>(stage)]; }
  int pooled_dim() const;

  /// Stage outputs for an NCHW batch in [-1, 1]; differentiable w.r.t. the input only.
  std::array<ag::Var, 4> features(const ag::Var& images) const;

  const ag::Var& stage_weight(int stage) const { return weights_[static_cast<std::size_t>(stage)]; }
  std::uint64_t weight_checksum() const;

 private:
  ag::Var stage(int s, const ag::Var& h) const;

  FeatureNetConfig config_;
  std::array<ag::Var, 4> weights_;
  std::array<ag::Var, 4> biases_;
  std::array<std::vector<double>, 4> shift_;
  std::array<std::vector<double>, 4> gain_;
};

using Features = std::array<ag::Var, 4>;

/// Perceptual distance: per stage, squared difference of channel-unit-normalized
/// features averaged over batch, channels and positions; summed over stages.
ag::Var lpips_like(const FeatureNet& net, const ag::Var& a, const ag::Var& b);
ag::Var lpips_from_features(const Features& fa, const Features& fb);
double lpips_like(const FeatureNet& net, const TensorImage& x, const TensorImage& y);

/// Appearance-normalized input for the structure distance: luminance,
/// standardized per image, half-scaled and clipped to [-1, 1], on all channels.
TensorImage structure_view(const TensorImage& img);

/// Mean absolute difference of final-stage token cosine self-similarity
/// matrices of the structure views, multiplied by 100.
double dino_struct_dist(const FeatureNet& net, const TensorImage& x, const TensorImage& y);

struct FeatureStats {
  Tensor mean;  // [d]
  Tensor cov;   // [d, d], unbiased
  int count = 0;
};

inline constexpr int kStatsResolution = 64;

/// Pooled per-stage feature means, after antialiased resize to 64x64.
Tensor pooled_features(const FeatureNet& net, std::span<const TensorImage> images);
FeatureStats fit_stats(std::span<const TensorImage> images, const FeatureNet& net);
/// Gaussian moments of row vectors; one-pass (Welford) accumulation.
FeatureStats stats_from_rows(const Tensor& rows);

/// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^1/2)
double frechet_distance(const FeatureStats& a, const FeatureStats& b);
double fid(std::span<const TensorImage> a, std::span<const TensorImage> b, const FeatureNet& net);

void save_stats(const std::filesystem::path& dir, const FeatureStats& stats, std::uint64_t feature_net_seed);
FeatureStats load_stats(const std::filesystem::path& dir, std::uint64_t* feature_net_seed = nullptr);

}  // namespace turbo::perceptual

namespace turbo::perceptual {

/// Process-wide FeatureNet with the default seed, built on first use.
std::shared_ptr<const FeatureNet> default_feature_net();

}  // namespace turbo::perceptual
