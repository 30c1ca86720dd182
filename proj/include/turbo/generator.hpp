#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/image.hpp"
#include "turbo/params.hpp"
#include "turbo/rng.hpp"

namespace turbo {

/// How the input image reaches the core network.
enum class BranchKind {
  direct,      // encoder output blended into the core input
  controlnet,  // cloned core encoder half fed by a hint stack, zero-conv residuals
  adapter,     // small randomly initialized conv stack, zero-conv residuals
};

std::string to_string(BranchKind kind);
/// Accepts "direct", "controlnet"/"controlnet-style", "adapter"/"lightweight-adapter".
BranchKind parse_branch_kind(const std::string& text);

struct GeneratorConfig {
  std::array<int, 4> enc_channels{8, 8, 16, 32};
  int core_channels = 32;
  int embed_dim = 64;
  int lora_rank = 8;
  double lora_alpha = 8.0;
  std::vector<std::string> domains{"day", "night"};
  bool skips = true;
  BranchKind branch = BranchKind::direct;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Frozen backbone (`*.weight`, `*.bias`, `domain.embedding`) plus the
/// trainable adaptation deltas, all held in one named parameter store.
struct GeneratorState {
  GeneratorConfig config;
  ParamStore params;
  bool pretrained = false;
  double latent_scale = 1.0;

  int domain_index(const std::string& name) const;
  GeneratorState clone() const;
  std::size_t trainable_count() const { return params.scalar_count(true); }
  std::size_t frozen_count() const { return params.scalar_count(false); }
};

/// Random backbone, zero adapters; adds branch weights when config.branch != direct.
GeneratorState init_generator(const GeneratorConfig& config);

/// Copies every frozen weight of `backbone` into a fresh adapter set for the
/// requested skip/branch layout. A controlnet branch clones the copied core.
GeneratorState adapt_backbone(const GeneratorState& backbone, bool skips, BranchKind branch);

/// Names of the layers that carry a LoRA pair.
std::vector<std::string> lora_layers(const GeneratorState& state);

struct LoraParams {
  Tensor down;  // [r, K]
  Tensor up;    // [Cout, r]
  int rank = 0;
  double scale = 1.0;  // alpha / rank
};

LoraParams lora_params(const GeneratorState& state, const std::string& layer);
/// theta0 + gamma * scale * reshape(up * down); inputs are not modified.
Tensor merge_lora(const Tensor& theta0, const LoraParams& delta, double gamma);

using SkipFeatures = std::array<ag::Var, 4>;

struct Encoded {
  ag::Var latent;     // [N, 4, H/8, W/8], already multiplied by latent_scale
  SkipFeatures taps;  // resolutions H, H/2, H/4, H/8
};

/// First-stage encoder. `gamma` scales the encoder's LoRA deltas.
Encoded encode(const GeneratorState& state, const ag::Var& x, double gamma = 1.0);
std::pair<LatentMap, std::array<Tensor, 4>> encode(const TensorImage& x, const GeneratorState& state);

/// The four zero-conv outputs, each multiplied by gamma.
SkipFeatures skip_contribution(const GeneratorState& state, const SkipFeatures& taps, double gamma);

/// Full adapted generator on a batch: x [N,3,H,W], z [N,4,H/8,W/8].
/// For the direct variant the core sees gamma*enc(x) + (1-gamma)*z; branch
/// variants feed z to the core and x to the branch.
ag::Var generate(const GeneratorState& state, const ag::Var& x, const ag::Var& z, double gamma,
                 std::span<const int> domains);

/// Backbone only: no adapters, no skips, no branch. `latent` is the core input.
ag::Var backbone_forward(const GeneratorState& state, const ag::Var& latent, std::span<const int> domains);
/// Core network only, frozen weights: latent in, latent out.
ag::Var backbone_core(const GeneratorState& state, const ag::Var& latent, std::span<const int> domains);
/// Decoder applied to a latent in core space (skips off, frozen weights).
ag::Var backbone_decode(const GeneratorState& state, const ag::Var& latent);

/// Single image entry point with validation of all arguments.
TensorImage translate(const TensorImage& x, const LatentMap& z, double gamma, const std::string& target,
                      const GeneratorState& state);
/// What the unadapted backbone produces for the same blended core input.
TensorImage backbone_translate(const TensorImage& x, const LatentMap& z, double gamma, const std::string& target,
                               const GeneratorState& state);
TensorImage backbone_sample(const LatentMap& z, const std::string& target, const GeneratorState& state);
TensorImage forward_with_adapter_branch(const TensorImage& x, const LatentMap& z, const std::string& target,
                                        const GeneratorState& state, BranchKind kind);

/// Standard normal noise in latent shape for an image of the given size.
LatentMap sample_noise(int image_height, int image_width, std::uint64_t seed);
Tensor sample_noise_batch(int batch, int image_height, int image_width, Rng& rng);

/// Parameter groups trained during adaptation for each variant.
std::vector<ag::Var> adaptation_params(const GeneratorState& state);
std::vector<ag::Var> frozen_params(const GeneratorState& state);

void save_generator(const std::filesystem::path& dir, const GeneratorState& state, const nlohmann::json& extra = {});
GeneratorState load_generator(const std::filesystem::path& dir);
/// Hash over the generator config, as written to and checked against the manifest.
std::string generator_config_hash(const GeneratorState& state);

}  // namespace turbo
