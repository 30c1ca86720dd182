#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/adversarial.hpp"
#include "turbo/data.hpp"
#include "turbo/generator.hpp"
#include "turbo/objectives.hpp"

namespace turbo {

using ProgressFn = std::function<void(const std::string&)>;

struct TrainConfig {
  AdamConfig adam{};  // lr 1e-4, beta1 0.5
  int batch_size = 8;
  int steps = 2000;
  std::uint64_t seed = 1;
  LossWeights weights = LossWeights::unpaired_defaults();
  std::vector<double> gamma_values{0.0, 0.25, 0.5, 0.75, 1.0};
  int eval_every = 250;
  int eval_images = 64;
  bool require_pretrained = true;
  std::string log_path;  // per-step JSON lines; empty disables
  ProgressFn progress;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

struct PretrainConfig {
  int ae_steps = 1500;
  int core_steps = 1500;
  int batch_size = 8;
  double lr = 1e-3;
  double lambda_lpips = 1.0;
  double lambda_adv = 0.05;
  int imle_candidates = 4;
  std::vector<double> blend_values{0.0, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 1;
  std::string log_path;
  ProgressFn progress;

  void validate() const;
  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j, PretrainConfig base);
};

/// Step-indexed training record: loss reports per step, metrics at cadence points.
struct History {
  std::vector<nlohmann::json> steps;
  std::vector<nlohmann::json> evals;

  const nlohmann::json& first_eval() const { return evals.front(); }
  const nlohmann::json& last_eval() const { return evals.back(); }
  /// JSON lines, steps and evals interleaved in step order.
  void save(const std::filesystem::path& path) const;
};

struct UnpairedData {
  std::vector<TensorImage> x_train, y_train, x_eval, y_eval;
  std::string domain_x = "day";
  std::string domain_y = "night";
};

struct PairedData {
  std::vector<TensorImage> inputs, targets, eval_inputs, eval_targets;
  std::string target_domain = "day";
};

/// Last `n_eval` scenes are held out; the rest train. Pairing is dropped.
UnpairedData split_unpaired(const data::TwoDomainDataset& ds, int n_eval);
/// Edge map of each domain-A image paired with the image itself.
PairedData make_edge_pairs(const data::TwoDomainDataset& ds, int n_eval, const data::EdgeConfig& edges,
                           std::uint64_t seed);
/// Domain-A image paired with its domain-B rendering.
PairedData make_translation_pairs(const data::TwoDomainDataset& ds, int n_eval);

struct TrainResult {
  GeneratorState state;
  History history;
};

/// Two phases: autoencoder (L1 + perceptual), then the core as a
/// domain-conditional noise-to-latent generator (denoising at blend s > 0,
/// nearest-of-K latent matching at s = 0, small adversarial term).
GeneratorState pretrain_backbone(const std::vector<TensorImage>& images, const std::vector<int>& domains,
                                 const GeneratorConfig& gen_config, const PretrainConfig& cfg);

TrainResult train_unpaired(const GeneratorState& state, const UnpairedData& data, const TrainConfig& cfg);
TrainResult train_paired(const GeneratorState& state, const PairedData& data, const TrainConfig& cfg);
TrainResult finetune_diversity(const GeneratorState& state, const PairedData& data, const TrainConfig& cfg);

struct UnpairedMetrics {
  double fid = 0, dino = 0;  // means over both directions
  double fid_xy = 0, fid_yx = 0, dino_xy = 0, dino_yx = 0;
  double psnr_identity = 0;  // G(x, c_X) vs x, averaged over both domains
  nlohmann::json to_json() const;
};

UnpairedMetrics evaluate_unpaired(const GeneratorState& state, const UnpairedData& data, int max_images,
                                  std::uint64_t noise_seed);

enum class Variant { A, B, C, D, FULL };
std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
std::vector<Variant> parse_variants(const std::string& comma_list);
/// A: random init, direct, no skips. B: controlnet branch. C: adapter branch.
/// D: direct, no skips. FULL: direct with skips. B-D and FULL start from `backbone`.
GeneratorState make_variant(Variant v, const GeneratorState& backbone);

struct AblationRow {
  std::string variant;
  bool pretrained = false;
  UnpairedMetrics metrics;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<GeneratorState> states;
  std::vector<History> histories;
};

AblationResult run_ablation(const std::vector<Variant>& variants, const GeneratorState& backbone,
                            const UnpairedData& data, const TrainConfig& cfg);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

struct SweepRow {
  int size = 0;
  UnpairedMetrics metrics;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<GeneratorState> states;
};

/// Training subset of `n` images: the data as-is when n equals its size,
/// otherwise the first n of a permutation seeded by cfg.seed.
std::vector<int> subset_indices(int available, int n, std::uint64_t seed);
SweepResult dataset_size_sweep(const std::vector<int>& sizes, const GeneratorState& backbone,
                               const UnpairedData& data, const TrainConfig& cfg);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace turbo
