#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/image.hpp"

namespace turbo::data {

/// Scene geometry is shared by both renderings; only illumination, palette
/// and noise differ between domain A and domain B.
struct SceneSpec {
  std::uint64_t seed = 2024;
  int size = 64;
  int min_objects = 2;
  int max_objects = 5;
  double luminance_offset = 0.35;  // domain B is darker by this much (in [-1,1] units)
  double hue_rotation = 2.0;       // radians, applied in the YIQ chroma plane for domain B
  double noise_a = 0.02;
  double noise_b = 0.05;
  double detail_amplitude = 0.12;  // 1-px checker texture on objects and ground

  void validate() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

struct TwoDomainDataset {
  std::vector<TensorImage> x;     // domain A
  std::vector<TensorImage> y;     // domain B, same geometry as x[i]
  std::vector<Tensor> masks;      // [H, W] integer labels: 0 sky, 1 ground, 2+ objects
  std::vector<int> paired_map;    // y index paired with x[i]
  SceneSpec spec;
};

TwoDomainDataset gen_two_domain_dataset(int n, const SceneSpec& spec);

/// Domain B rendering of a domain A color: hue rotation in YIQ, luminance shift.
std::array<double, 3> night_color(std::array<double, 3> rgb, const SceneSpec& spec);

/// `<root>/<domain>/<index>.png`, `<root>/masks/<index>.png`, `<root>/manifest.json`.
void save_dataset(const std::filesystem::path& root, const TwoDomainDataset& ds,
                  const std::array<std::string, 2>& domains = {"day", "night"});
TwoDomainDataset load_dataset(const std::filesystem::path& root,
                              const std::array<std::string, 2>& domains = {"day", "night"});

struct EdgeConfig {
  std::array<double, 2> low_range{0.04, 0.08};
  std::array<double, 2> high_range{0.10, 0.18};
  double blur_sigma = 1.0;
  bool nms = true;
  std::vector<int> morph_kernels{1, 3};  // odd square kernel sizes, sampled per sketch
  double erode_probability = 0.3;

  void validate() const;
};

/// Canny-style binary map [H, W] in {0, 1}: blur, per-channel Sobel (strongest
/// channel wins), NMS, hysteresis with thresholds sampled from the configured ranges.
Tensor extract_edges(const TensorImage& img, const EdgeConfig& cfg, std::uint64_t seed);
/// Soft sketch map [H, W] in [0, 1]: blurred edge response, NMS, random morphology.
Tensor synth_sketch(const TensorImage& img, const EdgeConfig& cfg, std::uint64_t seed);
/// Thresholds used by a call with this seed (low < high guaranteed).
std::array<double, 2> sample_thresholds(const EdgeConfig& cfg, std::uint64_t seed);

/// Single-channel map in [0, 1] to a grey image in [-1, 1].
TensorImage map_to_image(const Tensor& map);

/// Square dilation (max filter) or erosion (min filter) with an odd kernel.
Tensor morph(const Tensor& map, int kernel, bool dilate);

/// Boundary pixels of a label mask (4-neighbour label change).
Tensor label_boundaries(const Tensor& mask);

struct CropOffset {
  int top = 0, left = 0;
};

/// Offsets for `count` images; identical for identical arguments.
std::vector<CropOffset> crop_offsets(int count, int load_size, int crop_size, std::uint64_t seed);

struct IngestOptions {
  bool train_mode = false;
  int load_size = 72;
  int crop_size = 64;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> warn;  // defaults to stderr
};

/// Reads every *.png in `folder` (sorted by name). Unreadable files are skipped
/// with a warning; an empty result is an error.
std::vector<TensorImage> ingest(const std::filesystem::path& folder, const IngestOptions& options);

}  // namespace turbo::data
