#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "turbo/tensor.hpp"

namespace turbo {

inline constexpr int kDownsampleFactor = 8;
inline constexpr int kLatentChannels = 4;

/// H x W x 3 image with values in [-1, 1], stored channel-major as [3, H, W].
class TensorImage {
 public:
  TensorImage() = default;
  TensorImage(int height, int width, double fill = 0.0) : chw_({3, height, width}, fill) {}
  explicit TensorImage(Tensor chw);

  int height() const { return chw_.dim(1); }
  int width() const { return chw_.dim(2); }
  double& at(int y, int x, int c) { return chw_[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
  double at(int y, int x, int c) const { return chw_[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
  const Tensor& chw() const { return chw_; }
  Tensor& chw() { return chw_; }

  /// Throws ShapeError unless H, W are multiples of 8; ValidationError on non-finite values.
  void validate() const;

  bool operator==(const TensorImage&) const = default;

 private:
  Tensor chw_;
};

/// (H/8) x (W/8) x 4 latent, stored as [4, h, w].
class LatentMap {
 public:
  LatentMap() = default;
  explicit LatentMap(Tensor chw);
  int height() const { return chw_.dim(1); }
  int width() const { return chw_.dim(2); }
  const Tensor& chw() const { return chw_; }

 private:
  Tensor chw_;
};

Tensor stack_images(std::span<const TensorImage> images);
std::vector<TensorImage> unstack_images(const Tensor& batch);
/// Copies sample `index` of an NCHW batch into a [C,H,W] tensor.
Tensor batch_item(const Tensor& batch, int index);
Tensor stack_tensors(std::span<const Tensor> items);

double psnr(const TensorImage& a, const TensorImage& b);
double luminance(const TensorImage& img, int y, int x);

// ---- on-disk PNG (8-bit RGB) ---------------------------------------------

std::vector<std::uint8_t> encode_png(const TensorImage& img);
TensorImage decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const TensorImage& img);
TensorImage read_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Bilinear resize; when shrinking, the filter support widens with the scale
/// factor so the result is antialiased.
TensorImage resize_bilinear(const TensorImage& img, int height, int width);
/// Single-channel map helpers share the same filter.
Tensor resize_plane(const Tensor& plane, int height, int width);

}  // namespace turbo
