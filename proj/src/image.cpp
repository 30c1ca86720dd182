#include "turbo/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "turbo/errors.hpp"

namespace turbo {

TensorImage::TensorImage(Tensor chw) : chw_(std::move(chw)) {
  if (chw_.rank() != 3 || chw_.dim(0) != 3) throw ShapeError("TensorImage expects [3,H,W], got " + shape_str(chw_.shape()));
}

void TensorImage::validate() const {
  if (chw_.rank() != 3 || chw_.dim(0) != 3) throw ShapeError("image must have shape [3,H,W]");
  if (height() % kDownsampleFactor != 0 || width() % kDownsampleFactor != 0 || height() == 0 || width() == 0)
    throw ShapeError("image " + std::to_string(height()) + "x" + std::to_string(width()) +
                     " is not divisible by the downsampling factor 8");
  if (!chw_.all_finite()) throw ValidationError("image contains non-finite values");
}

LatentMap::LatentMap(Tensor chw) : chw_(std::move(chw)) {
  if (chw_.rank() != 3 || chw_.dim(0) != kLatentChannels)
    throw ShapeError("LatentMap expects [4,h,w], got " + shape_str(chw_.shape()));
}

Tensor stack_tensors(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty set");
  Shape s{static_cast<int>(items.size())};
  for (int d : items[0].shape()) s.push_back(d);
  Tensor out(s);
  const std::size_t stride = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items[0].shape()) throw ShapeError("stack: mismatched shapes");
    std::copy_n(items[i].data(), stride, out.data() + i * stride);
  }
  return out;
}

Tensor stack_images(std::span<const TensorImage> images) {
  std::vector<Tensor> t;
  t.reserve(images.size());
  for (const auto& im : images) t.push_back(im.chw());
  return stack_tensors(t);
}

Tensor batch_item(const Tensor& batch, int index) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t stride = shape_numel(s);
  std::vector<double> v(batch.data() + index * stride, batch.data() + (index + 1) * stride);
  return Tensor(s, std::move(v));
}

std::vector<TensorImage> unstack_images(const Tensor& batch) {
  std::vector<TensorImage> out;
  for (int i = 0; i < batch.dim(0); ++i) out.emplace_back(batch_item(batch, i));
  return out;
}

double psnr(const TensorImage& a, const TensorImage& b) {
  if (a.chw().shape() != b.chw().shape()) throw ShapeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.chw().size(); ++i) {
    const double d = (a.chw()[i] - b.chw()[i]) / 2.0;  // [-1,1] -> unit range
    mse += d * d;
  }
  mse /= static_cast<double>(a.chw().size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double luminance(const TensorImage& img, int y, int x) {
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// ---- PNG -------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
  const double u = (std::clamp(v, -1.0, 1.0) + 1.0) * 127.5;
  return static_cast<std::uint8_t>(std::lround(u));
}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + len > cur->bytes.size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->bytes.data() + cur->offset, len);
  cur->offset += len;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

[[noreturn]] void png_error_cb(png_structp, png_const_charp msg) { throw ValidationError(std::string("PNG: ") + msg); }
void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const TensorImage& img) {
  const int h = img.height(), w = img.width();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(img.at(y, x, c));
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, rgb.data() + static_cast<std::size_t>(y) * w * 3);
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

TensorImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ValidationError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{bytes, 0};
  TensorImage img;
  try {
    png_set_read_fn(png, &cur, png_read_cb);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) png_error(png, "unsupported channel layout");
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    img = TensorImage(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 127.5 - 1.0;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const TensorImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TensorImage read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

// ---- base64 ----------------------------------------------------------------

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += (i + 1 < bytes.size()) ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' ) break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw ValidationError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

// ---- resize ----------------------------------------------------------------

namespace {

struct FilterTaps {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

// Triangle filter whose support grows with the downscale factor.
FilterTaps triangle_taps(int in_size, int out_size) {
  FilterTaps taps;
  const double scale = static_cast<double>(in_size) / out_size;
  const double support = std::max(1.0, scale);
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(in_size - 1, static_cast<int>(std::ceil(center + support)));
    std::vector<double> w;
    double total = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double d = std::abs((i + 0.5 - center) / support);
      const double v = std::max(0.0, 1.0 - d);
      w.push_back(v);
      total += v;
    }
    for (double& v : w) v /= total;
    taps.first.push_back(lo);
    taps.weights.push_back(std::move(w));
  }
  return taps;
}

}  // namespace

Tensor resize_plane(const Tensor& plane, int height, int width) {
  const int h = plane.dim(0), w = plane.dim(1);
  if (h == height && w == width) return plane;
  const FilterTaps ty = triangle_taps(h, height), tx = triangle_taps(w, width);
  Tensor tmp({h, width});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < tx.weights[x].size(); ++k)
        acc += tx.weights[x][k] * plane[static_cast<std::size_t>(y) * w + tx.first[x] + k];
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  Tensor out({height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ty.weights[y].size(); ++k)
        acc += ty.weights[y][k] * tmp[(static_cast<std::size_t>(ty.first[y]) + k) * width + x];
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  return out;
}

TensorImage resize_bilinear(const TensorImage& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  TensorImage out(height, width);
  for (int c = 0; c < 3; ++c) {
    Tensor plane({img.height(), img.width()});
    std::copy_n(img.chw().data() + static_cast<std::size_t>(c) * plane.size(), plane.size(), plane.data());
    Tensor r = resize_plane(plane, height, width);
    std::copy_n(r.data(), r.size(), out.chw().data() + static_cast<std::size_t>(c) * r.size());
  }
  return out;
}

}  // namespace turbo
