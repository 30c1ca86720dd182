#include "turbo/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>

#include "turbo/errors.hpp"
#include "turbo/rng.hpp"

namespace turbo::data {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  if (size <= 0 || size % kDownsampleFactor != 0) throw ShapeError("scene size must be a positive multiple of 8");
  if (min_objects < 0 || max_objects < min_objects || max_objects > 12)
    throw ValidationError("object count range must satisfy 0 <= min <= max <= 12");
  for (double v : {noise_a, noise_b, detail_amplitude, luminance_offset})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("scene noise, detail and offset must be >= 0");
}

nlohmann::json SceneSpec::to_json() const {
  return {{"seed", seed},
          {"size", size},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"luminance_offset", luminance_offset},
          {"hue_rotation", hue_rotation},
          {"noise_a", noise_a},
          {"noise_b", noise_b},
          {"detail_amplitude", detail_amplitude}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.seed = j.value("seed", s.seed);
  s.size = j.value("size", s.size);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.luminance_offset = j.value("luminance_offset", s.luminance_offset);
  s.hue_rotation = j.value("hue_rotation", s.hue_rotation);
  s.noise_a = j.value("noise_a", s.noise_a);
  s.noise_b = j.value("noise_b", s.noise_b);
  s.detail_amplitude = j.value("detail_amplitude", s.detail_amplitude);
  return s;
}

std::array<double, 3> night_color(std::array<double, 3> rgb, const SceneSpec& spec) {
  const double y = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
  const double i = 0.596 * rgb[0] - 0.274 * rgb[1] - 0.322 * rgb[2];
  const double q = 0.211 * rgb[0] - 0.523 * rgb[1] + 0.312 * rgb[2];
  const double c = std::cos(spec.hue_rotation), s = std::sin(spec.hue_rotation);
  const double i2 = c * i - s * q, q2 = s * i + c * q;
  const double y2 = y - spec.luminance_offset;
  return {y2 + 0.956 * i2 + 0.619 * q2, y2 - 0.272 * i2 - 0.647 * q2, y2 - 1.106 * i2 + 1.703 * q2};
}

namespace {

using Color = std::array<double, 3>;

struct Shape2D {
  int kind;  // 0 rectangle, 1 ellipse, 2 triangle
  double cx, cy, rx, ry;
  Color color;

  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    switch (kind) {
      case 0: return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
      case 1: return dx * dx + dy * dy <= 1.0;
      default: return dy <= 1.0 && dy >= -1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
    }
  }
};

Color random_color(Rng& rng, double lum_lo, double lum_hi) {
  // rejection keeps every component comfortably inside [-1, 1] in both domains
  for (;;) {
    Color c{rng.uniform(-0.7, 0.8), rng.uniform(-0.7, 0.8), rng.uniform(-0.7, 0.8)};
    const double y = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    if (y >= lum_lo && y <= lum_hi) return c;
  }
}

struct Scene {
  TensorImage a, b;
  Tensor mask;
};

Scene render_scene(const SceneSpec& spec, int index) {
  Rng rng(spec.seed, 1000 + static_cast<std::uint64_t>(index));
  const int n = spec.size;
  const double horizon = rng.uniform(0.4, 0.65) * n;
  const double tilt = rng.uniform(-0.15, 0.15);
  const Color sky_top{rng.uniform(-0.2, 0.1), rng.uniform(0.0, 0.3), rng.uniform(0.5, 0.8)};
  const Color sky_low{rng.uniform(0.4, 0.7), rng.uniform(0.4, 0.7), rng.uniform(0.5, 0.8)};
  const Color ground = random_color(rng, -0.2, 0.3);

  std::vector<Shape2D> shapes(static_cast<std::size_t>(rng.uniform_int(spec.min_objects, spec.max_objects)));
  for (auto& s : shapes) {
    s.kind = rng.uniform_int(0, 2);
    s.cx = rng.uniform(0.15, 0.85) * n;
    s.cy = rng.uniform(0.3, 0.85) * n;
    s.rx = rng.uniform(0.08, 0.2) * n;
    s.ry = rng.uniform(0.08, 0.2) * n;
    s.color = random_color(rng, -0.3, 0.6);
  }

  Scene out{TensorImage(n, n), TensorImage(n, n), Tensor({n, n})};
  Rng noise_a(spec.seed, 5000 + static_cast<std::uint64_t>(index));
  Rng noise_b(spec.seed, 9000 + static_cast<std::uint64_t>(index));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double edge = horizon + tilt * (px - n / 2.0);
      int label = py > edge ? 1 : 0;
      Color base;
      if (label == 0) {
        const double t = std::clamp(py / std::max(edge, 1.0), 0.0, 1.0);
        for (int c = 0; c < 3; ++c) base[c] = (1 - t) * sky_top[c] + t * sky_low[c];
      } else {
        base = ground;
      }
      for (std::size_t k = 0; k < shapes.size(); ++k)
        if (shapes[k].contains(px, py)) {
          label = 2 + static_cast<int>(k);
          base = shapes[k].color;
        }
      out.mask[static_cast<std::size_t>(y) * n + x] = label;
      const double detail = label == 0 ? 0.0 : ((x + y) % 2 ? spec.detail_amplitude : -spec.detail_amplitude);
      const Color night = night_color(base, spec);
      for (int c = 0; c < 3; ++c) {
        out.a.at(y, x, c) = std::clamp(base[c] + detail + noise_a.normal(0.0, spec.noise_a), -1.0, 1.0);
        out.b.at(y, x, c) = std::clamp(night[c] + detail + noise_b.normal(0.0, spec.noise_b), -1.0, 1.0);
      }
    }
  return out;
}

}  // namespace

TwoDomainDataset gen_two_domain_dataset(int n, const SceneSpec& spec) {
  if (n < 1) throw ValidationError("dataset size must be >= 1, got " + std::to_string(n));
  spec.validate();
  TwoDomainDataset ds;
  ds.spec = spec;
  ds.x.resize(n);
  ds.y.resize(n);
  ds.masks.resize(n);
  ds.paired_map.resize(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    Scene s = render_scene(spec, i);
    ds.x[i] = std::move(s.a);
    ds.y[i] = std::move(s.b);
    ds.masks[i] = std::move(s.mask);
    ds.paired_map[i] = i;
  }
  return ds;
}

void save_dataset(const fs::path& root, const TwoDomainDataset& ds, const std::array<std::string, 2>& domains) {
  for (const auto& d : domains) fs::create_directories(root / d);
  fs::create_directories(root / "masks");
  const int n = static_cast<int>(ds.x.size());
  for (int i = 0; i < n; ++i) {
    const std::string name = std::to_string(i) + ".png";
    write_png(root / domains[0] / name, ds.x[i]);
    write_png(root / domains[1] / name, ds.y[i]);
    const Tensor& m = ds.masks[i];
    TensorImage mi(m.dim(0), m.dim(1));
    for (int y = 0; y < m.dim(0); ++y)
      for (int x = 0; x < m.dim(1); ++x)
        for (int c = 0; c < 3; ++c) mi.at(y, x, c) = 2.0 * (16.0 * m[static_cast<std::size_t>(y) * m.dim(1) + x]) / 255.0 - 1.0;
    write_png(root / "masks" / name, mi);
  }
  const nlohmann::json manifest = {{"kind", "two-domain-dataset"}, {"count", n},           {"seed", ds.spec.seed},
                                   {"domains", domains},           {"spec", ds.spec.to_json()}, {"paired_map", ds.paired_map}};
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

TwoDomainDataset load_dataset(const fs::path& root, const std::array<std::string, 2>& domains) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw ValidationError("no dataset manifest in '" + root.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed dataset manifest: " + std::string(e.what()));
  }
  TwoDomainDataset ds;
  ds.spec = SceneSpec::from_json(manifest.value("spec", nlohmann::json::object()));
  const int n = manifest.at("count").get<int>();
  for (int i = 0; i < n; ++i) {
    const std::string name = std::to_string(i) + ".png";
    ds.x.push_back(read_png(root / domains[0] / name));
    ds.y.push_back(read_png(root / domains[1] / name));
    const TensorImage mi = read_png(root / "masks" / name);
    Tensor m({mi.height(), mi.width()});
    for (int y = 0; y < mi.height(); ++y)
      for (int x = 0; x < mi.width(); ++x)
        m[static_cast<std::size_t>(y) * mi.width() + x] = std::round((mi.at(y, x, 0) + 1.0) / 2.0 * 255.0 / 16.0);
    ds.masks.push_back(std::move(m));
  }
  ds.paired_map = manifest.value("paired_map", std::vector<int>{});
  if (static_cast<int>(ds.paired_map.size()) != n) {
    ds.paired_map.resize(n);
    for (int i = 0; i < n; ++i) ds.paired_map[i] = i;
  }
  return ds;
}

// ---- edges and sketches --------------------------------------------------------

void EdgeConfig::validate() const {
  if (!(low_range[0] <= low_range[1]) || !(high_range[0] <= high_range[1]))
    throw ValidationError("threshold ranges must be ordered [lo, hi]");
  if (!(low_range[0] < high_range[1])) throw ValidationError("low threshold range lies entirely above the high range");
  if (!(blur_sigma > 0.0)) throw ValidationError("blur_sigma must be positive");
  if (morph_kernels.empty()) throw ValidationError("morph_kernels must not be empty");
  for (int k : morph_kernels)
    if (k < 1 || k % 2 == 0) throw ValidationError("morphology kernels must be odd and >= 1");
  if (!(erode_probability >= 0.0 && erode_probability <= 1.0)) throw ValidationError("erode_probability outside [0,1]");
}

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

Tensor channel_plane(const TensorImage& img, int c) {
  Tensor l({img.height(), img.width()});
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) l[static_cast<std::size_t>(y) * img.width() + x] = (img.at(y, x, c) + 1.0) / 2.0;
  return l;
}

Tensor gaussian_blur(const Tensor& p, double sigma) {
  const int h = p.dim(0), w = p.dim(1);
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  Tensor tmp({h, w}), out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * p[static_cast<std::size_t>(y) * w + clampi(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(clampi(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

struct Gradient {
  Tensor mag, gx, gy;
};

// Sobel response scaled so a unit step yields magnitude 1.
Gradient sobel(const Tensor& p) {
  const int h = p.dim(0), w = p.dim(1);
  Gradient g{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  auto at = [&](int y, int x) { return p[static_cast<std::size_t>(clampi(y, 0, h - 1)) * w + clampi(x, 0, w - 1)]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.gx[i] = gx / 4.0;
      g.gy[i] = gy / 4.0;
      g.mag[i] = std::hypot(gx, gy) / 4.0;
    }
  return g;
}

// Per pixel, the gradient of whichever channel responds most strongly.
Gradient color_gradient(const TensorImage& img, double sigma) {
  Gradient best = sobel(gaussian_blur(channel_plane(img, 0), sigma));
  for (int c = 1; c < 3; ++c) {
    const Gradient g = sobel(gaussian_blur(channel_plane(img, c), sigma));
    for (std::size_t i = 0; i < g.mag.size(); ++i)
      if (g.mag[i] > best.mag[i]) {
        best.mag[i] = g.mag[i];
        best.gx[i] = g.gx[i];
        best.gy[i] = g.gy[i];
      }
  }
  return best;
}

// 1 where the magnitude is a local maximum across the gradient direction.
Tensor non_max_mask(const Gradient& g) {
  const int h = g.mag.dim(0), w = g.mag.dim(1);
  Tensor keep({h, w});
  auto mag = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return g.mag[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double angle = std::atan2(g.gy[i], g.gx[i]) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      int dy = 0, dx = 1;
      if (angle >= 22.5 && angle < 67.5) {
        dy = 1;
        dx = 1;
      } else if (angle >= 67.5 && angle < 112.5) {
        dy = 1;
        dx = 0;
      } else if (angle >= 112.5 && angle < 157.5) {
        dy = 1;
        dx = -1;
      }
      const double m = g.mag[i];
      keep[i] = (m > 0.0 && m >= mag(y + dy, x + dx) && m >= mag(y - dy, x - dx)) ? 1.0 : 0.0;
    }
  return keep;
}

}  // namespace

std::array<double, 2> sample_thresholds(const EdgeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 41);
  for (;;) {
    const double low = rng.uniform(cfg.low_range[0], std::nextafter(cfg.low_range[1], 1e9));
    const double high = rng.uniform(cfg.high_range[0], std::nextafter(cfg.high_range[1], 1e9));
    if (low < high) return {low, high};
  }
}

Tensor extract_edges(const TensorImage& img, const EdgeConfig& cfg, std::uint64_t seed) {
  img.validate();
  const auto [low, high] = sample_thresholds(cfg, seed);
  const Gradient g = color_gradient(img, cfg.blur_sigma);
  const int h = img.height(), w = img.width();
  const Tensor keep = cfg.nms ? non_max_mask(g) : Tensor({h, w}, 1.0);
  Tensor edges({h, w});
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (keep[i] > 0 && g.mag[i] >= high) {
        edges[i] = 1.0;
        queue.emplace_back(y, x);
      }
    }
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
        if (edges[j] == 0.0 && keep[j] > 0 && g.mag[j] >= low) {
          edges[j] = 1.0;
          queue.emplace_back(yy, xx);
        }
      }
  }
  return edges;
}

Tensor morph(const Tensor& map, int kernel, bool dilate) {
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("morphology kernel must be odd and >= 1");
  if (kernel == 1) return map;
  const int h = map.dim(0), w = map.dim(1), r = kernel / 2;
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = dilate ? -1e300 : 1e300;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double s = map[static_cast<std::size_t>(clampi(y + dy, 0, h - 1)) * w + clampi(x + dx, 0, w - 1)];
          v = dilate ? std::max(v, s) : std::min(v, s);
        }
      out[static_cast<std::size_t>(y) * w + x] = v;
    }
  return out;
}

Tensor synth_sketch(const TensorImage& img, const EdgeConfig& cfg, std::uint64_t seed) {
  img.validate();
  const auto [low, high] = sample_thresholds(cfg, seed);
  Rng rng(seed, 43);
  const int kernel = cfg.morph_kernels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cfg.morph_kernels.size()) - 1))];
  const bool erode = rng.uniform() < cfg.erode_probability;
  const Gradient g = color_gradient(img, 1.5 * cfg.blur_sigma);
  const int h = img.height(), w = img.width();
  const Tensor keep = cfg.nms ? non_max_mask(g) : Tensor({h, w}, 1.0);
  Tensor soft({h, w});
  for (std::size_t i = 0; i < soft.size(); ++i)
    soft[i] = (keep[i] > 0 && g.mag[i] >= low) ? std::min(g.mag[i] / high, 1.0) : 0.0;
  return morph(soft, kernel, !erode);
}

TensorImage map_to_image(const Tensor& map) {
  TensorImage img(map.dim(0), map.dim(1));
  for (int y = 0; y < map.dim(0); ++y)
    for (int x = 0; x < map.dim(1); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 2.0 * map[static_cast<std::size_t>(y) * map.dim(1) + x] - 1.0;
  return img;
}

Tensor label_boundaries(const Tensor& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  Tensor b({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = mask[static_cast<std::size_t>(y) * w + x];
      const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k)
        if (ny[k] >= 0 && ny[k] < h && nx[k] >= 0 && nx[k] < w && mask[static_cast<std::size_t>(ny[k]) * w + nx[k]] != v)
          b[static_cast<std::size_t>(y) * w + x] = 1.0;
    }
  return b;
}

// ---- ingestion ---------------------------------------------------------------------

std::vector<CropOffset> crop_offsets(int count, int load_size, int crop_size, std::uint64_t seed) {
  if (crop_size < 1 || load_size < crop_size) throw ValidationError("need 1 <= crop_size <= load_size");
  std::vector<CropOffset> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(seed, 700 + static_cast<std::uint64_t>(i));
    out[i] = {rng.uniform_int(0, load_size - crop_size), rng.uniform_int(0, load_size - crop_size)};
  }
  return out;
}

std::vector<TensorImage> ingest(const fs::path& folder, const IngestOptions& options) {
  if (!fs::is_directory(folder)) throw ValidationError("'" + folder.string() + "' is not a directory");
  if (options.crop_size < 1 || options.load_size < options.crop_size)
    throw ValidationError("need 1 <= crop_size <= load_size");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(folder))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  const auto warn = options.warn ? options.warn : [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  const auto offsets = crop_offsets(static_cast<int>(files.size()), options.load_size, options.crop_size, options.seed);

  std::vector<TensorImage> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    TensorImage img;
    try {
      img = read_png(files[i]);
    } catch (const std::exception& e) {
      warn("skipping unreadable '" + files[i].string() + "': " + e.what());
      continue;
    }
    if (!options.train_mode) {
      out.push_back(resize_bilinear(img, options.crop_size, options.crop_size));
      continue;
    }
    const TensorImage loaded = resize_bilinear(img, options.load_size, options.load_size);
    TensorImage crop(options.crop_size, options.crop_size);
    for (int y = 0; y < options.crop_size; ++y)
      for (int x = 0; x < options.crop_size; ++x)
        for (int c = 0; c < 3; ++c) crop.at(y, x, c) = loaded.at(y + offsets[i].top, x + offsets[i].left, c);
    out.push_back(std::move(crop));
  }
  if (out.empty()) throw ValidationError("no readable PNG images in '" + folder.string() + "'");
  return out;
}

}  // namespace turbo::data
