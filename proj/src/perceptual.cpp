#include "turbo/perceptual.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "turbo/checkpoint.hpp"
#include "turbo/errors.hpp"
#include "turbo/rng.hpp"

namespace turbo::perceptual {

namespace {

// Smooth random images used once to calibrate stage statistics.
Tensor probe_batch(std::uint64_t seed) {
  constexpr int n = 8, size = 64;
  Rng rng(seed, 1);
  Tensor t({n, 3, size, size});
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double fx = rng.uniform(0.02, 0.4), fy = rng.uniform(0.02, 0.4);
      const double ph = rng.uniform(0, 6.28), amp = rng.uniform(0.3, 0.8), off = rng.uniform(-0.3, 0.3);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double v = off + amp * std::sin(fx * x + fy * y + ph) + rng.normal(0.0, 0.05);
          t.at(i, c, y, x) = std::clamp(v, -1.0, 1.0);
        }
    }
  }
  return t;
}

}  // namespace

FeatureNet::FeatureNet(FeatureNetConfig config) : config_(config) {
  Rng rng(config_.seed, 0);
  int in_c = 3;
  for (int s = 0; s < 4; ++s) {
    const int out_c = config_.channels[s];
    const double std = std::sqrt(2.0 / (in_c * 9));
    weights_[s] = ag::Var(rng.normal_tensor({out_c, in_c, 3, 3}, std));
    biases_[s] = ag::Var(rng.normal_tensor({out_c}, 0.1));
    in_c = out_c;
  }
  ag::NoGradGuard guard;
  ag::Var h(probe_batch(config_.seed));
  for (int s = 0; s < 4; ++s) {
    ag::Var raw = ag::silu(ag::conv2d(h, weights_[s], biases_[s], config_.strides[s], 1));
    const int c = raw.dim(1), n = raw.dim(0), hw = raw.dim(2) * raw.dim(3);
    shift_[s].assign(c, 0.0);
    gain_[s].assign(c, 1.0);
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0, sq = 0;
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < hw; ++k) {
          const double v = raw.value()[(static_cast<std::size_t>(i) * c + ch) * hw + k];
          sum += v;
          sq += v * v;
        }
      const double m = sum / (n * hw);
      const double var = std::max(sq / (n * hw) - m * m, 1e-6);
      shift_[s][ch] = m;
      gain_[s][ch] = 1.0 / std::sqrt(var);
    }
    h = ag::channel_affine(raw, shift_[s], gain_[s]);
  }
}

int FeatureNet::pooled_dim() const {
  int d = 0;
  for (int c : config_.channels) d += c;
  return d;
}

ag::Var FeatureNet::stage(int s, const ag::Var& h) const {
  ag::Var raw = ag::silu(ag::conv2d(h, weights_[s], biases_[s], config_.strides[s], 1));
  return ag::channel_affine(raw, shift_[s], gain_[s]);
}

std::array<ag::Var, 4> FeatureNet::features(const ag::Var& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3) throw ShapeError("FeatureNet expects [N,3,H,W]");
  std::array<ag::Var, 4> out;
  ag::Var h = images;
  for (int s = 0; s < 4; ++s) {
    h = stage(s, h);
    out[s] = h;
  }
  return out;
}

std::uint64_t FeatureNet::weight_checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (int s = 0; s < 4; ++s) {
    h = fnv1a(weights_[s].value().values(), h);
    h = fnv1a(biases_[s].value().values(), h);
    h = fnv1a(shift_[s], h);
    h = fnv1a(gain_[s], h);
  }
  return h;
}

// ---- perceptual distance ---------------------------------------------------

ag::Var lpips_from_features(const Features& fa, const Features& fb) {
  ag::Var total;
  for (int s = 0; s < 4; ++s) {
    ag::Var d = ag::mean(ag::square(ag::sub(ag::channel_unit_normalize(fa[s]), ag::channel_unit_normalize(fb[s]))));
    // per-channel weight 1/C turns the channel sum into a channel mean
    total = total.defined() ? ag::add(total, d) : d;
  }
  return total;
}

ag::Var lpips_like(const FeatureNet& net, const ag::Var& a, const ag::Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("lpips_like: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return lpips_from_features(net.features(a), net.features(b));
}

double lpips_like(const FeatureNet& net, const TensorImage& x, const TensorImage& y) {
  if (x.chw().shape() != y.chw().shape()) throw ShapeError("lpips_like: image shapes differ");
  ag::NoGradGuard guard;
  const std::array<TensorImage, 1> xs{x}, ys{y};
  return lpips_like(net, ag::Var(stack_images(xs)), ag::Var(stack_images(ys))).item();
}

// ---- structure distance ----------------------------------------------------

namespace {

Eigen::MatrixXd self_similarity(const Tensor& feat) {
  // feat: [1, C, H, W] -> tokens as columns
  const int c = feat.dim(1), t = feat.dim(2) * feat.dim(3);
  Eigen::MatrixXd tokens(c, t);
  for (int ch = 0; ch < c; ++ch)
    for (int k = 0; k < t; ++k) tokens(ch, k) = feat[static_cast<std::size_t>(ch) * t + k];
  for (int k = 0; k < t; ++k) {
    const double n = tokens.col(k).norm();
    tokens.col(k) /= std::max(n, 1e-12);
  }
  return tokens.transpose() * tokens;
}

}  // namespace

TensorImage structure_view(const TensorImage& img) {
  const int h = img.height(), w = img.width();
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  double mean = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mean += lum[static_cast<std::size_t>(y) * w + x] = luminance(img, y, x);
  mean /= static_cast<double>(lum.size());
  double var = 0.0;
  for (double v : lum) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / static_cast<double>(lum.size())), 1e-3);
  TensorImage out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(y, x, c) = std::clamp(0.5 * (lum[static_cast<std::size_t>(y) * w + x] - mean) / sd, -1.0, 1.0);
  return out;
}

double dino_struct_dist(const FeatureNet& net, const TensorImage& x, const TensorImage& y) {
  if (x.chw().shape() != y.chw().shape()) throw ShapeError("dino_struct_dist: image shapes differ");
  ag::NoGradGuard guard;
  const std::array<TensorImage, 2> pair{structure_view(x), structure_view(y)};
  const auto feats = net.features(ag::Var(stack_images(pair)));
  const Tensor& f = feats[3].value();
  const Tensor fx = f.reshaped({2, f.dim(1), f.dim(2), f.dim(3)});
  Tensor a({1, f.dim(1), f.dim(2), f.dim(3)}), b(a.shape());
  std::copy_n(fx.data(), a.size(), a.data());
  std::copy_n(fx.data() + a.size(), b.size(), b.data());
  const Eigen::MatrixXd sa = self_similarity(a), sb = self_similarity(b);
  return 100.0 * (sa - sb).cwiseAbs().mean();
}

// ---- feature statistics ----------------------------------------------------

Tensor pooled_features(const FeatureNet& net, std::span<const TensorImage> images) {
  const int d = net.pooled_dim();
  const int n = static_cast<int>(images.size());
  Tensor rows({n, d});
  constexpr int chunk = 16;
  ag::NoGradGuard guard;
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    std::vector<TensorImage> batch;
    for (int i = 0; i < count; ++i)
      batch.push_back(resize_bilinear(images[start + i], kStatsResolution, kStatsResolution));
    const auto feats = net.features(ag::Var(stack_images(batch)));
    int col = 0;
    for (int s = 0; s < 4; ++s) {
      const ag::Var pooled = ag::spatial_mean(feats[s]);
      const int c = pooled.dim(1);
      for (int i = 0; i < count; ++i)
        for (int ch = 0; ch < c; ++ch)
          rows[static_cast<std::size_t>(start + i) * d + col + ch] = pooled.value()[static_cast<std::size_t>(i) * c + ch];
      col += c;
    }
  }
  return rows;
}

FeatureStats stats_from_rows(const Tensor& rows) {
  const int n = rows.dim(0), d = rows.dim(1);
  if (n < 2) throw ValidationError("feature statistics need at least 2 images, got " + std::to_string(n));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    Eigen::Map<const Eigen::VectorXd> x(rows.data() + static_cast<std::size_t>(i) * d, d);
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(i + 1);
    m2.noalias() += delta * (x - mean).transpose();
  }
  Eigen::MatrixXd cov = m2 / static_cast<double>(n - 1);
  cov = (0.5 * (cov + cov.transpose())).eval();
  FeatureStats out;
  out.count = n;
  out.mean = Tensor({d});
  out.cov = Tensor({d, d});
  for (int i = 0; i < d; ++i) {
    out.mean[i] = mean(i);
    for (int j = 0; j < d; ++j) out.cov[static_cast<std::size_t>(i) * d + j] = cov(i, j);
  }
  return out;
}

FeatureStats fit_stats(std::span<const TensorImage> images, const FeatureNet& net) {
  if (images.size() < 2) throw ValidationError("fit_stats needs at least 2 images");
  return stats_from_rows(pooled_features(net, images));
}

namespace {

constexpr double kEigenTolerance = -1e-8;

Eigen::MatrixXd to_matrix(const Tensor& t) {
  const int d = t.dim(0);
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = t[static_cast<std::size_t>(i) * d + j];
  return m;
}

Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  Eigen::VectorXd out = ev;
  for (int i = 0; i < out.size(); ++i) {
    if (out(i) < kEigenTolerance)
      throw NumericalError(std::string("frechet_distance: ") + what + " has eigenvalue " + std::to_string(out(i)));
    out(i) = std::max(out(i), 0.0);
  }
  return out;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.size() != b.cov.size())
    throw ShapeError("frechet_distance: dimension mismatch");
  const int d = static_cast<int>(a.mean.size());
  Eigen::Map<const Eigen::VectorXd> mu_a(a.mean.data(), d), mu_b(b.mean.data(), d);
  const Eigen::MatrixXd sa = to_matrix(a.cov), sb = to_matrix(b.cov);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(0.5 * (sa + sa.transpose()));
  if (eig_a.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  const Eigen::VectorXd la = clamped_eigenvalues(eig_a.eigenvalues(), "Sigma_a");
  const Eigen::MatrixXd sqrt_a = eig_a.eigenvectors() * la.cwiseSqrt().asDiagonal() * eig_a.eigenvectors().transpose();
  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), the latter symmetric PSD.
  Eigen::MatrixXd inner = sqrt_a * sb * sqrt_a;
  inner = (0.5 * (inner + inner.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_m(inner, Eigen::EigenvaluesOnly);
  if (eig_m.info() != Eigen::Success) throw NumericalError("frechet_distance: eigendecomposition failed");
  const double tr_sqrt = clamped_eigenvalues(eig_m.eigenvalues(), "Sa^1/2 Sb Sa^1/2").cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double fid(std::span<const TensorImage> a, std::span<const TensorImage> b, const FeatureNet& net) {
  return frechet_distance(fit_stats(a, net), fit_stats(b, net));
}

void save_stats(const std::filesystem::path& dir, const FeatureStats& stats, std::uint64_t feature_net_seed) {
  Checkpoint ckpt;
  ckpt.tensors.push_back({"mean", stats.mean, false});
  ckpt.tensors.push_back({"cov", stats.cov, false});
  ckpt.manifest = {{"kind", "feature-stats"}, {"feature_net_seed", feature_net_seed}, {"count", stats.count}};
  save_checkpoint(dir, ckpt);
}

FeatureStats load_stats(const std::filesystem::path& dir, std::uint64_t* feature_net_seed) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.manifest.value("kind", "") != "feature-stats") throw ValidationError("not a feature-stats checkpoint");
  FeatureStats s;
  s.mean = ckpt.find("mean")->value;
  s.cov = ckpt.find("cov")->value;
  s.count = ckpt.manifest.at("count").get<int>();
  if (feature_net_seed) *feature_net_seed = ckpt.manifest.at("feature_net_seed").get<std::uint64_t>();
  return s;
}

}  // namespace turbo::perceptual

namespace turbo::perceptual {

std::shared_ptr<const FeatureNet> default_feature_net() {
  static const std::shared_ptr<const FeatureNet> net = std::make_shared<const FeatureNet>();
  return net;
}

}  // namespace turbo::perceptual
