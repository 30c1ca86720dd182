#include "turbo/objectives.hpp"

#include <cmath>

#include "turbo/errors.hpp"

namespace turbo {

using ag::Var;

void LossWeights::validate() const {
  for (double v : {lambda_idt, lambda_gan, lambda_clip, lambda_l1, lambda_lpips})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be finite and nonnegative");
}

nlohmann::json LossWeights::to_json() const {
  return {{"lambda_idt", lambda_idt},
          {"lambda_gan", lambda_gan},
          {"lambda_clip", lambda_clip},
          {"lambda_l1", lambda_l1},
          {"lambda_lpips", lambda_lpips}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j, LossWeights base) {
  base.lambda_idt = j.value("lambda_idt", base.lambda_idt);
  base.lambda_gan = j.value("lambda_gan", base.lambda_gan);
  base.lambda_clip = j.value("lambda_clip", base.lambda_clip);
  base.lambda_l1 = j.value("lambda_l1", base.lambda_l1);
  base.lambda_lpips = j.value("lambda_lpips", base.lambda_lpips);
  base.validate();
  return base;
}

Translator bind_translator(const GeneratorState& state, Rng* noise) {
  return [&state, noise](const Var& x, int domain) {
    const Shape zs{x.dim(0), kLatentChannels, x.dim(2) / kDownsampleFactor, x.dim(3) / kDownsampleFactor};
    const Var z(noise ? noise->normal_tensor(zs) : Tensor(zs));
    const std::vector<int> ids(static_cast<std::size_t>(x.dim(0)), domain);
    return generate(state, x, z, 1.0, ids);
  };
}

NoisyTranslator bind_noisy_translator(const GeneratorState& state, int domain) {
  return [&state, domain](const Var& x, const Var& z, double gamma) {
    const std::vector<int> ids(static_cast<std::size_t>(x.dim(0)), domain);
    return generate(state, x, z, gamma, ids);
  };
}

Var rec_distance(const Var& a, const Var& b, const LossWeights& w, const perceptual::FeatureNet& net) {
  if (a.shape() != b.shape())
    throw ShapeError("rec_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Var out = ag::scale(ag::mean_abs_diff(a, b), w.lambda_l1);
  if (w.lambda_lpips != 0.0) out = ag::add(out, ag::scale(perceptual::lpips_like(net, a, b), w.lambda_lpips));
  return out;
}

double rec_distance(const TensorImage& a, const TensorImage& b, const LossWeights& w,
                    const perceptual::FeatureNet& net) {
  ag::NoGradGuard guard;
  const std::array<TensorImage, 1> as{a}, bs{b};
  return rec_distance(Var(stack_images(as)), Var(stack_images(bs)), w, net).item();
}

namespace {

void check_codes(int cx, int cy) {
  if (cx == cy) throw ValidationError("source and target domain codes must differ");
}

void check_batch(const Var& x, const Var& y) {
  if (x.shape() != y.shape())
    throw ShapeError("batches differ in shape: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
}

nlohmann::json weights_meta(const LossWeights& w) { return w.to_json(); }

}  // namespace

Loss cycle_loss(const Translator& g, const Var& x, const Var& y, int cx, int cy, const LossWeights& w,
                const perceptual::FeatureNet& net) {
  check_codes(cx, cy);
  check_batch(x, y);
  const Var lx = rec_distance(g(g(x, cy), cx), x, w, net);
  const Var ly = rec_distance(g(g(y, cx), cy), y, w, net);
  Loss out{ag::add(lx, ly), {}};
  out.report.add("cycle_x", lx.item(), 1.0);
  out.report.add("cycle_y", ly.item(), 1.0);
  out.report.meta = weights_meta(w);
  return out;
}

Loss identity_loss(const Translator& g, const Var& x, const Var& y, int cx, int cy, const LossWeights& w,
                   const perceptual::FeatureNet& net) {
  check_codes(cx, cy);
  check_batch(x, y);
  const Var ly = rec_distance(g(y, cy), y, w, net);
  const Var lx = rec_distance(g(x, cx), x, w, net);
  Loss out{ag::add(lx, ly), {}};
  out.report.add("identity_x", lx.item(), 1.0);
  out.report.add("identity_y", ly.item(), 1.0);
  out.report.meta = weights_meta(w);
  return out;
}

UnpairedResult unpaired_objective(const Translator& g, const Discriminator* d_x, const Discriminator* d_y,
                                  const Var& x, const Var& y, int cx, int cy, const LossWeights& w,
                                  const perceptual::FeatureNet& net) {
  if (!d_x || !d_y) throw ValidationError("unpaired objective needs both discriminators");
  check_codes(cx, cy);
  check_batch(x, y);
  w.validate();
  UnpairedResult r;
  r.fake_y = g(x, cy);
  r.fake_x = g(y, cx);
  const Var cycle = ag::add(rec_distance(g(r.fake_y, cx), x, w, net), rec_distance(g(r.fake_x, cy), y, w, net));
  Var total = cycle;
  double idt_value = 0.0, gan_value = 0.0;
  if (w.lambda_idt != 0.0) {
    const Var idt = ag::add(rec_distance(g(y, cy), y, w, net), rec_distance(g(x, cx), x, w, net));
    idt_value = idt.item();
    total = ag::add(total, ag::scale(idt, w.lambda_idt));
  }
  if (w.lambda_gan != 0.0) {
    const Var gan = ag::add(gan_loss_g(*d_y, r.fake_y).total, gan_loss_g(*d_x, r.fake_x).total);
    gan_value = gan.item();
    total = ag::add(total, ag::scale(gan, w.lambda_gan));
  }
  r.loss.total = total;
  r.loss.report.add("cycle", cycle.item(), 1.0);
  r.loss.report.add("identity", idt_value, w.lambda_idt);
  r.loss.report.add("gan", gan_value, w.lambda_gan);
  r.loss.report.meta = weights_meta(w);
  return r;
}

// ---- alignment surrogate ----------------------------------------------------------

AlignmentHead::AlignmentHead(std::shared_ptr<const perceptual::FeatureNet> net, int embed_dim, std::uint64_t seed)
    : net_(std::move(net)) {
  if (!net_) throw ValidationError("alignment head needs a feature network");
  Rng rng(seed, 31);
  for (int s = 0; s < 4; ++s) {
    const int c = net_->stage_channels(s);
    params_.add("align." + std::to_string(s) + ".weight", rng.normal_tensor({embed_dim, c}, 1.0 / std::sqrt(c)), true);
  }
  params_.add("align.bias", Tensor({embed_dim}), true);
}

Var AlignmentHead::project(const Var& images) const {
  const auto feats = net_->features(images);
  Var out;
  for (int s = 0; s < 4; ++s) {
    const Var& w = params_.get("align." + std::to_string(s) + ".weight");
    const Var term = ag::linear(ag::spatial_mean(feats[s]), w, s == 0 ? params_.get("align.bias") : Var());
    out = out.defined() ? ag::add(out, term) : term;
  }
  return out;
}

namespace {

Var tiled_embedding(const Tensor& embedding, int n) {
  const int e = static_cast<int>(embedding.size());
  Tensor t({n, e});
  for (int i = 0; i < n; ++i) std::copy_n(embedding.data(), e, t.data() + static_cast<std::size_t>(i) * e);
  return Var(t);
}

}  // namespace

Var AlignmentHead::alignment(const Var& images, const Tensor& embedding) const {
  const Var p = project(images);
  if (p.dim(1) != static_cast<int>(embedding.size())) throw ShapeError("alignment: embedding width mismatch");
  return ag::mean(ag::row_cosine(p, tiled_embedding(embedding, p.dim(0))));
}

Loss AlignmentHead::head_loss(const Var& real, const Var& inputs, const Tensor& embedding) const {
  const Var pos = ag::add_scalar(ag::scale(alignment(real, embedding), -1.0), 1.0);
  const Var p = project(inputs);
  const Var neg = ag::mean(ag::square(ag::row_cosine(p, tiled_embedding(embedding, p.dim(0)))));
  Loss out{ag::add(pos, neg), {}};
  out.report.add("align_real", pos.item(), 1.0);
  out.report.add("align_input", neg.item(), 1.0);
  return out;
}

Tensor domain_embedding(const GeneratorState& state, int domain) {
  const Tensor& table = state.params.get("domain.embedding").value();
  const Tensor& delta = state.params.get("domain.embedding_delta").value();
  const int e = table.dim(1);
  Tensor out({e});
  for (int i = 0; i < e; ++i) {
    const std::size_t k = static_cast<std::size_t>(domain) * e + i;
    out[i] = table[k] + delta[k];
  }
  return out;
}

PairedResult paired_objective(const Translator& g, const Discriminator* d_y, const AlignmentHead* head,
                              const Var& x, const Var& y, int c, const Tensor& embedding, const LossWeights& w,
                              const perceptual::FeatureNet& net) {
  if (x.value().rank() != 4 || y.value().rank() != 4 || x.dim(0) != y.dim(0))
    throw ShapeError("paired objective needs aligned input/target batches");
  w.validate();
  if (w.lambda_gan != 0.0 && !d_y) throw ValidationError("paired objective needs a discriminator when lambda_gan > 0");
  if (w.lambda_clip != 0.0 && !head) throw ValidationError("paired objective needs an alignment head when lambda_clip > 0");
  PairedResult r;
  r.fake = g(x, c);
  const Var rec = rec_distance(r.fake, y, w, net);
  Var total = rec;
  double gan_value = 0.0, clip_value = 0.0;
  if (w.lambda_gan != 0.0) {
    const Var gan = gan_loss_g(*d_y, r.fake).total;
    gan_value = gan.item();
    total = ag::add(total, ag::scale(gan, w.lambda_gan));
  }
  if (w.lambda_clip != 0.0) {
    const Var clip = ag::add_scalar(ag::scale(head->alignment(r.fake, embedding), -1.0), 1.0);
    clip_value = clip.item();
    total = ag::add(total, ag::scale(clip, w.lambda_clip));
  }
  r.loss.total = total;
  r.loss.report.add("rec", rec.item(), 1.0);
  r.loss.report.add("gan", gan_value, w.lambda_gan);
  r.loss.report.add("clip", clip_value, w.lambda_clip);
  r.loss.report.meta = weights_meta(w);
  return r;
}

Loss diversity_loss(const NoisyTranslator& g, const Var& x, const Var& y, const Var& z, double gamma,
                    const LossWeights& w, const perceptual::FeatureNet& net, Var* output) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
  const Var out = g(x, z, gamma);
  if (output) *output = out;
  const Var rec = rec_distance(out, y, w, net);
  Loss l{ag::scale(rec, gamma), {}};
  l.report.add("rec", rec.item(), gamma);
  l.report.meta = weights_meta(w);
  l.report.meta["gamma"] = gamma;
  return l;
}

LossLog::LossLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw ValidationError("cannot open loss log '" + path.string() + "'");
}

void LossLog::write(long step, const std::string& phase, const LossReport& report) {
  nlohmann::json rec = report.to_json();
  rec["step"] = step;
  rec["phase"] = phase;
  out_ << rec.dump() << '\n';
  out_.flush();
}

}  // namespace turbo
