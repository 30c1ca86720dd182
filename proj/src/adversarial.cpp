#include "turbo/adversarial.hpp"

#include <cmath>

#include "turbo/checkpoint.hpp"
#include "turbo/errors.hpp"
#include "turbo/rng.hpp"

namespace turbo {

using ag::Var;

Discriminator::Discriminator(std::shared_ptr<const perceptual::FeatureNet> net, std::uint64_t seed, int hidden)
    : net_(std::move(net)), hidden_(hidden) {
  if (!net_) throw ValidationError("discriminator needs a feature network");
  Rng rng(seed, 21);
  for (int s = kFirstHeadStage; s < 4; ++s) {
    const int c = net_->stage_channels(s);
    const std::string p = "head." + std::to_string(s);
    heads_.add(p + ".conv_a.weight", rng.normal_tensor({hidden, c, 3, 3}, std::sqrt(2.0 / (c * 9))), true);
    heads_.add(p + ".conv_a.bias", Tensor({hidden}), true);
    heads_.add(p + ".conv_b.weight", rng.normal_tensor({1, hidden, 1, 1}, 0.05), true);
    heads_.add(p + ".conv_b.bias", Tensor({1}), true);
  }
}

std::vector<Var> Discriminator::score(const Var& images) const {
  const auto feats = net_->features(images);
  std::vector<Var> maps;
  for (int s = kFirstHeadStage; s < 4; ++s) {
    const std::string p = "head." + std::to_string(s);
    Var h = ag::silu(ag::conv2d(feats[s], heads_.get(p + ".conv_a.weight"), heads_.get(p + ".conv_a.bias"), 1, 1));
    maps.push_back(ag::conv2d(h, heads_.get(p + ".conv_b.weight"), heads_.get(p + ".conv_b.bias"), 1, 0));
  }
  return maps;
}

void Discriminator::zero_heads() {
  for (const auto& p : heads_.all()) heads_.get(p.name).mutable_value().fill(0.0);
}

Discriminator Discriminator::clone() const {
  Discriminator d = *this;
  d.heads_ = heads_.clone();
  return d;
}

std::vector<Tensor> d_score(const Discriminator& d, const TensorImage& img) {
  if (!img.chw().all_finite()) throw ValidationError("d_score: non-finite input image");
  ag::NoGradGuard guard;
  const std::array<TensorImage, 1> batch{img};
  std::vector<Tensor> out;
  for (const Var& m : d.score(Var(stack_images(batch)))) out.push_back(m.value());
  return out;
}

Var bce_over_maps(const std::vector<Var>& maps, double target) {
  Var total;
  for (const Var& m : maps) {
    Var l = ag::bce_with_logits(m, target, kLogitClamp);
    total = total.defined() ? ag::add(total, l) : l;
  }
  return ag::scale(total, 1.0 / static_cast<double>(maps.size()));
}

Loss gan_loss_d(const Discriminator& d, const Var& real, const Var& fake) {
  if (real.shape() != fake.shape())
    throw ShapeError("gan_loss_d: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
  const Var l_real = bce_over_maps(d.score(real), 1.0);
  const Var l_fake = bce_over_maps(d.score(ag::detach(fake)), 0.0);
  Loss out{ag::add(l_real, l_fake), {}};
  out.report.add("d_real", l_real.item(), 1.0);
  out.report.add("d_fake", l_fake.item(), 1.0);
  return out;
}

Loss gan_loss_g(const Discriminator& d, const Var& fake) {
  const Var l = bce_over_maps(d.score(fake), 1.0);
  Loss out{l, {}};
  out.report.add("g_adv", l.item(), 1.0);
  return out;
}

void save_discriminator(const std::filesystem::path& dir, const Discriminator& d) {
  Checkpoint ckpt;
  ckpt.tensors = records_from(d.heads());
  ckpt.manifest = {{"kind", "discriminator"}, {"feature_net_seed", d.net().seed()}};
  save_checkpoint(dir, ckpt);
}

void load_discriminator(const std::filesystem::path& dir, Discriminator& d) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.manifest.value("kind", "") != "discriminator") throw ValidationError("not a discriminator checkpoint");
  assign_records(d.heads(), ckpt.tensors);
}

}  // namespace turbo
