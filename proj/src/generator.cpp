#include "turbo/generator.hpp"

#include <cmath>
#include <optional>

#include "turbo/checkpoint.hpp"
#include "turbo/errors.hpp"

namespace turbo {

using ag::Var;

std::string to_string(BranchKind kind) {
  switch (kind) {
    case BranchKind::direct: return "direct";
    case BranchKind::controlnet: return "controlnet";
    case BranchKind::adapter: return "adapter";
  }
  return "direct";
}

BranchKind parse_branch_kind(const std::string& text) {
  if (text == "direct") return BranchKind::direct;
  if (text == "controlnet" || text == "controlnet-style") return BranchKind::controlnet;
  if (text == "adapter" || text == "lightweight-adapter") return BranchKind::adapter;
  throw ValidationError("unknown branch kind '" + text + "'");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"enc_channels", enc_channels}, {"core_channels", core_channels}, {"embed_dim", embed_dim},
          {"lora_rank", lora_rank},       {"lora_alpha", lora_alpha},       {"domains", domains},
          {"skips", skips},               {"branch", to_string(branch)},    {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  if (j.contains("enc_channels")) c.enc_channels = j.at("enc_channels").get<std::array<int, 4>>();
  c.core_channels = j.value("core_channels", c.core_channels);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  if (j.contains("domains")) c.domains = j.at("domains").get<std::vector<std::string>>();
  c.skips = j.value("skips", c.skips);
  c.branch = parse_branch_kind(j.value("branch", std::string("direct")));
  c.seed = j.value("seed", c.seed);
  return c;
}

int GeneratorState::domain_index(const std::string& name) const {
  for (std::size_t i = 0; i < config.domains.size(); ++i)
    if (config.domains[i] == name) return static_cast<int>(i);
  throw ValidationError("unknown domain '" + name + "'");
}

GeneratorState GeneratorState::clone() const {
  GeneratorState s;
  s.config = config;
  s.params = params.clone();
  s.pretrained = pretrained;
  s.latent_scale = latent_scale;
  return s;
}

// ---- construction ------------------------------------------------------------

namespace {

struct Builder {
  ParamStore& store;
  Rng& rng;
  const GeneratorConfig& cfg;

  void lora(const std::string& name, int cout, int k) {
    const int r = std::max(1, std::min({cfg.lora_rank, cout, k}));
    store.add(name + ".lora_down", rng.normal_tensor({r, k}, 1.0 / std::sqrt(static_cast<double>(k))), true);
    store.add(name + ".lora_up", Tensor({cout, r}), true);
  }

  // gain: init std multiplier on top of He scaling
  void conv(const std::string& name, int cout, int cin, int k, bool with_lora, double gain = 1.0,
            bool trainable = false) {
    const int fan_in = cin * k * k;
    store.add(name + ".weight", rng.normal_tensor({cout, cin, k, k}, gain * std::sqrt(2.0 / fan_in)), trainable);
    store.add(name + ".bias", Tensor({cout}), trainable);
    if (with_lora) lora(name, cout, fan_in);
  }

  void zero_conv(const std::string& name, int cout, int cin) {
    store.add(name + ".weight", Tensor({cout, cin, 1, 1}), true);
    store.add(name + ".bias", Tensor({cout}), true);
  }

  void linear(const std::string& name, int out, int in, bool with_lora, bool trainable = false) {
    store.add(name + ".weight", rng.normal_tensor({out, in}, 0.5 / std::sqrt(static_cast<double>(in))), trainable);
    store.add(name + ".bias", Tensor({out}), trainable);
    if (with_lora) lora(name, out, in);
  }

  void block(const std::string& name, int cc, bool with_lora, bool trainable = false) {
    conv(name + ".conv_a", cc, cc, 3, with_lora, 1.0, trainable);
    conv(name + ".conv_b", cc, cc, 3, with_lora, 0.5, trainable);
    linear(name + ".film", 2 * cc, cfg.embed_dim, with_lora, trainable);
  }
};

// Copies a frozen core layer into a trainable branch layer.
void clone_layer(ParamStore& store, const std::string& from, const std::string& to) {
  for (const char* suffix : {".weight", ".bias"})
    store.add(to + suffix, store.get(from + suffix).value(), true);
}

void add_branch(ParamStore& store, Rng& rng, const GeneratorConfig& cfg) {
  Builder b{store, rng, cfg};
  const int cc = cfg.core_channels;
  if (cfg.branch == BranchKind::controlnet) {
    b.conv("branch.cn.hint0", 8, 3, 3, false, 1.0, true);
    b.conv("branch.cn.hint1", 16, 8, 3, false, 1.0, true);
    store.add("branch.cn.hint2.weight", Tensor({cc, 16, 3, 3}), true);
    store.add("branch.cn.hint2.bias", Tensor({cc}), true);
    clone_layer(store, "core.conv_in", "branch.cn.conv_in");
    for (const char* part : {".conv_a", ".conv_b", ".film"}) {
      clone_layer(store, std::string("core.block1") + part, std::string("branch.cn.block1") + part);
      clone_layer(store, std::string("core.block2") + part, std::string("branch.cn.block2") + part);
    }
    clone_layer(store, "core.down", "branch.cn.down");
    b.zero_conv("branch.cn.zc1", cc, cc);
    b.zero_conv("branch.cn.zc2", cc, cc);
  } else if (cfg.branch == BranchKind::adapter) {
    b.conv("branch.ad.conv0", 8, 3, 3, false, 1.0, true);
    b.conv("branch.ad.conv1", 16, 8, 3, false, 1.0, true);
    b.conv("branch.ad.conv2", cc, 16, 3, false, 1.0, true);
    b.conv("branch.ad.conv3", cc, cc, 3, false, 1.0, true);
    b.zero_conv("branch.ad.zc1", cc, cc);
    b.zero_conv("branch.ad.zc2", cc, cc);
  }
}

void validate_config(const GeneratorConfig& config) {
  if (config.domains.size() < 2) throw ValidationError("generator needs at least two domains");
  if (config.lora_rank < 1) throw ValidationError("lora_rank must be >= 1");
  if (config.core_channels < 1 || config.embed_dim < 1) throw ValidationError("channel counts must be positive");
  for (int c : config.enc_channels)
    if (c < 1) throw ValidationError("channel counts must be positive");
  for (std::size_t i = 0; i < config.domains.size(); ++i)
    for (std::size_t j = i + 1; j < config.domains.size(); ++j)
      if (config.domains[i] == config.domains[j]) throw ValidationError("duplicate domain '" + config.domains[i] + "'");
}

// Backbone weights, LoRA pairs, first-layer delta, skips and embeddings; no branch.
GeneratorState build_base(const GeneratorConfig& config, Rng& rng) {
  GeneratorState state;
  state.config = config;
  Builder b{state.params, rng, config};
  const auto& ec = config.enc_channels;
  const int cc = config.core_channels;

  b.conv("enc.conv_in", ec[0], 3, 3, true);
  b.conv("enc.down1", ec[1], ec[0], 3, true);
  b.conv("enc.down2", ec[2], ec[1], 3, true);
  b.conv("enc.down3", ec[3], ec[2], 3, true);
  b.conv("enc.mid.a", ec[3], ec[3], 3, true);
  b.conv("enc.mid.b", ec[3], ec[3], 3, true, 0.5);
  b.conv("enc.out", kLatentChannels, ec[3], 3, true, 0.5);

  b.conv("core.conv_in", cc, kLatentChannels, 3, false);
  if (config.branch == BranchKind::direct) {
    state.params.add("core.conv_in.delta_weight", Tensor({cc, kLatentChannels, 3, 3}), true);
    state.params.add("core.conv_in.delta_bias", Tensor({cc}), true);
  }
  b.block("core.block1", cc, true);
  b.conv("core.down", cc, cc, 3, true);
  b.block("core.block2", cc, true);
  b.conv("core.up", cc, cc, 3, true);
  b.block("core.block3", cc, true);
  b.conv("core.out", kLatentChannels, cc, 3, true, 0.5);

  b.conv("dec.conv_in", ec[3], kLatentChannels, 3, true);
  b.conv("dec.mid.a", ec[3], ec[3], 3, true);
  b.conv("dec.mid.b", ec[3], ec[3], 3, true, 0.5);
  b.conv("dec.up2", ec[2], ec[3], 3, true);
  b.conv("dec.up1", ec[1], ec[2], 3, true);
  b.conv("dec.up0", ec[0], ec[1], 3, true);
  b.conv("dec.out", 3, ec[0], 3, true, 0.5);

  if (config.skips)
    for (int i = 0; i < 4; ++i) b.zero_conv("skip." + std::to_string(i), ec[i], ec[i]);

  const int d = static_cast<int>(config.domains.size());
  state.params.add("domain.embedding", rng.normal_tensor({d, config.embed_dim}, 1.0), false);
  state.params.add("domain.embedding_delta", Tensor({d, config.embed_dim}), true);
  return state;
}

}  // namespace

GeneratorState init_generator(const GeneratorConfig& config) {
  validate_config(config);
  Rng rng(config.seed, 11);
  GeneratorState state = build_base(config, rng);
  add_branch(state.params, rng, config);
  return state;
}

GeneratorState adapt_backbone(const GeneratorState& backbone, bool skips, BranchKind branch) {
  GeneratorConfig config = backbone.config;
  config.skips = skips;
  config.branch = branch;
  validate_config(config);
  Rng rng(config.seed, 11);
  GeneratorState state = build_base(config, rng);
  for (const auto& p : state.params.all()) {
    if (p.trainable) continue;
    if (!backbone.params.contains(p.name) || backbone.params.is_trainable(p.name))
      throw ValidationError("backbone lacks frozen weight '" + p.name + "'");
    const Tensor& src = backbone.params.get(p.name).value();
    if (src.shape() != p.var.value().shape()) throw ShapeError("backbone weight '" + p.name + "' has a different shape");
    state.params.get(p.name).mutable_value() = src;
  }
  state.pretrained = backbone.pretrained;
  state.latent_scale = backbone.latent_scale;
  add_branch(state.params, rng, config);
  return state;
}

std::vector<std::string> lora_layers(const GeneratorState& state) {
  std::vector<std::string> out;
  const std::string suffix = ".lora_up";
  for (const auto& p : state.params.all())
    if (p.name.size() > suffix.size() && p.name.ends_with(suffix))
      out.push_back(p.name.substr(0, p.name.size() - suffix.size()));
  return out;
}

LoraParams lora_params(const GeneratorState& state, const std::string& layer) {
  if (!state.params.contains(layer + ".lora_up")) throw ValidationError("layer '" + layer + "' has no LoRA pair");
  LoraParams lp;
  lp.down = state.params.get(layer + ".lora_down").value();
  lp.up = state.params.get(layer + ".lora_up").value();
  lp.rank = lp.down.dim(0);
  lp.scale = state.config.lora_alpha / lp.rank;
  return lp;
}

Tensor merge_lora(const Tensor& theta0, const LoraParams& delta, double gamma) {
  if (delta.up.rank() != 2 || delta.down.rank() != 2 || delta.up.dim(1) != delta.down.dim(0))
    throw ShapeError("merge_lora: incompatible LoRA factors");
  const int cout = delta.up.dim(0), r = delta.up.dim(1), k = delta.down.dim(1);
  if (theta0.rank() < 2 || theta0.dim(0) != cout || static_cast<int>(theta0.size()) != cout * k)
    throw ShapeError("merge_lora: base weight " + shape_str(theta0.shape()) + " does not match LoRA [" +
                     std::to_string(cout) + "x" + std::to_string(k) + "]");
  Tensor out = theta0;
  if (gamma == 0.0) return out;
  const double s = gamma * delta.scale;
  for (int o = 0; o < cout; ++o)
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int q = 0; q < r; ++q)
        acc += delta.up[static_cast<std::size_t>(o) * r + q] * delta.down[static_cast<std::size_t>(q) * k + j];
      out[static_cast<std::size_t>(o) * k + j] += s * acc;
    }
  return out;
}

// ---- forward -----------------------------------------------------------------

namespace {

// Resolves effective weights for one forward pass.
struct Ctx {
  const GeneratorState& s;
  double gamma;  // scales every adaptation delta
  bool adapted;  // false: frozen backbone only

  const Var& p(const std::string& name) const { return s.params.get(name); }

  Var weight(const std::string& layer) const {
    const Var& w0 = p(layer + ".weight");
    if (!adapted || gamma == 0.0) return w0;
    if (layer == "core.conv_in" && s.params.contains("core.conv_in.delta_weight"))
      return ag::add(w0, ag::scale(p("core.conv_in.delta_weight"), gamma));
    if (!s.params.contains(layer + ".lora_up")) return w0;
    const Var& down = p(layer + ".lora_down");
    Var delta = ag::reshape(ag::matmul(p(layer + ".lora_up"), down), w0.shape());
    return ag::add(w0, ag::scale(delta, gamma * s.config.lora_alpha / down.dim(0)));
  }

  Var bias(const std::string& layer) const {
    const Var& b0 = p(layer + ".bias");
    if (adapted && gamma != 0.0 && layer == "core.conv_in" && s.params.contains("core.conv_in.delta_bias"))
      return ag::add(b0, ag::scale(p("core.conv_in.delta_bias"), gamma));
    return b0;
  }

  Var conv(const std::string& layer, const Var& x, int stride = 1) const {
    const Var w = weight(layer);
    return ag::conv2d(x, w, bias(layer), stride, w.dim(2) / 2);
  }

  Var embedding(std::span<const int> ids) const {
    Var table = p("domain.embedding");
    if (adapted && gamma != 0.0) table = ag::add(table, ag::scale(p("domain.embedding_delta"), gamma));
    return ag::gather_rows(table, ids);
  }

  Var block(const std::string& name, const Var& x, const Var& emb) const {
    const Var ss = ag::linear(emb, weight(name + ".film"), bias(name + ".film"));
    Var h = ag::silu(ag::film(conv(name + ".conv_a", x), ss));
    h = conv(name + ".conv_b", h);
    return ag::add(x, h);
  }
};

struct Residuals {
  Var r1, r2;
};

Var core_forward(const Ctx& c, const Var& latent, const Var& emb, const Residuals& res) {
  Var h = c.conv("core.conv_in", latent);
  Var e1 = c.block("core.block1", h, emb);
  if (res.r1.defined()) e1 = ag::add(e1, res.r1);
  Var d = ag::silu(c.conv("core.down", e1, 2));
  Var e2 = c.block("core.block2", d, emb);
  if (res.r2.defined()) e2 = ag::add(e2, res.r2);
  Var u = ag::silu(c.conv("core.up", ag::upsample2x(e2, e1.dim(2), e1.dim(3))));
  u = ag::add(u, e1);
  return c.conv("core.out", c.block("core.block3", u, emb));
}

Var decode_forward(const Ctx& c, const Var& latent, const SkipFeatures* skips) {
  const int lh = latent.dim(2), lw = latent.dim(3);
  Var h = ag::silu(c.conv("dec.conv_in", ag::scale(latent, 1.0 / c.s.latent_scale)));
  if (skips) h = ag::add(h, (*skips)[3]);
  Var m = c.conv("dec.mid.b", ag::silu(c.conv("dec.mid.a", h)));
  h = ag::add(h, m);
  const char* ups[3] = {"dec.up2", "dec.up1", "dec.up0"};
  for (int i = 0; i < 3; ++i) {
    const int f = 2 << i;
    h = ag::silu(c.conv(ups[i], ag::upsample2x(h, lh * f, lw * f)));
    if (skips) h = ag::add(h, (*skips)[2 - i]);
  }
  return ag::tanh(c.conv("dec.out", h));
}

Residuals branch_residuals(const Ctx& c, const Var& x, const Var& z, const Var& emb) {
  Residuals r;
  if (c.s.config.branch == BranchKind::controlnet) {
    Var hint = ag::silu(c.conv("branch.cn.hint0", x, 2));
    hint = ag::silu(c.conv("branch.cn.hint1", hint, 2));
    hint = c.conv("branch.cn.hint2", hint, 2);
    Var h = ag::add(c.conv("branch.cn.conv_in", z), hint);
    Var c1 = c.block("branch.cn.block1", h, emb);
    r.r1 = c.conv("branch.cn.zc1", c1);
    Var c2 = c.block("branch.cn.block2", ag::silu(c.conv("branch.cn.down", c1, 2)), emb);
    r.r2 = c.conv("branch.cn.zc2", c2);
  } else if (c.s.config.branch == BranchKind::adapter) {
    Var a = ag::silu(c.conv("branch.ad.conv0", x, 2));
    a = ag::silu(c.conv("branch.ad.conv1", a, 2));
    a = ag::silu(c.conv("branch.ad.conv2", a, 2));
    r.r1 = c.conv("branch.ad.zc1", a);
    r.r2 = c.conv("branch.ad.zc2", ag::silu(c.conv("branch.ad.conv3", a, 2)));
  }
  if (c.gamma != 1.0 && r.r1.defined()) {
    r.r1 = ag::scale(r.r1, c.gamma);
    r.r2 = ag::scale(r.r2, c.gamma);
  }
  return r;
}

void check_images(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("expected images [N,3,H,W], got " + shape_str(s));
  if (s[2] % kDownsampleFactor != 0 || s[3] % kDownsampleFactor != 0)
    throw ShapeError("image dims " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " not divisible by 8");
}

void check_latent(const Var& z, int n, int h, int w) {
  const Shape expect{n, kLatentChannels, h, w};
  if (z.shape() != expect) throw ShapeError("noise shape " + shape_str(z.shape()) + ", expected " + shape_str(expect));
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1], got " + std::to_string(gamma));
}

void check_domains(const GeneratorState& state, std::span<const int> ids, int n) {
  if (static_cast<int>(ids.size()) != n) throw ShapeError("one domain id per batch item required");
  for (int id : ids)
    if (id < 0 || id >= static_cast<int>(state.config.domains.size()))
      throw ValidationError("domain id " + std::to_string(id) + " out of range");
}

}  // namespace

Encoded encode(const GeneratorState& state, const Var& x, double gamma) {
  check_images(x);
  const Ctx c{state, gamma, gamma != 0.0};
  Encoded e;
  e.taps[0] = ag::silu(c.conv("enc.conv_in", x));
  e.taps[1] = ag::silu(c.conv("enc.down1", e.taps[0], 2));
  e.taps[2] = ag::silu(c.conv("enc.down2", e.taps[1], 2));
  Var h = ag::silu(c.conv("enc.down3", e.taps[2], 2));
  e.taps[3] = ag::add(h, c.conv("enc.mid.b", ag::silu(c.conv("enc.mid.a", h))));
  e.latent = ag::scale(c.conv("enc.out", e.taps[3]), state.latent_scale);
  return e;
}

std::pair<LatentMap, std::array<Tensor, 4>> encode(const TensorImage& x, const GeneratorState& state) {
  x.validate();
  ag::NoGradGuard guard;
  const std::array<TensorImage, 1> batch{x};
  const Encoded e = encode(state, Var(stack_images(batch)), 1.0);
  std::array<Tensor, 4> taps;
  for (int i = 0; i < 4; ++i) taps[i] = batch_item(e.taps[i].value(), 0);
  return {LatentMap(batch_item(e.latent.value(), 0)), taps};
}

SkipFeatures skip_contribution(const GeneratorState& state, const SkipFeatures& taps, double gamma) {
  check_gamma(gamma);
  if (!state.config.skips) throw ValidationError("generator has no skip connections");
  const Ctx c{state, gamma, true};
  SkipFeatures out;
  for (int i = 0; i < 4; ++i) out[i] = ag::scale(c.conv("skip." + std::to_string(i), taps[i]), gamma);
  return out;
}

Var generate(const GeneratorState& state, const Var& x, const Var& z, double gamma, std::span<const int> domains) {
  check_images(x);
  check_gamma(gamma);
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  check_latent(z, n, h / kDownsampleFactor, w / kDownsampleFactor);
  check_domains(state, domains, n);
  const Ctx c{state, gamma, true};
  const Var emb = c.embedding(domains);

  if (state.config.branch != BranchKind::direct) {
    const Residuals res = gamma == 0.0 ? Residuals{} : branch_residuals(c, x, z, emb);
    return decode_forward(c, core_forward(c, z, emb, res), nullptr);
  }

  Var latent_in;
  std::optional<SkipFeatures> skips;
  if (gamma == 0.0) {
    latent_in = z;
  } else {
    const Encoded e = encode(state, x, gamma);
    latent_in = gamma == 1.0 ? e.latent : ag::add(ag::scale(e.latent, gamma), ag::scale(z, 1.0 - gamma));
    if (state.config.skips) skips = skip_contribution(state, e.taps, gamma);
  }
  const Var out_latent = core_forward(c, latent_in, emb, {});
  return decode_forward(c, out_latent, skips ? &*skips : nullptr);
}

Var backbone_forward(const GeneratorState& state, const Var& latent, std::span<const int> domains) {
  if (latent.value().rank() != 4 || latent.dim(1) != kLatentChannels)
    throw ShapeError("backbone latent must be [N,4,h,w], got " + shape_str(latent.shape()));
  check_domains(state, domains, latent.dim(0));
  const Ctx c{state, 0.0, false};
  return decode_forward(c, core_forward(c, latent, c.embedding(domains), {}), nullptr);
}

Var backbone_core(const GeneratorState& state, const Var& latent, std::span<const int> domains) {
  if (latent.value().rank() != 4 || latent.dim(1) != kLatentChannels)
    throw ShapeError("backbone latent must be [N,4,h,w], got " + shape_str(latent.shape()));
  check_domains(state, domains, latent.dim(0));
  const Ctx c{state, 0.0, false};
  return core_forward(c, latent, c.embedding(domains), {});
}

Var backbone_decode(const GeneratorState& state, const Var& latent) {
  const Ctx c{state, 0.0, false};
  return decode_forward(c, latent, nullptr);
}

namespace {

struct SingleInputs {
  Var x, z;
  std::array<int, 1> ids;
};

SingleInputs prepare_single(const TensorImage& x, const LatentMap& z, double gamma, const std::string& target,
                            const GeneratorState& state) {
  x.validate();
  check_gamma(gamma);
  const Shape expect{kLatentChannels, x.height() / kDownsampleFactor, x.width() / kDownsampleFactor};
  if (z.chw().shape() != expect)
    throw ShapeError("noise shape " + shape_str(z.chw().shape()) + ", expected " + shape_str(expect));
  const std::array<TensorImage, 1> xs{x};
  const std::array<Tensor, 1> zs{z.chw()};
  return {Var(stack_images(xs)), Var(stack_tensors(zs)), {state.domain_index(target)}};
}

TensorImage first_image(const Var& batch) { return TensorImage(batch_item(batch.value(), 0)); }

}  // namespace

TensorImage translate(const TensorImage& x, const LatentMap& z, double gamma, const std::string& target,
                      const GeneratorState& state) {
  ag::NoGradGuard guard;
  const SingleInputs in = prepare_single(x, z, gamma, target, state);
  return first_image(generate(state, in.x, in.z, gamma, in.ids));
}

TensorImage backbone_translate(const TensorImage& x, const LatentMap& z, double gamma, const std::string& target,
                               const GeneratorState& state) {
  ag::NoGradGuard guard;
  const SingleInputs in = prepare_single(x, z, gamma, target, state);
  Var latent_in = in.z;
  if (gamma != 0.0) {
    const Encoded e = encode(state, in.x, 0.0);
    latent_in = gamma == 1.0 ? e.latent : ag::add(ag::scale(e.latent, gamma), ag::scale(in.z, 1.0 - gamma));
  }
  return first_image(backbone_forward(state, latent_in, in.ids));
}

TensorImage backbone_sample(const LatentMap& z, const std::string& target, const GeneratorState& state) {
  ag::NoGradGuard guard;
  if (z.chw().rank() != 3 || z.chw().dim(0) != kLatentChannels) throw ShapeError("noise must be [4,h,w]");
  const std::array<Tensor, 1> zs{z.chw()};
  const std::array<int, 1> ids{state.domain_index(target)};
  return first_image(backbone_forward(state, Var(stack_tensors(zs)), ids));
}

TensorImage forward_with_adapter_branch(const TensorImage& x, const LatentMap& z, const std::string& target,
                                        const GeneratorState& state, BranchKind kind) {
  if (kind == BranchKind::direct)
    throw ValidationError("direct conditioning has no adapter branch; use translate");
  if (state.config.branch != kind)
    throw ValidationError("state carries a '" + to_string(state.config.branch) + "' branch, not '" + to_string(kind) +
                          "'");
  ag::NoGradGuard guard;
  const SingleInputs in = prepare_single(x, z, 1.0, target, state);
  return first_image(generate(state, in.x, in.z, 1.0, in.ids));
}

LatentMap sample_noise(int image_height, int image_width, std::uint64_t seed) {
  if (image_height <= 0 || image_width <= 0 || image_height % kDownsampleFactor || image_width % kDownsampleFactor)
    throw ShapeError("image dims must be positive multiples of 8");
  Rng rng(seed, 0x5a);
  return LatentMap(rng.normal_tensor({kLatentChannels, image_height / kDownsampleFactor, image_width / kDownsampleFactor}));
}

Tensor sample_noise_batch(int batch, int image_height, int image_width, Rng& rng) {
  return rng.normal_tensor(
      {batch, kLatentChannels, image_height / kDownsampleFactor, image_width / kDownsampleFactor});
}

std::vector<Var> adaptation_params(const GeneratorState& state) { return state.params.vars(true); }
std::vector<Var> frozen_params(const GeneratorState& state) { return state.params.vars(false); }

// ---- persistence ---------------------------------------------------------------

std::string generator_config_hash(const GeneratorState& state) { return config_hash(state.config.to_json()); }

void save_generator(const std::filesystem::path& dir, const GeneratorState& state, const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.tensors = records_from(state.params);
  ckpt.manifest = {{"kind", "generator"},
                   {"config", state.config.to_json()},
                   {"config_hash", generator_config_hash(state)},
                   {"pretrained", state.pretrained},
                   {"latent_scale", state.latent_scale}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) ckpt.manifest[it.key()] = it.value();
  save_checkpoint(dir, ckpt);
}

GeneratorState load_generator(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.manifest.value("kind", "") != "generator")
    throw ValidationError("'" + dir.string() + "' is not a generator checkpoint");
  GeneratorState state = init_generator(GeneratorConfig::from_json(ckpt.manifest.at("config")));
  if (ckpt.manifest.contains("config_hash") && ckpt.manifest.at("config_hash") != generator_config_hash(state))
    throw ValidationError("generator config hash mismatch in '" + dir.string() + "'");
  assign_records(state.params, ckpt.tensors);
  for (const auto& rec : ckpt.tensors)
    if (state.params.is_trainable(rec.name) != rec.trainable)
      throw ValidationError("parameter partition mismatch for '" + rec.name + "'");
  state.pretrained = ckpt.manifest.value("pretrained", false);
  state.latent_scale = ckpt.manifest.value("latent_scale", 1.0);
  return state;
}

}  // namespace turbo
