#include "turbo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "turbo/csv.hpp"
#include "turbo/errors.hpp"

namespace turbo {

using ag::Var;

// ---- configuration ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (steps < 1) throw ValidationError("steps must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(adam.lr >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
  if (eval_images < 2) throw ValidationError("eval_images must be >= 2");
  if (gamma_values.empty()) throw ValidationError("gamma distribution must not be empty");
  for (double g : gamma_values)
    if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("gamma values must lie in [0, 1]");
  weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"batch_size", batch_size},
          {"steps", steps},
          {"seed", seed},
          {"weights", weights.to_json()},
          {"gamma_values", gamma_values},
          {"eval_every", eval_every},
          {"eval_images", eval_images}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig base) {
  base.adam.lr = j.value("lr", base.adam.lr);
  base.adam.beta1 = j.value("beta1", base.adam.beta1);
  base.adam.beta2 = j.value("beta2", base.adam.beta2);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.steps = j.value("steps", base.steps);
  base.seed = j.value("seed", base.seed);
  if (j.contains("weights")) base.weights = LossWeights::from_json(j.at("weights"), base.weights);
  base.gamma_values = j.value("gamma_values", base.gamma_values);
  base.eval_every = j.value("eval_every", base.eval_every);
  base.eval_images = j.value("eval_images", base.eval_images);
  base.validate();
  return base;
}

void PretrainConfig::validate() const {
  if (ae_steps < 0 || core_steps < 0) throw ValidationError("pretraining steps must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (imle_candidates < 1) throw ValidationError("imle_candidates must be >= 1");
  if (blend_values.empty()) throw ValidationError("blend_values must not be empty");
  for (double s : blend_values)
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("blend values must lie in [0, 1]");
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"ae_steps", ae_steps},         {"core_steps", core_steps},     {"batch_size", batch_size},
          {"lr", lr},                     {"lambda_lpips", lambda_lpips}, {"lambda_adv", lambda_adv},
          {"imle_candidates", imle_candidates}, {"blend_values", blend_values}, {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j, PretrainConfig base) {
  base.ae_steps = j.value("ae_steps", base.ae_steps);
  base.core_steps = j.value("core_steps", base.core_steps);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.lr = j.value("lr", base.lr);
  base.lambda_lpips = j.value("lambda_lpips", base.lambda_lpips);
  base.lambda_adv = j.value("lambda_adv", base.lambda_adv);
  base.imle_candidates = j.value("imle_candidates", base.imle_candidates);
  base.blend_values = j.value("blend_values", base.blend_values);
  base.seed = j.value("seed", base.seed);
  base.validate();
  return base;
}

void History::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write history to '" + path.string() + "'");
  std::size_t e = 0;
  for (const auto& s : steps) {
    while (e < evals.size() && evals[e].at("step").get<long>() < s.at("step").get<long>()) out << evals[e++].dump() << '\n';
    out << s.dump() << '\n';
  }
  while (e < evals.size()) out << evals[e++].dump() << '\n';
}

// ---- data plumbing ----------------------------------------------------------------

namespace {

// Random streams; one per consumer so changing one never shifts another.
enum Stream : std::uint64_t { kBatch = 101, kNoise = 102, kEvalNoise = 103, kGamma = 104, kSubset = 301 };

void check_holdout(int total, int n_eval) {
  if (n_eval < 1 || n_eval >= total) throw ValidationError("held-out count must leave at least one training image");
}

Tensor gather(const std::vector<TensorImage>& images, std::span<const int> idx) {
  std::vector<TensorImage> picked;
  picked.reserve(idx.size());
  for (int i : idx) picked.push_back(images[static_cast<std::size_t>(i)]);
  return stack_images(picked);
}

std::vector<int> sample_indices(Rng& rng, int available, int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int& i : idx) i = rng.uniform_int(0, available - 1);
  return idx;
}

}  // namespace

UnpairedData split_unpaired(const data::TwoDomainDataset& ds, int n_eval) {
  const int n = static_cast<int>(ds.x.size());
  check_holdout(n, n_eval);
  UnpairedData d;
  d.x_train.assign(ds.x.begin(), ds.x.end() - n_eval);
  d.y_train.assign(ds.y.begin(), ds.y.end() - n_eval);
  d.x_eval.assign(ds.x.end() - n_eval, ds.x.end());
  d.y_eval.assign(ds.y.end() - n_eval, ds.y.end());
  return d;
}

PairedData make_edge_pairs(const data::TwoDomainDataset& ds, int n_eval, const data::EdgeConfig& edges,
                           std::uint64_t seed) {
  const int n = static_cast<int>(ds.x.size());
  check_holdout(n, n_eval);
  PairedData d;
  for (int i = 0; i < n; ++i) {
    TensorImage edge = data::map_to_image(data::extract_edges(ds.x[i], edges, seed + static_cast<std::uint64_t>(i)));
    auto& in = i < n - n_eval ? d.inputs : d.eval_inputs;
    auto& out = i < n - n_eval ? d.targets : d.eval_targets;
    in.push_back(std::move(edge));
    out.push_back(ds.x[i]);
  }
  return d;
}

PairedData make_translation_pairs(const data::TwoDomainDataset& ds, int n_eval) {
  const int n = static_cast<int>(ds.x.size());
  check_holdout(n, n_eval);
  PairedData d;
  d.target_domain = "night";
  for (int i = 0; i < n; ++i) {
    const int j = ds.paired_map[static_cast<std::size_t>(i)];
    (i < n - n_eval ? d.inputs : d.eval_inputs).push_back(ds.x[i]);
    (i < n - n_eval ? d.targets : d.eval_targets).push_back(ds.y[static_cast<std::size_t>(j)]);
  }
  return d;
}

// ---- pretraining --------------------------------------------------------------------

namespace {

std::vector<Var> frozen_with_prefix(const GeneratorState& s, std::initializer_list<const char*> prefixes) {
  std::vector<Var> out;
  for (const auto& p : s.params.all()) {
    if (p.trainable) continue;
    for (const char* pre : prefixes)
      if (p.name.rfind(pre, 0) == 0) {
        out.push_back(p.var);
        break;
      }
  }
  return out;
}

void report_progress(const ProgressFn& fn, const std::string& msg) {
  if (fn) fn(msg);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(5) << v;
  return os.str();
}

}  // namespace

GeneratorState pretrain_backbone(const std::vector<TensorImage>& images, const std::vector<int>& domains,
                                 const GeneratorConfig& gen_config, const PretrainConfig& cfg) {
  if (images.empty()) throw ValidationError("pretraining needs a non-empty dataset");
  if (images.size() != domains.size()) throw ValidationError("one domain label per image required");
  cfg.validate();
  for (const auto& img : images) img.validate();
  GeneratorState state = init_generator(gen_config);
  for (int d : domains)
    if (d < 0 || d >= static_cast<int>(gen_config.domains.size())) throw ValidationError("domain label out of range");

  const auto net = perceptual::default_feature_net();
  const int n = static_cast<int>(images.size());
  const int b = cfg.batch_size;
  Rng batch_rng(cfg.seed, kBatch), noise_rng(cfg.seed, kNoise);
  std::optional<LossLog> log;
  if (!cfg.log_path.empty()) log.emplace(cfg.log_path);
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  // (a) first stage as an autoencoder
  {
    const auto params = frozen_with_prefix(state, {"enc.", "dec."});
    state.params.enable_grad_only(params);
    Adam opt(params, adam);
    for (int step = 1; step <= cfg.ae_steps; ++step) {
      const auto idx = sample_indices(batch_rng, n, b);
      const Var x(gather(images, idx));
      const Encoded e = encode(state, x, 0.0);
      const Var rec = backbone_decode(state, e.latent);
      const Var l1 = ag::mean_abs_diff(rec, x);
      const Var lp = perceptual::lpips_like(*net, rec, x);
      const Var reg = ag::mean(ag::square(e.latent));
      const Var total = ag::add(ag::add(l1, ag::scale(lp, cfg.lambda_lpips)), ag::scale(reg, 1e-4));
      ag::backward(total);
      opt.step();
      opt.zero_grad();
      LossReport r;
      r.add("l1", l1.item(), 1.0);
      r.add("lpips", lp.item(), cfg.lambda_lpips);
      r.add("latent_l2", reg.item(), 1e-4);
      if (log) log->write(step, "autoencoder", r);
      if (step % 250 == 0 || step == cfg.ae_steps)
        report_progress(cfg.progress, "autoencoder step " + std::to_string(step) + " loss " + fmt(r.total));
    }
  }

  // latent scale so the core sees unit-variance latents
  std::vector<Tensor> latents(static_cast<std::size_t>(n));
  {
    ag::NoGradGuard guard;
    state.params.enable_grad_only({});
    double sum = 0, sq = 0, count = 0;
    for (int start = 0; start < n; start += 32) {
      std::vector<int> idx;
      for (int i = start; i < std::min(n, start + 32); ++i) idx.push_back(i);
      const Var lat = encode(state, Var(gather(images, idx)), 0.0).latent;
      for (double v : lat.value().values()) {
        sum += v;
        sq += v * v;
      }
      count += static_cast<double>(lat.value().size());
      for (std::size_t k = 0; k < idx.size(); ++k) latents[static_cast<std::size_t>(idx[k])] = batch_item(lat.value(), static_cast<int>(k));
    }
    const double mean = sum / count;
    const double stddev = std::sqrt(std::max(sq / count - mean * mean, 1e-12));
    state.latent_scale = 1.0 / stddev;
    for (auto& t : latents)
      for (double& v : t.values()) v *= state.latent_scale;
  }

  // (b) core as a domain-conditional one-step generator
  {
    const auto params = frozen_with_prefix(state, {"core.", "domain.embedding"});
    Discriminator disc(net, cfg.seed + 17);
    Adam opt(params, adam);
    Adam opt_d(disc.heads().vars(true), {cfg.lr * 0.2, 0.5, 0.999, 1e-8});
    const Shape lat_shape = latents.front().shape();
    const std::size_t lat_size = latents.front().size();
    for (int step = 1; step <= cfg.core_steps; ++step) {
      const auto idx = sample_indices(batch_rng, n, b);
      std::vector<int> ids;
      std::vector<double> blend;
      for (int i : idx) {
        ids.push_back(domains[static_cast<std::size_t>(i)]);
        blend.push_back(cfg.blend_values[static_cast<std::size_t>(
            batch_rng.uniform_int(0, static_cast<int>(cfg.blend_values.size()) - 1))]);
      }
      std::vector<Tensor> targets, noise;
      for (int i : idx) targets.push_back(latents[static_cast<std::size_t>(i)]);
      for (int k = 0; k < b; ++k) noise.push_back(noise_rng.normal_tensor(lat_shape));

      // nearest-of-K noise for the pure-noise samples
      std::vector<int> imle;
      for (int k = 0; k < b; ++k)
        if (blend[k] == 0.0) imle.push_back(k);
      if (!imle.empty() && cfg.imle_candidates > 1) {
        ag::NoGradGuard guard;
        const int kc = cfg.imle_candidates;
        std::vector<Tensor> cands;
        std::vector<int> cand_ids;
        for (int k : imle)
          for (int c = 0; c < kc; ++c) {
            cands.push_back(c == 0 ? noise[k] : noise_rng.normal_tensor(lat_shape));
            cand_ids.push_back(ids[k]);
          }
        const Var pred = backbone_core(state, Var(stack_tensors(cands)), cand_ids);
        for (std::size_t q = 0; q < imle.size(); ++q) {
          const int k = imle[q];
          double best = 1e300;
          for (int c = 0; c < kc; ++c) {
            const double* p = pred.value().data() + (q * kc + c) * lat_size;
            double dist = 0;
            for (std::size_t e = 0; e < lat_size; ++e) dist += (p[e] - targets[k][e]) * (p[e] - targets[k][e]);
            if (dist < best) {
              best = dist;
              noise[k] = cands[q * kc + c];
            }
          }
        }
      }
      std::vector<Tensor> inputs;
      for (int k = 0; k < b; ++k) {
        Tensor in(lat_shape);
        for (std::size_t e = 0; e < lat_size; ++e) in[e] = blend[k] * targets[k][e] + (1.0 - blend[k]) * noise[k][e];
        inputs.push_back(std::move(in));
      }

      state.params.enable_grad_only(params);
      const Var target(stack_tensors(targets));
      const Var pred = backbone_core(state, Var(stack_tensors(inputs)), ids);
      const Var lat = ag::mean(ag::square(ag::sub(pred, target)));
      Var total = lat;
      LossReport r;
      r.add("latent_mse", lat.item(), 1.0);
      Var decoded;
      if (cfg.lambda_adv > 0.0) {
        decoded = backbone_decode(state, pred);
        const Loss g = gan_loss_g(disc, decoded);
        total = ag::add(total, ag::scale(g.total, cfg.lambda_adv));
        r.add("gan", g.total.item(), cfg.lambda_adv);
      }
      ag::backward(total);
      opt.step();
      opt.zero_grad();
      state.params.enable_grad_only({});
      if (decoded.defined()) {
        disc.heads().enable_grad_only(disc.heads().vars(true));
        const Loss d = gan_loss_d(disc, Var(gather(images, idx)), decoded);
        ag::backward(d.total);
        opt_d.step();
        opt_d.zero_grad();
        disc.heads().enable_grad_only({});
        r.merge(d.report, "", 0.0);
      }
      if (log) log->write(step, "core", r);
      if (step % 250 == 0 || step == cfg.core_steps)
        report_progress(cfg.progress, "core step " + std::to_string(step) + " loss " + fmt(r.total));
    }
  }
  state.params.enable_grad_only({});
  state.pretrained = true;
  return state;
}

// ---- evaluation ---------------------------------------------------------------------

namespace {

// gamma = 1 translation of a whole image list, in chunks.
std::vector<TensorImage> translate_all(const GeneratorState& state, const std::vector<TensorImage>& images, int count,
                                       int domain, Rng& noise) {
  ag::NoGradGuard guard;
  std::vector<TensorImage> out;
  for (int start = 0; start < count; start += 16) {
    std::vector<int> idx;
    for (int i = start; i < std::min(count, start + 16); ++i) idx.push_back(i);
    const Var x(gather(images, idx));
    const Var z(sample_noise_batch(x.dim(0), x.dim(2), x.dim(3), noise));
    const std::vector<int> ids(idx.size(), domain);
    for (auto& img : unstack_images(generate(state, x, z, 1.0, ids).value())) out.push_back(std::move(img));
  }
  return out;
}

double mean_dino(const std::vector<TensorImage>& src, const std::vector<TensorImage>& out,
                 const perceptual::FeatureNet& net) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += perceptual::dino_struct_dist(net, src[i], out[i]);
  return s / static_cast<double>(out.size());
}

double mean_psnr(const std::vector<TensorImage>& a, const std::vector<TensorImage>& b) {
  double s = 0;
  for (std::size_t i = 0; i < b.size(); ++i) s += psnr(a[i], b[i]);
  return s / static_cast<double>(b.size());
}

std::span<const TensorImage> head(const std::vector<TensorImage>& v, int n) {
  return {v.data(), static_cast<std::size_t>(std::min<int>(n, static_cast<int>(v.size())))};
}

}  // namespace

nlohmann::json UnpairedMetrics::to_json() const {
  return {{"fid", fid},         {"dino_struct", dino}, {"fid_xy", fid_xy}, {"fid_yx", fid_yx},
          {"dino_xy", dino_xy}, {"dino_yx", dino_yx},  {"psnr_identity", psnr_identity}};
}

UnpairedMetrics evaluate_unpaired(const GeneratorState& state, const UnpairedData& data, int max_images,
                                  std::uint64_t noise_seed) {
  if (data.x_eval.size() < 2 || data.y_eval.size() < 2) throw ValidationError("need at least 2 held-out images per domain");
  const auto net = perceptual::default_feature_net();
  const int cx = state.domain_index(data.domain_x), cy = state.domain_index(data.domain_y);
  const int nx = std::min<int>(max_images, static_cast<int>(data.x_eval.size()));
  const int ny = std::min<int>(max_images, static_cast<int>(data.y_eval.size()));
  Rng noise(noise_seed, kEvalNoise);
  const auto fake_y = translate_all(state, data.x_eval, nx, cy, noise);
  const auto fake_x = translate_all(state, data.y_eval, ny, cx, noise);
  const auto idt_x = translate_all(state, data.x_eval, nx, cx, noise);
  const auto idt_y = translate_all(state, data.y_eval, ny, cy, noise);
  UnpairedMetrics m;
  m.fid_xy = perceptual::fid(fake_y, head(data.y_eval, ny), *net);
  m.fid_yx = perceptual::fid(fake_x, head(data.x_eval, nx), *net);
  m.dino_xy = mean_dino(data.x_eval, fake_y, *net);
  m.dino_yx = mean_dino(data.y_eval, fake_x, *net);
  m.fid = 0.5 * (m.fid_xy + m.fid_yx);
  m.dino = 0.5 * (m.dino_xy + m.dino_yx);
  m.psnr_identity = 0.5 * (mean_psnr(data.x_eval, idt_x) + mean_psnr(data.y_eval, idt_y));
  return m;
}

namespace {

UnpairedMetrics metrics_from_json(const nlohmann::json& j) {
  UnpairedMetrics m;
  m.fid = j.at("fid");
  m.dino = j.at("dino_struct");
  m.fid_xy = j.at("fid_xy");
  m.fid_yx = j.at("fid_yx");
  m.dino_xy = j.at("dino_xy");
  m.dino_yx = j.at("dino_yx");
  m.psnr_identity = j.at("psnr_identity");
  return m;
}

bool is_eval_step(int step, const TrainConfig& cfg) { return step == 0 || step % cfg.eval_every == 0 || step == cfg.steps; }

struct GanSetup {
  std::shared_ptr<const perceptual::FeatureNet> net = perceptual::default_feature_net();
};

}  // namespace

// ---- unpaired adaptation -----------------------------------------------------------------

TrainResult train_unpaired(const GeneratorState& state, const UnpairedData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.require_pretrained && !state.pretrained)
    throw ValidationError("unpaired training expects a pretrained backbone (only ablation A starts from random weights)");
  if (data.x_train.empty() || data.y_train.empty()) throw ValidationError("both training domains need images");
  const int cx = state.domain_index(data.domain_x), cy = state.domain_index(data.domain_y);
  if (cx == cy) throw ValidationError("source and target domains must differ");

  TrainResult result{state.clone(), {}};
  GeneratorState& s = result.state;
  const auto net = perceptual::default_feature_net();
  Discriminator d_x(net, cfg.seed * 2 + 1), d_y(net, cfg.seed * 2 + 2);
  const auto g_params = adaptation_params(s);
  auto d_params = d_x.heads().vars(true);
  for (const auto& v : d_y.heads().vars(true)) d_params.push_back(v);
  Adam opt_g(g_params, cfg.adam), opt_d(d_params, cfg.adam);
  Rng batch_rng(cfg.seed, kBatch), noise_rng(cfg.seed, kNoise);
  const Translator g = bind_translator(s, s.config.branch == BranchKind::direct ? nullptr : &noise_rng);
  std::optional<LossLog> log;
  if (!cfg.log_path.empty()) log.emplace(cfg.log_path);
  const int nx = static_cast<int>(data.x_train.size()), ny = static_cast<int>(data.y_train.size());

  auto eval = [&](int step) {
    nlohmann::json e = evaluate_unpaired(s, data, cfg.eval_images, cfg.seed).to_json();
    e["step"] = step;
    result.history.evals.push_back(e);
    report_progress(cfg.progress, "eval step " + std::to_string(step) + " fid " + fmt(e["fid"]) + " dino " +
                                      fmt(e["dino_struct"]) + " psnr_idt " + fmt(e["psnr_identity"]));
  };
  eval(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto ix = sample_indices(batch_rng, nx, cfg.batch_size);
    const auto iy = sample_indices(batch_rng, ny, cfg.batch_size);
    const Var x(gather(data.x_train, ix)), y(gather(data.y_train, iy));

    s.params.enable_grad_only(g_params);
    UnpairedResult res = unpaired_objective(g, &d_x, &d_y, x, y, cx, cy, cfg.weights, *net);
    ag::backward(res.loss.total);
    opt_g.step();
    opt_g.zero_grad();
    s.params.enable_grad_only({});

    d_x.heads().enable_grad_only(d_x.heads().vars(true));
    d_y.heads().enable_grad_only(d_y.heads().vars(true));
    const Loss ld_y = gan_loss_d(d_y, y, res.fake_y);
    const Loss ld_x = gan_loss_d(d_x, x, res.fake_x);
    ag::backward(ag::add(ld_y.total, ld_x.total));
    opt_d.step();
    opt_d.zero_grad();
    d_x.heads().enable_grad_only({});
    d_y.heads().enable_grad_only({});

    LossReport dr;
    dr.merge(ld_y.report, "d_y.");
    dr.merge(ld_x.report, "d_x.");
    result.history.steps.push_back({{"step", step}, {"g", res.loss.report.to_json()}, {"d", dr.to_json()}});
    if (log) {
      log->write(step, "g", res.loss.report);
      log->write(step, "d", dr);
    }
    if (is_eval_step(step, cfg)) eval(step);
  }
  return result;
}

// ---- paired adaptation ---------------------------------------------------------------------

namespace {

void check_pairs(const PairedData& data) {
  if (data.inputs.size() != data.targets.size() || data.eval_inputs.size() != data.eval_targets.size())
    throw ValidationError("misaligned pair count: inputs and targets differ in length");
  if (data.inputs.empty()) throw ValidationError("paired training needs at least one pair");
}

nlohmann::json evaluate_paired(const GeneratorState& s, const PairedData& data, int max_images, int c,
                               std::uint64_t seed) {
  const auto net = perceptual::default_feature_net();
  const int n = std::min<int>(max_images, static_cast<int>(data.eval_inputs.size()));
  nlohmann::json e = {{"rec", nullptr}, {"fid", nullptr}};
  if (n == 0) return e;
  Rng noise(seed, kEvalNoise);
  const auto out = translate_all(s, data.eval_inputs, n, c, noise);
  const LossWeights w = LossWeights::paired_defaults();
  double rec = 0;
  for (int i = 0; i < n; ++i) rec += rec_distance(out[i], data.eval_targets[i], w, *net);
  e["rec"] = rec / n;
  if (n >= 2) e["fid"] = perceptual::fid(out, head(data.eval_targets, n), *net);
  return e;
}

}  // namespace

TrainResult train_paired(const GeneratorState& state, const PairedData& data, const TrainConfig& cfg) {
  cfg.validate();
  check_pairs(data);
  if (cfg.require_pretrained && !state.pretrained) throw ValidationError("paired training expects a pretrained backbone");
  TrainResult result{state.clone(), {}};
  GeneratorState& s = result.state;
  const int c = s.domain_index(data.target_domain);
  const auto net = perceptual::default_feature_net();
  Discriminator d_y(net, cfg.seed * 2 + 2);
  AlignmentHead align(net, s.config.embed_dim, cfg.seed * 2 + 3);
  const auto g_params = adaptation_params(s);
  Adam opt_g(g_params, cfg.adam), opt_d(d_y.heads().vars(true), cfg.adam), opt_a(align.params().vars(true), cfg.adam);
  Rng batch_rng(cfg.seed, kBatch), noise_rng(cfg.seed, kNoise);
  const Translator g = bind_translator(s, s.config.branch == BranchKind::direct ? nullptr : &noise_rng);
  std::optional<LossLog> log;
  if (!cfg.log_path.empty()) log.emplace(cfg.log_path);
  const int n = static_cast<int>(data.inputs.size());

  auto eval = [&](int step) {
    nlohmann::json e = evaluate_paired(s, data, cfg.eval_images, c, cfg.seed);
    e["step"] = step;
    result.history.evals.push_back(e);
    report_progress(cfg.progress, "eval step " + std::to_string(step) + " rec " + e["rec"].dump());
  };
  eval(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto idx = sample_indices(batch_rng, n, cfg.batch_size);
    const Var x(gather(data.inputs, idx)), y(gather(data.targets, idx));
    const Tensor target_embedding = domain_embedding(s, c);

    s.params.enable_grad_only(g_params);
    PairedResult res = paired_objective(g, &d_y, &align, x, y, c, target_embedding, cfg.weights, *net);
    ag::backward(res.loss.total);
    opt_g.step();
    opt_g.zero_grad();
    s.params.enable_grad_only({});

    LossReport dr;
    if (cfg.weights.lambda_gan != 0.0) {
      d_y.heads().enable_grad_only(d_y.heads().vars(true));
      const Loss ld = gan_loss_d(d_y, y, res.fake);
      ag::backward(ld.total);
      opt_d.step();
      opt_d.zero_grad();
      d_y.heads().enable_grad_only({});
      dr.merge(ld.report);
    }
    if (cfg.weights.lambda_clip != 0.0) {
      align.params().enable_grad_only(align.params().vars(true));
      const Loss la = align.head_loss(y, x, target_embedding);
      ag::backward(la.total);
      opt_a.step();
      opt_a.zero_grad();
      align.params().enable_grad_only({});
      dr.merge(la.report);
    }
    result.history.steps.push_back({{"step", step}, {"g", res.loss.report.to_json()}, {"d", dr.to_json()}});
    if (log) {
      log->write(step, "g", res.loss.report);
      log->write(step, "d", dr);
    }
    if (is_eval_step(step, cfg)) eval(step);
  }
  return result;
}

TrainResult finetune_diversity(const GeneratorState& state, const PairedData& data, const TrainConfig& cfg) {
  cfg.validate();
  check_pairs(data);
  TrainResult result{state.clone(), {}};
  GeneratorState& s = result.state;
  const int c = s.domain_index(data.target_domain);
  const auto net = perceptual::default_feature_net();
  Discriminator d_y(net, cfg.seed * 2 + 2);
  const auto g_params = adaptation_params(s);
  Adam opt_g(g_params, cfg.adam), opt_d(d_y.heads().vars(true), cfg.adam);
  Rng batch_rng(cfg.seed, kBatch), noise_rng(cfg.seed, kNoise), gamma_rng(cfg.seed, kGamma);
  const NoisyTranslator g = bind_noisy_translator(s, c);
  std::optional<LossLog> log;
  if (!cfg.log_path.empty()) log.emplace(cfg.log_path);
  const int n = static_cast<int>(data.inputs.size());

  auto eval = [&](int step) {
    nlohmann::json e = evaluate_paired(s, data, cfg.eval_images, c, cfg.seed);
    e["step"] = step;
    result.history.evals.push_back(e);
    report_progress(cfg.progress, "eval step " + std::to_string(step) + " rec " + e["rec"].dump());
  };
  eval(0);
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto idx = sample_indices(batch_rng, n, cfg.batch_size);
    const Var x(gather(data.inputs, idx)), y(gather(data.targets, idx));
    const double gamma =
        cfg.gamma_values[static_cast<std::size_t>(gamma_rng.uniform_int(0, static_cast<int>(cfg.gamma_values.size()) - 1))];
    const Var z(sample_noise_batch(x.dim(0), x.dim(2), x.dim(3), noise_rng));

    s.params.enable_grad_only(g_params);
    Var out;
    Loss l = diversity_loss(g, x, y, z, gamma, cfg.weights, *net, &out);
    Var total = l.total;
    LossReport report = l.report;
    if (cfg.weights.lambda_gan != 0.0) {
      const Loss adv = gan_loss_g(d_y, out);
      total = ag::add(total, ag::scale(adv.total, cfg.weights.lambda_gan));
      report.add("gan", adv.total.item(), cfg.weights.lambda_gan);
    }
    ag::backward(total);
    opt_g.step();
    opt_g.zero_grad();
    s.params.enable_grad_only({});

    LossReport dr;
    if (cfg.weights.lambda_gan != 0.0) {
      d_y.heads().enable_grad_only(d_y.heads().vars(true));
      const Loss ld = gan_loss_d(d_y, y, out);
      ag::backward(ld.total);
      opt_d.step();
      opt_d.zero_grad();
      d_y.heads().enable_grad_only({});
      dr.merge(ld.report);
    }
    result.history.steps.push_back(
        {{"step", step}, {"gamma", gamma}, {"g", report.to_json()}, {"d", dr.to_json()}});
    if (log) {
      log->write(step, "g", report);
      log->write(step, "d", dr);
    }
    if (is_eval_step(step, cfg)) eval(step);
  }
  return result;
}

// ---- ablation and sweep ------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::D: return "D";
    case Variant::FULL: return "FULL";
  }
  return "FULL";
}

Variant parse_variant(const std::string& name) {
  if (name == "A") return Variant::A;
  if (name == "B") return Variant::B;
  if (name == "C") return Variant::C;
  if (name == "D") return Variant::D;
  if (name == "FULL") return Variant::FULL;
  throw ValidationError("unknown ablation variant '" + name + "' (expected A, B, C, D or FULL)");
}

std::vector<Variant> parse_variants(const std::string& comma_list) {
  std::vector<Variant> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(item));
  if (out.empty()) throw ValidationError("variant list is empty");
  return out;
}

GeneratorState make_variant(Variant v, const GeneratorState& backbone) {
  switch (v) {
    case Variant::A: {
      GeneratorConfig cfg = backbone.config;
      cfg.skips = false;
      cfg.branch = BranchKind::direct;
      return init_generator(cfg);
    }
    case Variant::B: return adapt_backbone(backbone, false, BranchKind::controlnet);
    case Variant::C: return adapt_backbone(backbone, false, BranchKind::adapter);
    case Variant::D: return adapt_backbone(backbone, false, BranchKind::direct);
    case Variant::FULL: return adapt_backbone(backbone, true, BranchKind::direct);
  }
  throw ValidationError("unknown variant");
}

AblationResult run_ablation(const std::vector<Variant>& variants, const GeneratorState& backbone,
                            const UnpairedData& data, const TrainConfig& cfg) {
  if (variants.empty()) throw ValidationError("ablation needs at least one variant");
  AblationResult out;
  for (Variant v : variants) {
    TrainConfig vc = cfg;
    vc.require_pretrained = v != Variant::A;
    if (cfg.progress) vc.progress = [&cfg, v](const std::string& m) { cfg.progress("[" + to_string(v) + "] " + m); };
    TrainResult r = train_unpaired(make_variant(v, backbone), data, vc);
    out.rows.push_back({to_string(v), r.state.pretrained, metrics_from_json(r.history.last_eval())});
    out.states.push_back(std::move(r.state));
    out.histories.push_back(std::move(r.history));
  }
  return out;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<std::string> metric_fields(const UnpairedMetrics& m) {
  return {num(m.fid), num(m.dino), num(m.fid_xy), num(m.fid_yx), num(m.dino_xy), num(m.dino_yx), num(m.psnr_identity)};
}

}  // namespace

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  write_csv_row(out, {"variant", "pretrained", "fid", "dino_struct", "fid_xy", "fid_yx", "dino_xy", "dino_yx",
                      "psnr_identity"});
  for (const auto& r : rows) {
    std::vector<std::string> f{r.variant, r.pretrained ? "true" : "false"};
    for (auto& m : metric_fields(r.metrics)) f.push_back(std::move(m));
    write_csv_row(out, f);
  }
}

std::vector<int> subset_indices(int available, int n, std::uint64_t seed) {
  if (n < 1 || n > available)
    throw ValidationError("subset size " + std::to_string(n) + " outside [1, " + std::to_string(available) + "]");
  std::vector<int> idx(static_cast<std::size_t>(available));
  std::iota(idx.begin(), idx.end(), 0);
  if (n == available) return idx;
  std::shuffle(idx.begin(), idx.end(), Rng(seed, kSubset).engine());
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

SweepResult dataset_size_sweep(const std::vector<int>& sizes, const GeneratorState& backbone, const UnpairedData& data,
                               const TrainConfig& cfg) {
  if (sizes.empty()) throw ValidationError("sweep needs at least one size");
  const int nx = static_cast<int>(data.x_train.size()), ny = static_cast<int>(data.y_train.size());
  for (int n : sizes)
    if (n < 1 || n > nx || n > ny)
      throw ValidationError("subset size " + std::to_string(n) + " exceeds the available " + std::to_string(std::min(nx, ny)) +
                            " training images");
  SweepResult out;
  for (int n : sizes) {
    UnpairedData sub = data;
    sub.x_train.clear();
    sub.y_train.clear();
    for (int i : subset_indices(nx, n, cfg.seed)) sub.x_train.push_back(data.x_train[static_cast<std::size_t>(i)]);
    for (int i : subset_indices(ny, n, cfg.seed)) sub.y_train.push_back(data.y_train[static_cast<std::size_t>(i)]);
    TrainConfig vc = cfg;
    if (cfg.progress) vc.progress = [&cfg, n](const std::string& m) { cfg.progress("[n=" + std::to_string(n) + "] " + m); };
    TrainResult r = train_unpaired(make_variant(Variant::FULL, backbone), sub, vc);
    out.rows.push_back({n, metrics_from_json(r.history.last_eval())});
    out.states.push_back(std::move(r.state));
  }
  return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  write_csv_row(out, {"size", "fid", "dino_struct", "fid_xy", "fid_yx", "dino_xy", "dino_yx", "psnr_identity"});
  for (const auto& r : rows) {
    std::vector<std::string> f{std::to_string(r.size)};
    for (auto& m : metric_fields(r.metrics)) f.push_back(std::move(m));
    write_csv_row(out, f);
  }
}

}  // namespace turbo
