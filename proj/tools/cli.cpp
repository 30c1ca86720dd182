#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "turbo/errors.hpp"
#include "turbo/latency.hpp"
#include "turbo/perceptual.hpp"
#include "turbo/service.hpp"
#include "turbo/trainer.hpp"

namespace turbo::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path home() {
  const char* env = std::getenv("TURBO_I2I_HOME");
  return env && *env ? fs::path(env) : fs::path("checkpoints");
}

// A model argument is a checkpoint directory, either as given or under the home root.
// An empty name means the FULL unpaired run under the home root.
fs::path model_path(std::string name) {
  if (name.empty()) name = "unpaired-FULL";
  if (fs::exists(fs::path(name) / "manifest.json")) return name;
  const fs::path under = home() / name;
  if (fs::exists(under / "manifest.json")) return under;
  throw ValidationError("no checkpoint at '" + name + "' or '" + under.string() + "'");
}

fs::path output_path(const std::string& out, const std::string& fallback) {
  return out.empty() ? home() / fallback : fs::path(out);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

void progress(const std::string& msg) { std::cerr << msg << std::endl; }

// ---- shared option groups ----------------------------------------------------------

struct TrainOptions {
  std::string model, data, out;
  int steps = 2000, batch_size = 8, eval_every = 250, eval_images = 64, holdout = 64;
  double lr = 1e-4, beta1 = 0.5;
  std::uint64_t seed = 1;
  std::optional<double> lambda_idt, lambda_gan, lambda_clip, lambda_l1, lambda_lpips;
  std::vector<double> gammas;

  void add(CLI::App* sub, bool needs_model = true) {
    auto* m = sub->add_option("--model", model, "Input checkpoint (directory or name under TURBO_I2I_HOME)");
    if (needs_model) m->required();
    sub->add_option("--data", data, "Dataset root written by gen-data")->required();
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--steps", steps)->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
    sub->add_option("--lr", lr);
    sub->add_option("--beta1", beta1);
    sub->add_option("--seed", seed);
    sub->add_option("--eval-every", eval_every);
    sub->add_option("--eval-images", eval_images);
    sub->add_option("--holdout", holdout, "Scenes held out for evaluation");
    sub->add_option("--lambda-idt", lambda_idt);
    sub->add_option("--lambda-gan", lambda_gan);
    sub->add_option("--lambda-clip", lambda_clip);
    sub->add_option("--lambda-l1", lambda_l1);
    sub->add_option("--lambda-lpips", lambda_lpips);
    sub->add_option("--gammas", gammas, "Gamma values sampled during diversity finetuning")->delimiter(',');
  }

  TrainConfig config(LossWeights base) const {
    TrainConfig c;
    c.adam.lr = lr;
    c.adam.beta1 = beta1;
    c.batch_size = batch_size;
    c.steps = steps;
    c.seed = seed;
    c.eval_every = eval_every;
    c.eval_images = eval_images;
    if (lambda_idt) base.lambda_idt = *lambda_idt;
    if (lambda_gan) base.lambda_gan = *lambda_gan;
    if (lambda_clip) base.lambda_clip = *lambda_clip;
    if (lambda_l1) base.lambda_l1 = *lambda_l1;
    if (lambda_lpips) base.lambda_lpips = *lambda_lpips;
    c.weights = base;
    if (!gammas.empty()) c.gamma_values = gammas;
    c.progress = progress;
    c.validate();
    return c;
  }
};

json resolved(const TrainOptions& o, const TrainConfig& c, const std::string& command) {
  json j = c.to_json();
  j["command"] = command;
  j["model"] = o.model;
  j["data"] = o.data;
  j["holdout"] = o.holdout;
  return j;
}

void save_run(const fs::path& dir, const TrainResult& r, const json& config) {
  save_generator(dir, r.state, {{"train_config", config}});
  r.history.save(dir / "history.jsonl");
  write_json(dir / "config.json", config);
}

PairedData make_pairs(const data::TwoDomainDataset& ds, int holdout, const std::string& kind, std::uint64_t seed) {
  if (kind == "edges") return make_edge_pairs(ds, holdout, data::EdgeConfig{}, seed);
  if (kind == "translation") return make_translation_pairs(ds, holdout);
  throw ValidationError("unknown pair kind '" + kind + "' (expected edges or translation)");
}

UnpairedData load_unpaired(const std::string& root, int holdout) {
  return split_unpaired(data::load_dataset(root), holdout);
}

// ---- JSON config merged in front of the explicit flags ----------------------------

std::string option_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : ",") + option_value(e);
    return out;
  }
  return v.dump();
}

// Inserts `--key=value` for every config entry right after the subcommand name,
// so later explicit flags win (options take the last value).
void expand_config(std::vector<std::string>& args) {
  const auto it = std::find_if(args.begin(), args.end(), [](const std::string& a) {
    return a == "--config" || a.rfind("--config=", 0) == 0;
  });
  if (it == args.end()) return;
  std::string path;
  if (*it == "--config") {
    if (it + 1 == args.end()) throw CLI::ArgumentMismatch("--config needs a file argument");
    path = *(it + 1);
    args.erase(it, it + 2);
  } else {
    path = it->substr(9);
    args.erase(it);
  }
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config file '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw ValidationError("config file must hold a JSON object");
  if (args.empty()) return;
  // per-command section if present, else the whole object
  if (cfg.contains(args.front()) && cfg.at(args.front()).is_object()) cfg = cfg.at(args.front());
  std::vector<std::string> extra;
  for (const auto& [key, value] : cfg.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    extra.push_back("--" + flag + "=" + option_value(value));
  }
  args.insert(args.begin() + 1, extra.begin(), extra.end());
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"One-step image-to-image translation toolkit", "turbo-i2i"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "turbo-i2i 0.1.0");
  auto add_config = [](CLI::App* sub) {
    // consumed before parsing; declared so it shows up in --help
    sub->add_option("--config")->description("JSON file of option values; explicit flags override it");
  };
  std::function<int()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic two-domain scene set");
  std::string gen_out;
  int gen_n = 264;
  data::SceneSpec spec;
  gen->add_option("--out", gen_out, "Dataset root")->required();
  gen->add_option("--n", gen_n, "Number of scenes");
  gen->add_option("--seed", spec.seed);
  gen->add_option("--size", spec.size, "Image side in pixels (multiple of 8)");
  gen->add_option("--luminance-offset", spec.luminance_offset);
  add_config(gen);
  gen->callback([&] {
    action = [&] {
      const auto ds = data::gen_two_domain_dataset(gen_n, spec);
      data::save_dataset(gen_out, ds);
      json cfg = spec.to_json();
      cfg["command"] = "gen-data";
      cfg["n"] = gen_n;
      write_json(fs::path(gen_out) / "config.json", cfg);
      std::cout << "wrote " << gen_n << " scenes per domain to " << gen_out << '\n';
      return 0;
    };
  });

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train the one-step backbone from scratch");
  std::string pre_data, pre_out;
  int pre_holdout = 64;
  PretrainConfig pcfg;
  GeneratorConfig gcfg;
  pre->add_option("--data", pre_data)->required();
  pre->add_option("--out", pre_out, "Checkpoint directory");
  pre->add_option("--holdout", pre_holdout, "Scenes excluded from pretraining");
  pre->add_option("--ae-steps", pcfg.ae_steps);
  pre->add_option("--core-steps", pcfg.core_steps);
  pre->add_option("--batch-size", pcfg.batch_size);
  pre->add_option("--lr", pcfg.lr);
  pre->add_option("--lambda-adv", pcfg.lambda_adv);
  pre->add_option("--imle-candidates", pcfg.imle_candidates);
  pre->add_option("--seed", pcfg.seed);
  pre->add_option("--model-seed", gcfg.seed, "Seed of the initial weights");
  pre->add_option("--lora-rank", gcfg.lora_rank);
  add_config(pre);
  pre->callback([&] {
    action = [&] {
      const UnpairedData ud = load_unpaired(pre_data, pre_holdout);
      std::vector<TensorImage> images;
      std::vector<int> domains;
      for (const auto& x : ud.x_train) images.push_back(x), domains.push_back(0);
      for (const auto& y : ud.y_train) images.push_back(y), domains.push_back(1);
      const fs::path out = output_path(pre_out, "backbone");
      pcfg.log_path = (out / "loss.jsonl").string();
      pcfg.progress = progress;
      fs::create_directories(out);
      const GeneratorState s = pretrain_backbone(images, domains, gcfg, pcfg);
      json cfg = {{"command", "pretrain"}, {"data", pre_data}, {"holdout", pre_holdout},
                  {"pretrain", pcfg.to_json()}, {"generator", gcfg.to_json()}};
      save_generator(out, s, {{"train_config", cfg}});
      write_json(out / "config.json", cfg);
      std::cout << "saved backbone to " << out.string() << '\n';
      return 0;
    };
  });

  // train-unpaired
  auto* tu = app.add_subcommand("train-unpaired", "Adapt a backbone with the unpaired objective");
  TrainOptions tu_o;
  std::string tu_variant = "FULL";
  tu_o.add(tu);
  tu->add_option("--variant", tu_variant, "A, B, C, D or FULL");
  add_config(tu);
  tu->callback([&] {
    action = [&] {
      const Variant v = parse_variant(tu_variant);
      TrainConfig c = tu_o.config(LossWeights::unpaired_defaults());
      c.require_pretrained = v != Variant::A;
      const fs::path out = output_path(tu_o.out, "unpaired-" + to_string(v));
      c.log_path = (out / "loss.jsonl").string();
      fs::create_directories(out);
      const GeneratorState bb = load_generator(model_path(tu_o.model));
      const TrainResult r = train_unpaired(make_variant(v, bb), load_unpaired(tu_o.data, tu_o.holdout), c);
      json cfg = resolved(tu_o, c, "train-unpaired");
      cfg["variant"] = to_string(v);
      save_run(out, r, cfg);
      std::cout << r.history.last_eval().dump() << '\n';
      return 0;
    };
  });

  // train-paired / finetune-diversity
  auto* tp = app.add_subcommand("train-paired", "Adapt a backbone with the paired objective");
  TrainOptions tp_o;
  std::string tp_pairs = "edges";
  tp_o.add(tp);
  tp->add_option("--pairs", tp_pairs, "edges or translation");
  add_config(tp);
  auto* fd = app.add_subcommand("finetune-diversity", "Finetune with gamma-scaled reconstruction");
  TrainOptions fd_o;
  std::string fd_pairs = "translation";
  fd_o.add(fd);
  fd->add_option("--pairs", fd_pairs, "edges or translation");
  add_config(fd);
  auto paired_action = [&](TrainOptions& o, const std::string& kind, bool diversity) {
    TrainConfig c = o.config(LossWeights::paired_defaults());
    const std::string command = diversity ? "finetune-diversity" : "train-paired";
    const fs::path out = output_path(o.out, command);
    c.log_path = (out / "loss.jsonl").string();
    fs::create_directories(out);
    GeneratorState s = load_generator(model_path(o.model));
    if (!diversity) s = adapt_backbone(s, s.config.skips, s.config.branch);
    const PairedData pairs = make_pairs(data::load_dataset(o.data), o.holdout, kind, o.seed);
    const TrainResult r = diversity ? finetune_diversity(s, pairs, c) : train_paired(s, pairs, c);
    json cfg = resolved(o, c, command);
    cfg["pairs"] = kind;
    save_run(out, r, cfg);
    std::cout << r.history.last_eval().dump() << '\n';
    return 0;
  };
  tp->callback([&] { action = [&] { return paired_action(tp_o, tp_pairs, false); }; });
  fd->callback([&] { action = [&] { return paired_action(fd_o, fd_pairs, true); }; });

  // translate
  auto* tr = app.add_subcommand("translate", "Translate one PNG image");
  std::string tr_model, tr_in, tr_out, tr_domain;
  double tr_gamma = 1.0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--model", tr_model, "Checkpoint (default: unpaired-FULL under TURBO_I2I_HOME)");
  tr->add_option("--in", tr_in)->required();
  tr->add_option("--out", tr_out, "Output PNG (default: <in>.<domain>.png)");
  tr->add_option("--domain", tr_domain, "Target domain")->required();
  tr->add_option("--gamma", tr_gamma);
  tr->add_option("--seed", tr_seed, "Noise seed");
  add_config(tr);
  tr->callback([&] {
    action = [&] {
      const fs::path mp = model_path(tr_model);
      const GeneratorState s = load_generator(mp);
      const TensorImage x = read_png(tr_in);
      const TensorImage y = translate(x, sample_noise(x.height(), x.width(), tr_seed), tr_gamma, tr_domain, s);
      const fs::path out = tr_out.empty() ? fs::path(tr_in + "." + tr_domain + ".png") : fs::path(tr_out);
      write_png(out, y);
      write_json(out.string() + ".config.json", {{"command", "translate"}, {"model", mp.string()}, {"in", tr_in},
                                                 {"domain", tr_domain}, {"gamma", tr_gamma}, {"seed", tr_seed}});
      std::cout << out.string() << '\n';
      return 0;
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "FID and structure distance between image folders");
  std::string ev_source, ev_target, ev_model, ev_domain, ev_out;
  double ev_gamma = 1.0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--source", ev_source, "Folder of PNG inputs")->required();
  ev->add_option("--target", ev_target, "Folder of reference PNGs")->required();
  ev->add_option("--model", ev_model, "Translate the source first with this checkpoint");
  ev->add_option("--domain", ev_domain, "Target domain when --model is given");
  ev->add_option("--gamma", ev_gamma);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--out", ev_out, "JSON report path");
  add_config(ev);
  ev->callback([&] {
    action = [&] {
      data::IngestOptions io;
      const auto src = data::ingest(ev_source, io);
      const auto tgt = data::ingest(ev_target, io);
      std::vector<TensorImage> outs = src;
      json report = {{"command", "evaluate"}, {"source", ev_source}, {"target", ev_target}};
      if (!ev_model.empty()) {
        if (ev_domain.empty()) throw ValidationError("--domain is required with --model");
        const GeneratorState s = load_generator(model_path(ev_model));
        for (std::size_t i = 0; i < src.size(); ++i)
          outs[i] = translate(src[i], sample_noise(src[i].height(), src[i].width(), ev_seed + i), ev_gamma, ev_domain, s);
        report["model"] = ev_model;
        report["domain"] = ev_domain;
        report["gamma"] = ev_gamma;
        report["seed"] = ev_seed;
      }
      const auto& net = *perceptual::default_feature_net();
      report["fid"] = perceptual::fid(outs, tgt, net);
      report["count_source"] = src.size();
      report["count_target"] = tgt.size();
      if (!ev_model.empty()) {
        double d = 0;
        for (std::size_t i = 0; i < src.size(); ++i) d += perceptual::dino_struct_dist(net, src[i], outs[i]);
        report["dino_struct"] = d / static_cast<double>(src.size());
      }
      if (!ev_out.empty()) write_json(ev_out, report);
      std::cout << report.dump() << '\n';
      return 0;
    };
  });

  // ablate / sweep
  auto* ab = app.add_subcommand("ablate", "Train each ablation variant and tabulate metrics");
  TrainOptions ab_o;
  std::string ab_variants = "A,B,C,D,FULL";
  ab_o.add(ab);
  ab->add_option("--variants", ab_variants, "Comma list of A, B, C, D, FULL");
  add_config(ab);
  ab->callback([&] {
    action = [&] {
      const auto variants = parse_variants(ab_variants);
      TrainConfig c = ab_o.config(LossWeights::unpaired_defaults());
      const fs::path out = output_path(ab_o.out, "ablation");
      fs::create_directories(out);
      const GeneratorState bb = load_generator(model_path(ab_o.model));
      const AblationResult r = run_ablation(variants, bb, load_unpaired(ab_o.data, ab_o.holdout), c);
      json cfg = resolved(ab_o, c, "ablate");
      cfg["variants"] = ab_variants;
      for (std::size_t i = 0; i < r.rows.size(); ++i) {
        save_generator(out / r.rows[i].variant, r.states[i], {{"train_config", cfg}});
        r.histories[i].save(out / r.rows[i].variant / "history.jsonl");
      }
      std::ofstream csv(out / "ablation.csv", std::ios::binary);
      write_ablation_csv(csv, r.rows);
      write_json(out / "config.json", cfg);
      write_ablation_csv(std::cout, r.rows);
      return 0;
    };
  });

  auto* sw = app.add_subcommand("sweep", "Train FULL on nested training subsets");
  TrainOptions sw_o;
  std::vector<int> sw_sizes;
  sw_o.add(sw);
  sw->add_option("--sizes", sw_sizes, "Comma list of training subset sizes")->delimiter(',')->required();
  add_config(sw);
  sw->callback([&] {
    action = [&] {
      TrainConfig c = sw_o.config(LossWeights::unpaired_defaults());
      const fs::path out = output_path(sw_o.out, "sweep");
      fs::create_directories(out);
      const GeneratorState bb = load_generator(model_path(sw_o.model));
      const SweepResult r = dataset_size_sweep(sw_sizes, bb, load_unpaired(sw_o.data, sw_o.holdout), c);
      json cfg = resolved(sw_o, c, "sweep");
      cfg["sizes"] = sw_sizes;
      std::ofstream csv(out / "sweep.csv", std::ios::binary);
      write_sweep_csv(csv, r.rows);
      write_json(out / "config.json", cfg);
      write_sweep_csv(std::cout, r.rows);
      return 0;
    };
  });

  // bench
  auto* be = app.add_subcommand("bench", "Single-image forward latency");
  std::string be_model, be_out;
  int be_size = 64, be_reps = 10;
  double be_gamma = 1.0;
  be->add_option("--model", be_model, "Checkpoint (default: randomly initialized generator)");
  be->add_option("--size", be_size, "Image side in pixels");
  be->add_option("--reps", be_reps, "Timed repetitions (>= 3)");
  be->add_option("--gamma", be_gamma);
  be->add_option("--out", be_out, "JSON report path");
  add_config(be);
  be->callback([&] {
    action = [&] {
      if (be_reps < 3) throw ValidationError("--reps must be >= 3");
      const GeneratorState s = be_model.empty() ? init_generator({}) : load_generator(model_path(be_model));
      const json report = bench_translate(s, be_size, be_reps, be_gamma).to_json();
      if (!be_out.empty()) write_json(be_out, report);
      std::cout << report.dump() << '\n';
      return 0;
    };
  });

  // serve
  auto* se = app.add_subcommand("serve", "HTTP inference service");
  std::vector<std::string> se_models;
  std::string se_host = "127.0.0.1";
  int se_port = 8080, se_threads = 4;
  std::size_t se_max = 4u << 20;
  se->add_option("--model", se_models, "Checkpoint(s); the first is the default (default: unpaired-FULL)");
  se->add_option("--host", se_host);
  se->add_option("--port", se_port);
  se->add_option("--threads", se_threads);
  se->add_option("--max-request-bytes", se_max);
  add_config(se);
  se->callback([&] {
    action = [&] {
      std::vector<ServedModel> models;
      if (se_models.empty()) se_models.push_back("");
      for (const auto& m : se_models) {
        const fs::path p = model_path(m);
        models.push_back({fs::absolute(p).lexically_normal().filename().string(), load_generator(p)});
      }
      TranslationService service(std::move(models), {se_max, se_threads});
      std::cerr << "serving on http://" << se_host << ':' << se_port << std::endl;
      if (!service.listen(se_host, se_port)) throw std::runtime_error("cannot listen on " + se_host + ":" + std::to_string(se_port));
      return 0;
    };
  });

  try {
    expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    std::cerr << "usage error: " << e.what() << "\n" << "run 'turbo-i2i --help' for usage\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  try {
    return action ? action() : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace turbo::cli
