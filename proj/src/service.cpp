#include "turbo/service.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>

#include "turbo/errors.hpp"

namespace turbo {

struct TranslationService::Worker {
  std::thread thread;
};

namespace {

HttpReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

TranslationService::TranslationService(std::vector<ServedModel> models, ServiceOptions options)
    : models_(std::move(models)), options_(options) {
  if (models_.empty()) throw ValidationError("service needs at least one model");
}

TranslationService::~TranslationService() { stop(); }

const ServedModel* TranslationService::find(const std::string& id) const {
  if (id.empty()) return &models_.front();
  for (const auto& m : models_)
    if (m.id == id) return &m;
  return nullptr;
}

HttpReply TranslationService::translate(const std::string& body) const {
  if (body.size() > options_.max_request_bytes)
    return error_reply(413, "request exceeds " + std::to_string(options_.max_request_bytes) + " bytes");
  const auto started = std::chrono::steady_clock::now();
  const ServedModel* model = nullptr;
  TensorImage x;
  double gamma = 1.0;
  std::int64_t seed = 0;
  std::string domain;
  try {
    const auto req = nlohmann::json::parse(body);
    if (!req.is_object()) throw ValidationError("request body must be a JSON object");
    const std::string id = req.value("model", std::string{});
    model = find(id);
    if (!model) throw ValidationError("unknown model '" + id + "'");
    domain = required<std::string>(req, "domain");
    gamma = required<double>(req, "gamma");
    seed = required<std::int64_t>(req, "seed");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
    if (seed < 0) throw ValidationError("seed must be non-negative");
    model->state.domain_index(domain);
    x = decode_png(base64_decode(required<std::string>(req, "image")));
    if (x.height() % 8 != 0 || x.width() % 8 != 0)
      throw ValidationError("image dimensions must be multiples of 8, got " + std::to_string(x.height()) + "x" +
                            std::to_string(x.width()));
  } catch (const nlohmann::json::exception& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    return error_reply(400, e.what());
  } catch (const std::runtime_error& e) {
    return error_reply(400, e.what());  // undecodable image payload
  }
  try {
    const LatentMap z = sample_noise(x.height(), x.width(), static_cast<std::uint64_t>(seed));
    const TensorImage out = turbo::translate(x, z, gamma, domain, model->state);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return {200,
            {{"image", base64_encode(encode_png(out))},
             {"latency_ms", ms},
             {"gamma", gamma},
             {"seed", seed},
             {"domain", domain},
             {"model", model->id}}};
  } catch (const std::exception& e) {
    return error_reply(500, std::string("inference failed: ") + e.what());
  }
}

HttpReply TranslationService::health() const {
  const auto& m = models_.front();
  return {200, {{"status", "ok"}, {"model", m.id}, {"config_hash", generator_config_hash(m.state)}}};
}

HttpReply TranslationService::models() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& m : models_)
    list.push_back({{"id", m.id},
                    {"config_hash", generator_config_hash(m.state)},
                    {"domains", m.state.config.domains},
                    {"branch", to_string(m.state.config.branch)},
                    {"skips", m.state.config.skips},
                    {"pretrained", m.state.pretrained}});
  return {200, {{"models", list}}};
}

void TranslationService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  server_->set_payload_max_length(options_.max_request_bytes);
  const int threads = options_.threads;
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server_->Post("/translate", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, translate(req.body));
  });
  server_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server_->Get("/models", [this, send](const httplib::Request&, httplib::Response& res) { send(res, models()); });
  // Browser frontends on another origin.
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server_->Options("/translate", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

bool TranslationService::listen(const std::string& host, int port) {
  install_routes();
  return server_->listen(host, port);
}

int TranslationService::start(const std::string& host) {
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw std::runtime_error("could not bind a port on " + host);
  worker_ = std::make_unique<Worker>();
  worker_->thread = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void TranslationService::stop() {
  if (server_) server_->stop();
  if (worker_ && worker_->thread.joinable()) worker_->thread.join();
  worker_.reset();
}

}  // namespace turbo
