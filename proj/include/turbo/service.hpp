#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "turbo/generator.hpp"

namespace httplib {
class Server;
}

namespace turbo {

struct ServiceOptions {
  std::size_t max_request_bytes = 4u << 20;
  int threads = 4;
};

struct ServedModel {
  std::string id;
  GeneratorState state;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Translation endpoints over a fixed set of immutable models. The handlers
/// are plain functions of the request body so they can be exercised without
/// a socket; `listen`/`start` bind them to an HTTP server.
class TranslationService {
 public:
  TranslationService(std::vector<ServedModel> models, ServiceOptions options = {});
  ~TranslationService();
  TranslationService(const TranslationService&) = delete;
  TranslationService& operator=(const TranslationService&) = delete;

  HttpReply translate(const std::string& body) const;
  HttpReply health() const;
  HttpReply models() const;

  /// Blocks until stop(). Returns false if the address could not be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port, serves on a background thread, returns the port.
  int start(const std::string& host = "127.0.0.1");
  void stop();

 private:
  const ServedModel* find(const std::string& id) const;
  void install_routes();

  std::vector<ServedModel> models_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
  struct Worker;
  std::unique_ptr<Worker> worker_;
};

}  // namespace turbo
