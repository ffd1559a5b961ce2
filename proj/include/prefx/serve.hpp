#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "prefx/pipeline.hpp"

namespace httplib {
class Server;
}

namespace prefx {

struct ServeConfig {
  std::filesystem::path model_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  uint32_t default_k = 10;
  uint32_t default_beam = 10;
  uint32_t max_k = 100;
  uint32_t max_beam = 1000;
  size_t max_prefix_len = 256;
  bool mfq_fallback = true;
  std::optional<std::filesystem::path> demo_dir;
  // HTTP worker threads; 0 picks the library default.
  unsigned threads = 0;

  void validate() const;
  // Keys mirror the field names; absent keys keep their defaults.
  static ServeConfig from_json(const nlohmann::json& j);
};

// Reads the JSON config (when given), then lets PREFX_MODEL_DIR fill in a
// missing model directory.
ServeConfig load_serve_config(const std::optional<std::filesystem::path>& path);

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

// Request handling independent of the transport. The model is immutable once
// installed and shared by all handlers.
class SuggestService {
 public:
  explicit SuggestService(ServeConfig config);

  // Loads and validates config.model_dir, then marks the service ready.
  void load();
  void install(std::shared_ptr<const QacModel> model);
  bool ready() const { return ready_.load(std::memory_order_acquire); }

  // GET /suggest with raw (un-normalized) parameters.
  HttpReply suggest(const std::optional<std::string>& prev, const std::optional<std::string>& prefix,
                    const std::optional<std::string>& k, const std::optional<std::string>& beam) const;
  HttpReply health() const;

  const ServeConfig& config() const { return config_; }

 private:
  ServeConfig config_;
  std::shared_ptr<const QacModel> model_;
  std::atomic<bool> ready_{false};
};

class HttpServer {
 public:
  explicit HttpServer(SuggestService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds host:port from the service config; port 0 picks a free port.
  // Returns the bound port.
  int bind();
  // Blocks until stop().
  void listen();
  // bind() plus listen() on a background thread.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  SuggestService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace prefx
