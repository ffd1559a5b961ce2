#include "prefx/serve.hpp"

#include <chrono>
#include <charconv>
#include <cstdlib>
#include <fstream>

#include <httplib.h>

namespace prefx {

namespace {

std::optional<uint32_t> parse_count(const std::string& s) {
  uint32_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || v == 0) return std::nullopt;
  return v;
}

HttpReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

}  // namespace

void ServeConfig::validate() const {
  if (default_k == 0 || default_beam == 0) throw Error("serve config: default_k and default_beam must be at least 1");
  if (default_k > max_k || default_beam > max_beam) throw Error("serve config: defaults exceed the configured maxima");
  if (port < 0 || port > 65535) throw Error("serve config: port out of range");
  if (max_prefix_len == 0) throw Error("serve config: max_prefix_len must be positive");
}

ServeConfig ServeConfig::from_json(const nlohmann::json& j) {
  ServeConfig c;
  try {
    if (j.contains("model_dir")) c.model_dir = j["model_dir"].get<std::string>();
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.default_k = j.value("default_k", c.default_k);
    c.default_beam = j.value("default_beam", c.default_beam);
    c.max_k = j.value("max_k", c.max_k);
    c.max_beam = j.value("max_beam", c.max_beam);
    c.max_prefix_len = j.value("max_prefix_len", c.max_prefix_len);
    c.mfq_fallback = j.value("mfq_fallback", c.mfq_fallback);
    if (j.contains("demo_dir") && !j["demo_dir"].is_null()) c.demo_dir = j["demo_dir"].get<std::string>();
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("serve config: ") + e.what());
  }
  return c;
}

ServeConfig load_serve_config(const std::optional<std::filesystem::path>& path) {
  ServeConfig c;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error("cannot open serve config: " + path->string());
    try {
      c = ServeConfig::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path->string() + ": " + e.what());
    }
  }
  if (c.model_dir.empty()) {
    if (const char* env = std::getenv("PREFX_MODEL_DIR"); env && *env) c.model_dir = env;
  }
  return c;
}

SuggestService::SuggestService(ServeConfig config) : config_(std::move(config)) { config_.validate(); }

void SuggestService::load() {
  if (config_.model_dir.empty()) throw Error("serve: no model directory (set model_dir or PREFX_MODEL_DIR)");
  install(std::make_shared<const QacModel>(QacModel::load(config_.model_dir)));
}

void SuggestService::install(std::shared_ptr<const QacModel> model) {
  if (!model) throw Error("serve: null model");
  if (ready()) throw Error("serve: model already installed");
  model_ = std::move(model);
  ready_.store(true, std::memory_order_release);
}

HttpReply SuggestService::health() const {
  if (!ready()) return {200, {{"status", "loading"}}};
  return {200, {{"status", "ok"}, {"labels", model_->tree_model().labels().size()}}};
}

HttpReply SuggestService::suggest(const std::optional<std::string>& prev, const std::optional<std::string>& prefix,
                                  const std::optional<std::string>& k, const std::optional<std::string>& beam) const {
  const auto t0 = std::chrono::steady_clock::now();
  if (!ready()) return error_reply(503, "model is loading");
  if (!prefix) return error_reply(400, "missing required parameter: prefix");
  if (prefix->size() > config_.max_prefix_len) {
    return error_reply(400, "prefix longer than " + std::to_string(config_.max_prefix_len) + " bytes");
  }
  uint32_t kk = config_.default_k, bb = config_.default_beam;
  if (k) {
    auto v = parse_count(*k);
    if (!v || *v > config_.max_k) return error_reply(400, "k must be an integer in 1.." + std::to_string(config_.max_k));
    kk = *v;
  }
  if (beam) {
    auto v = parse_count(*beam);
    if (!v || *v > config_.max_beam) return error_reply(400, "beam must be an integer in 1.." + std::to_string(config_.max_beam));
    bb = *v;
  }

  const std::string p = normalize_prefix(*prefix);
  const std::string q = normalize_query(prev.value_or(""));
  auto list = model_->suggest_normalized(q, p, bb, kk);
  nlohmann::json suggestions = nlohmann::json::array();
  std::string source = "model";
  if (list.empty() && config_.mfq_fallback) {
    auto hits = model_->mfq().lookup(p);
    if (hits.size() > kk) hits.resize(kk);
    if (!hits.empty()) {
      source = "mfq";
      const double top = static_cast<double>(hits.front().second);
      for (const auto& [query, freq] : hits) suggestions.push_back({{"query", query}, {"score", static_cast<double>(freq) / top}});
    }
  } else {
    for (const auto& s : list) suggestions.push_back({{"query", s.query}, {"score", s.score}});
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, {{"suggestions", std::move(suggestions)}, {"latency_ms", ms}, {"source", source}}};
}

HttpServer::HttpServer(SuggestService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  const auto& cfg = service_.config();
  if (cfg.threads > 0) {
    const unsigned n = cfg.threads;
    server_->new_task_queue = [n] { return new httplib::ThreadPool(n); };
  }
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto param = [](const httplib::Request& req, const char* key) -> std::optional<std::string> {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
  };
  server_->Get("/suggest", [this, send, param](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.suggest(param(req, "prev"), param(req, "prefix"), param(req, "k"), param(req, "beam")));
  });
  server_->Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service_.health()); });
  if (cfg.demo_dir) {
    if (!server_->set_mount_point("/demo", cfg.demo_dir->string())) {
      throw Error("serve: demo directory not found: " + cfg.demo_dir->string());
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  const auto& cfg = service_.config();
  if (cfg.port == 0) {
    port_ = server_->bind_to_any_port(cfg.host);
    if (port_ < 0) throw Error("serve: cannot bind " + cfg.host);
  } else {
    if (!server_->bind_to_port(cfg.host, cfg.port)) throw Error("serve: cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    port_ = cfg.port;
  }
  return port_;
}

void HttpServer::listen() {
  if (port_ < 0) bind();
  server_->listen_after_bind();
}

int HttpServer::start() {
  const int p = bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return p;
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace prefx
