#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dialingle/clock.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/engine.hpp"
#include "dialingle/error.hpp"

namespace dialingle {

struct ServerConfig {
  std::string host = "127.0.0.1";
  /// 0 picks an ephemeral port.
  int port = 8080;
  std::filesystem::path data_dir = "store";
  /// Defaults to <data_dir>/models.
  std::filesystem::path model_dir;
  double tau = 0.3;
  std::size_t retrain_threshold = 50;
  std::int64_t session_idle_timeout_ms = 30 * 60 * 1000;
  std::optional<AutotuneBudget> autotune;
  std::size_t max_model_bytes = 2 * 1024 * 1024;
  ModelConfig model_config;
  RetrainMode retrain_mode = RetrainMode::Deferred;
  std::uint64_t seed = 0;
  std::string cors_origin = "*";
  bool fsync_events = true;
  /// family_id -> held-out file in ingest format, used by the evaluate endpoint.
  std::map<std::string, std::filesystem::path> heldout;

  /// Relative paths resolve against `base_dir`.
  static ServerConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ServerConfig load(const std::filesystem::path& path);
  EngineConfig engine_config() const;
};

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// {"code", "message"} with the status for an error code.
ApiResponse error_response(ErrorCode code, const std::string& message);

/// Transport-independent router over the engine and store. Also owns the
/// background retrain workers (at most one running per family).
class ApiService {
 public:
  ApiService(CorpusStore& store, GameEngine& engine, ServerConfig config);
  ~ApiService();

  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  ApiResponse handle(const ApiRequest& request);

  /// Blocks until no retrain job is running.
  void wait_idle();

  const ServerConfig& config() const { return config_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  ServerConfig config_;
};

/// Store, engine, router and HTTP listener wired together.
class Application {
 public:
  explicit Application(ServerConfig config, const Clock* clock = nullptr);
  ~Application();

  /// Binds the listener and returns the bound port.
  int bind();
  /// Serves until stop(); bind() first.
  void run();
  /// bind() + run() on a background thread; returns the port.
  int start();
  void stop();

  CorpusStore& store();
  GameEngine& engine();
  ApiService& api();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dialingle
