// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "tierguard/backend.hpp"
#include "tierguard/taxonomy.hpp"
#include "tierguard/verdict.hpp"

namespace httplib {
class Server;
}

namespace tierguard {

struct GatewayConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  BackendConfig backend;
  ThresholdVector thresholds;
  ClassifyMode default_mode = ClassifyMode::kDecisionOnly;
  std::optional<std::filesystem::path> registry_override_path;
  ClassifyOptions classify;  // floor, explain mode and token budget
  unsigned server_workers = 64;
};

/// {"default_prompt", "default_response", "per_category": {id: tau}}; absent
/// fields keep the values of `base`. Throws Error{kInvalidArgument} on bad
/// types or ranges.
ThresholdVector thresholds_from_json(const nlohmann::json& doc, const ThresholdVector& base = {});

/// Parses a JSON config. `source` names the input in messages. Throws
/// Error{kConfigParseError} (syntax or field type, with line or field) and
/// Error{kConfigInvalid} (failed invariant).
GatewayConfig parse_config(std::string_view text, const std::string& source = "<config>");
GatewayConfig load_config(const std::filesystem::path& path);

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Request handling, independent of the HTTP server so it can be driven
/// directly. Holds only immutable state plus the shared backend handle.
class Gateway {
 public:
  Gateway(GatewayConfig config, std::shared_ptr<Backend> backend);

  /// POST /v1/classify
  HttpReply handle_classify(std::string_view body) const;
  /// GET /healthz
  HttpReply healthz() const;

  const GatewayConfig& config() const { return config_; }
  const CategoryRegistry& registry() const { return registry_; }

 private:
  GatewayConfig config_;
  CategoryRegistry registry_;
  std::shared_ptr<Backend> backend_;
};

/// HTTP front end over a Gateway.
class GatewayServer {
 public:
  // One worker per in-flight connection; keep-alive clients hold theirs.
  explicit GatewayServer(const Gateway& gateway, unsigned workers = 64);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  /// Binds to an ephemeral port and returns it. Call serve() afterwards.
  int bind_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool serve();
  void stop();
  void wait_until_ready() const;

 private:
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace tierguard
