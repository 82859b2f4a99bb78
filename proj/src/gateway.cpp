// SPDX-License-Identifier: Apache-2.0
#include "tierguard/gateway.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tierguard/error.hpp"
#include "tierguard/policy.hpp"

namespace tierguard {
namespace {

using nlohmann::json;

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

HttpReply json_reply(int status, const json& body) { return {status, body.dump()}; }

HttpReply request_error(const std::string& message) {
  return json_reply(400, {{"error", "invalid_request"}, {"message", message}});
}

bool is_backend_failure(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTransportError:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kScriptExhausted:
    case ErrorCode::kUnmappedFirstToken:
    case ErrorCode::kMissingExplanationTags:
      return true;
    default:
      return false;
  }
}

CategoryRegistry initial_registry(const GatewayConfig& config) {
  if (config.registry_override_path) return load_registry_file(*config.registry_override_path);
  return builtin_registry();
}

}  // namespace

ThresholdVector thresholds_from_json(const json& doc, const ThresholdVector& base) {
  if (!doc.is_object()) throw Error(ErrorCode::kInvalidArgument, "thresholds must be an object");
  ThresholdVector t = base;
  auto number = [](const json& v, const std::string& field) {
    if (!v.is_number()) throw Error(ErrorCode::kInvalidArgument, "thresholds." + field + " must be a number");
    return v.get<double>();
  };
  if (doc.contains("default_prompt")) t.default_prompt = number(doc.at("default_prompt"), "default_prompt");
  if (doc.contains("default_response")) {
    t.default_response = number(doc.at("default_response"), "default_response");
  }
  if (doc.contains("per_category")) {
    const auto& per = doc.at("per_category");
    if (!per.is_object()) throw Error(ErrorCode::kInvalidArgument, "thresholds.per_category must be an object");
    for (auto it = per.begin(); it != per.end(); ++it) {
      t.per_category[it.key()] = number(it.value(), "per_category." + it.key());
    }
  }
  t.validate();
  return t;
}

GatewayConfig parse_config(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigParseError,
                source + ":" + std::to_string(line_of(text, e.byte > 0 ? e.byte - 1 : 0)) + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kConfigParseError, source + ": top level must be an object");

  GatewayConfig cfg;
  auto field_error = [&](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::kConfigParseError, source + ": field '" + field + "': " + why);
  };
  auto invalid = [&](const std::string& invariant) {
    throw Error(ErrorCode::kConfigInvalid, source + ": " + invariant);
  };
  auto get_string = [&](const char* key) -> std::optional<std::string> {
    if (!doc.contains(key)) return std::nullopt;
    if (!doc.at(key).is_string()) field_error(key, "expected a string");
    return doc.at(key).get<std::string>();
  };
  auto get_number = [&](const char* key) -> std::optional<double> {
    if (!doc.contains(key)) return std::nullopt;
    if (!doc.at(key).is_number()) field_error(key, "expected a number");
    return doc.at(key).get<double>();
  };

  if (auto addr = get_string("listen_addr")) {
    auto colon = addr->rfind(':');
    if (colon == std::string::npos || colon == 0) field_error("listen_addr", "expected host:port");
    cfg.listen_host = addr->substr(0, colon);
    try {
      std::size_t used = 0;
      cfg.listen_port = std::stoi(addr->substr(colon + 1), &used);
      if (used != addr->size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      field_error("listen_addr", "port is not a number");
    }
    if (cfg.listen_port < 0 || cfg.listen_port > 65535) invalid("listen_addr port out of range");
  }

  if (doc.contains("backend")) {
    if (!doc.at("backend").is_object()) field_error("backend", "expected an object");
    try {
      cfg.backend = backend_config_from_json(doc.at("backend"));
    } catch (const Error& e) {
      throw Error(e.code(), source + ": " + e.what());
    }
  } else {
    cfg.backend = backend_config_from_json(json::object());
  }
  cfg.classify.top_k_logprobs = cfg.backend.top_k_logprobs;

  if (doc.contains("thresholds")) {
    try {
      cfg.thresholds = thresholds_from_json(doc.at("thresholds"));
    } catch (const Error& e) {
      invalid(std::string("thresholds invalid: ") + e.what());
    }
  }

  if (auto mode = get_string("default_mode")) {
    auto m = classify_mode_from_string(*mode);
    if (!m) invalid("default_mode must be decision_only or with_explanation");
    cfg.default_mode = *m;
  }
  if (auto mode = get_string("explain_mode")) {
    auto m = explain_mode_from_string(*mode);
    if (!m) invalid("explain_mode must be continuation or full");
    cfg.classify.explain_mode = *m;
  }
  if (auto n = get_number("max_explanation_tokens")) {
    if (*n < 1) invalid("max_explanation_tokens must be >= 1");
    cfg.classify.max_explanation_tokens = static_cast<int>(*n);
  }
  if (auto n = get_number("workers")) {
    if (*n < 1 || *n > 4096) invalid("workers must be in [1, 4096]");
    cfg.server_workers = static_cast<unsigned>(*n);
  }
  if (auto floor = get_number("floor")) {
    if (!(*floor > 0.0 && *floor < 1.0)) invalid("floor must lie in (0,1)");
    cfg.classify.floor = *floor;
  }
  if (auto path = get_string("registry_override_path")) cfg.registry_override_path = *path;
  return cfg;
}

GatewayConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigParseError, path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

Gateway::Gateway(GatewayConfig config, std::shared_ptr<Backend> backend)
    : config_(std::move(config)), registry_(initial_registry(config_)), backend_(std::move(backend)) {}

HttpReply Gateway::healthz() const { return json_reply(200, {{"status", "ok"}}); }

HttpReply Gateway::handle_classify(std::string_view body) const {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return request_error(std::string("body is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) return request_error("body must be a JSON object");

  auto optional_string = [&](const char* key) -> std::optional<std::string> {
    if (!req.contains(key) || req.at(key).is_null()) return std::nullopt;
    if (!req.at(key).is_string()) throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a string");
    return req.at(key).get<std::string>();
  };

  std::optional<TextInput> text;
  ClassifyMode mode = config_.default_mode;
  ThresholdVector thresholds = config_.thresholds;
  bool include_scores = false;
  DynamicPolicy raw_policy;
  try {
    auto kind_name = optional_string("kind");
    if (!kind_name) return request_error("kind is required");
    auto kind = text_kind_from_string(*kind_name);
    if (!kind) return request_error("unknown kind '" + *kind_name + "'");
    auto prompt = optional_string("prompt");
    auto response = optional_string("response");
    // Fields that the kind does not evaluate are accepted and ignored.
    if (*kind == TextKind::kPromptOnly) response.reset();
    if (*kind == TextKind::kResponseOnly) prompt.reset();
    text = TextInput::make(*kind, std::move(prompt), std::move(response));

    if (auto m = optional_string("mode")) {
      auto parsed = classify_mode_from_string(*m);
      if (!parsed) return request_error("unknown mode '" + *m + "'");
      mode = *parsed;
    }
    if (req.contains("thresholds_override") && !req.at("thresholds_override").is_null()) {
      thresholds = thresholds_from_json(req.at("thresholds_override"), config_.thresholds);
    }
    if (req.contains("include_scores")) {
      if (!req.at("include_scores").is_boolean()) return request_error("include_scores must be a boolean");
      include_scores = req.at("include_scores").get<bool>();
    }
    if (req.contains("policy") && !req.at("policy").is_null()) {
      raw_policy = policy_from_json(req.at("policy"));
    }
  } catch (const Error& e) {
    return request_error(e.what());
  }

  const auto errors = check_policy(raw_policy, registry_);
  if (!errors.empty()) {
    auto list = json::array();
    for (const auto& e : errors) {
      list.push_back({{"code", to_string(e.code)}, {"rule_index", e.rule_index}, {"message", e.message}});
    }
    return json_reply(400, {{"error", "invalid_policy"}, {"errors", std::move(list)}});
  }

  try {
    const auto policy = validate_policy(raw_policy, registry_);
    const auto merged = merge_dynamic(registry_, policy);
    const auto verdict = classify(*backend_, merged, policy, *text, thresholds, mode, config_.classify);

    json out{{"category", verdict.category},
             {"category_name", lookup(merged, verdict.category).name},
             {"confidence", verdict.confidence},
             {"decision", to_string(verdict.decision)},
             {"degraded", verdict.degraded}};
    if (include_scores) {
      json scores = json::object();
      for (std::size_t i = 0; i < verdict.scores.ids.size(); ++i) {
        scores[verdict.scores.ids[i]] = verdict.scores.probs[i];
      }
      out["scores"] = std::move(scores);
    }
    if (mode == ClassifyMode::kWithExplanation && verdict.explanation) {
      out["explanation"] = *verdict.explanation;
    }
    return json_reply(200, out);
  } catch (const Error& e) {
    if (is_backend_failure(e.code())) {
      spdlog::warn("classify failed upstream: {}", e.what());
      return json_reply(502, {{"error", "backend_error"}, {"code", to_string(e.code())}, {"message", e.what()}});
    }
    spdlog::error("classify failed: {}", e.what());
    return json_reply(500, {{"error", "internal_error"}, {"code", to_string(e.code())}, {"message", e.what()}});
  } catch (const std::exception& e) {
    spdlog::error("classify failed: {}", e.what());
    return json_reply(500, {{"error", "internal_error"}, {"message", e.what()}});
  }
}

GatewayServer::GatewayServer(const Gateway& gateway, unsigned workers)
    : server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  server_->Post("/v1/classify", [&gateway](const httplib::Request& req, httplib::Response& res) {
    auto reply = gateway.handle_classify(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  server_->Get("/healthz", [&gateway](const httplib::Request&, httplib::Response& res) {
    auto reply = gateway.healthz();
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool GatewayServer::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }

bool GatewayServer::serve() { return server_->listen_after_bind(); }

void GatewayServer::stop() {
  if (server_->is_running()) server_->stop();
}

void GatewayServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace tierguard
