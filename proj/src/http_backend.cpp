// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <limits>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tierguard/backend.hpp"
#include "tierguard/error.hpp"

namespace tierguard {
namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path_prefix;
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

// Accepts both the legacy {token: logprob} object and the newer
// [{token, logprob}] list at one position.
std::map<std::string, double> read_top_logprobs(const nlohmann::json& position) {
  std::map<std::string, double> out;
  auto put = [&](const std::string& token, const nlohmann::json& value) {
    if (!value.is_number()) {
      throw Error(ErrorCode::kMalformedResponse, "logprob for '" + token + "' is not a number");
    }
    double lp = value.get<double>();
    if (lp > 1e-6) {
      throw Error(ErrorCode::kMalformedResponse, "positive logprob for '" + token + "'");
    }
    out[token] = std::min(lp, 0.0);
  };
  if (position.is_object()) {
    for (auto it = position.begin(); it != position.end(); ++it) put(it.key(), it.value());
  } else if (position.is_array()) {
    for (const auto& item : position) {
      if (!item.is_object() || !item.contains("token") || !item.contains("logprob")) {
        throw Error(ErrorCode::kMalformedResponse, "top_logprobs entry lacks token/logprob");
      }
      put(item.at("token").get<std::string>(), item.at("logprob"));
    }
  } else {
    throw Error(ErrorCode::kMalformedResponse, "top_logprobs position has unexpected type");
  }
  return out;
}

}  // namespace

BackendConfig backend_config_from_json(const nlohmann::json& doc) {
  BackendConfig cfg;
  auto invalid = [](const std::string& what) { throw Error(ErrorCode::kConfigInvalid, what); };
  try {
    cfg.base_url = doc.value("base_url", cfg.base_url);
    cfg.model_name = doc.value("model_name", cfg.model_name);
    cfg.completions_path = doc.value("completions_path", cfg.completions_path);
    cfg.timeout_ms = doc.value("timeout_ms", cfg.timeout_ms);
    cfg.retries = doc.value("retries", cfg.retries);
    cfg.top_k_logprobs = doc.value("top_k_logprobs", cfg.top_k_logprobs);
    cfg.api_key_env = doc.value("api_key_env", cfg.api_key_env);
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("backend: ") + e.what());
  }
  if (cfg.base_url.empty()) invalid("backend.base_url must be non-empty");
  if (cfg.timeout_ms <= 0) invalid("backend.timeout_ms must be positive");
  if (cfg.retries < 0) invalid("backend.retries must be >= 0");
  if (cfg.top_k_logprobs < 0) invalid("backend.top_k_logprobs must be >= 0");
  if (!cfg.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg.api_key_env.c_str())) cfg.api_key = key;
  }
  return cfg;
}

nlohmann::json build_completion_payload(const CompletionRequest& request, const std::string& model) {
  nlohmann::json payload{{"prompt", request.prompt},
                         {"max_tokens", request.max_new_tokens},
                         {"temperature", request.temperature}};
  if (!model.empty()) payload["model"] = model;
  if (!request.stop_sequences.empty()) payload["stop"] = request.stop_sequences;
  if (request.top_logprobs > 0) payload["logprobs"] = request.top_logprobs;
  return payload;
}

CompletionResult parse_completion_response(const nlohmann::json& body,
                                           const CompletionRequest& request) {
  auto malformed = [](const std::string& what) {
    throw Error(ErrorCode::kMalformedResponse, what);
  };
  if (!body.is_object() || !body.contains("choices") || !body.at("choices").is_array() ||
      body.at("choices").empty()) {
    malformed("response has no choices");
  }
  const auto& choice = body.at("choices").at(0);
  CompletionResult result;
  if (choice.contains("text") && choice.at("text").is_string()) {
    result.text = choice.at("text").get<std::string>();
  }

  const nlohmann::json* logprobs = nullptr;
  if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
    logprobs = &choice.at("logprobs");
  }
  if (logprobs != nullptr) {
    if (logprobs->contains("tokens") && logprobs->at("tokens").is_array() &&
        !logprobs->at("tokens").empty()) {
      result.first_token = logprobs->at("tokens").at(0).get<std::string>();
    }
    if (logprobs->contains("top_logprobs") && logprobs->at("top_logprobs").is_array() &&
        !logprobs->at("top_logprobs").empty() && !logprobs->at("top_logprobs").at(0).is_null()) {
      result.first_token_top_logprobs = read_top_logprobs(logprobs->at("top_logprobs").at(0));
    }
  }
  if (request.top_logprobs > 0 && result.first_token_top_logprobs.empty()) {
    malformed("response lacks first-position top_logprobs");
  }
  if (result.first_token.empty() && !result.first_token_top_logprobs.empty()) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [token, lp] : result.first_token_top_logprobs) {
      if (lp > best) {
        best = lp;
        result.first_token = token;
      }
    }
  }
  return result;
}

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {}

std::string HttpBackend::name() const {
  return "http:" + (config_.model_name.empty() ? std::string("default") : config_.model_name) +
         "@" + config_.base_url;
}

CompletionResult HttpBackend::complete(const CompletionRequest& request) {
  for (int attempt = 0;; ++attempt) {
    try {
      return complete_once(request);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTransportError || attempt >= config_.retries) throw;
      spdlog::warn("backend {} transport error (attempt {}): {}", name(), attempt + 1, e.what());
    }
  }
}

CompletionResult HttpBackend::complete_once(const CompletionRequest& request) const {
  const auto url = split_url(config_.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

  const auto payload = build_completion_payload(request, config_.model_name).dump();
  auto res = client.Post(url.path_prefix + config_.completions_path, payload, "application/json");
  if (!res) {
    throw Error(ErrorCode::kTransportError,
                "request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status >= 400) {
    throw Error(ErrorCode::kTransportError,
                "backend returned HTTP " + std::to_string(res->status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kMalformedResponse, std::string("backend body is not JSON: ") + e.what());
  }
  try {
    return parse_completion_response(body, request);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedResponse, std::string("unexpected response shape: ") + e.what());
  }
}

}  // namespace tierguard
