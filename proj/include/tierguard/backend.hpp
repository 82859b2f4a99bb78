// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tierguard {

inline constexpr int kDefaultTopLogprobs = 32;

struct CompletionRequest {
  std::string prompt;
  int max_new_tokens = 1;
  int top_logprobs = kDefaultTopLogprobs;  // 0 disables logprob capture
  std::vector<std::string> stop_sequences;
  double temperature = 0.0;

  bool operator==(const CompletionRequest&) const = default;
};

struct CompletionResult {
  std::string text;
  std::string first_token;
  /// Natural-log probabilities of the top-k alternatives at position 0.
  std::map<std::string, double> first_token_top_logprobs;

  bool operator==(const CompletionResult&) const = default;
};

/// Anything that completes a prompt and reports first-token logprobs.
/// Implementations must be safe to call from several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  /// Identifier recorded in provenance and logs.
  virtual std::string name() const = 0;
};

/// Replays canned results strictly in order and records every request.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(std::vector<CompletionResult> script = {}, std::string name = "mock");

  CompletionResult complete(const CompletionRequest& request) override;
  std::string name() const override { return name_; }

  void push(CompletionResult result);
  std::vector<CompletionRequest> record_requests() const;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::deque<CompletionResult> script_;
  std::vector<CompletionRequest> received_;
  std::string name_;
};

/// Shorthand for a scripted result: first token plus (token, probability)
/// pairs, stored as natural-log values.
CompletionResult scripted_result(std::string first_token,
                                 const std::vector<std::pair<std::string, double>>& probabilities,
                                 std::string text = {});

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_name;
  std::string completions_path = "/v1/completions";
  int timeout_ms = 30000;
  int retries = 0;
  int top_k_logprobs = kDefaultTopLogprobs;
  std::string api_key_env = "TIERGUARD_API_KEY";
  /// Resolved from api_key_env at load time; never read from config files.
  std::string api_key;
};

/// Reads the backend block of a config document. Throws
/// Error{kConfigInvalid} on bad values.
BackendConfig backend_config_from_json(const nlohmann::json& doc);

/// Completions-style JSON API:
///   request  {model, prompt, max_tokens, temperature, stop, logprobs}
///   response {choices: [{text, logprobs: {tokens: [...], top_logprobs: [{tok: lp}, ...]}}]}
/// HTTP >= 400 and connection failures raise kTransportError and are retried
/// up to `retries` times; a missing logprob block raises kMalformedResponse.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  CompletionResult complete(const CompletionRequest& request) override;
  std::string name() const override;

  const BackendConfig& config() const { return config_; }

 private:
  CompletionResult complete_once(const CompletionRequest& request) const;
  BackendConfig config_;
};

/// Wire mapping, exposed for tests.
nlohmann::json build_completion_payload(const CompletionRequest& request, const std::string& model);
CompletionResult parse_completion_response(const nlohmann::json& body, const CompletionRequest& request);

}  // namespace tierguard
