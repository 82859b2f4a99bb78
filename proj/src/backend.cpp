// SPDX-License-Identifier: Apache-2.0
#include "tierguard/backend.hpp"

#include <cmath>

#include "tierguard/error.hpp"

namespace tierguard {

MockBackend::MockBackend(std::vector<CompletionResult> script, std::string name)
    : script_(script.begin(), script.end()), name_(std::move(name)) {}

CompletionResult MockBackend::complete(const CompletionRequest& request) {
  std::lock_guard<std::mutex> lock(mu_);
  received_.push_back(request);
  if (script_.empty()) {
    throw Error(ErrorCode::kScriptExhausted,
                name_ + ": script exhausted after " + std::to_string(received_.size() - 1) +
                    " completions");
  }
  auto result = std::move(script_.front());
  script_.pop_front();
  return result;
}

void MockBackend::push(CompletionResult result) {
  std::lock_guard<std::mutex> lock(mu_);
  script_.push_back(std::move(result));
}

std::vector<CompletionRequest> MockBackend::record_requests() const {
  std::lock_guard<std::mutex> lock(mu_);
  return received_;
}

std::size_t MockBackend::remaining() const {
  std::lock_guard<std::mutex> lock(mu_);
  return script_.size();
}

CompletionResult scripted_result(std::string first_token,
                                 const std::vector<std::pair<std::string, double>>& probabilities,
                                 std::string text) {
  CompletionResult r;
  r.first_token = std::move(first_token);
  for (const auto& [token, p] : probabilities) {
    r.first_token_top_logprobs[token] = std::log(p);
  }
  r.text = text.empty() ? r.first_token : std::move(text);
  return r;
}

}  // namespace tierguard
