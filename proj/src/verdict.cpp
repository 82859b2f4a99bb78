// SPDX-License-Identifier: Apache-2.0
#include "tierguard/verdict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "tierguard/error.hpp"

namespace tierguard {
namespace {

constexpr std::string_view kOpenTag = "<explanation>";
constexpr std::string_view kCloseTag = "</explanation>";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

double ScoreVector::at(std::string_view id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return probs[i];
  }
  throw Error(ErrorCode::kNotFound, "no score for category '" + std::string(id) + "'");
}

double ScoreVector::sum() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

std::size_t ScoreVector::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

double ThresholdVector::threshold_for(std::string_view category, TextKind kind) const {
  if (auto it = per_category.find(std::string(category)); it != per_category.end()) {
    return it->second;
  }
  return kind == TextKind::kPromptOnly ? default_prompt : default_response;
}

void ThresholdVector::validate() const {
  auto check = [](const std::string& what, double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "threshold " + what + " = " + std::to_string(v) + " is outside [0,1]");
    }
  };
  check("default_prompt", default_prompt);
  check("default_response", default_response);
  for (const auto& [id, v] : per_category) {
    if (id == kSafeId) {
      throw Error(ErrorCode::kInvalidArgument, "the safe category cannot carry a threshold");
    }
    check(id, v);
  }
}

std::string_view to_string(Decision d) { return d == Decision::kUnsafe ? "unsafe" : "safe"; }

std::string_view to_string(ClassifyMode m) {
  return m == ClassifyMode::kDecisionOnly ? "decision_only" : "with_explanation";
}

std::optional<ClassifyMode> classify_mode_from_string(std::string_view s) {
  if (s == "decision_only") return ClassifyMode::kDecisionOnly;
  if (s == "with_explanation") return ClassifyMode::kWithExplanation;
  return std::nullopt;
}

std::string_view to_string(ExplainMode m) {
  return m == ExplainMode::kContinuation ? "continuation" : "full";
}

std::optional<ExplainMode> explain_mode_from_string(std::string_view s) {
  if (s == "continuation") return ExplainMode::kContinuation;
  if (s == "full") return ExplainMode::kFull;
  return std::nullopt;
}

ScoreVector renormalize(const std::map<std::string, double>& raw, const CategoryRegistry& registry,
                        double floor) {
  if (!(floor > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "renormalization floor must be positive");
  }
  if (registry.size() == 0) {
    throw Error(ErrorCode::kEmptyDistribution, "registry has no categories");
  }
  ScoreVector s;
  s.ids.reserve(registry.size());
  s.probs.reserve(registry.size());
  for (const auto& entry : registry.entries()) {
    auto it = raw.find(entry.id);
    s.ids.push_back(entry.id);
    s.probs.push_back(it == raw.end() ? floor : std::exp(it->second));
  }
  const double total = s.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(ErrorCode::kEmptyDistribution, "category probabilities do not sum to a positive value");
  }
  for (auto& p : s.probs) p /= total;
  return s;
}

Decision decide(std::string_view category, double confidence, const ThresholdVector& thresholds,
                TextKind kind) {
  if (category == kSafeId) return Decision::kSafe;
  return confidence >= thresholds.threshold_for(category, kind) ? Decision::kUnsafe : Decision::kSafe;
}

std::map<std::string, double> canonicalize_logprobs(const std::map<std::string, double>& raw) {
  std::map<std::string, double> out;
  for (const auto& [token, lp] : raw) {
    std::string key(trim(token));
    auto [it, inserted] = out.emplace(key, lp);
    if (!inserted) {
      const double hi = std::max(it->second, lp);
      const double lo = std::min(it->second, lp);
      it->second = hi + std::log1p(std::exp(lo - hi));
    }
  }
  return out;
}

Verdict classify(Backend& backend, const CategoryRegistry& registry, const ValidatedPolicy& policy,
                 const TextInput& text, const ThresholdVector& thresholds, ClassifyMode mode,
                 const ClassifyOptions& options) {
  const bool full = mode == ClassifyMode::kWithExplanation && options.explain_mode == ExplainMode::kFull;

  CompletionRequest request;
  request.prompt = render_prompt(registry, policy, text);
  request.max_new_tokens = full ? options.max_explanation_tokens : 1;
  request.top_logprobs = options.top_k_logprobs;
  request.temperature = 0.0;
  const auto result = backend.complete(request);

  auto raw = canonicalize_logprobs(result.first_token_top_logprobs);
  const std::string first(trim(result.first_token));
  if (raw.empty() && registry.contains(first)) raw.emplace(first, 0.0);
  const bool any_registry_id =
      std::any_of(raw.begin(), raw.end(), [&](const auto& kv) { return registry.contains(kv.first); });
  if (!any_registry_id) {
    throw Error(ErrorCode::kUnmappedFirstToken,
                "first token '" + first + "' is not a category id and no category id is in the top logprobs");
  }

  Verdict v;
  v.scores = renormalize(raw, registry, options.floor);
  const auto best = v.scores.argmax();
  v.category = v.scores.ids[best];
  v.confidence = v.scores.probs[best];
  v.degraded = first != v.category;
  if (v.degraded) {
    spdlog::warn("degraded decision: first token '{}' resolved to category '{}' via top logprobs",
                 first, v.category);
  }
  v.decision = decide(v.category, v.confidence, thresholds, text.kind());

  if (mode == ClassifyMode::kWithExplanation) {
    v.explanation = full ? parse_output(result.text, registry).explanation
                         : explain(backend, request.prompt, v.category, options);
  }
  return v;
}

std::string explain(Backend& backend, const std::string& prior_prompt, std::string_view category,
                    const ClassifyOptions& options) {
  CompletionRequest request;
  request.prompt = prior_prompt + std::string(category);
  request.max_new_tokens = options.max_explanation_tokens;
  request.top_logprobs = 0;
  request.temperature = 0.0;
  return extract_explanation(backend.complete(request).text);
}

std::string extract_explanation(std::string_view text) {
  const auto open = text.find(kOpenTag);
  if (open == std::string_view::npos) {
    throw Error(ErrorCode::kMissingExplanationTags, "no <explanation> tag in output");
  }
  const auto start = open + kOpenTag.size();
  const auto close = text.find(kCloseTag, start);
  if (close == std::string_view::npos) {
    throw Error(ErrorCode::kMissingExplanationTags, "no closing </explanation> tag in output");
  }
  return std::string(text.substr(start, close - start));
}

ParsedOutput parse_output(std::string_view text, const CategoryRegistry& registry) {
  std::size_t pos = 0;
  while (pos < text.size() && is_space(text[pos])) ++pos;
  std::size_t end = pos;
  while (end < text.size() && !is_space(text[end])) ++end;
  std::string token(text.substr(pos, end - pos));
  // A tag glued to the ID ("pc<explanation>...") still yields the ID.
  if (auto tag = token.find('<'); tag != std::string::npos && tag > 0) token.resize(tag);
  if (!registry.contains(token)) {
    throw Error(ErrorCode::kUnmappedFirstToken, "output starts with unknown category '" + token + "'");
  }
  return {std::move(token), extract_explanation(text)};
}

}  // namespace tierguard
