// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tierguard/backend.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/taxonomy.hpp"

namespace tierguard {

inline constexpr double kDefaultFloor = 1e-9;
inline constexpr double kDefaultPromptThreshold = 0.5;
inline constexpr double kDefaultResponseThreshold = 0.8;

/// Probability per registry ID, in registry order. Sums to 1.
struct ScoreVector {
  std::vector<std::string> ids;
  std::vector<double> probs;

  /// Throws Error{kNotFound} for an ID outside the registry it was built from.
  double at(std::string_view id) const;
  double sum() const;
  /// Index of the maximum; the earliest index wins ties.
  std::size_t argmax() const;
};

/// Per-category cutoffs. Categories without an explicit entry fall back to
/// the default for the text kind (pairs use the response default).
struct ThresholdVector {
  std::map<std::string, double> per_category;
  double default_prompt = kDefaultPromptThreshold;
  double default_response = kDefaultResponseThreshold;

  double threshold_for(std::string_view category, TextKind kind) const;
  /// Throws Error{kInvalidArgument} if a value is outside [0,1] or the safe
  /// category has an entry.
  void validate() const;
};

enum class Decision { kSafe, kUnsafe };
std::string_view to_string(Decision d);

struct Verdict {
  std::string category;
  double confidence = 0.0;
  Decision decision = Decision::kSafe;
  ScoreVector scores;
  std::optional<std::string> explanation;
  /// Set when the decoded first token was not the chosen category (for
  /// example a stray whitespace token), so the category came from the
  /// top-logprob map instead.
  bool degraded = false;
};

enum class ClassifyMode { kDecisionOnly, kWithExplanation };
std::string_view to_string(ClassifyMode m);
std::optional<ClassifyMode> classify_mode_from_string(std::string_view s);

/// How the explanation is obtained in kWithExplanation mode.
///  - kContinuation: one single-token decision call, then a second call whose
///    prompt is the decision prompt with the category token appended.
///  - kFull: a single call with a larger token budget; the output is split by
///    parse_output.
enum class ExplainMode { kContinuation, kFull };
std::string_view to_string(ExplainMode m);
std::optional<ExplainMode> explain_mode_from_string(std::string_view s);

struct ClassifyOptions {
  double floor = kDefaultFloor;
  int top_k_logprobs = kDefaultTopLogprobs;
  ExplainMode explain_mode = ExplainMode::kContinuation;
  int max_explanation_tokens = 512;
};

/// p_c = exp(raw[c]) for IDs present in `raw`, `floor` for the rest, then
/// divided by the total. Tokens outside the registry are ignored.
ScoreVector renormalize(const std::map<std::string, double>& raw, const CategoryRegistry& registry,
                        double floor = kDefaultFloor);

/// Safe category is never thresholded; otherwise unsafe iff confidence >= tau.
Decision decide(std::string_view category, double confidence, const ThresholdVector& thresholds,
                TextKind kind);

/// Renders the prompt, requests the first token, renormalizes and decides.
/// `registry` must already be merged with the policy's new categories.
Verdict classify(Backend& backend, const CategoryRegistry& registry, const ValidatedPolicy& policy,
                 const TextInput& text, const ThresholdVector& thresholds, ClassifyMode mode,
                 const ClassifyOptions& options = {});

/// Continuation-mode explanation for an already decided category.
std::string explain(Backend& backend, const std::string& prior_prompt, std::string_view category,
                    const ClassifyOptions& options = {});

/// Text between the first "<explanation>" and the next "</explanation>".
/// Throws Error{kMissingExplanationTags}.
std::string extract_explanation(std::string_view text);

struct ParsedOutput {
  std::string category;
  std::string explanation;
};

/// Splits a full generation: the first whitespace-delimited token must be a
/// registry ID, the explanation follows the tag rule.
ParsedOutput parse_output(std::string_view text, const CategoryRegistry& registry);

/// Strips surrounding whitespace from tokens and merges entries that collide
/// afterwards with log-sum-exp.
std::map<std::string, double> canonicalize_logprobs(const std::map<std::string, double>& raw);

}  // namespace tierguard
