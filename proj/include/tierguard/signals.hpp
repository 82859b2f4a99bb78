// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tierguard {

/// Probability vector: entries >= 0 summing to 1 within 1e-9.
class CategoricalDist {
 public:
  /// Throws Error{kInvalidDistribution}.
  explicit CategoricalDist(std::vector<double> probabilities);

  std::span<const double> probabilities() const { return probs_; }
  std::size_t size() const { return probs_.size(); }

 private:
  std::vector<double> probs_;
};

/// Sum_i p_i ln(p_i / q_i) in nats, 0 ln(0/q) = 0. Returns +inf when some
/// p_i > 0 meets q_i = 0. Throws Error{kLengthMismatch}.
double kl_forward(const CategoricalDist& p, const CategoricalDist& q);

/// Sum_i q_i ln(q_i / p_i): the student-weighted direction.
double kl_reverse(const CategoricalDist& p, const CategoricalDist& q);

/// alpha * kl_forward + (1 - alpha) * kl_reverse. The weighting is a caller
/// choice; 0.5 is only a default.
double combined_distill_loss(const CategoricalDist& p, const CategoricalDist& q, double alpha = 0.5);

enum class SafetyLabel { kSafe, kUnsafe };

std::string_view to_string(SafetyLabel label);
std::optional<SafetyLabel> safety_label_from_string(std::string_view s);

struct Rollout {
  bool parsed = false;
  std::optional<SafetyLabel> label;
  std::optional<std::string> category;
  bool format_valid = true;
};

struct GoldJudgment {
  SafetyLabel label;
  std::string category;
};

/// +0.5 for a matching safety label, +0.5 for a matching category (both
/// require a parsed rollout), -0.2 for an invalid format. Terms stack.
double grpo_reward(const Rollout& rollout, const GoldJudgment& gold);

}  // namespace tierguard
