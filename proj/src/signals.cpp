// SPDX-License-Identifier: Apache-2.0
#include "tierguard/signals.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "tierguard/error.hpp"

namespace tierguard {
namespace {

// Shared by both directions: sum_i a_i ln(a_i / b_i).
double directed_kl(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kLengthMismatch, "distributions have lengths " + std::to_string(a.size()) +
                                                " and " + std::to_string(b.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    if (b[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += a[i] * std::log(a[i] / b[i]);
  }
  return total;
}

}  // namespace

CategoricalDist::CategoricalDist(std::vector<double> probabilities) : probs_(std::move(probabilities)) {
  if (probs_.empty()) throw Error(ErrorCode::kInvalidDistribution, "distribution is empty");
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorCode::kInvalidDistribution, "probabilities must be finite and non-negative");
    }
  }
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidDistribution,
                "probabilities sum to " + std::to_string(total) + ", expected 1");
  }
}

double kl_forward(const CategoricalDist& p, const CategoricalDist& q) {
  return directed_kl(p.probabilities(), q.probabilities());
}

double kl_reverse(const CategoricalDist& p, const CategoricalDist& q) {
  return directed_kl(q.probabilities(), p.probabilities());
}

double combined_distill_loss(const CategoricalDist& p, const CategoricalDist& q, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0,1]");
  }
  return alpha * kl_forward(p, q) + (1.0 - alpha) * kl_reverse(p, q);
}

std::string_view to_string(SafetyLabel label) {
  return label == SafetyLabel::kUnsafe ? "unsafe" : "safe";
}

std::optional<SafetyLabel> safety_label_from_string(std::string_view s) {
  if (s == "safe") return SafetyLabel::kSafe;
  if (s == "unsafe") return SafetyLabel::kUnsafe;
  return std::nullopt;
}

double grpo_reward(const Rollout& rollout, const GoldJudgment& gold) {
  // Accumulated in tenths so that every reachable value is the nearest double
  // to its decimal form.
  int tenths = 0;
  if (rollout.parsed && rollout.label == gold.label) tenths += 5;
  if (rollout.parsed && rollout.category == gold.category) tenths += 5;
  if (!rollout.format_valid) tenths -= 2;
  return tenths / 10.0;
}

}  // namespace tierguard
