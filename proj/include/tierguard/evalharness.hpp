// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tierguard/backend.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/signals.hpp"
#include "tierguard/taxonomy.hpp"
#include "tierguard/verdict.hpp"

namespace tierguard {

struct EvalSample {
  std::string id;
  TextKind kind = TextKind::kPromptOnly;
  std::optional<std::string> prompt;
  std::optional<std::string> response;
  SafetyLabel gold_label = SafetyLabel::kSafe;
  std::optional<std::string> gold_category;

  TextInput text() const { return TextInput::make(kind, prompt, response); }
};

/// One JSON object per line:
///   {"id", "kind": "prompt_only"|"response_only"|"pair", "prompt"?, "response"?,
///    "gold_label": "safe"|"unsafe", "gold_category"?}
/// Blank lines are skipped. Errors name the 1-based line:
/// Error{kMalformedLine} for bad JSON, Error{kInvalidSample} for bad rows.
std::vector<EvalSample> parse_dataset(std::istream& in, const CategoryRegistry& registry);
std::vector<EvalSample> load_dataset(const std::filesystem::path& path,
                                     const CategoryRegistry& registry = builtin_registry());

/// Unsafe is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  void add(bool predicted_unsafe, bool gold_unsafe);
  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators: a ratio is 1 when tp = fp = fn = 0, else 0. f1 is 0
/// whenever tp = 0 and fp + fn > 0.
F1Score f1(const ConfusionCounts& counts);

enum class ErrorPolicy { kAbort, kCountAsSafe };

struct EvalOptions {
  ErrorPolicy error_policy = ErrorPolicy::kAbort;
  ClassifyOptions classify;
  unsigned parallelism = 1;
};

struct DatasetReport {
  std::string name;
  ConfusionCounts counts;
  F1Score metrics;
  /// Fraction of rows with a gold_category whose predicted category matches.
  std::optional<double> category_accuracy;
  /// Mean rule-based reward over the same rows, scoring each prediction as a
  /// well-formed rollout.
  std::optional<double> mean_reward;
  std::size_t backend_errors = 0;
};

struct MetricsReport {
  std::vector<DatasetReport> datasets;
  double macro_f1 = 0.0;
};

struct NamedDataset {
  std::string name;
  std::vector<EvalSample> samples;
};

/// Classifies every sample in decision-only mode and aggregates in input
/// order. Backend errors are rethrown with the sample id prefixed unless the
/// error policy counts them as safe predictions. Throws
/// Error{kInvalidArgument} on an empty dataset.
DatasetReport evaluate_dataset(Backend& backend, const CategoryRegistry& registry,
                               const NamedDataset& dataset, const ThresholdVector& thresholds,
                               const EvalOptions& options = {});

MetricsReport evaluate(Backend& backend, const CategoryRegistry& registry,
                       std::span<const NamedDataset> datasets, const ThresholdVector& thresholds,
                       const EvalOptions& options = {});

MetricsReport make_report(std::vector<DatasetReport> datasets);

nlohmann::json report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);

}  // namespace tierguard
