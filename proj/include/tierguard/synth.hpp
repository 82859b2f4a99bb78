// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tierguard/backend.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/signals.hpp"
#include "tierguard/taxonomy.hpp"

namespace tierguard {

struct BaseSample {
  std::string id;
  std::string text;
  SafetyLabel label = SafetyLabel::kSafe;
  std::optional<std::string> category;
};

/// JSONL rows {"id"?, "text", "label", "category"?}; the id defaults to the
/// 0-based row index.
std::vector<BaseSample> parse_corpus(std::istream& in, const CategoryRegistry& registry = builtin_registry());
std::vector<BaseSample> load_corpus(const std::filesystem::path& path,
                                    const CategoryRegistry& registry = builtin_registry());

enum class CounterfactualTarget { kMaintain, kReverse };
std::string_view to_string(CounterfactualTarget t);

struct MutationSpec {
  int k = 1;
  std::vector<RuleOp> allowed_ops{RuleOp::kAddNew, RuleOp::kExpandScope, RuleOp::kNarrowScope};
  CounterfactualTarget target = CounterfactualTarget::kReverse;

  /// Throws Error{kInvalidArgument}.
  void validate() const;
};

/// Per-sample spec drawing. k is uniform in [k_min, k_max], each of the k
/// rule slots draws an op from allowed_ops (the drawn set becomes the
/// sample's allowed_ops) and the target is drawn from `targets`.
struct SpecSampler {
  int k_min = 1;
  int k_max = 1;
  std::vector<RuleOp> allowed_ops{RuleOp::kAddNew, RuleOp::kExpandScope, RuleOp::kNarrowScope};
  std::vector<CounterfactualTarget> targets{CounterfactualTarget::kMaintain, CounterfactualTarget::kReverse};

  static SpecSampler fixed(const MutationSpec& spec);
  MutationSpec draw(std::mt19937_64& rng) const;
  void validate() const;
};

/// {"k"} or {"k_min", "k_max"}, "allowed_ops": [...], "target":
/// "maintain"|"reverse"|"either". Throws Error{kInvalidArgument}.
SpecSampler spec_sampler_from_json(const nlohmann::json& doc);

struct Mutation {
  std::string mutated_input;
  bool input_modified = false;
  ValidatedPolicy policy;
};

struct Judgment {
  SafetyLabel label = SafetyLabel::kSafe;
  std::string category;
  std::string explanation;
};

struct Provenance {
  std::string base_id;
  std::size_t index = 0;
  MutationSpec spec;
  std::uint64_t seed = 0;
  std::string teacher;
  std::string verifier;
};

struct SynthTriplet {
  std::string mutated_input;
  bool input_modified = false;
  ValidatedPolicy policy;
  Judgment judgment;
  Provenance provenance;
};

nlohmann::json triplet_to_json(const SynthTriplet& triplet);

struct TeacherSettings {
  double temperature = 0.0;
  int max_tokens = 1024;
};

/// Prompt asking the teacher for `spec.k` rules as a fenced JSON block.
std::string render_mutation_prompt(const BaseSample& sample, const MutationSpec& spec,
                                   const CategoryRegistry& system);

/// Stage 1. Throws Error{kTeacherParseError} for an unusable reply and
/// PolicyValidationError for rules that fail validation.
Mutation mutate_policy(const BaseSample& sample, const MutationSpec& spec, Backend& teacher,
                       const CategoryRegistry& system = builtin_registry(), const TeacherSettings& settings = {});

/// Stage 2. The teacher sees only the inference prompt built from the
/// mutated input and the policy. Throws Error{kTeacherParseError}.
Judgment refine_response(const std::string& mutated_input, const ValidatedPolicy& policy, Backend& teacher,
                         const CategoryRegistry& system = builtin_registry(),
                         const TeacherSettings& settings = {});

std::string render_verification_prompt(const SynthTriplet& triplet, const CategoryRegistry& system);

enum class VerifierVerdict { kAgree, kDisagree };

/// First line starting with "AGREE" or "DISAGREE" (case-sensitive, followed by
/// a non-letter or end of line). Throws Error{kVerifierParseError}.
VerifierVerdict parse_verifier_reply(std::string_view reply);

struct FilterResult {
  bool keep = false;
  std::string reason;  // "verifier_disagreed" or "verifier_unparseable" when discarded
};

/// Stage 3.
FilterResult consistency_filter(const SynthTriplet& triplet, Backend& verifier,
                                const CategoryRegistry& system = builtin_registry());

struct PipelineStats {
  std::size_t input = 0;
  std::size_t stage1_fail = 0;
  std::size_t stage2_fail = 0;
  std::size_t verifier_disagreed = 0;
  std::size_t verifier_unparseable = 0;
  std::size_t kept = 0;

  std::size_t accounted() const {
    return stage1_fail + stage2_fail + verifier_disagreed + verifier_unparseable + kept;
  }
};

enum class BackendErrorPolicy { kAbort, kDiscard };

struct PipelineOptions {
  std::uint64_t seed = 0;
  BackendErrorPolicy error_policy = BackendErrorPolicy::kAbort;
  unsigned parallelism = 1;
  TeacherSettings teacher;
};

/// Streams every sample through the three stages and writes kept triplets as
/// JSONL. Throws Error{kInvalidArgument} on an empty corpus.
PipelineStats run_pipeline(std::span<const BaseSample> corpus, const SpecSampler& sampler, Backend& teacher,
                           Backend& verifier, std::ostream& out, const PipelineOptions& options = {},
                           const CategoryRegistry& system = builtin_registry());
PipelineStats run_pipeline(std::span<const BaseSample> corpus, const SpecSampler& sampler, Backend& teacher,
                           Backend& verifier, const std::filesystem::path& out_path,
                           const PipelineOptions& options = {},
                           const CategoryRegistry& system = builtin_registry());

nlohmann::json stats_to_json(const PipelineStats& stats);

}  // namespace tierguard
