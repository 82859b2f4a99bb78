// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tierguard/error.hpp"
#include "tierguard/taxonomy.hpp"

namespace tierguard {

enum class RuleOp { kAddNew, kExpandScope, kNarrowScope };

std::string_view to_string(RuleOp op);
std::optional<RuleOp> rule_op_from_string(std::string_view s);

struct DynamicRule {
  RuleOp op = RuleOp::kAddNew;
  std::string category_id;
  std::string category_name;  // required for add_new; scope rules take the registry name
  std::vector<std::string> definitions;

  bool operator==(const DynamicRule&) const = default;
};

/// Unvalidated rule set as received from a file, a request, or a teacher model.
struct DynamicPolicy {
  std::vector<DynamicRule> rules;
};

enum class PolicyErrorCode {
  kIdNotSingleLetter,
  kUnknownSystemId,
  kDuplicateRuleId,
  kEmptyDefinition,
  kMissingCategoryName,
};

std::string_view to_string(PolicyErrorCode code);

struct PolicyError {
  PolicyErrorCode code;
  std::size_t rule_index;
  std::string message;

  bool operator==(const PolicyError& other) const {
    return code == other.code && rule_index == other.rule_index;
  }
};

/// Thrown by validate_policy; carries every violation found.
class PolicyValidationError : public Error {
 public:
  explicit PolicyValidationError(std::vector<PolicyError> errors);
  const std::vector<PolicyError>& errors() const { return errors_; }

 private:
  std::vector<PolicyError> errors_;
};

/// A policy that passed validation against a system registry. Rules are
/// normalized: scope rules in registry order, then add_new rules by ID.
/// Scope rules carry the registry's category name.
class ValidatedPolicy {
 public:
  ValidatedPolicy() = default;  // the empty policy

  std::span<const DynamicRule> rules() const { return rules_; }
  bool empty() const { return rules_.empty(); }

 private:
  friend ValidatedPolicy validate_policy(const DynamicPolicy&, const CategoryRegistry&);
  explicit ValidatedPolicy(std::vector<DynamicRule> rules) : rules_(std::move(rules)) {}
  std::vector<DynamicRule> rules_;
};

/// Collects every violation; empty result means the policy is valid.
std::vector<PolicyError> check_policy(const DynamicPolicy& policy, const CategoryRegistry& registry);

/// Throws PolicyValidationError when check_policy reports anything.
ValidatedPolicy validate_policy(const DynamicPolicy& policy, const CategoryRegistry& registry);

/// Wire format: {"rules": [{"op", "category_id", "category_name"?, "definitions": [...]}]}.
/// Structural problems throw Error{kPolicyInvalid}; semantic checks are left to
/// validate_policy.
DynamicPolicy policy_from_json(const nlohmann::json& doc);
DynamicPolicy policy_from_json_text(std::string_view text);
nlohmann::json policy_to_json(std::span<const DynamicRule> rules);

enum class TextKind { kPromptOnly, kResponseOnly, kPair };

std::string_view to_string(TextKind kind);
std::optional<TextKind> text_kind_from_string(std::string_view s);

/// The text under evaluation. Construct through the factories, which enforce
/// that exactly the fields required by the kind are present and non-empty.
class TextInput {
 public:
  static TextInput prompt_only(std::string prompt);
  static TextInput response_only(std::string response);
  static TextInput pair(std::string prompt, std::string response);
  /// Throws Error{kInvalidArgument} when the fields do not match the kind.
  static TextInput make(TextKind kind, std::optional<std::string> prompt,
                        std::optional<std::string> response);

  TextKind kind() const { return kind_; }
  const std::optional<std::string>& prompt() const { return prompt_; }
  const std::optional<std::string>& response() const { return response_; }

  /// prompt_only: raw prompt; response_only: "Response: ..."; pair:
  /// "Prompt: ...\nResponse: ...".
  std::string serialize() const;

 private:
  TextInput(TextKind kind, std::optional<std::string> prompt, std::optional<std::string> response)
      : kind_(kind), prompt_(std::move(prompt)), response_(std::move(response)) {}

  TextKind kind_;
  std::optional<std::string> prompt_;
  std::optional<std::string> response_;
};

/// "- {ID}: {NAME}" then "  - {DEFINITION}" per definition; rules separated
/// by a blank line; no trailing newline. Empty policy renders as "".
std::string render_policy_block(const ValidatedPolicy& policy, const CategoryRegistry& registry);

/// Full inference prompt. `registry` must already include the policy's
/// add_new categories. The "# Dynamic Policy" section is omitted for an
/// empty policy.
std::string render_prompt(const CategoryRegistry& registry, const ValidatedPolicy& policy,
                          const TextInput& text);

/// Recovers the IDs listed under "# Category List" of a rendered prompt.
std::vector<std::string> parse_category_list(std::string_view prompt);

}  // namespace tierguard
