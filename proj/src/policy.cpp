// SPDX-License-Identifier: Apache-2.0
#include "tierguard/policy.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

namespace tierguard {
namespace {

constexpr std::string_view kPreamble =
    "You are an expert in content safety evaluation, possessing strong language comprehension "
    "and risk identification skills.\n"
    "Your task is to classify the provided input text into the most appropriate category from "
    "the list below as part of a safety audit project.\n"
    "\n"
    "# Category List\n";

constexpr std::string_view kPolicyHeading = "# Dynamic Policy\n";

constexpr std::string_view kInstructions =
    "# Instructions\n"
    "- Identify the single most relevant category ID for the input text.\n"
    "- On the next line, provide a concise justification for your choice, placing it between "
    "<explanation> and </explanation> tags.\n"
    "\n"
    "---\n"
    "\n"
    "Input Text: ";

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

bool is_single_letter(std::string_view id) {
  return id.size() == 1 && id[0] >= 'a' && id[0] <= 'z';
}

}  // namespace

std::string_view to_string(RuleOp op) {
  switch (op) {
    case RuleOp::kAddNew: return "add_new";
    case RuleOp::kExpandScope: return "expand_scope";
    case RuleOp::kNarrowScope: return "narrow_scope";
  }
  return "";
}

std::optional<RuleOp> rule_op_from_string(std::string_view s) {
  if (s == "add_new") return RuleOp::kAddNew;
  if (s == "expand_scope") return RuleOp::kExpandScope;
  if (s == "narrow_scope") return RuleOp::kNarrowScope;
  return std::nullopt;
}

std::string_view to_string(PolicyErrorCode code) {
  switch (code) {
    case PolicyErrorCode::kIdNotSingleLetter: return "IdNotSingleLetter";
    case PolicyErrorCode::kUnknownSystemId: return "UnknownSystemId";
    case PolicyErrorCode::kDuplicateRuleId: return "DuplicateRuleId";
    case PolicyErrorCode::kEmptyDefinition: return "EmptyDefinition";
    case PolicyErrorCode::kMissingCategoryName: return "MissingCategoryName";
  }
  return "";
}

namespace {
std::string summarize(const std::vector<PolicyError>& errors) {
  std::string out = "invalid dynamic policy:";
  for (const auto& e : errors) {
    out += " [rule " + std::to_string(e.rule_index) + "] " + std::string(to_string(e.code)) + ";";
  }
  return out;
}
}  // namespace

PolicyValidationError::PolicyValidationError(std::vector<PolicyError> errors)
    : Error(ErrorCode::kPolicyInvalid, summarize(errors)), errors_(std::move(errors)) {}

std::vector<PolicyError> check_policy(const DynamicPolicy& policy, const CategoryRegistry& registry) {
  std::vector<PolicyError> errors;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < policy.rules.size(); ++i) {
    const auto& rule = policy.rules[i];
    bool duplicate = !seen.insert(rule.category_id).second;

    if (rule.op == RuleOp::kAddNew) {
      if (!is_single_letter(rule.category_id)) {
        errors.push_back({PolicyErrorCode::kIdNotSingleLetter, i,
                          "new category id '" + rule.category_id +
                              "' must be a single lowercase letter"});
      }
      if (rule.category_name.empty()) {
        errors.push_back({PolicyErrorCode::kMissingCategoryName, i,
                          "new category '" + rule.category_id + "' needs a name"});
      }
      duplicate = duplicate || registry.contains(rule.category_id);
    } else {
      const auto* info = registry.find(rule.category_id);
      if (info == nullptr || info->origin != CategoryOrigin::kSystem) {
        errors.push_back({PolicyErrorCode::kUnknownSystemId, i,
                          "scope rule targets unknown system category '" + rule.category_id + "'"});
      }
    }
    if (duplicate) {
      errors.push_back({PolicyErrorCode::kDuplicateRuleId, i,
                        "category id '" + rule.category_id + "' is already defined"});
    }
    if (rule.definitions.empty() ||
        std::any_of(rule.definitions.begin(), rule.definitions.end(),
                    [](const std::string& d) { return is_blank(d); })) {
      errors.push_back({PolicyErrorCode::kEmptyDefinition, i,
                        "rule for '" + rule.category_id + "' has an empty definition list or entry"});
    }
  }
  return errors;
}

ValidatedPolicy validate_policy(const DynamicPolicy& policy, const CategoryRegistry& registry) {
  auto errors = check_policy(policy, registry);
  if (!errors.empty()) throw PolicyValidationError(std::move(errors));

  std::vector<DynamicRule> scope;
  std::vector<DynamicRule> added;
  for (const auto& rule : policy.rules) {
    if (rule.op == RuleOp::kAddNew) {
      added.push_back(rule);
    } else {
      auto r = rule;
      r.category_name = registry.find(rule.category_id)->name;
      scope.push_back(std::move(r));
    }
  }
  std::sort(scope.begin(), scope.end(), [&](const DynamicRule& a, const DynamicRule& b) {
    return *registry.index_of(a.category_id) < *registry.index_of(b.category_id);
  });
  std::sort(added.begin(), added.end(),
            [](const DynamicRule& a, const DynamicRule& b) { return a.category_id < b.category_id; });
  scope.insert(scope.end(), std::make_move_iterator(added.begin()),
               std::make_move_iterator(added.end()));
  return ValidatedPolicy(std::move(scope));
}

DynamicPolicy policy_from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kPolicyInvalid, msg); };
  if (!doc.is_object() || !doc.contains("rules") || !doc.at("rules").is_array()) {
    fail("policy must be an object with a 'rules' array");
  }
  DynamicPolicy policy;
  std::size_t index = 0;
  for (const auto& item : doc.at("rules")) {
    const std::string where = "rules[" + std::to_string(index++) + "]";
    if (!item.is_object()) fail(where + " must be an object");
    if (!item.contains("op") || !item.at("op").is_string()) fail(where + ".op must be a string");
    auto op = rule_op_from_string(item.at("op").get<std::string>());
    if (!op) fail(where + ".op '" + item.at("op").get<std::string>() + "' is not a known operation");
    if (!item.contains("category_id") || !item.at("category_id").is_string()) {
      fail(where + ".category_id must be a string");
    }
    DynamicRule rule;
    rule.op = *op;
    rule.category_id = item.at("category_id").get<std::string>();
    if (item.contains("category_name")) {
      if (!item.at("category_name").is_string()) fail(where + ".category_name must be a string");
      rule.category_name = item.at("category_name").get<std::string>();
    }
    if (!item.contains("definitions") || !item.at("definitions").is_array()) {
      fail(where + ".definitions must be an array");
    }
    for (const auto& d : item.at("definitions")) {
      if (!d.is_string()) fail(where + ".definitions entries must be strings");
      rule.definitions.push_back(d.get<std::string>());
    }
    policy.rules.push_back(std::move(rule));
  }
  return policy;
}

DynamicPolicy policy_from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kPolicyInvalid, std::string("policy is not valid JSON: ") + e.what());
  }
  return policy_from_json(doc);
}

nlohmann::json policy_to_json(std::span<const DynamicRule> rules) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rules) {
    nlohmann::json item{{"op", to_string(r.op)},
                        {"category_id", r.category_id},
                        {"definitions", r.definitions}};
    if (!r.category_name.empty()) item["category_name"] = r.category_name;
    arr.push_back(std::move(item));
  }
  return nlohmann::json{{"rules", std::move(arr)}};
}

std::string_view to_string(TextKind kind) {
  switch (kind) {
    case TextKind::kPromptOnly: return "prompt_only";
    case TextKind::kResponseOnly: return "response_only";
    case TextKind::kPair: return "pair";
  }
  return "";
}

std::optional<TextKind> text_kind_from_string(std::string_view s) {
  if (s == "prompt_only" || s == "prompt") return TextKind::kPromptOnly;
  if (s == "response_only" || s == "response") return TextKind::kResponseOnly;
  if (s == "pair") return TextKind::kPair;
  return std::nullopt;
}

TextInput TextInput::prompt_only(std::string prompt) {
  return make(TextKind::kPromptOnly, std::move(prompt), std::nullopt);
}

TextInput TextInput::response_only(std::string response) {
  return make(TextKind::kResponseOnly, std::nullopt, std::move(response));
}

TextInput TextInput::pair(std::string prompt, std::string response) {
  return make(TextKind::kPair, std::move(prompt), std::move(response));
}

TextInput TextInput::make(TextKind kind, std::optional<std::string> prompt,
                          std::optional<std::string> response) {
  const bool wants_prompt = kind != TextKind::kResponseOnly;
  const bool wants_response = kind != TextKind::kPromptOnly;
  if (wants_prompt != prompt.has_value() || wants_response != response.has_value()) {
    throw Error(ErrorCode::kInvalidArgument,
                "text kind " + std::string(to_string(kind)) + " requires " +
                    (wants_prompt && wants_response ? "prompt and response"
                     : wants_prompt                 ? "prompt only"
                                                    : "response only"));
  }
  if ((prompt && prompt->empty()) || (response && response->empty())) {
    throw Error(ErrorCode::kInvalidArgument, "prompt/response must be non-empty");
  }
  return TextInput(kind, std::move(prompt), std::move(response));
}

std::string TextInput::serialize() const {
  switch (kind_) {
    case TextKind::kPromptOnly: return *prompt_;
    case TextKind::kResponseOnly: return "Response: " + *response_;
    case TextKind::kPair: return "Prompt: " + *prompt_ + "\nResponse: " + *response_;
  }
  return {};
}

std::string render_policy_block(const ValidatedPolicy& policy, const CategoryRegistry& registry) {
  std::string out;
  for (const auto& rule : policy.rules()) {
    if (!out.empty()) out += "\n\n";
    const auto* info = registry.find(rule.category_id);
    const std::string& name =
        rule.op == RuleOp::kAddNew || info == nullptr ? rule.category_name : info->name;
    out += "- " + rule.category_id + ": " + name;
    for (const auto& def : rule.definitions) {
      out += "\n  - " + def;
    }
  }
  return out;
}

std::string render_prompt(const CategoryRegistry& registry, const ValidatedPolicy& policy,
                          const TextInput& text) {
  std::string out(kPreamble);
  for (const auto& entry : registry.entries()) {
    out += "- " + entry.id + ": " + entry.name + "\n";
  }
  out += "\n";
  if (!policy.empty()) {
    out += kPolicyHeading;
    out += render_policy_block(policy, registry);
    out += "\n\n";
  }
  out += kInstructions;
  out += text.serialize();
  return out;
}

std::vector<std::string> parse_category_list(std::string_view prompt) {
  std::vector<std::string> ids;
  constexpr std::string_view kHeading = "# Category List\n";
  auto pos = prompt.find(kHeading);
  if (pos == std::string_view::npos) return ids;
  pos += kHeading.size();
  while (pos < prompt.size()) {
    auto eol = prompt.find('\n', pos);
    if (eol == std::string_view::npos) eol = prompt.size();
    auto line = prompt.substr(pos, eol - pos);
    if (line.size() < 2 || line.substr(0, 2) != "- ") break;
    auto colon = line.find(':');
    if (colon == std::string_view::npos) break;
    ids.emplace_back(line.substr(2, colon - 2));
    pos = eol + 1;
  }
  return ids;
}

}  // namespace tierguard
