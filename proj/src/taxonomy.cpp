// SPDX-License-Identifier: Apache-2.0
#include "tierguard/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tierguard/error.hpp"
#include "tierguard/policy.hpp"

namespace tierguard {
namespace {

constexpr std::string_view kCrimes = "Crimes and Illegal Activities";
constexpr std::string_view kHate = "Hate Speech";
constexpr std::string_view kHealth = "Physical and Mental Health";
constexpr std::string_view kEthics = "Ethics and Morality";
constexpr std::string_view kPrivacy = "Data Privacy";
constexpr std::string_view kCyber = "Cybersecurity";
constexpr std::string_view kExtremism = "Extremism";
constexpr std::string_view kSuggestions = "Inappropriate Suggestions";
constexpr std::string_view kMinors = "Risks Involving Minors";

struct Row {
  std::string_view id;
  std::string_view name;
  std::string_view dimension;
  std::string_view description;
};

// Category-list order of the inference template.
constexpr Row kBuiltin[] = {
    {"sec", "Safe", "", "No safety risk identified."},
    {"pc", "Pornographic Contraband", kCrimes,
     "Content involving the dissemination of obscene materials, child pornography, and other "
     "illegal sexual information."},
    {"dc", "Drug Crimes", kCrimes,
     "Discussion related to the manufacturing, trafficking, or abuse of illegal drugs or "
     "controlled substances."},
    {"dw", "Dangerous Weapons", kCrimes,
     "Information or instructions regarding the creation, acquisition, or use of illegal weapons "
     "such as firearms and explosives."},
    {"pi", "Property Infringement", kCrimes,
     "Content that encourages or provides methods for theft, fraud, embezzlement, or damage to "
     "public or private property."},
    {"ec", "Economic Crimes", kCrimes,
     "Topics related to financial fraud, money laundering, illegal fundraising, and other "
     "activities that disrupt economic order."},
    {"ac", "Abusive Curses", kHate,
     "Use of profane, vulgar, or insulting language to attack or degrade individuals or groups."},
    {"def", "Defamation", kHate,
     "Spreading false information intended to harm the reputation of a person, group, or "
     "organization."},
    {"ti", "Threats and Intimidation", kHate,
     "Content that explicitly or implicitly threatens violence, harm, or coercion against "
     "others."},
    {"cy", "Cyberbullying", kHate,
     "Persistent online harassment, insults, or social exclusion targeting an individual."},
    {"ph", "Physical Health", kHealth,
     "Content that encourages self-harm, eating disorders, dangerous challenges, or provides "
     "unsafe and unverified medical advice."},
    {"mh", "Mental Health", kHealth,
     "Content that glorifies suicide, promotes harmful psychological practices, or discourages "
     "seeking professional mental health support."},
    {"se", "Social Ethics", kEthics,
     "Content that violates widely accepted societal moral standards, such as promoting academic "
     "misconduct, cheating, or extreme selfishness."},
    {"sci", "Science Ethics", kEthics,
     "Discussion of or incitement to unethical scientific practices, such as non-therapeutic "
     "human cloning or irresponsible genetic engineering."},
    {"pp", "Personal Privacy", kPrivacy,
     "Attempts to elicit, expose, or misuse personally identifiable information (PII) such as "
     "contact details, home addresses, or financial data."},
    {"cs", "Commercial Secret", kPrivacy,
     "Attempts to unlawfully obtain or leak confidential business information, such as trade "
     "secrets, customer data, or internal strategies."},
    {"acc", "Access Control", kCyber,
     "Content related to bypassing security systems, unauthorized account access, or cracking "
     "software protections."},
    {"mc", "Malicious Code", kCyber,
     "Generation, distribution, or discussion of viruses, worms, Trojan horses, ransomware, or "
     "other malicious software."},
    {"ha", "Hacker Attack", kCyber,
     "Providing instructions or tools for conducting cyberattacks like DDoS, SQL injection, or "
     "phishing."},
    {"ps", "Physical Security", kCyber,
     "Information on compromising physical security systems, such as lock-picking techniques or "
     "disabling surveillance equipment."},
    {"ter", "Violent Terrorist Activities", kExtremism,
     "Content that promotes, glorifies, or provides instruction for acts of terrorism and violent "
     "extremism."},
    {"sd", "Social Disruption", kExtremism,
     "Incitement to riots, illegal assemblies, or other activities intended to severely disrupt "
     "social order and public safety."},
    {"ext", "Extremist Ideological Trends", kExtremism,
     "Dissemination of radical ideologies that advocate for violence, hatred, or the overthrow of "
     "established systems."},
    {"fin", "Finance", kSuggestions,
     "Providing unlicensed, speculative, or high-risk financial advice that could lead to "
     "significant monetary loss."},
    {"med", "Medicine", kSuggestions,
     "Offering medical diagnoses, treatment plans, or prescriptions without professional "
     "qualifications, potentially endangering health."},
    {"law", "Law", kSuggestions,
     "Giving unqualified legal advice or interpretations that could lead to adverse legal "
     "consequences."},
    {"cm", "Corruption of Minors", kMinors,
     "Content that encourages minors to engage in harmful or illegal behaviors like underage "
     "drinking, smoking, or truancy."},
    {"ma", "Minor Abuse and Exploitation", kMinors,
     "Content depicting or encouraging physical, psychological, or sexual abuse and exploitation "
     "of children."},
    {"md", "Minor Delinquency", kMinors,
     "Content involving minors as perpetrators in criminal activities, or providing guidance for "
     "such acts."},
};

std::vector<CategoryInfo> builtin_entries() {
  std::vector<CategoryInfo> out;
  out.reserve(std::size(kBuiltin));
  for (const auto& row : kBuiltin) {
    out.push_back({std::string(row.id), std::string(row.name), std::string(row.dimension),
                   std::string(row.description), CategoryOrigin::kSystem});
  }
  return out;
}

}  // namespace

bool is_valid_category_id(std::string_view id) {
  if (id.empty() || id.size() > 4) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

CategoryRegistry::CategoryRegistry(std::vector<CategoryInfo> entries) : entries_(std::move(entries)) {
  std::unordered_set<std::string_view> seen;
  bool has_safe = false;
  for (const auto& e : entries_) {
    if (!is_valid_category_id(e.id)) {
      throw Error(ErrorCode::kInvalidRegistry,
                  "category id '" + e.id + "' must be 1-4 lowercase ASCII letters");
    }
    if (e.name.empty()) {
      throw Error(ErrorCode::kInvalidRegistry, "category '" + e.id + "' has an empty name");
    }
    if (!seen.insert(e.id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate category id '" + e.id + "'");
    }
    if (e.id == kSafeId) {
      if (e.origin != CategoryOrigin::kSystem) {
        throw Error(ErrorCode::kInvalidRegistry, "safe category must be system-origin");
      }
      has_safe = true;
    }
  }
  if (!has_safe) {
    throw Error(ErrorCode::kInvalidRegistry, "registry lacks the safe category 'sec'");
  }
}

const CategoryInfo* CategoryRegistry::find(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::optional<std::size_t> CategoryRegistry::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id == id) return i;
  }
  return std::nullopt;
}

std::vector<std::string> CategoryRegistry::ids() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.id);
  return out;
}

const CategoryRegistry& builtin_registry() {
  static const CategoryRegistry registry(builtin_entries());
  return registry;
}

const CategoryInfo& lookup(const CategoryRegistry& registry, std::string_view id) {
  if (const auto* info = registry.find(id)) return *info;
  throw Error(ErrorCode::kNotFound, "unknown category id '" + std::string(id) + "'");
}

CategoryRegistry merge_dynamic(const CategoryRegistry& base, const ValidatedPolicy& policy) {
  std::vector<CategoryInfo> entries(base.entries().begin(), base.entries().end());
  for (const auto& rule : policy.rules()) {
    if (rule.op != RuleOp::kAddNew) continue;
    if (base.contains(rule.category_id)) {
      throw Error(ErrorCode::kDuplicateId,
                  "dynamic category '" + rule.category_id + "' collides with an existing id");
    }
    entries.push_back({rule.category_id, rule.category_name, "", "", CategoryOrigin::kDynamic});
  }
  return CategoryRegistry(std::move(entries));
}

CategoryRegistry load_registry_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open registry file " + path.string());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidRegistry, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) {
    throw Error(ErrorCode::kInvalidRegistry, path.string() + ": expected a JSON array");
  }
  std::vector<CategoryInfo> entries;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("id") || !item.contains("name")) {
      throw Error(ErrorCode::kInvalidRegistry, path.string() + ": entries need id and name");
    }
    entries.push_back({item.at("id").get<std::string>(), item.at("name").get<std::string>(),
                       item.value("dimension", std::string{}),
                       item.value("description", std::string{}), CategoryOrigin::kSystem});
  }
  return CategoryRegistry(std::move(entries));
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kInvalidRegistry: return "InvalidRegistry";
    case ErrorCode::kPolicyInvalid: return "PolicyInvalid";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kScriptExhausted: return "ScriptExhausted";
    case ErrorCode::kEmptyDistribution: return "EmptyDistribution";
    case ErrorCode::kUnmappedFirstToken: return "UnmappedFirstToken";
    case ErrorCode::kMissingExplanationTags: return "MissingExplanationTags";
    case ErrorCode::kConfigParseError: return "ConfigParseError";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kInvalidSample: return "InvalidSample";
    case ErrorCode::kTeacherParseError: return "TeacherParseError";
    case ErrorCode::kVerifierParseError: return "VerifierParseError";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kInvalidDistribution: return "InvalidDistribution";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace tierguard
