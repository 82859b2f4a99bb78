// SPDX-License-Identifier: Apache-2.0
// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tierguard/backend.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/taxonomy.hpp"

namespace tierguard::testing {

std::string read_golden(const std::string& name);

// Case-study scenarios: one per rule operation.
struct CaseStudy {
  std::string name;
  DynamicPolicy policy;
  TextKind kind;
  std::string text;
  std::string expected_category;
  double confidence;
  std::string explanation;
  std::string golden;
};

CaseStudy add_new_case();       // new category "a", prompt text, 0.67
CaseStudy expand_scope_case();  // pc widened, response text, 0.90
CaseStudy narrow_scope_case();  // ter narrowed, prompt text, safe at 0.45
std::vector<CaseStudy> case_studies();

TextInput case_input(const CaseStudy& c);

/// Backend reply for a decision call: the expected category at the case
/// confidence and the remainder on the runner-up.
CompletionResult case_decision_reply(const CaseStudy& c, const std::string& runner_up = "sec");

/// Two-rule "a" policy from the dynamic-policy examples.
DynamicPolicy restricted_goods_policy();

// Policy construction helpers.
DynamicRule add_new(std::string id, std::string name, std::vector<std::string> defs);
DynamicRule expand(std::string id, std::vector<std::string> defs);
DynamicRule narrow(std::string id, std::vector<std::string> defs);

/// Random distribution with some exact zeros when `allow_zeros`.
std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n, bool allow_zeros);

/// Random top-k logprob map over the builtin IDs with between `min_present`
/// and 29 IDs present, plus some foreign tokens.
std::map<std::string, double> random_logprob_map(std::mt19937_64& rng, std::size_t min_present = 1);

/// Whole-word containment (ASCII letters and digits form words).
bool contains_word(const std::string& haystack, const std::string& word);

}  // namespace tierguard::testing
