// SPDX-License-Identifier: Apache-2.0
#include "tierguard/synth.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "tierguard/error.hpp"
#include "tierguard/verdict.hpp"

namespace tierguard {
namespace {

using nlohmann::json;

std::string describe_op(RuleOp op) {
  switch (op) {
    case RuleOp::kAddNew:
      return "add_new: define a new risk category with a single lowercase letter id and a name";
    case RuleOp::kExpandScope:
      return "expand_scope: broaden an existing system category so it captures content it "
             "previously allowed";
    case RuleOp::kNarrowScope:
      return "narrow_scope: add constraints to an existing system category so it permits content "
             "it previously flagged";
  }
  return {};
}

std::string category_list(const CategoryRegistry& registry) {
  std::string out;
  for (const auto& e : registry.entries()) out += "- " + e.id + ": " + e.name + "\n";
  return out;
}

// Body of the first ```json fence, falling back to the first bare ``` fence.
std::optional<std::string> fenced_json(std::string_view reply) {
  auto body_after = [&](std::size_t open, std::size_t fence_len) -> std::optional<std::string> {
    auto start = reply.find('\n', open + fence_len);
    if (start == std::string_view::npos) return std::nullopt;
    auto close = reply.find("```", start + 1);
    if (close == std::string_view::npos) return std::nullopt;
    return std::string(reply.substr(start + 1, close - start - 1));
  };
  if (auto open = reply.find("```json"); open != std::string_view::npos) return body_after(open, 7);
  if (auto open = reply.find("```"); open != std::string_view::npos) return body_after(open, 3);
  return std::nullopt;
}

[[noreturn]] void teacher_error(const std::string& why) { throw Error(ErrorCode::kTeacherParseError, why); }

bool starts_with_word(std::string_view line, std::string_view word) {
  if (line.substr(0, word.size()) != word) return false;
  if (line.size() == word.size()) return true;
  const char next = line[word.size()];
  return !((next >= 'A' && next <= 'Z') || (next >= 'a' && next <= 'z'));
}

json spec_to_json(const MutationSpec& spec) {
  auto ops = json::array();
  for (auto op : spec.allowed_ops) ops.push_back(to_string(op));
  return {{"k", spec.k}, {"allowed_ops", std::move(ops)}, {"target", to_string(spec.target)}};
}

std::vector<RuleOp> parse_ops(const json& doc) {
  if (!doc.is_array() || doc.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "allowed_ops must be a non-empty array");
  }
  std::vector<RuleOp> ops;
  for (const auto& item : doc) {
    auto op = item.is_string() ? rule_op_from_string(item.get<std::string>()) : std::nullopt;
    if (!op) throw Error(ErrorCode::kInvalidArgument, "unknown op in allowed_ops: " + item.dump());
    if (std::find(ops.begin(), ops.end(), *op) == ops.end()) ops.push_back(*op);
  }
  return ops;
}

}  // namespace

std::vector<BaseSample> parse_corpus(std::istream& in, const CategoryRegistry& registry) {
  std::vector<BaseSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "corpus line " + std::to_string(line_no) + ": ";
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kMalformedLine, where + e.what());
    }
    auto invalid = [&](const std::string& why) { throw Error(ErrorCode::kInvalidSample, where + why); };
    if (!row.is_object()) invalid("row must be an object");
    BaseSample s;
    if (row.contains("id")) {
      s.id = row.at("id").is_string() ? row.at("id").get<std::string>() : row.at("id").dump();
    } else {
      s.id = std::to_string(out.size());
    }
    if (!row.contains("text") || !row.at("text").is_string() || row.at("text").get<std::string>().empty()) {
      invalid("text must be a non-empty string");
    }
    s.text = row.at("text").get<std::string>();
    auto label = row.contains("label") && row.at("label").is_string()
                     ? safety_label_from_string(row.at("label").get<std::string>())
                     : std::nullopt;
    if (!label) invalid("label must be 'safe' or 'unsafe'");
    s.label = *label;
    if (row.contains("category") && !row.at("category").is_null()) {
      if (!row.at("category").is_string()) invalid("category must be a string");
      s.category = row.at("category").get<std::string>();
      if (!registry.contains(*s.category)) invalid("unknown category '" + *s.category + "'");
      if ((*s.category == kSafeId) != (s.label == SafetyLabel::kSafe)) {
        invalid("category contradicts label");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<BaseSample> load_corpus(const std::filesystem::path& path, const CategoryRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open corpus " + path.string());
  return parse_corpus(in, registry);
}

std::string_view to_string(CounterfactualTarget t) {
  return t == CounterfactualTarget::kMaintain ? "maintain" : "reverse";
}

void MutationSpec::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (allowed_ops.empty()) throw Error(ErrorCode::kInvalidArgument, "allowed_ops must be non-empty");
}

SpecSampler SpecSampler::fixed(const MutationSpec& spec) {
  spec.validate();
  return {spec.k, spec.k, spec.allowed_ops, {spec.target}};
}

void SpecSampler::validate() const {
  if (k_min < 1 || k_max < k_min) throw Error(ErrorCode::kInvalidArgument, "need 1 <= k_min <= k_max");
  if (allowed_ops.empty()) throw Error(ErrorCode::kInvalidArgument, "allowed_ops must be non-empty");
  if (targets.empty()) throw Error(ErrorCode::kInvalidArgument, "targets must be non-empty");
}

MutationSpec SpecSampler::draw(std::mt19937_64& rng) const {
  MutationSpec spec;
  spec.k = std::uniform_int_distribution<int>(k_min, k_max)(rng);
  std::uniform_int_distribution<std::size_t> pick_op(0, allowed_ops.size() - 1);
  std::set<RuleOp> drawn;
  for (int i = 0; i < spec.k; ++i) drawn.insert(allowed_ops[pick_op(rng)]);
  spec.allowed_ops.assign(drawn.begin(), drawn.end());
  spec.target = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
  return spec;
}

SpecSampler spec_sampler_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kInvalidArgument, "spec must be an object");
  SpecSampler s;
  try {
    if (doc.contains("k")) {
      s.k_min = s.k_max = doc.at("k").get<int>();
    } else {
      s.k_min = doc.value("k_min", 1);
      s.k_max = doc.value("k_max", s.k_min);
    }
    if (doc.contains("allowed_ops")) s.allowed_ops = parse_ops(doc.at("allowed_ops"));
    const std::string target = doc.value("target", std::string("either"));
    if (target == "maintain") {
      s.targets = {CounterfactualTarget::kMaintain};
    } else if (target == "reverse") {
      s.targets = {CounterfactualTarget::kReverse};
    } else if (target != "either") {
      throw Error(ErrorCode::kInvalidArgument, "target must be maintain, reverse or either");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

json triplet_to_json(const SynthTriplet& t) {
  return {{"mutated_input", t.mutated_input},
          {"input_modified", t.input_modified},
          {"policy", policy_to_json(t.policy.rules())},
          {"judgment",
           {{"label", to_string(t.judgment.label)},
            {"category", t.judgment.category},
            {"explanation", t.judgment.explanation}}},
          {"provenance",
           {{"base_id", t.provenance.base_id},
            {"index", t.provenance.index},
            {"spec", spec_to_json(t.provenance.spec)},
            {"seed", t.provenance.seed},
            {"teacher", t.provenance.teacher},
            {"verifier", t.provenance.verifier}}}};
}

std::string render_mutation_prompt(const BaseSample& sample, const MutationSpec& spec,
                                   const CategoryRegistry& system) {
  std::string judgment(to_string(sample.label));
  if (sample.category) {
    if (const auto* info = system.find(*sample.category)) judgment += " (" + info->id + ": " + info->name + ")";
  }
  std::string out =
      "You write dynamic moderation policy rules for a content safety classifier.\n\n"
      "# System Categories\n" +
      category_list(system) +
      "\n# Base Sample\n"
      "Text: " + sample.text + "\n"
      "Original judgment: " + judgment + "\n\n"
      "# Task\n"
      "Write exactly " + std::to_string(spec.k) + " distinct rule(s), at most one per category id.\n"
      "Allowed operations:\n";
  for (auto op : spec.allowed_ops) out += "- " + describe_op(op) + "\n";
  out += spec.target == CounterfactualTarget::kReverse
             ? "When applied to the text, the rules must reverse the original judgment.\n"
             : "When applied to the text, the rules must keep the original judgment unchanged.\n";
  out +=
      "Each rule needs at least one definition written as a natural-language standard.\n"
      "You may rewrite the text to sharpen the case; otherwise set rewritten_input to null.\n\n"
      "Reply with one fenced JSON block and nothing else:\n"
      "```json\n"
      "{\"rules\": [{\"op\": \"add_new\", \"category_id\": \"a\", \"category_name\": \"...\", "
      "\"definitions\": [\"...\"]}], \"rewritten_input\": null}\n"
      "```";
  return out;
}

Mutation mutate_policy(const BaseSample& sample, const MutationSpec& spec, Backend& teacher,
                       const CategoryRegistry& system, const TeacherSettings& settings) {
  spec.validate();
  CompletionRequest request;
  request.prompt = render_mutation_prompt(sample, spec, system);
  request.max_new_tokens = settings.max_tokens;
  request.top_logprobs = 0;
  request.temperature = settings.temperature;
  const auto reply = teacher.complete(request).text;

  auto block = fenced_json(reply);
  if (!block) teacher_error("teacher reply has no fenced JSON block");
  json doc;
  try {
    doc = json::parse(*block);
  } catch (const json::parse_error& e) {
    teacher_error(std::string("teacher JSON does not parse: ") + e.what());
  }
  DynamicPolicy policy;
  try {
    policy = policy_from_json(doc);
  } catch (const Error& e) {
    teacher_error(e.what());
  }
  if (policy.rules.size() != static_cast<std::size_t>(spec.k)) {
    teacher_error("teacher produced " + std::to_string(policy.rules.size()) + " rules, expected " +
                  std::to_string(spec.k));
  }
  for (const auto& rule : policy.rules) {
    if (std::find(spec.allowed_ops.begin(), spec.allowed_ops.end(), rule.op) == spec.allowed_ops.end()) {
      teacher_error("teacher used disallowed op " + std::string(to_string(rule.op)));
    }
  }

  Mutation m;
  m.policy = validate_policy(policy, system);
  m.mutated_input = sample.text;
  if (doc.contains("rewritten_input") && doc.at("rewritten_input").is_string() &&
      !doc.at("rewritten_input").get<std::string>().empty()) {
    m.mutated_input = doc.at("rewritten_input").get<std::string>();
    m.input_modified = m.mutated_input != sample.text;
  }
  return m;
}

Judgment refine_response(const std::string& mutated_input, const ValidatedPolicy& policy, Backend& teacher,
                         const CategoryRegistry& system, const TeacherSettings& settings) {
  const auto merged = merge_dynamic(system, policy);
  CompletionRequest request;
  request.prompt = render_prompt(merged, policy, TextInput::prompt_only(mutated_input));
  request.max_new_tokens = settings.max_tokens;
  request.top_logprobs = 0;
  request.temperature = settings.temperature;
  const auto reply = teacher.complete(request).text;

  ParsedOutput parsed;
  try {
    parsed = parse_output(reply, merged);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUnmappedFirstToken || e.code() == ErrorCode::kMissingExplanationTags) {
      teacher_error(std::string("refinement reply unusable: ") + e.what());
    }
    throw;
  }
  Judgment j;
  j.label = parsed.category == kSafeId ? SafetyLabel::kSafe : SafetyLabel::kUnsafe;
  j.category = std::move(parsed.category);
  j.explanation = std::move(parsed.explanation);
  return j;
}

std::string render_verification_prompt(const SynthTriplet& t, const CategoryRegistry& system) {
  const auto merged = merge_dynamic(system, t.policy);
  const auto& info = lookup(merged, t.judgment.category);
  std::string out =
      "You audit content safety judgments for consistency with a dynamic policy.\n\n"
      "# Category List\n" +
      category_list(merged) + "\n";
  if (!t.policy.empty()) out += "# Dynamic Policy\n" + render_policy_block(t.policy, merged) + "\n\n";
  out += "# Input Text\n" + t.mutated_input + "\n\n" +
         "# Judgment\n"
         "Category: " + info.id + " (" + info.name + ")\n"
         "Explanation: " + t.judgment.explanation + "\n\n"
         "# Task\n"
         "Decide whether the judgment logically adheres to the full combination of dynamic rules "
         "and the built-in categories.\n"
         "Answer on the first line with exactly AGREE or DISAGREE, then give one sentence of "
         "justification.";
  return out;
}

VerifierVerdict parse_verifier_reply(std::string_view reply) {
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto eol = reply.find('\n', pos);
    if (eol == std::string_view::npos) eol = reply.size();
    const auto line = reply.substr(pos, eol - pos);
    if (starts_with_word(line, "DISAGREE")) return VerifierVerdict::kDisagree;
    if (starts_with_word(line, "AGREE")) return VerifierVerdict::kAgree;
    pos = eol + 1;
  }
  throw Error(ErrorCode::kVerifierParseError, "verifier reply has no AGREE/DISAGREE line");
}

FilterResult consistency_filter(const SynthTriplet& triplet, Backend& verifier, const CategoryRegistry& system) {
  CompletionRequest request;
  request.prompt = render_verification_prompt(triplet, system);
  request.max_new_tokens = 64;
  request.top_logprobs = 0;
  request.temperature = 0.0;
  const auto reply = verifier.complete(request).text;
  try {
    return parse_verifier_reply(reply) == VerifierVerdict::kAgree ? FilterResult{true, ""}
                                                                 : FilterResult{false, "verifier_disagreed"};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kVerifierParseError) throw;
    return {false, "verifier_unparseable"};
  }
}

PipelineStats run_pipeline(std::span<const BaseSample> corpus, const SpecSampler& sampler, Backend& teacher,
                           Backend& verifier, std::ostream& out, const PipelineOptions& options,
                           const CategoryRegistry& system) {
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "synthesis corpus is empty");
  sampler.validate();

  // Specs are drawn up front in input order so runs are reproducible
  // regardless of scheduling.
  std::mt19937_64 rng(options.seed);
  std::vector<MutationSpec> specs;
  specs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) specs.push_back(sampler.draw(rng));

  enum class Stage { kMutate, kRefine, kVerify };
  PipelineStats stats;
  stats.input = corpus.size();
  std::mutex mu;
  std::exception_ptr first_error;
  std::size_t first_error_index = corpus.size();
  std::atomic<bool> stop{false};

  auto count_failure = [&](Stage stage) {
    switch (stage) {
      case Stage::kMutate: ++stats.stage1_fail; break;
      case Stage::kRefine: ++stats.stage2_fail; break;
      case Stage::kVerify: ++stats.verifier_unparseable; break;
    }
  };

  auto process = [&](std::size_t i) {
    const auto& sample = corpus[i];
    Stage stage = Stage::kMutate;
    try {
      auto mutation = mutate_policy(sample, specs[i], teacher, system, options.teacher);
      stage = Stage::kRefine;
      SynthTriplet t;
      t.judgment = refine_response(mutation.mutated_input, mutation.policy, teacher, system, options.teacher);
      t.mutated_input = std::move(mutation.mutated_input);
      t.input_modified = mutation.input_modified;
      t.policy = std::move(mutation.policy);
      t.provenance = {sample.id, i, specs[i], options.seed, teacher.name(), verifier.name()};
      stage = Stage::kVerify;
      const auto verdict = consistency_filter(t, verifier, system);

      std::lock_guard<std::mutex> lock(mu);
      if (verdict.keep) {
        ++stats.kept;
        out << triplet_to_json(t).dump() << "\n";
        if (!out) throw Error(ErrorCode::kIo, "failed writing synthesized triplet");
      } else if (verdict.reason == "verifier_disagreed") {
        ++stats.verifier_disagreed;
      } else {
        ++stats.verifier_unparseable;
      }
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(mu);
      const bool discardable = e.code() == ErrorCode::kTeacherParseError || e.code() == ErrorCode::kPolicyInvalid;
      if (discardable) {
        count_failure(stage);
      } else if (e.code() != ErrorCode::kIo && options.error_policy == BackendErrorPolicy::kDiscard) {
        count_failure(stage);
      } else {
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::make_exception_ptr(Error(e.code(), "sample " + sample.id + ": " + e.what()));
        }
        stop = true;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.parallelism, corpus.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < corpus.size() && !stop; ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < corpus.size() && !stop; i = next++) process(i);
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  out.flush();
  return stats;
}

PipelineStats run_pipeline(std::span<const BaseSample> corpus, const SpecSampler& sampler, Backend& teacher,
                           Backend& verifier, const std::filesystem::path& out_path,
                           const PipelineOptions& options, const CategoryRegistry& system) {
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open output " + out_path.string());
  return run_pipeline(corpus, sampler, teacher, verifier, out, options, system);
}

json stats_to_json(const PipelineStats& s) {
  return {{"input", s.input},
          {"stage1_fail", s.stage1_fail},
          {"stage2_fail", s.stage2_fail},
          {"verifier_disagreed", s.verifier_disagreed},
          {"verifier_unparseable", s.verifier_unparseable},
          {"kept", s.kept}};
}

}  // namespace tierguard
