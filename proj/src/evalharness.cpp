// SPDX-License-Identifier: Apache-2.0
#include "tierguard/evalharness.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "tierguard/error.hpp"

namespace tierguard {
namespace {

EvalSample parse_sample(const nlohmann::json& row, std::size_t line_no, const CategoryRegistry& registry) {
  auto invalid = [line_no](const std::string& why) {
    throw Error(ErrorCode::kInvalidSample, "line " + std::to_string(line_no) + ": " + why);
  };
  if (!row.is_object()) invalid("row must be a JSON object");

  EvalSample s;
  if (!row.contains("id")) invalid("missing id");
  if (row.at("id").is_string()) {
    s.id = row.at("id").get<std::string>();
  } else if (row.at("id").is_number_integer()) {
    s.id = std::to_string(row.at("id").get<long long>());
  } else {
    invalid("id must be a string or integer");
  }

  if (!row.contains("kind") || !row.at("kind").is_string()) invalid("missing kind");
  auto kind = text_kind_from_string(row.at("kind").get<std::string>());
  if (!kind) invalid("unknown kind '" + row.at("kind").get<std::string>() + "'");
  s.kind = *kind;

  auto optional_string = [&](const char* key) -> std::optional<std::string> {
    if (!row.contains(key) || row.at(key).is_null()) return std::nullopt;
    if (!row.at(key).is_string()) invalid(std::string(key) + " must be a string");
    return row.at(key).get<std::string>();
  };
  s.prompt = optional_string("prompt");
  s.response = optional_string("response");
  try {
    (void)TextInput::make(s.kind, s.prompt, s.response);
  } catch (const Error& e) {
    invalid(e.what());
  }

  if (!row.contains("gold_label") || !row.at("gold_label").is_string()) invalid("missing gold_label");
  auto label = safety_label_from_string(row.at("gold_label").get<std::string>());
  if (!label) invalid("gold_label must be 'safe' or 'unsafe'");
  s.gold_label = *label;

  s.gold_category = optional_string("gold_category");
  if (s.gold_category) {
    if (!registry.contains(*s.gold_category)) invalid("gold_category '" + *s.gold_category + "' not in registry");
    const bool is_safe_cat = *s.gold_category == kSafeId;
    if (is_safe_cat != (s.gold_label == SafetyLabel::kSafe)) {
      invalid("gold_category '" + *s.gold_category + "' contradicts gold_label");
    }
  }
  return s;
}

struct Outcome {
  bool ok = false;
  std::string category;
  Decision decision = Decision::kSafe;
  std::exception_ptr error;
};

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<EvalSample> parse_dataset(std::istream& in, const CategoryRegistry& registry) {
  std::vector<EvalSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(parse_sample(row, line_no, registry));
  }
  return out;
}

std::vector<EvalSample> load_dataset(const std::filesystem::path& path, const CategoryRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open dataset " + path.string());
  return parse_dataset(in, registry);
}

void ConfusionCounts::add(bool predicted_unsafe, bool gold_unsafe) {
  if (predicted_unsafe && gold_unsafe) {
    ++tp;
  } else if (predicted_unsafe) {
    ++fp;
  } else if (gold_unsafe) {
    ++fn;
  } else {
    ++tn;
  }
}

F1Score f1(const ConfusionCounts& c) {
  const bool vacuous = c.tp == 0 && c.fp == 0 && c.fn == 0;
  auto ratio = [&](std::size_t den) {
    if (den == 0) return vacuous ? 1.0 : 0.0;
    return static_cast<double>(c.tp) / static_cast<double>(den);
  };
  F1Score s;
  s.precision = ratio(c.tp + c.fp);
  s.recall = ratio(c.tp + c.fn);
  if (vacuous) {
    s.f1 = 1.0;
  } else if (c.tp == 0) {
    s.f1 = 0.0;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

DatasetReport evaluate_dataset(Backend& backend, const CategoryRegistry& registry,
                               const NamedDataset& dataset, const ThresholdVector& thresholds,
                               const EvalOptions& options) {
  if (dataset.samples.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "dataset '" + dataset.name + "' is empty");
  }
  const ValidatedPolicy no_policy;
  const auto& samples = dataset.samples;
  std::vector<Outcome> outcomes(samples.size());

  auto run_one = [&](std::size_t i) {
    try {
      auto v = classify(backend, registry, no_policy, samples[i].text(), thresholds,
                        ClassifyMode::kDecisionOnly, options.classify);
      outcomes[i] = {true, std::move(v.category), v.decision, nullptr};
    } catch (...) {
      outcomes[i].error = std::current_exception();
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.parallelism, samples.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      run_one(i);
      if (outcomes[i].error && options.error_policy == ErrorPolicy::kAbort) break;
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) run_one(i);
      });
    }
  }

  DatasetReport report;
  report.name = dataset.name;
  std::size_t audited = 0;
  std::size_t correct = 0;
  double reward_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& o = outcomes[i];
    if (o.error) {
      if (options.error_policy == ErrorPolicy::kAbort) {
        try {
          std::rethrow_exception(o.error);
        } catch (const Error& e) {
          throw Error(e.code(), "sample " + s.id + ": " + e.what());
        }
      }
      ++report.backend_errors;
      report.counts.add(false, s.gold_label == SafetyLabel::kUnsafe);
      continue;
    }
    const bool predicted_unsafe = o.decision == Decision::kUnsafe;
    report.counts.add(predicted_unsafe, s.gold_label == SafetyLabel::kUnsafe);
    if (s.gold_category) {
      ++audited;
      if (o.category == *s.gold_category) ++correct;
      Rollout rollout{true, predicted_unsafe ? SafetyLabel::kUnsafe : SafetyLabel::kSafe, o.category, true};
      reward_sum += grpo_reward(rollout, {s.gold_label, *s.gold_category});
    }
  }
  report.metrics = f1(report.counts);
  if (audited > 0) {
    report.category_accuracy = static_cast<double>(correct) / static_cast<double>(audited);
    report.mean_reward = reward_sum / static_cast<double>(audited);
  }
  return report;
}

MetricsReport make_report(std::vector<DatasetReport> datasets) {
  MetricsReport r;
  r.datasets = std::move(datasets);
  if (!r.datasets.empty()) {
    double total = 0.0;
    for (const auto& d : r.datasets) total += d.metrics.f1;
    r.macro_f1 = total / static_cast<double>(r.datasets.size());
  }
  return r;
}

MetricsReport evaluate(Backend& backend, const CategoryRegistry& registry,
                       std::span<const NamedDataset> datasets, const ThresholdVector& thresholds,
                       const EvalOptions& options) {
  std::vector<DatasetReport> reports;
  for (const auto& d : datasets) {
    reports.push_back(evaluate_dataset(backend, registry, d, thresholds, options));
  }
  return make_report(std::move(reports));
}

nlohmann::json report_to_json(const MetricsReport& report) {
  auto arr = nlohmann::json::array();
  for (const auto& d : report.datasets) {
    nlohmann::json item{
        {"name", d.name},
        {"precision", d.metrics.precision},
        {"recall", d.metrics.recall},
        {"f1", d.metrics.f1},
        {"counts", {{"tp", d.counts.tp}, {"fp", d.counts.fp}, {"fn", d.counts.fn}, {"tn", d.counts.tn}}},
        {"backend_errors", d.backend_errors},
    };
    if (d.category_accuracy) item["category_accuracy"] = *d.category_accuracy;
    if (d.mean_reward) item["mean_reward"] = *d.mean_reward;
    arr.push_back(std::move(item));
  }
  return {{"datasets", std::move(arr)}, {"macro_f1", report.macro_f1}};
}

std::string report_to_table(const MetricsReport& report) {
  std::size_t name_width = 7;
  for (const auto& d : report.datasets) name_width = std::max(name_width, d.name.size());

  std::ostringstream out;
  auto cell = [&](const std::string& s, std::size_t w, bool left = false) {
    if (left) {
      out << s << std::string(w > s.size() ? w - s.size() : 0, ' ');
    } else {
      out << std::string(w > s.size() ? w - s.size() : 0, ' ') << s;
    }
  };
  cell("dataset", name_width, true);
  for (const char* h : {"precision", "recall", "f1", "tp", "fp", "fn", "tn", "cat_acc"}) {
    out << "  ";
    cell(h, 9);
  }
  out << "\n";
  for (const auto& d : report.datasets) {
    cell(d.name, name_width, true);
    for (const auto& v : {fmt_metric(d.metrics.precision), fmt_metric(d.metrics.recall),
                          fmt_metric(d.metrics.f1), std::to_string(d.counts.tp),
                          std::to_string(d.counts.fp), std::to_string(d.counts.fn),
                          std::to_string(d.counts.tn),
                          d.category_accuracy ? fmt_metric(*d.category_accuracy) : std::string("-")}) {
      out << "  ";
      cell(v, 9);
    }
    out << "\n";
  }
  cell("macro_f1", name_width, true);
  out << "  ";
  cell(fmt_metric(report.macro_f1), 9);
  out << "\n";
  return out.str();
}

}  // namespace tierguard
