// SPDX-License-Identifier: Apache-2.0
// tierguard command line: serve, classify, eval, synth, signals.
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tierguard/error.hpp"
#include "tierguard/evalharness.hpp"
#include "tierguard/gateway.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/signals.hpp"
#include "tierguard/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tierguard;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

// Inline JSON if it parses, otherwise a path to a JSON file.
json json_arg(const std::string& value) {
  auto doc = json::parse(value, nullptr, false);
  if (!doc.is_discarded()) return doc;
  return read_json_file(value);
}

// Offline backend: one {"text", "first_token"?, "top_logprobs"?} object per line.
std::shared_ptr<MockBackend> load_mock(const fs::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<CompletionResult> script;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = json::parse(line);
      CompletionResult r;
      r.text = doc.value("text", std::string{});
      r.first_token = doc.value("first_token", std::string{});
      if (doc.contains("top_logprobs")) r.first_token_top_logprobs = doc.at("top_logprobs").get<std::map<std::string, double>>();
      script.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedLine, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return std::make_shared<MockBackend>(std::move(script), std::move(name));
}

GatewayConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    GatewayConfig cfg;
    if (const char* key = std::getenv(cfg.backend.api_key_env.c_str())) cfg.backend.api_key = key;
    return cfg;
  }
  return load_config(path);
}

std::shared_ptr<Backend> backend_for(const BackendConfig& cfg, const std::string& mock_path, const std::string& name) {
  if (!mock_path.empty()) return load_mock(mock_path, name);
  return std::make_shared<HttpBackend>(cfg);
}

// serve ---------------------------------------------------------------------

int run_serve(const std::string& config_path, const std::string& listen) {
  auto cfg = load_config(config_path);
  if (!listen.empty()) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "--listen expects host:port");
    cfg.listen_host = listen.substr(0, colon);
    cfg.listen_port = std::stoi(listen.substr(colon + 1));
  }
  auto backend = std::make_shared<HttpBackend>(cfg.backend);
  Gateway gateway(cfg, backend);
  GatewayServer server(gateway, cfg.server_workers);
  if (!server.bind(cfg.listen_host, cfg.listen_port)) {
    throw Error(ErrorCode::kIo, "cannot bind " + cfg.listen_host + ":" + std::to_string(cfg.listen_port));
  }

  // Block SIGINT/SIGTERM everywhere and stop the server from a waiter thread.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::thread([&server, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server.stop();
  }).detach();

  spdlog::info("listening on {}:{} (backend {})", cfg.listen_host, cfg.listen_port, cfg.backend.base_url);
  return server.serve() ? 0 : 1;
}

// classify ------------------------------------------------------------------

struct ClassifyArgs {
  std::string kind = "prompt";
  std::optional<std::string> prompt, response;
  std::string policy_file, mode, config, mock, thresholds;
  bool include_scores = false;
};

int run_classify(const ClassifyArgs& a) {
  auto cfg = config_or_default(a.config);
  Gateway gateway(cfg, backend_for(cfg.backend, a.mock, "mock"));
  json req{{"kind", a.kind}};
  if (a.prompt) req["prompt"] = *a.prompt;
  if (a.response) req["response"] = *a.response;
  if (!a.policy_file.empty()) req["policy"] = read_json_file(a.policy_file);
  if (!a.mode.empty()) req["mode"] = a.mode;
  if (!a.thresholds.empty()) req["thresholds_override"] = json_arg(a.thresholds);
  if (a.include_scores) req["include_scores"] = true;
  const auto reply = gateway.handle_classify(req.dump());
  std::cout << json::parse(reply.body).dump(2) << "\n";
  return reply.status == 200 ? 0 : 1;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> datasets;
  std::string thresholds, report, config, mock, error_policy = "abort";
  unsigned parallelism = 1;
};

int run_eval(const EvalArgs& a) {
  auto cfg = config_or_default(a.config);
  const auto registry = cfg.registry_override_path ? load_registry_file(*cfg.registry_override_path)
                                                   : builtin_registry();
  auto thresholds = cfg.thresholds;
  if (!a.thresholds.empty()) {
    auto doc = json_arg(a.thresholds);
    thresholds = thresholds_from_json(doc.contains("thresholds") ? doc.at("thresholds") : doc, thresholds);
  }
  std::vector<NamedDataset> sets;
  for (const auto& path : a.datasets) sets.push_back({fs::path(path).stem().string(), load_dataset(path, registry)});

  EvalOptions opts;
  opts.classify = cfg.classify;
  opts.parallelism = a.parallelism;
  opts.error_policy = a.error_policy == "count_as_safe" ? ErrorPolicy::kCountAsSafe : ErrorPolicy::kAbort;
  auto backend = backend_for(cfg.backend, a.mock, "mock");
  const auto report = evaluate(*backend, registry, sets, thresholds, opts);

  std::cout << report_to_table(report);
  const auto doc = report_to_json(report);
  if (a.report.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    std::ofstream out(a.report);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + a.report);
    out << doc.dump(2) << "\n";
  }
  return 0;
}

// synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string corpus, spec, out, config, teacher_url, verifier_url, teacher_mock, verifier_mock;
  std::string error_policy = "abort";
  std::optional<std::uint64_t> seed;
  unsigned parallelism = 1;
};

// {"teacher": {backend}, "verifier": {backend}, "temperature", "max_tokens"}
int run_synth(const SynthArgs& a) {
  const json cfg = a.config.empty() ? json::object() : read_json_file(a.config);
  auto backend_cfg = [&](const char* key, const std::string& url) {
    auto bc = backend_config_from_json(cfg.value(key, json::object()));
    if (!url.empty()) bc.base_url = url;
    return bc;
  };
  auto teacher = backend_for(backend_cfg("teacher", a.teacher_url), a.teacher_mock, "teacher");
  auto verifier = backend_for(backend_cfg("verifier", a.verifier_url), a.verifier_mock, "verifier");

  const auto corpus = load_corpus(a.corpus);
  const auto sampler = spec_sampler_from_json(json_arg(a.spec));
  PipelineOptions opts;
  opts.seed = a.seed.value_or(0);
  opts.parallelism = a.parallelism;
  opts.error_policy = a.error_policy == "discard" ? BackendErrorPolicy::kDiscard : BackendErrorPolicy::kAbort;
  opts.teacher.temperature = cfg.value("temperature", opts.teacher.temperature);
  opts.teacher.max_tokens = cfg.value("max_tokens", opts.teacher.max_tokens);

  const auto stats = run_pipeline(corpus, sampler, *teacher, *verifier, fs::path(a.out), opts);
  std::cout << stats_to_json(stats).dump(2) << "\n";
  return 0;
}

// signals -------------------------------------------------------------------

std::vector<double> dist_arg(const std::string& value) {
  const auto doc = json_arg(value);
  if (!doc.is_array()) throw Error(ErrorCode::kInvalidArgument, "distribution must be a JSON array of numbers");
  return doc.get<std::vector<double>>();
}

json finite_or_string(double v) { return std::isfinite(v) ? json(v) : json("inf"); }

int run_kl(const std::string& p_arg, const std::string& q_arg, double alpha) {
  const CategoricalDist p(dist_arg(p_arg));
  const CategoricalDist q(dist_arg(q_arg));
  json out{{"kl_forward", finite_or_string(kl_forward(p, q))},
           {"kl_reverse", finite_or_string(kl_reverse(p, q))},
           {"alpha", alpha},
           {"combined", finite_or_string(combined_distill_loss(p, q, alpha))}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

SafetyLabel label_of(const json& v) {
  const auto label = safety_label_from_string(v.get<std::string>());
  if (!label) throw Error(ErrorCode::kInvalidArgument, "label must be \"safe\" or \"unsafe\"");
  return *label;
}

int run_reward(const std::string& rollout_arg, const std::string& gold_arg) {
  const auto r = json_arg(rollout_arg);
  const auto g = json_arg(gold_arg);
  Rollout rollout;
  rollout.parsed = r.value("parsed", false);
  rollout.format_valid = r.value("format_valid", true);
  if (r.contains("label") && !r.at("label").is_null()) rollout.label = label_of(r.at("label"));
  if (r.contains("category") && !r.at("category").is_null()) rollout.category = r.at("category").get<std::string>();
  const GoldJudgment gold{label_of(g.at("label")), g.at("category").get<std::string>()};
  std::cout << json{{"reward", grpo_reward(rollout, gold)}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tierguard: first-token guardrail gateway and tooling"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  std::string serve_config, serve_listen;
  auto* serve = app.add_subcommand("serve", "run the HTTP gateway");
  serve->add_option("--config", serve_config, "gateway config JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--listen", serve_listen, "host:port, overrides listen_addr");

  ClassifyArgs ca;
  auto* classify = app.add_subcommand("classify", "classify one input and print the response JSON");
  classify->add_option("--kind", ca.kind, "prompt | response | pair")->capture_default_str();
  classify->add_option("--prompt", ca.prompt);
  classify->add_option("--response", ca.response);
  classify->add_option("--policy-file", ca.policy_file, "dynamic policy JSON")->check(CLI::ExistingFile);
  classify->add_option("--mode", ca.mode, "decision_only | with_explanation");
  classify->add_option("--thresholds", ca.thresholds, "threshold override (JSON or file)");
  classify->add_flag("--scores", ca.include_scores, "include the full score vector");
  classify->add_option("--config", ca.config, "gateway config JSON")->check(CLI::ExistingFile);
  classify->add_option("--mock", ca.mock, "scripted backend replies (JSONL) instead of HTTP")->check(CLI::ExistingFile);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "F1 evaluation over labelled JSONL datasets");
  eval->add_option("--dataset", ea.datasets, "dataset JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  eval->add_option("--thresholds", ea.thresholds, "threshold file or inline JSON");
  eval->add_option("--report", ea.report, "write the JSON report here instead of stdout");
  eval->add_option("--config", ea.config, "gateway config JSON (backend, thresholds)")->check(CLI::ExistingFile);
  eval->add_option("--mock", ea.mock, "scripted backend replies (JSONL)")->check(CLI::ExistingFile);
  eval->add_option("--parallelism", ea.parallelism)->check(CLI::PositiveNumber);
  eval->add_option("--error-policy", ea.error_policy)->check(CLI::IsMember({"abort", "count_as_safe"}));

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "counterfactual policy-data synthesis");
  synth->add_option("--corpus", sa.corpus, "base corpus JSONL")->required()->check(CLI::ExistingFile);
  synth->add_option("--spec", sa.spec, "mutation spec (JSON or file)")->required();
  synth->add_option("--out", sa.out, "output JSONL")->required();
  synth->add_option("--seed", sa.seed);
  synth->add_option("--config", sa.config, "{teacher, verifier} backend blocks")->check(CLI::ExistingFile);
  synth->add_option("--teacher-url", sa.teacher_url);
  synth->add_option("--verifier-url", sa.verifier_url);
  synth->add_option("--teacher-mock", sa.teacher_mock)->check(CLI::ExistingFile);
  synth->add_option("--verifier-mock", sa.verifier_mock)->check(CLI::ExistingFile);
  synth->add_option("--parallelism", sa.parallelism)->check(CLI::PositiveNumber);
  synth->add_option("--error-policy", sa.error_policy)->check(CLI::IsMember({"abort", "discard"}));

  auto* signals = app.add_subcommand("signals", "training-signal calculators");
  signals->require_subcommand(1);
  std::string p_arg, q_arg, rollout_arg, gold_arg;
  double alpha = 0.5;
  auto* kl = signals->add_subcommand("kl", "forward, reverse and combined KL");
  kl->add_option("--p", p_arg, "teacher distribution (JSON array or file)")->required();
  kl->add_option("--q", q_arg, "student distribution (JSON array or file)")->required();
  kl->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  auto* reward = signals->add_subcommand("reward", "rule-based rollout reward");
  reward->add_option("--rollout", rollout_arg, "{parsed, label, category, format_valid}")->required();
  reward->add_option("--gold", gold_arg, "{label, category}")->required();

  CLI11_PARSE(app, argc, argv);
  // stdout carries JSON results; logs go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("tierguard"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*serve) return run_serve(serve_config, serve_listen);
    if (*classify) return run_classify(ca);
    if (*eval) return run_eval(ea);
    if (*synth) return run_synth(sa);
    if (*kl) return run_kl(p_arg, q_arg, alpha);
    if (*reward) return run_reward(rollout_arg, gold_arg);
  } catch (const PolicyValidationError& e) {
    std::cerr << "error: " << to_string(e.code()) << ":";
    for (const auto& pe : e.errors()) std::cerr << " " << to_string(pe.code) << "@" << pe.rule_index;
    std::cerr << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
