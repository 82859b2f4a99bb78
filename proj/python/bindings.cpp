// SPDX-License-Identifier: Apache-2.0
// Python module tierguard._core. JSON-shaped arguments cross the boundary as
// plain dicts/lists and are converted through the json module.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "tierguard/error.hpp"
#include "tierguard/evalharness.hpp"
#include "tierguard/gateway.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/signals.hpp"
#include "tierguard/synth.hpp"
#include "tierguard/verdict.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace tierguard;

namespace {

json to_json(const py::handle& obj) {
  if (py::isinstance<py::str>(obj)) return json::parse(obj.cast<std::string>());
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

TextKind kind_arg(const std::string& s) {
  auto k = text_kind_from_string(s);
  if (!k) throw Error(ErrorCode::kInvalidArgument, "unknown kind '" + s + "'");
  return *k;
}

DynamicPolicy policy_arg(const py::object& policy) {
  if (policy.is_none()) return {};
  return policy_from_json(to_json(policy));
}

py::list errors_list(const std::vector<PolicyError>& errors) {
  py::list out;
  for (const auto& e : errors) {
    py::dict d;
    d["code"] = std::string(to_string(e.code));
    d["rule_index"] = e.rule_index;
    d["message"] = e.message;
    out.append(d);
  }
  return out;
}

std::string render(const std::string& kind, std::optional<std::string> prompt, std::optional<std::string> response,
                   const py::object& policy) {
  const auto vp = validate_policy(policy_arg(policy), builtin_registry());
  return render_prompt(merge_dynamic(builtin_registry(), vp), vp, TextInput::make(kind_arg(kind), prompt, response));
}

std::map<std::string, double> renorm(const std::map<std::string, double>& logprobs, double floor) {
  const auto s = renormalize(logprobs, builtin_registry(), floor);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < s.ids.size(); ++i) out[s.ids[i]] = s.probs[i];
  return out;
}

std::string decide_py(const std::string& category, double confidence, const std::string& kind,
                      const py::object& thresholds) {
  ThresholdVector t;
  if (!thresholds.is_none()) t = thresholds_from_json(to_json(thresholds));
  return std::string(to_string(decide(category, confidence, t, kind_arg(kind))));
}

std::vector<CompletionResult> script_arg(const py::list& script) {
  std::vector<CompletionResult> out;
  for (const auto& item : script) {
    const auto doc = to_json(item);
    CompletionResult r;
    r.text = doc.value("text", std::string{});
    r.first_token = doc.value("first_token", std::string{});
    if (doc.contains("top_logprobs")) r.first_token_top_logprobs = doc.at("top_logprobs").get<std::map<std::string, double>>();
    out.push_back(std::move(r));
  }
  return out;
}

// Runs one /v1/classify request body. Without a script the configured HTTP
// backend is used.
py::tuple handle_request(const py::object& request, const py::object& config, const py::object& script) {
  const auto cfg = config.is_none() ? GatewayConfig{} : parse_config(to_json(config).dump());
  std::shared_ptr<Backend> backend;
  if (script.is_none()) {
    backend = std::make_shared<HttpBackend>(cfg.backend);
  } else {
    backend = std::make_shared<MockBackend>(script_arg(script.cast<py::list>()));
  }
  Gateway gateway(cfg, backend);
  const auto body = to_json(request).dump();
  HttpReply reply;
  {
    py::gil_scoped_release release;
    reply = gateway.handle_classify(body);
  }
  return py::make_tuple(reply.status, from_json(json::parse(reply.body)));
}

double reward_py(bool parsed, std::optional<std::string> label, std::optional<std::string> category,
                 bool format_valid, const std::string& gold_label, const std::string& gold_category) {
  auto parse_label = [](const std::string& s) {
    auto l = safety_label_from_string(s);
    if (!l) throw Error(ErrorCode::kInvalidArgument, "label must be 'safe' or 'unsafe'");
    return *l;
  };
  Rollout r{parsed, std::nullopt, std::move(category), format_valid};
  if (label) r.label = parse_label(*label);
  return grpo_reward(r, {parse_label(gold_label), gold_category});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "tierguard core bindings";

  static py::exception<Error> error_type(m, "TierguardError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const PolicyValidationError& e) {
      PyErr_SetObject(error_type.ptr(),
                      py::make_tuple(std::string(to_string(e.code())), e.what(), errors_list(e.errors())).ptr());
    } catch (const Error& e) {
      PyErr_SetObject(error_type.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
    }
  });

  m.def("category_ids", [] { return builtin_registry().ids(); });
  m.def("render_prompt", &render, py::arg("kind"), py::arg("prompt") = py::none(),
        py::arg("response") = py::none(), py::arg("policy") = py::none());
  m.def(
      "check_policy", [](const py::object& policy) { return errors_list(check_policy(policy_arg(policy), builtin_registry())); },
      py::arg("policy"), "every violation as {code, rule_index, message}; empty when valid");
  m.def("renormalize", &renorm, py::arg("logprobs"), py::arg("floor") = kDefaultFloor);
  m.def("decide", &decide_py, py::arg("category"), py::arg("confidence"), py::arg("kind"),
        py::arg("thresholds") = py::none());
  m.def("classify_request", &handle_request, py::arg("request"), py::arg("config") = py::none(),
        py::arg("script") = py::none(), "(status, body) for one classify request");

  m.def(
      "kl_forward", [](std::vector<double> p, std::vector<double> q) {
        return kl_forward(CategoricalDist(std::move(p)), CategoricalDist(std::move(q)));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "kl_reverse", [](std::vector<double> p, std::vector<double> q) {
        return kl_reverse(CategoricalDist(std::move(p)), CategoricalDist(std::move(q)));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "combined_distill_loss", [](std::vector<double> p, std::vector<double> q, double alpha) {
        return combined_distill_loss(CategoricalDist(std::move(p)), CategoricalDist(std::move(q)), alpha);
      },
      py::arg("p"), py::arg("q"), py::arg("alpha") = 0.5);
  m.def("grpo_reward", &reward_py, py::arg("parsed"), py::arg("label"), py::arg("category"),
        py::arg("format_valid"), py::arg("gold_label"), py::arg("gold_category"));
  m.def(
      "f1", [](std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
        const auto s = f1({tp, fp, fn, tn});
        return py::make_tuple(s.precision, s.recall, s.f1);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));
  m.def(
      "parse_verifier_reply",
      [](const std::string& reply) { return parse_verifier_reply(reply) == VerifierVerdict::kAgree ? "AGREE" : "DISAGREE"; },
      py::arg("reply"));
}
