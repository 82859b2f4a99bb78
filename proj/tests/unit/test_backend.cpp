// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>

#include <nlohmann/json.hpp>

#include "tierguard/backend.hpp"
#include "tierguard/error.hpp"
#include "tierguard/policy.hpp"
#include "tierguard/verdict.hpp"

#include "fixtures.hpp"
#include "stub_server.hpp"

namespace tierguard {
namespace {

using nlohmann::json;

// Fixed payload authored from the wire mapping: first position "sec" with
// two alternatives.
constexpr const char* kSecPayload = R"({
  "choices": [{
    "text": "sec",
    "logprobs": {
      "tokens": ["sec"],
      "token_logprobs": [-0.05],
      "top_logprobs": [{"sec": -0.05, "pc": -3.2, " ": -4.0}]
    }
  }]
})";

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

TEST(MockBackend, ReplaysInOrderAndRecords) {
  MockBackend mock({scripted_result("pc", {{"pc", 0.90}, {"sec", 0.08}}), scripted_result("sec", {{"sec", 1.0}})});
  EXPECT_TRUE(mock.record_requests().empty());
  CompletionRequest r1;
  r1.prompt = "one";
  const auto out = mock.complete(r1);
  EXPECT_EQ(out.first_token, "pc");
  EXPECT_DOUBLE_EQ(out.first_token_top_logprobs.at("pc"), std::log(0.90));
  EXPECT_DOUBLE_EQ(out.first_token_top_logprobs.at("sec"), std::log(0.08));
  CompletionRequest r2;
  r2.prompt = "two";
  EXPECT_EQ(mock.complete(r2).first_token, "sec");
  EXPECT_EQ(mock.record_requests(), (std::vector<CompletionRequest>{r1, r2}));
  EXPECT_EQ(code_of([&] { mock.complete(r1); }), ErrorCode::kScriptExhausted);
}

TEST(MockBackend, EmptyScriptIsExhausted) {
  MockBackend mock;
  EXPECT_EQ(code_of([&] { mock.complete({}); }), ErrorCode::kScriptExhausted);
}

TEST(WireMapping, PayloadFields) {
  CompletionRequest r;
  r.prompt = "p";
  r.stop_sequences = {"</explanation>"};
  const auto payload = build_completion_payload(r, "guard-model");
  EXPECT_EQ(payload.at("prompt"), "p");
  EXPECT_EQ(payload.at("max_tokens"), 1);
  EXPECT_EQ(payload.at("logprobs"), kDefaultTopLogprobs);
  EXPECT_EQ(payload.at("temperature"), 0.0);
  EXPECT_EQ(payload.at("model"), "guard-model");
  EXPECT_EQ(payload.at("stop"), json::array({"</explanation>"}));
  r.top_logprobs = 0;
  r.stop_sequences.clear();
  const auto bare = build_completion_payload(r, "");
  EXPECT_FALSE(bare.contains("logprobs"));
  EXPECT_FALSE(bare.contains("model"));
  EXPECT_FALSE(bare.contains("stop"));
}

TEST(WireMapping, ParsesObjectAndListForms) {
  CompletionRequest r;
  const auto a = parse_completion_response(json::parse(kSecPayload), r);
  EXPECT_EQ(a.first_token, "sec");
  EXPECT_EQ(a.first_token_top_logprobs.size(), 3u);
  EXPECT_DOUBLE_EQ(a.first_token_top_logprobs.at("pc"), -3.2);

  const auto b = parse_completion_response(json::parse(R"({"choices":[{"text":"pc","logprobs":{"tokens":["pc"],
      "top_logprobs":[[{"token":"pc","logprob":-0.1},{"token":"sec","logprob":-2.5}]]}}]})"), r);
  EXPECT_EQ(b.first_token, "pc");
  EXPECT_DOUBLE_EQ(b.first_token_top_logprobs.at("sec"), -2.5);
}

TEST(WireMapping, MalformedResponses) {
  CompletionRequest r;
  EXPECT_EQ(code_of([&] { parse_completion_response(json::parse(R"({"choices":[]})"), r); }),
            ErrorCode::kMalformedResponse);
  EXPECT_EQ(code_of([&] { parse_completion_response(json::parse(R"({"choices":[{"text":"pc"}]})"), r); }),
            ErrorCode::kMalformedResponse);
  EXPECT_EQ(code_of([&] {
              parse_completion_response(
                  json::parse(R"({"choices":[{"text":"pc","logprobs":{"tokens":["pc"],"top_logprobs":[{"pc":0.5}]}}]})"),
                  r);
            }),
            ErrorCode::kMalformedResponse);
  r.top_logprobs = 0;
  EXPECT_EQ(parse_completion_response(json::parse(R"({"choices":[{"text":"hi"}]})"), r).text, "hi");
}

TEST(HttpBackend, StubServerRoundTripKeepsPromptBytes) {
  testing::StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.set_content(kSecPayload, "application/json");
  });
  BackendConfig cfg;
  cfg.base_url = stub.base_url();
  cfg.model_name = "m";
  cfg.api_key = "secret-token";
  HttpBackend backend(cfg);

  // Prompt with the full template plus awkward bytes.
  CompletionRequest r;
  r.prompt = render_prompt(builtin_registry(), ValidatedPolicy{},
                           TextInput::pair("tab\there \"quoted\" \\ back", "caf\xc3\xa9\nnew line  "));
  const auto out = backend.complete(r);
  EXPECT_EQ(out.first_token, "sec");
  EXPECT_EQ(out.text, "sec");

  const auto bodies = stub.bodies();
  ASSERT_EQ(bodies.size(), 1u);
  const auto sent = json::parse(bodies[0]);
  EXPECT_EQ(sent.at("prompt").get<std::string>(), r.prompt);
  EXPECT_EQ(sent.at("max_tokens"), 1);
  EXPECT_EQ(sent.at("logprobs"), 32);
  EXPECT_EQ(stub.auth_headers()[0], "Bearer secret-token");

  const auto v = classify(backend, builtin_registry(), ValidatedPolicy{}, TextInput::prompt_only("hi"), {},
                          ClassifyMode::kDecisionOnly);
  EXPECT_EQ(v.category, "sec");
  EXPECT_EQ(v.decision, Decision::kSafe);
}

TEST(HttpBackend, RetriesTransportErrorsOnly) {
  std::atomic<int> calls{0};
  testing::StubServer flaky([&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(kSecPayload, "application/json");
  });
  BackendConfig cfg;
  cfg.base_url = flaky.base_url();
  cfg.retries = 2;
  HttpBackend backend(cfg);
  EXPECT_EQ(backend.complete({}).first_token, "sec");
  EXPECT_EQ(calls.load(), 3);

  std::atomic<int> bad_calls{0};
  testing::StubServer malformed([&](const httplib::Request&, httplib::Response& res) {
    ++bad_calls;
    res.set_content(R"({"choices":[{"text":"sec"}]})", "application/json");
  });
  cfg.base_url = malformed.base_url();
  HttpBackend no_retry(cfg);
  EXPECT_EQ(code_of([&] { no_retry.complete({}); }), ErrorCode::kMalformedResponse);
  EXPECT_EQ(bad_calls.load(), 1);
}

TEST(HttpBackend, HttpErrorAndUnreachableAreTransportErrors) {
  testing::StubServer failing([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  BackendConfig cfg;
  cfg.base_url = failing.base_url();
  HttpBackend backend(cfg);
  EXPECT_EQ(code_of([&] { backend.complete({}); }), ErrorCode::kTransportError);

  cfg.base_url = "http://127.0.0.1:1";
  cfg.timeout_ms = 500;
  HttpBackend nowhere(cfg);
  EXPECT_EQ(code_of([&] { nowhere.complete({}); }), ErrorCode::kTransportError);
}

TEST(HttpBackend, BaseUrlPathPrefix) {
  testing::StubServer stub([](const httplib::Request&, httplib::Response& res) {
    res.set_content(kSecPayload, "application/json");
  }, "/api/v1/completions");
  BackendConfig cfg;
  cfg.base_url = stub.base_url() + "/api/";
  HttpBackend backend(cfg);
  EXPECT_EQ(backend.complete({}).first_token, "sec");
}

TEST(BackendConfig, ApiKeyComesFromEnvironment) {
  ::setenv("TIERGUARD_TEST_KEY", "from-env", 1);
  const auto cfg = backend_config_from_json(json{{"api_key_env", "TIERGUARD_TEST_KEY"}, {"retries", 1}});
  EXPECT_EQ(cfg.api_key, "from-env");
  EXPECT_EQ(cfg.retries, 1);
  EXPECT_EQ(code_of([] { backend_config_from_json(json{{"retries", -1}}); }), ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { backend_config_from_json(json{{"timeout_ms", "soon"}}); }), ErrorCode::kConfigInvalid);
  ::unsetenv("TIERGUARD_TEST_KEY");
}

}  // namespace
}  // namespace tierguard
