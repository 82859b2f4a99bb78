// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tierguard/error.hpp"
#include "tierguard/gateway.hpp"

#include "fixtures.hpp"
#include "stub_server.hpp"

namespace tierguard {
namespace {

using nlohmann::json;

ErrorCode config_error(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "accepted: " << text;
  return ErrorCode::kIo;
}

std::shared_ptr<MockBackend> mock_of(std::vector<CompletionResult> script) {
  return std::make_shared<MockBackend>(std::move(script));
}

TEST(Config, MinimalFileUsesDefaultThresholds) {
  const auto cfg = parse_config(R"({"backend": {"base_url": "http://127.0.0.1:9000"}})");
  EXPECT_EQ(cfg.thresholds.default_prompt, 0.5);
  EXPECT_EQ(cfg.thresholds.default_response, 0.8);
  EXPECT_EQ(cfg.backend.base_url, "http://127.0.0.1:9000");
  EXPECT_EQ(cfg.default_mode, ClassifyMode::kDecisionOnly);
  EXPECT_EQ(cfg.classify.floor, 1e-9);
}

TEST(Config, FullFile) {
  const auto cfg = parse_config(R"({
    "listen_addr": "0.0.0.0:9090",
    "backend": {"base_url": "http://h:1", "model_name": "m", "timeout_ms": 100, "retries": 2, "top_k_logprobs": 40},
    "thresholds": {"default_prompt": 0.4, "default_response": 0.7, "per_category": {"dw": 0.3}},
    "default_mode": "with_explanation",
    "explain_mode": "full",
    "max_explanation_tokens": 256,
    "floor": 1e-8,
    "workers": 16
  })");
  EXPECT_EQ(cfg.listen_host, "0.0.0.0");
  EXPECT_EQ(cfg.listen_port, 9090);
  EXPECT_EQ(cfg.backend.retries, 2);
  EXPECT_EQ(cfg.classify.top_k_logprobs, 40);
  EXPECT_EQ(cfg.thresholds.per_category.at("dw"), 0.3);
  EXPECT_EQ(cfg.default_mode, ClassifyMode::kWithExplanation);
  EXPECT_EQ(cfg.classify.explain_mode, ExplainMode::kFull);
  EXPECT_EQ(cfg.classify.max_explanation_tokens, 256);
  EXPECT_EQ(cfg.classify.floor, 1e-8);
  EXPECT_EQ(cfg.server_workers, 16u);
}

TEST(Config, Errors) {
  EXPECT_EQ(config_error(R"({"thresholds": {"default_prompt": 1.5}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(config_error(R"({"thresholds": {"per_category": {"sec": 0.5}}})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(config_error(R"({"floor": 0})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(config_error(R"({"workers": 0})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(config_error(R"({"default_mode": "eventually"})"), ErrorCode::kConfigInvalid);
  EXPECT_EQ(config_error(R"({"floor": "tiny"})"), ErrorCode::kConfigParseError);
  EXPECT_EQ(config_error("{\n  \"floor\": 1e-9,\n  oops\n}"), ErrorCode::kConfigParseError);
  try {
    (void)parse_config("{\n  \"floor\": 1e-9,\n  oops\n}", "cfg.json");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3"), std::string::npos) << e.what();
  }
  try {
    (void)load_config("/nonexistent/tierguard.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigParseError);
  }
}

TEST(Gateway, ResponseKindExample) {
  Gateway gw({}, mock_of({scripted_result("pc", {{"pc", 0.9}, {"sec", 0.1}})}));
  const auto reply = gw.handle_classify(
      R"({"kind": "response", "prompt": "...", "response": "...", "mode": "decision_only"})");
  ASSERT_EQ(reply.status, 200) << reply.body;
  const auto body = json::parse(reply.body);
  EXPECT_EQ(body.at("category"), "pc");
  EXPECT_EQ(body.at("category_name"), "Pornographic Contraband");
  EXPECT_EQ(body.at("decision"), "unsafe");
  EXPECT_EQ(body.at("degraded"), false);
  EXPECT_FALSE(body.contains("scores"));
  EXPECT_FALSE(body.contains("explanation"));
}

TEST(Gateway, InvalidPolicyIs400WithErrorList) {
  auto mock = mock_of({});
  Gateway gw({}, mock);
  const auto reply = gw.handle_classify(
      R"({"kind": "prompt", "prompt": "hi", "policy": {"rules": [{"op": "add_new", "category_id": "ab", "category_name": "X", "definitions": ["d"]}]}})");
  EXPECT_EQ(reply.status, 400);
  const auto body = json::parse(reply.body);
  EXPECT_EQ(body.at("error"), "invalid_policy");
  ASSERT_EQ(body.at("errors").size(), 1u);
  EXPECT_EQ(body.at("errors")[0].at("code"), "IdNotSingleLetter");
  EXPECT_EQ(body.at("errors")[0].at("rule_index"), 0);
  EXPECT_TRUE(mock->record_requests().empty());
}

TEST(Gateway, BadBodiesAre400) {
  Gateway gw({}, mock_of({}));
  for (const char* body : {"not json", "[]", R"({"prompt":"x"})", R"({"kind":"poem","prompt":"x"})",
                           R"({"kind":"pair","prompt":"x"})", R"({"kind":"prompt","prompt":"x","mode":"loud"})",
                           R"({"kind":"prompt","prompt":"x","thresholds_override":{"default_prompt":2}})",
                           R"({"kind":"prompt","prompt":"x","policy":{"rules":7}})"}) {
    const auto reply = gw.handle_classify(body);
    EXPECT_EQ(reply.status, 400) << body;
    EXPECT_EQ(json::parse(reply.body).at("error"), "invalid_request") << body;
  }
}

TEST(Gateway, BackendHttp500MapsTo502) {
  testing::StubServer failing([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  GatewayConfig cfg;
  cfg.backend.base_url = failing.base_url();
  Gateway gw(cfg, std::make_shared<HttpBackend>(cfg.backend));
  const auto reply = gw.handle_classify(R"({"kind":"prompt","prompt":"hi"})");
  EXPECT_EQ(reply.status, 502);
  EXPECT_EQ(json::parse(reply.body).at("code"), "TransportError");
}

TEST(Gateway, ScoresOnlyOnRequestAndOverrideShadowsConfig) {
  const auto reply_06 = scripted_result("dw", {{"dw", 0.6}, {"sec", 0.4}});
  Gateway gw({}, mock_of({reply_06, reply_06, reply_06}));
  auto body = json::parse(gw.handle_classify(R"({"kind":"prompt","prompt":"x","include_scores":true})").body);
  EXPECT_EQ(body.at("decision"), "unsafe");
  ASSERT_TRUE(body.contains("scores"));
  EXPECT_EQ(body.at("scores").size(), 29u);
  body = json::parse(
      gw.handle_classify(R"({"kind":"prompt","prompt":"x","thresholds_override":{"per_category":{"dw":0.7}}})").body);
  EXPECT_EQ(body.at("decision"), "safe");
  body = json::parse(gw.handle_classify(R"({"kind":"prompt","prompt":"x"})").body);
  EXPECT_EQ(body.at("decision"), "unsafe");
}

TEST(Gateway, WithExplanationMode) {
  const auto c = testing::add_new_case();
  Gateway gw({}, mock_of({testing::case_decision_reply(c), {"\n<explanation>" + c.explanation + "</explanation>", "\n", {}}}));
  json req{{"kind", "prompt"}, {"prompt", c.text}, {"mode", "with_explanation"},
           {"policy", json::parse(R"({"rules":[{"op":"add_new","category_id":"a","category_name":"Prohibited and Restricted Goods","definitions":["d"]}]})")}};
  const auto reply = gw.handle_classify(req.dump());
  ASSERT_EQ(reply.status, 200) << reply.body;
  const auto body = json::parse(reply.body);
  EXPECT_EQ(body.at("category"), "a");
  EXPECT_EQ(body.at("explanation"), c.explanation);
}

TEST(Gateway, IdenticalRequestsGiveIdenticalBodies) {
  const auto r = scripted_result("pc", {{"pc", 0.7}, {"sec", 0.2}, {"dw", 0.1}});
  Gateway gw({}, mock_of({r, r}));
  const std::string req = R"({"kind":"pair","prompt":"p","response":"r","include_scores":true})";
  EXPECT_EQ(gw.handle_classify(req).body, gw.handle_classify(req).body);
}

TEST(Gateway, HealthzNeverTouchesBackend) {
  auto mock = mock_of({});
  Gateway gw({}, mock);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 100; ++i) {
    threads.emplace_back([&] {
      if (gw.healthz().status == 200) ++ok;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 100);
  EXPECT_TRUE(mock->record_requests().empty());
}

TEST(GatewayServer, ServesOverHttp) {
  const auto c = testing::expand_scope_case();
  Gateway gw({}, mock_of({testing::case_decision_reply(c)}));
  GatewayServer server(gw);
  const int port = server.bind_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.serve(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body), json({{"status", "ok"}}));

  json req{{"kind", "response_only"}, {"response", c.text},
           {"policy", {{"rules", {{{"op", "expand_scope"}, {"category_id", "pc"}, {"definitions", {"d"}}}}}}}};
  auto res = client.Post("/v1/classify", req.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("category"), "pc");
  server.stop();
  t.join();
}

}  // namespace
}  // namespace tierguard
