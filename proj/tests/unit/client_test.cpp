#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include "skillmix/client.hpp"
#include "skillmix/mock_backend.hpp"
#include "skillmix/parser.hpp"
#include "skillmix/prompts.hpp"
#include "synthetic.hpp"

using namespace skillmix;
using namespace std::chrono_literals;

namespace {

/// Replays scripted attempt results, then succeeds with an echo of the tag.
class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(std::deque<AttemptResult::Kind> script) : script_(std::move(script)) {}
  AttemptResult attempt(const ChatRequest& request) override {
    std::lock_guard lock(mu_);
    requests.push_back(request);
    AttemptResult r;
    if (!script_.empty()) {
      r.kind = script_.front();
      script_.pop_front();
      r.detail = "scripted";
      if (r.kind != AttemptResult::Kind::ok) return r;
    }
    r.response.content = "reply to " + request.request_tag;
    return r;
  }
  std::vector<ChatRequest> requests;

 private:
  std::mutex mu_;
  std::deque<AttemptResult::Kind> script_;
};

BackendConfig fast_config() {
  BackendConfig b;
  b.retry.base_backoff_ms = 100;
  b.retry.jitter = 0.0;
  return b;
}

struct SleepLog {
  std::mutex mu;
  std::vector<std::chrono::milliseconds> sleeps;
  ClientHooks hooks() {
    ClientHooks h;
    h.sleep = [this](std::chrono::milliseconds d) {
      std::lock_guard lock(mu);
      sleeps.push_back(d);
    };
    return h;
  }
};

ChatRequest user_request(const ChatClient& c, const std::string& text, const std::string& tag) {
  return c.make_request({{Role::user, text}}, tag);
}

}  // namespace

TEST(Client, MockIsDeterministic) {
  BackendConfig b;
  b.mock_seed = 5;
  auto c1 = make_client(b);
  auto c2 = make_client(b);
  const auto r1 = c1->complete(user_request(*c1, "Greetings! write something", "t1"));
  const auto r2 = c1->complete(user_request(*c1, "Greetings! write something", "t1"));
  const auto r3 = c2->complete(user_request(*c2, "Greetings! write something", "t1"));
  EXPECT_EQ(r1.content, r2.content);
  EXPECT_EQ(r1.content, r3.content);
  const auto other = c1->complete(user_request(*c1, "Greetings! write something", "t2"));
  EXPECT_NE(r1.content, other.content);
}

TEST(Client, MockFixtureWins) {
  BackendConfig b;
  b.fixtures.push_back({"Hello", "canned"});
  auto c = make_client(b);
  EXPECT_EQ(c->complete(user_request(*c, "Hello there", "x")).content, "canned");
}

TEST(Client, RetryAfter429) {
  SleepLog log;
  auto provider = std::make_unique<ScriptedProvider>(std::deque{AttemptResult::Kind::transient});
  ChatClient c(fast_config(), std::move(provider), log.hooks());
  const auto r = c.complete(user_request(c, "hi", "a"));
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(c.total_retries(), 1);
  ASSERT_EQ(log.sleeps.size(), 1u);
  EXPECT_GE(log.sleeps[0], 100ms);
}

TEST(Client, BackoffDoublesWithJitterBound) {
  SleepLog log;
  BackendConfig b = fast_config();
  b.retry.jitter = 0.5;
  b.retry.max_attempts = 4;
  auto provider = std::make_unique<ScriptedProvider>(std::deque{
      AttemptResult::Kind::transient, AttemptResult::Kind::transient, AttemptResult::Kind::transient});
  ChatClient c(b, std::move(provider), log.hooks());
  EXPECT_EQ(c.complete(user_request(c, "hi", "a")).attempts, 4);
  ASSERT_EQ(log.sleeps.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const auto base = 100 * (1 << i);
    EXPECT_GE(log.sleeps[i].count(), base);
    EXPECT_LE(log.sleeps[i].count(), base * 1.5 + 1);
  }
}

TEST(Client, AuthIsNotRetried) {
  SleepLog log;
  auto provider = std::make_unique<ScriptedProvider>(std::deque{AttemptResult::Kind::auth});
  auto* raw = provider.get();
  ChatClient c(fast_config(), std::move(provider), log.hooks());
  EXPECT_THROW(c.complete(user_request(c, "hi", "a")), AuthFailure);
  EXPECT_EQ(raw->requests.size(), 1u);
  EXPECT_TRUE(log.sleeps.empty());
}

TEST(Client, MalformedAndRejected) {
  SleepLog log;
  ChatClient c1(fast_config(), std::make_unique<ScriptedProvider>(std::deque{AttemptResult::Kind::malformed}),
                log.hooks());
  EXPECT_THROW(c1.complete(user_request(c1, "hi", "a")), MalformedResponse);
  ChatClient c2(fast_config(), std::make_unique<ScriptedProvider>(std::deque{AttemptResult::Kind::rejected}),
                log.hooks());
  EXPECT_THROW(c2.complete(user_request(c2, "hi", "a")), RequestRejected);
}

TEST(Client, ExhaustedRetries) {
  SleepLog log;
  BackendConfig b = fast_config();
  b.retry.max_attempts = 3;
  std::deque<AttemptResult::Kind> script(5, AttemptResult::Kind::transient);
  ChatClient c(b, std::make_unique<ScriptedProvider>(script), log.hooks());
  try {
    c.complete(user_request(c, "hi", "a"));
    FAIL();
  } catch (const TransientFailure& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(log.sleeps.size(), 2u);
}

TEST(Client, InvalidRequests) {
  ChatClient c(fast_config(), std::make_unique<ScriptedProvider>(std::deque<AttemptResult::Kind>{}));
  EXPECT_THROW(c.complete(c.make_request({}, "a")), RequestRejected);
  EXPECT_THROW(c.complete(c.make_request({{Role::assistant, "x"}}, "a")), RequestRejected);
}

TEST(Client, TwoRoundDialogue) {
  auto provider = std::make_unique<ScriptedProvider>(std::deque<AttemptResult::Kind>{});
  auto* raw = provider.get();
  ChatClient c(fast_config(), std::move(provider));
  const TwoRoundResult r = run_two_round_generation(c, "P1", "P2", "cid/g0");
  EXPECT_EQ(r.answer1, "reply to cid/g0/r1");
  EXPECT_EQ(r.answer2, "reply to cid/g0/r2");
  ASSERT_EQ(raw->requests.size(), 2u);
  const auto& second = raw->requests[1].messages;
  ASSERT_EQ(second.size(), 3u);
  EXPECT_EQ(second[0], (ChatMessage{Role::user, "P1"}));
  EXPECT_EQ(second[1], (ChatMessage{Role::assistant, "reply to cid/g0/r1"}));
  EXPECT_EQ(second[2], (ChatMessage{Role::user, "P2"}));
  EXPECT_NE(raw->requests[0].request_tag, raw->requests[1].request_tag);
}

TEST(Client, TwoRoundRetryInRoundTwo) {
  SleepLog log;
  auto provider = std::make_unique<ScriptedProvider>(
      std::deque{AttemptResult::Kind::ok, AttemptResult::Kind::transient});
  ChatClient c(fast_config(), std::move(provider), log.hooks());
  const TwoRoundResult r = run_two_round_generation(c, "P1", "P2", "t");
  EXPECT_EQ(r.retries, 1);
  EXPECT_EQ(r.answer2, "reply to t/r2");
}

TEST(Client, TwoRoundFailureTagsRound) {
  SleepLog log;
  BackendConfig b = fast_config();
  b.retry.max_attempts = 2;
  auto provider = std::make_unique<ScriptedProvider>(
      std::deque{AttemptResult::Kind::ok, AttemptResult::Kind::transient, AttemptResult::Kind::transient});
  ChatClient c(b, std::move(provider), log.hooks());
  try {
    run_two_round_generation(c, "P1", "P2", "t");
    FAIL();
  } catch (const RoundFailure& e) {
    EXPECT_EQ(e.round(), 2);
    EXPECT_TRUE(e.transient());
  }
}

TEST(Client, BoundedConcurrencyAndTagExclusivity) {
  BackendConfig b;
  b.max_concurrency = 3;
  auto provider = std::make_unique<MockProvider>(b, std::vector<MockFailure>{}, 2ms);
  auto* raw = provider.get();
  ChatClient c(b, std::move(provider));
  std::vector<std::thread> threads;
  for (int i = 0; i < 24; ++i) {
    threads.emplace_back([&, i] {
      // Pairs of threads share a tag; the client must serialize them.
      c.complete(user_request(c, "Greetings! text", "tag" + std::to_string(i / 2)));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(raw->max_concurrent_calls(), 3);
  EXPECT_LE(c.max_in_flight(), 3);
  EXPECT_EQ(raw->calls(), 24);
}

TEST(Client, MockInjectedFailuresRetry) {
  SleepLog log;
  BackendConfig b = fast_config();
  ChatClient c(b, std::make_unique<MockProvider>(b, std::vector<MockFailure>{{"flaky", 2, 429}}), log.hooks());
  EXPECT_EQ(c.complete(user_request(c, "Greetings!", "flaky-1")).attempts, 3);
  EXPECT_EQ(c.complete(user_request(c, "Greetings!", "steady")).attempts, 1);
}

TEST(Client, RequestPacing) {
  SleepLog log;
  BackendConfig b = fast_config();
  b.requests_per_minute = 600;  // one request per 100 ms
  ChatClient c(b, std::make_unique<ScriptedProvider>(std::deque<AttemptResult::Kind>{}), log.hooks());
  for (int i = 0; i < 4; ++i) c.complete(user_request(c, "hi", "t" + std::to_string(i)));
  std::chrono::milliseconds total{0};
  for (auto d : log.sleeps) total += d;
  // Sleeps are not real here, so slots accumulate: about 100 + 200 + 300 ms.
  EXPECT_GE(total, 500ms);
}

TEST(Client, RequestLogLine) {
  std::vector<nlohmann::json> lines;
  ClientHooks hooks;
  hooks.logger = [&](const nlohmann::json& j) { lines.push_back(j); };
  BackendConfig b;
  b.model = "m1";
  ChatClient c(b, std::make_unique<ScriptedProvider>(std::deque<AttemptResult::Kind>{}), hooks);
  c.complete(user_request(c, "hi", "the-tag"));
  ASSERT_EQ(lines.size(), 1u);
  for (const char* field : {"request_tag", "model", "latency_ms", "input_tokens", "output_tokens"}) {
    EXPECT_TRUE(lines[0].contains(field)) << field;
  }
  EXPECT_EQ(lines[0]["request_tag"], "the-tag");
}

TEST(Client, WireFormats) {
  ChatRequest r;
  r.model = "gpt-4";
  r.temperature = 0.5;
  r.messages = {{Role::system, "sys"}, {Role::user, "u"}};
  const auto openai = HttpProvider::encode(BackendKind::openai, r);
  EXPECT_EQ(openai["messages"].size(), 2u);
  EXPECT_EQ(openai["messages"][0]["role"], "system");
  const auto claude = HttpProvider::encode(BackendKind::claude, r);
  EXPECT_EQ(claude["system"], "sys");
  EXPECT_EQ(claude["messages"].size(), 1u);

  const auto ok = HttpProvider::decode(
      BackendKind::openai, 200,
      R"({"choices":[{"message":{"content":"hey"},"finish_reason":"length"}],"usage":{"prompt_tokens":3,"completion_tokens":4}})");
  EXPECT_EQ(ok.kind, AttemptResult::Kind::ok);
  EXPECT_EQ(ok.response.content, "hey");
  EXPECT_EQ(ok.response.finish_reason, FinishReason::length);
  EXPECT_EQ(ok.response.usage.output_tokens, 4);
  const auto cl = HttpProvider::decode(BackendKind::claude, 200,
                                       R"({"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]})");
  EXPECT_EQ(cl.response.content, "ab");
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 429, "").kind, AttemptResult::Kind::transient);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 503, "").kind, AttemptResult::Kind::transient);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 0, "").kind, AttemptResult::Kind::transient);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 401, "").kind, AttemptResult::Kind::auth);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 400, "").kind, AttemptResult::Kind::rejected);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 200, "{nope").kind, AttemptResult::Kind::malformed);
  EXPECT_EQ(HttpProvider::decode(BackendKind::openai, 200, "{}").kind, AttemptResult::Kind::malformed);
}

TEST(Client, ConfigRejectsInlineKeys) {
  EXPECT_THROW(backend_from_json({{"kind", "openai"}, {"model", "gpt-4"}, {"api_key", "sk-x"}}, 0.0), ConfigError);
  EXPECT_THROW(backend_from_json({{"kind", "openai"}, {"model", "gpt-4"}, {"max_concurrency", 0}}, 0.0), ConfigError);
  EXPECT_THROW(backend_from_json({{"kind", "nope"}}, 0.0), ConfigError);
  const BackendConfig b = backend_from_json({{"kind", "claude"}, {"model", "c3"}}, 1.0);
  EXPECT_EQ(b.temperature, 1.0);
  EXPECT_EQ(b.endpoint_url, "https://api.anthropic.com/v1/messages");
}

TEST(Client, MissingKeyEnvIsConfigError) {
  BackendConfig b;
  b.kind = BackendKind::openai;
  b.model = "gpt-4";
  b.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
  b.api_key_env_var_name = "SKILLMIX_TEST_SURELY_UNSET_KEY";
  ::unsetenv(b.api_key_env_var_name.c_str());
  EXPECT_THROW(make_client(b), ConfigError);
}

// Live HTTP path against a local server: 503 once, then a valid body.
TEST(Client, HttpRoundTripWithRetry) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_body;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      seen_auth = req.get_header_value("Authorization");
      seen_body = req.body;
    }
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"live reply"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("SKILLMIX_TEST_KEY", "secret-123", 1);
  BackendConfig b;
  b.kind = BackendKind::openai;
  b.model = "local";
  b.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  b.api_key_env_var_name = "SKILLMIX_TEST_KEY";
  b.retry.base_backoff_ms = 1;
  b.timeout_ms = 5000;
  auto client = make_client(b);
  const auto r = client->complete(user_request(*client, "hello", "h1"));
  server.stop();
  th.join();
  EXPECT_EQ(r.content, "live reply");
  EXPECT_EQ(r.attempts, 2);
  EXPECT_EQ(seen_auth, "Bearer secret-123");
  EXPECT_EQ(nlohmann::json::parse(seen_body)["model"], "local");
}

TEST(Client, HttpConnectionFailureIsTransient) {
  BackendConfig b;
  b.kind = BackendKind::openai;
  b.model = "local";
  b.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";
  b.retry.max_attempts = 2;
  b.retry.base_backoff_ms = 1;
  b.timeout_ms = 500;
  auto client = make_client(b);
  EXPECT_THROW(client->complete(user_request(*client, "hello", "h")), TransientFailure);
}

// Mock grader replies are parseable tables for the prompt's own rubric.
TEST(Client, MockGraderRepliesParse) {
  const auto& reg = synth::bundled_registry();
  BackendConfig b;
  b.mock_seed = 11;
  auto c = make_client(b);
  int parsed = 0, total = 0;
  for (int i = 0; i < 200; ++i) {
    const Combination combo = synth::golden_cases()[i % 3].combination;
    const std::string prompt = build_grading_prompt(i % 2 ? GraderStyle::gpt4 : GraderStyle::claude, combo,
                                                    "Some answer text.", reg);
    const auto reply = c->complete(user_request(*c, prompt, "g" + std::to_string(i))).content;
    ++total;
    try {
      const GradeRound r = parse_grade_table(reply, rubric_items(combo, reg));
      EXPECT_EQ(r.criterion_points.size(), static_cast<std::size_t>(combo.k + 3));
      ++parsed;
    } catch (const GradeParseError&) {
    }
  }
  EXPECT_GE(parsed, total * 9 / 10);
}
