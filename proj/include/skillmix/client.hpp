#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/error.hpp"

namespace skillmix {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  /// Combination id plus round indices; never in flight twice at once.
  std::string request_tag;
};

enum class FinishReason { stop, length, error };

std::string_view to_string(FinishReason r);

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

struct ChatResponse {
  std::string content;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
  std::chrono::milliseconds latency{0};
  int attempts = 1;
};

enum class BackendKind { mock, openai, claude };

std::string_view to_string(BackendKind k);
std::optional<BackendKind> parse_backend_kind(std::string_view s);

struct RetryPolicy {
  int max_attempts = 4;
  int base_backoff_ms = 500;
  /// Extra random fraction of the backoff, in [0, 1].
  double jitter = 0.2;
};

/// Canned mock reply: fires when the last user message starts with `prefix`.
struct MockFixture {
  std::string prefix;
  std::string response;
};

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string model = "mock";
  std::string endpoint_url;
  std::string api_key_env_var_name;
  int max_concurrency = 4;
  double requests_per_minute = 0.0;  // 0 = unlimited
  RetryPolicy retry;
  int timeout_ms = 120'000;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::uint64_t mock_seed = 0;
  std::vector<MockFixture> fixtures;
};

/// Parses a backend block of the pipeline config. Throws ConfigError.
BackendConfig backend_from_json(const nlohmann::json& j, double default_temperature);
nlohmann::json to_json(const BackendConfig& b);

class BackendError : public Error {
 public:
  using Error::Error;
};

/// Retries exhausted on 429 / 5xx / timeouts.
class TransientFailure : public BackendError {
 public:
  TransientFailure(const std::string& what, int attempts) : BackendError(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class AuthFailure : public BackendError {
 public:
  using BackendError::BackendError;
};

class MalformedResponse : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Non-retryable rejection other than authentication (e.g. HTTP 400).
class RequestRejected : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Outcome of a single wire attempt, before retry policy is applied.
struct AttemptResult {
  enum class Kind { ok, transient, auth, malformed, rejected };
  Kind kind = Kind::ok;
  ChatResponse response;
  int http_status = 0;
  std::string detail;
};

/// One request/response exchange with a model; no retry or pacing.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual AttemptResult attempt(const ChatRequest& request) = 0;
};

struct HttpResult {
  int status = 0;  // 0 when the connection failed or timed out
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& url,
                          const std::vector<std::pair<std::string, std::string>>& headers,
                          const std::string& body, std::chrono::milliseconds timeout) = 0;
};

/// cpp-httplib transport (http and https).
std::shared_ptr<Transport> make_http_transport();

/// Chat-completions over HTTP. openai: OpenAI-compatible `/chat/completions`;
/// claude: Anthropic `/v1/messages`, translated to and from the same types.
class HttpProvider : public Provider {
 public:
  HttpProvider(BackendConfig config, std::shared_ptr<Transport> transport, std::string api_key);
  AttemptResult attempt(const ChatRequest& request) override;

  /// Exposed for tests of the wire format.
  static nlohmann::json encode(BackendKind kind, const ChatRequest& request);
  static AttemptResult decode(BackendKind kind, int status, const std::string& body);

 private:
  BackendConfig config_;
  std::shared_ptr<Transport> transport_;
  std::string api_key_;
};

using RequestLogger = std::function<void(const nlohmann::json&)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct ClientHooks {
  RequestLogger logger;
  Sleeper sleep;  // defaults to std::this_thread::sleep_for
};

/// Thread-safe front end: bounded concurrency, request pacing, retries with
/// exponential backoff, and per-tag exclusivity.
class ChatClient {
 public:
  ChatClient(BackendConfig config, std::unique_ptr<Provider> provider, ClientHooks hooks = {});

  ChatResponse complete(const ChatRequest& request);

  /// Request skeleton with this backend's model and sampling parameters.
  ChatRequest make_request(std::vector<ChatMessage> messages, std::string tag) const;

  const BackendConfig& config() const { return config_; }
  int max_in_flight() const;
  std::int64_t total_attempts() const;
  std::int64_t total_retries() const;

 private:
  void acquire_slot(const std::string& tag);
  void release_slot(const std::string& tag);
  void pace();

  BackendConfig config_;
  std::unique_ptr<Provider> provider_;
  ClientHooks hooks_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int max_in_flight_ = 0;
  std::set<std::string> tags_in_flight_;
  std::int64_t attempts_ = 0;
  std::int64_t retries_ = 0;

  std::mutex pace_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// Builds a client for the configured backend. Live backends read the API
/// key from the named environment variable.
std::unique_ptr<ChatClient> make_client(const BackendConfig& config, ClientHooks hooks = {});

struct TwoRoundResult {
  std::string answer1;
  std::string answer2;
  int retries = 0;
};

/// Backend failure annotated with the dialogue round (1 or 2) it happened in.
class RoundFailure : public BackendError {
 public:
  RoundFailure(int round, const std::string& what, bool transient)
      : BackendError("round " + std::to_string(round) + ": " + what),
        round_(round),
        transient_(transient) {}
  int round() const { return round_; }
  bool transient() const { return transient_; }

 private:
  int round_;
  bool transient_;
};

/// Round 1: [user:prompt1]. Round 2: [user:prompt1, assistant:answer1,
/// user:prompt2]. Tags are `{tag_prefix}/r1` and `{tag_prefix}/r2`.
TwoRoundResult run_two_round_generation(ChatClient& client, const std::string& prompt1,
                                        const std::string& prompt2,
                                        const std::string& tag_prefix);

}  // namespace skillmix
