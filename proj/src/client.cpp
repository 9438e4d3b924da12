#include "skillmix/client.hpp"

#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include "skillmix/mock_backend.hpp"

namespace skillmix {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

std::string_view to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop:
      return "stop";
    case FinishReason::length:
      return "length";
    case FinishReason::error:
      return "error";
  }
  return "error";
}

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::mock:
      return "mock";
    case BackendKind::openai:
      return "openai";
    case BackendKind::claude:
      return "claude";
  }
  return "mock";
}

std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  if (s == "mock") return BackendKind::mock;
  if (s == "openai") return BackendKind::openai;
  if (s == "claude") return BackendKind::claude;
  return std::nullopt;
}

BackendConfig backend_from_json(const nlohmann::json& j, double default_temperature) {
  if (!j.is_object()) throw ConfigError("backend config must be an object");
  BackendConfig b;
  try {
    auto kind = parse_backend_kind(j.value("kind", std::string("mock")));
    if (!kind) throw ConfigError("unknown backend kind '" + j.value("kind", std::string()) + "'");
    b.kind = *kind;
    b.model = j.value("model", std::string(b.kind == BackendKind::mock ? "mock" : ""));
    if (b.model.empty()) throw ConfigError("backend 'model' is required");
    b.endpoint_url = j.value("endpoint_url", std::string());
    if (b.endpoint_url.empty() && b.kind == BackendKind::openai) {
      b.endpoint_url = "https://api.openai.com/v1/chat/completions";
    }
    if (b.endpoint_url.empty() && b.kind == BackendKind::claude) {
      b.endpoint_url = "https://api.anthropic.com/v1/messages";
    }
    b.api_key_env_var_name = j.value("api_key_env", std::string());
    if (j.contains("api_key")) {
      throw ConfigError("API keys must come from the environment; use 'api_key_env'");
    }
    b.max_concurrency = j.value("max_concurrency", b.max_concurrency);
    b.requests_per_minute = j.value("requests_per_minute", b.requests_per_minute);
    b.timeout_ms = j.value("timeout_ms", b.timeout_ms);
    b.temperature = j.value("temperature", default_temperature);
    b.max_output_tokens = j.value("max_output_tokens", b.max_output_tokens);
    b.mock_seed = j.value("mock_seed", std::uint64_t{0});
    if (j.contains("retry")) {
      const auto& r = j["retry"];
      b.retry.max_attempts = r.value("max_attempts", b.retry.max_attempts);
      b.retry.base_backoff_ms = r.value("base_backoff_ms", b.retry.base_backoff_ms);
      b.retry.jitter = r.value("jitter", b.retry.jitter);
    }
    if (j.contains("fixtures")) {
      for (const auto& f : j["fixtures"]) {
        b.fixtures.push_back({f.at("prefix").get<std::string>(), f.at("response").get<std::string>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backend config: ") + e.what());
  }
  if (b.max_concurrency < 1) throw ConfigError("max_concurrency must be at least 1");
  if (b.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
  if (b.temperature < 0) throw ConfigError("temperature must be non-negative");
  if (b.retry.jitter < 0 || b.retry.jitter > 1) throw ConfigError("retry.jitter must lie in [0, 1]");
  return b;
}

nlohmann::json to_json(const BackendConfig& b) {
  nlohmann::json fixtures = nlohmann::json::array();
  for (const auto& f : b.fixtures) fixtures.push_back({{"prefix", f.prefix}, {"response", f.response}});
  return {{"kind", to_string(b.kind)},
          {"model", b.model},
          {"endpoint_url", b.endpoint_url},
          {"api_key_env", b.api_key_env_var_name},
          {"max_concurrency", b.max_concurrency},
          {"requests_per_minute", b.requests_per_minute},
          {"timeout_ms", b.timeout_ms},
          {"temperature", b.temperature},
          {"max_output_tokens", b.max_output_tokens},
          {"mock_seed", b.mock_seed},
          {"retry",
           {{"max_attempts", b.retry.max_attempts},
            {"base_backoff_ms", b.retry.base_backoff_ms},
            {"jitter", b.retry.jitter}}},
          {"fixtures", fixtures}};
}

// ---------------------------------------------------------------------------
// HttpProvider

HttpProvider::HttpProvider(BackendConfig config, std::shared_ptr<Transport> transport,
                           std::string api_key)
    : config_(std::move(config)), transport_(std::move(transport)), api_key_(std::move(api_key)) {}

nlohmann::json HttpProvider::encode(BackendKind kind, const ChatRequest& request) {
  nlohmann::json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  nlohmann::json messages = nlohmann::json::array();
  if (kind == BackendKind::claude) {
    std::string system;
    for (const auto& m : request.messages) {
      if (m.role == Role::system) {
        if (!system.empty()) system += "\n\n";
        system += m.content;
        continue;
      }
      messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    if (!system.empty()) body["system"] = system;
    body["max_tokens"] = request.max_output_tokens;
  } else {
    for (const auto& m : request.messages) {
      messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    body["max_tokens"] = request.max_output_tokens;
  }
  body["messages"] = std::move(messages);
  return body;
}

AttemptResult HttpProvider::decode(BackendKind kind, int status, const std::string& body) {
  AttemptResult r;
  r.http_status = status;
  if (status == 0 || status == 408 || status == 409 || status == 429 || status >= 500) {
    r.kind = AttemptResult::Kind::transient;
    r.detail = "HTTP " + std::to_string(status);
    return r;
  }
  if (status == 401 || status == 403) {
    r.kind = AttemptResult::Kind::auth;
    r.detail = "HTTP " + std::to_string(status);
    return r;
  }
  if (status < 200 || status >= 300) {
    r.kind = AttemptResult::Kind::rejected;
    r.detail = "HTTP " + std::to_string(status) + ": " + body.substr(0, 200);
    return r;
  }
  try {
    const auto doc = nlohmann::json::parse(body);
    if (kind == BackendKind::claude) {
      std::string content;
      for (const auto& part : doc.at("content")) {
        if (part.value("type", std::string()) == "text") content += part.at("text").get<std::string>();
      }
      r.response.content = std::move(content);
      const std::string stop = doc.value("stop_reason", std::string("end_turn"));
      r.response.finish_reason = stop == "max_tokens" ? FinishReason::length : FinishReason::stop;
      if (doc.contains("usage")) {
        r.response.usage.input_tokens = doc["usage"].value("input_tokens", std::int64_t{0});
        r.response.usage.output_tokens = doc["usage"].value("output_tokens", std::int64_t{0});
      }
    } else {
      const auto& choice = doc.at("choices").at(0);
      r.response.content = choice.at("message").at("content").get<std::string>();
      const std::string finish = choice.value("finish_reason", std::string("stop"));
      r.response.finish_reason = finish == "length" ? FinishReason::length : FinishReason::stop;
      if (doc.contains("usage")) {
        r.response.usage.input_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
        r.response.usage.output_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    r.kind = AttemptResult::Kind::malformed;
    r.detail = std::string("malformed response body: ") + e.what();
    return r;
  }
  r.kind = AttemptResult::Kind::ok;
  return r;
}

AttemptResult HttpProvider::attempt(const ChatRequest& request) {
  std::vector<std::pair<std::string, std::string>> headers;
  if (config_.kind == BackendKind::claude) {
    if (!api_key_.empty()) headers.emplace_back("x-api-key", api_key_);
    headers.emplace_back("anthropic-version", "2023-06-01");
  } else if (!api_key_.empty()) {
    headers.emplace_back("Authorization", "Bearer " + api_key_);
  }
  const std::string body = encode(config_.kind, request).dump();
  HttpResult http = transport_->post(config_.endpoint_url, headers, body,
                                     std::chrono::milliseconds(config_.timeout_ms));
  AttemptResult r = decode(config_.kind, http.status, http.body);
  if (http.status == 0) r.detail = "transport: " + http.error;
  return r;
}

// ---------------------------------------------------------------------------
// ChatClient

ChatClient::ChatClient(BackendConfig config, std::unique_ptr<Provider> provider, ClientHooks hooks)
    : config_(std::move(config)), provider_(std::move(provider)), hooks_(std::move(hooks)) {
  if (config_.max_concurrency < 1) throw ConfigError("max_concurrency must be at least 1");
  if (config_.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
  if (!hooks_.sleep) {
    hooks_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

ChatRequest ChatClient::make_request(std::vector<ChatMessage> messages, std::string tag) const {
  ChatRequest r;
  r.model = config_.model;
  r.messages = std::move(messages);
  r.temperature = config_.temperature;
  r.max_output_tokens = config_.max_output_tokens;
  r.request_tag = std::move(tag);
  return r;
}

int ChatClient::max_in_flight() const {
  std::lock_guard lock(mu_);
  return max_in_flight_;
}

std::int64_t ChatClient::total_attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

std::int64_t ChatClient::total_retries() const {
  std::lock_guard lock(mu_);
  return retries_;
}

void ChatClient::acquire_slot(const std::string& tag) {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] {
    return in_flight_ < config_.max_concurrency && !tags_in_flight_.contains(tag);
  });
  ++in_flight_;
  max_in_flight_ = std::max(max_in_flight_, in_flight_);
  tags_in_flight_.insert(tag);
}

void ChatClient::release_slot(const std::string& tag) {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
    tags_in_flight_.erase(tag);
  }
  cv_.notify_all();
}

void ChatClient::pace() {
  if (config_.requests_per_minute <= 0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(60.0 / config_.requests_per_minute));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(pace_mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
  }
  const auto wait = slot - std::chrono::steady_clock::now();
  if (wait > std::chrono::steady_clock::duration::zero()) {
    hooks_.sleep(std::chrono::ceil<std::chrono::milliseconds>(wait));
  }
}

namespace {

void check_request(const ChatRequest& request) {
  if (request.messages.empty()) throw RequestRejected("request has no messages");
  for (const auto& m : request.messages) {
    if (m.role == Role::system) continue;
    if (m.role != Role::user) throw RequestRejected("first non-system message must be from the user");
    break;
  }
  if (request.temperature < 0) throw RequestRejected("temperature must be non-negative");
}

double jitter_draw() {
  thread_local std::mt19937_64 engine{std::random_device{}()};
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine);
}

}  // namespace

ChatResponse ChatClient::complete(const ChatRequest& request) {
  check_request(request);
  acquire_slot(request.request_tag);
  struct Release {
    ChatClient* self;
    const std::string& tag;
    ~Release() { self->release_slot(tag); }
  } release{this, request.request_tag};

  const auto started = std::chrono::steady_clock::now();
  std::string last_detail;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    pace();
    AttemptResult r = provider_->attempt(request);
    {
      std::lock_guard lock(mu_);
      ++attempts_;
    }
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    if (hooks_.logger) {
      hooks_.logger({{"request_tag", request.request_tag},
                     {"model", request.model},
                     {"attempt", attempt},
                     {"status", r.kind == AttemptResult::Kind::ok ? "ok" : r.detail},
                     {"latency_ms", latency.count()},
                     {"input_tokens", r.response.usage.input_tokens},
                     {"output_tokens", r.response.usage.output_tokens}});
    }
    switch (r.kind) {
      case AttemptResult::Kind::ok:
        r.response.latency = latency;
        r.response.attempts = attempt;
        return r.response;
      case AttemptResult::Kind::auth:
        throw AuthFailure("authentication failed for " + request.request_tag + ": " + r.detail);
      case AttemptResult::Kind::malformed:
        throw MalformedResponse(request.request_tag + ": " + r.detail);
      case AttemptResult::Kind::rejected:
        throw RequestRejected(request.request_tag + ": " + r.detail);
      case AttemptResult::Kind::transient:
        break;
    }
    last_detail = r.detail;
    if (attempt == config_.retry.max_attempts) break;
    const double factor = std::ldexp(1.0, attempt - 1) * (1.0 + config_.retry.jitter * jitter_draw());
    hooks_.sleep(std::chrono::milliseconds(
        static_cast<std::int64_t>(std::ceil(config_.retry.base_backoff_ms * factor))));
    std::lock_guard lock(mu_);
    ++retries_;
  }
  throw TransientFailure(request.request_tag + ": retries exhausted after " +
                             std::to_string(config_.retry.max_attempts) + " attempts (" +
                             last_detail + ")",
                         config_.retry.max_attempts);
}

std::unique_ptr<ChatClient> make_client(const BackendConfig& config, ClientHooks hooks) {
  if (config.kind == BackendKind::mock) {
    return std::make_unique<ChatClient>(config, std::make_unique<MockProvider>(config),
                                        std::move(hooks));
  }
  std::string key;
  if (!config.api_key_env_var_name.empty()) {
    const char* v = std::getenv(config.api_key_env_var_name.c_str());
    if (!v || !*v) {
      throw ConfigError("environment variable " + config.api_key_env_var_name + " is not set");
    }
    key = v;
  }
  auto provider = std::make_unique<HttpProvider>(config, make_http_transport(), std::move(key));
  return std::make_unique<ChatClient>(config, std::move(provider), std::move(hooks));
}

TwoRoundResult run_two_round_generation(ChatClient& client, const std::string& prompt1,
                                        const std::string& prompt2,
                                        const std::string& tag_prefix) {
  TwoRoundResult out;
  std::vector<ChatMessage> messages{{Role::user, prompt1}};
  try {
    ChatResponse r1 = client.complete(client.make_request(messages, tag_prefix + "/r1"));
    out.answer1 = std::move(r1.content);
    out.retries += r1.attempts - 1;
  } catch (const TransientFailure& e) {
    throw RoundFailure(1, e.what(), true);
  } catch (const BackendError& e) {
    throw RoundFailure(1, e.what(), false);
  }
  messages.push_back({Role::assistant, out.answer1});
  messages.push_back({Role::user, prompt2});
  try {
    ChatResponse r2 = client.complete(client.make_request(messages, tag_prefix + "/r2"));
    out.answer2 = std::move(r2.content);
    out.retries += r2.attempts - 1;
  } catch (const TransientFailure& e) {
    throw RoundFailure(2, e.what(), true);
  } catch (const BackendError& e) {
    throw RoundFailure(2, e.what(), false);
  }
  return out;
}

}  // namespace skillmix
