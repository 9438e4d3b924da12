#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "skillmix/client.hpp"

namespace skillmix {

/// Scripted transient failure: the first `times` attempts whose tag contains
/// `tag_contains` fail with `status`.
struct MockFailure {
  std::string tag_contains;
  int times = 1;
  int status = 503;
};

/// Offline backend. Replies are a pure function of (mock_seed, request tag,
/// messages): fixtures first, then a synthetic grader table for grading
/// prompts, otherwise a synthetic student answer.
class MockProvider : public Provider {
 public:
  explicit MockProvider(BackendConfig config, std::vector<MockFailure> failures = {},
                        std::chrono::microseconds simulated_latency = {});

  AttemptResult attempt(const ChatRequest& request) override;

  int calls() const { return calls_.load(); }
  int max_concurrent_calls() const { return max_in_flight_.load(); }

  /// The deterministic reply, without failure injection or accounting.
  std::string reply(const ChatRequest& request) const;

 private:
  BackendConfig config_;
  std::vector<MockFailure> failures_;
  std::chrono::microseconds latency_;
  std::mutex failures_mu_;
  std::map<std::size_t, int> failures_used_;
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

}  // namespace skillmix
