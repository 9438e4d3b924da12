#include "skillmix/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <thread>

#include "skillmix/rng.hpp"
#include "skillmix/text.hpp"

namespace skillmix {
namespace {

std::uint64_t request_seed(std::uint64_t seed, const ChatRequest& request) {
  std::string material = request.request_tag;
  for (const auto& m : request.messages) {
    material.push_back('\x1e');
    material += to_string(m.role);
    material.push_back('\x1f');
    material += m.content;
  }
  const std::string digest = text::sha256_hex(material).substr(0, 16);
  return Rng::derive_seed(seed, std::stoull(digest, nullptr, 16));
}

std::string between(const std::string& s, std::string_view open, std::string_view close) {
  const auto a = s.find(open);
  if (a == std::string::npos) return {};
  const auto start = a + open.size();
  const auto b = s.find(close, start);
  if (b == std::string::npos) return {};
  return s.substr(start, b - start);
}

std::vector<std::string> split_rubric(const std::string& rendered) {
  // "(1) a, (2) b, (3) c"
  std::vector<std::string> items;
  std::size_t n = 1;
  std::size_t pos = rendered.find("(1) ");
  while (pos != std::string::npos) {
    const std::size_t start = pos + std::to_string(n).size() + 3;
    const std::string next_marker = ", (" + std::to_string(n + 1) + ") ";
    const std::size_t next = rendered.find(next_marker, start);
    items.push_back(rendered.substr(start, next == std::string::npos ? std::string::npos : next - start));
    pos = next == std::string::npos ? next : next + 2;
    ++n;
  }
  return items;
}

constexpr std::array<std::string_view, 8> k_openers{
    "Every morning", "Under a pale sky", "Against all odds", "Long before dawn",
    "With quiet resolve", "In a crowded hall", "After the storm", "Without a word"};
constexpr std::array<std::string_view, 8> k_clauses{
    "the crowd leaned in as if the moment itself were holding its breath",
    "she swore the old stories were more honest than the new ones",
    "he argued that there was only one sensible way forward",
    "they learned that patience was worth more than speed",
    "the mentor smiled, knowing the lesson would sink in later",
    "the plan that looked foolish at first turned out to be wise",
    "even the skeptics admitted that the result spoke for itself",
    "the newcomer copied what everyone else was doing"};

std::string student_reply(Rng& rng, const ChatRequest& request) {
  const std::string& prompt1 = request.messages.front().content;
  const bool round2 = request.messages.size() >= 3;
  std::string topic = between(prompt1, "in the context of ", " that illustrates");
  if (topic.empty()) topic = "everyday life";
  const std::string skills = between(prompt1, "following skills: ", ". Please keep");

  std::string body = std::string(k_openers[rng.below(k_openers.size())]) + " in the world of " +
                     topic + ", " + std::string(k_clauses[rng.below(k_clauses.size())]) + ".";
  if (round2) {
    body += " Still, " + std::string(k_clauses[rng.below(k_clauses.size())]) + ".";
  }
  if (!skills.empty() && rng.bernoulli(0.08)) {
    // Occasionally name a skill outright so the mention penalty has work to do.
    const std::string first = skills.substr(0, skills.find(", "));
    body += " It is a fine example of " + first + ".";
  }
  const std::string explanation = "The text touches " + (skills.empty() ? std::string("the skills") : skills) +
                                  " while staying on " + topic + ".";
  if (rng.bernoulli(0.03)) {
    return body + "\n\n" + explanation;  // forgot the marker
  }
  switch (rng.below(3)) {
    case 0:
      return "Answer: " + body + "\nExplanation: " + explanation;
    case 1:
      return "Answer:\n\n\"" + body + "\"\n\nExplanation: " + explanation;
    default:
      return "Sure! Here is my attempt.\n\n**Answer:** " + body + "\n\n**Explanation:** " + explanation;
  }
}

std::string grader_reply(Rng& rng, const std::string& prompt) {
  const std::string rendered = between(prompt, "The criteria are: ", ". The table should only have");
  const std::vector<std::string> items = split_rubric(rendered);
  if (items.empty() || rng.bernoulli(0.02)) {
    return "I'm sorry, I can't produce a table for this answer.";
  }
  const std::size_t k = items.size() >= 3 ? items.size() - 3 : 0;
  std::vector<int> points;
  for (std::size_t i = 0; i < items.size(); ++i) {
    points.push_back(rng.bernoulli(i < k ? 0.85 : 0.93) ? 1 : 0);
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (rng.bernoulli(0.15)) rng.shuffle(order);
  const bool bold = rng.bernoulli(0.2);
  const bool padded = rng.bernoulli(0.3);

  std::string out = "Here's the grading table:\n\n| Criteria | Points Earned |\n|---|---|\n";
  int total = 0;
  for (std::size_t i : order) {
    std::string label = items[i];
    if (bold) label = "**" + label + "**";
    out += padded ? "|   " + label + "   |   " + std::to_string(points[i]) + "   |\n"
                  : "| " + label + " | " + std::to_string(points[i]) + " |\n";
    total += points[i];
  }
  out += "| Total Points Earned | " + std::to_string(total) + " |\n\n";
  out += "Explanation: Each criterion was checked against the definitions provided.";
  return out;
}

}  // namespace

MockProvider::MockProvider(BackendConfig config, std::vector<MockFailure> failures,
                           std::chrono::microseconds simulated_latency)
    : config_(std::move(config)), failures_(std::move(failures)), latency_(simulated_latency) {}

std::string MockProvider::reply(const ChatRequest& request) const {
  const std::string* last_user = nullptr;
  for (const auto& m : request.messages) {
    if (m.role == Role::user) last_user = &m.content;
  }
  if (last_user) {
    for (const auto& f : config_.fixtures) {
      if (last_user->starts_with(f.prefix)) return f.response;
    }
  }
  Rng rng(request_seed(config_.mock_seed, request));
  if (last_user && last_user->find("Here's the grading table:") != std::string::npos &&
      last_user->find("The criteria are: ") != std::string::npos) {
    return grader_reply(rng, *last_user);
  }
  return student_reply(rng, request);
}

AttemptResult MockProvider::attempt(const ChatRequest& request) {
  ++calls_;
  const int now = ++in_flight_;
  int prev = max_in_flight_.load();
  while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
  }
  struct Leave {
    std::atomic<int>& n;
    ~Leave() { --n; }
  } leave{in_flight_};
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

  {
    std::lock_guard lock(failures_mu_);
    for (std::size_t i = 0; i < failures_.size(); ++i) {
      const auto& f = failures_[i];
      if (request.request_tag.find(f.tag_contains) != std::string::npos &&
          failures_used_[i] < f.times) {
        ++failures_used_[i];
        AttemptResult r;
        r.http_status = f.status;
        r.kind = (f.status == 401 || f.status == 403) ? AttemptResult::Kind::auth
                                                      : AttemptResult::Kind::transient;
        r.detail = "mock HTTP " + std::to_string(f.status);
        return r;
      }
    }
  }

  AttemptResult r;
  r.response.content = reply(request);
  std::size_t in_words = 0;
  for (const auto& m : request.messages) in_words += text::split_whitespace(m.content).size();
  r.response.usage.input_tokens = static_cast<std::int64_t>(in_words);
  r.response.usage.output_tokens =
      static_cast<std::int64_t>(text::split_whitespace(r.response.content).size());
  return r;
}

}  // namespace skillmix
