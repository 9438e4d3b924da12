#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/registry.hpp"
#include "skillmix/rng.hpp"

namespace skillmix {

/// Evaluation setting: which skill/topic pools a combination is drawn from.
enum class Setting { train, held_out, all };

std::string_view to_string(Setting s);
std::optional<Setting> parse_setting(std::string_view s);

struct Combination {
  std::string id;
  std::vector<std::string> skills;  // display names, in draw order
  std::string topic;
  int k = 0;
  Setting setting = Setting::all;
  std::uint64_t seed = 0;

  friend bool operator==(const Combination&, const Combination&) = default;
};

/// Order-insensitive identifier over normalized skill keys, topic key and k.
std::string combination_id(std::vector<std::string> skill_keys, const std::string& topic_key);

struct SamplingPlan {
  int k = 1;
  std::size_t n_combinations = 0;
  Setting setting = Setting::all;
  /// Overrides the topic pool implied by `setting` (D(1) uses all skills with
  /// training topics).
  std::optional<Setting> topic_pool;
  std::uint64_t seed = 0;
  bool dedupe = true;
  std::optional<double> common_skill_threshold;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

std::vector<Skill> skill_pool(const SkillRegistry& registry, Setting pool);
std::vector<Topic> topic_pool(const SkillRegistry& registry, Setting pool);

/// Draws k distinct skills uniformly without replacement and one topic
/// uniformly.
Combination sample_combination(std::span<const Skill> skills, std::span<const Topic> topics,
                               int k, Rng& rng, Setting setting = Setting::all);

/// Number of distinct combinations C(|skills|, k) * |topics|, saturating.
std::uint64_t count_combinations(std::size_t n_skills, std::size_t n_topics, int k);

/// Samples `plan.n_combinations` combinations. With dedupe, ids are distinct
/// and never collide with `exclude`.
std::vector<Combination> sample_batch(const SamplingPlan& plan, const SkillRegistry& registry,
                                      const std::set<std::string>& exclude = {});

/// Keeps skills whose occurrence rate is strictly below `threshold`.
std::vector<Skill> filter_common_skills(std::span<const Skill> pool, double threshold);

nlohmann::json to_json(const Combination& c);
Combination combination_from_json(const nlohmann::json& j);

}  // namespace skillmix
