#include "skillmix/sampler.hpp"

#include <algorithm>
#include <limits>

#include "skillmix/text.hpp"

namespace skillmix {

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::train:
      return "train";
    case Setting::held_out:
      return "held_out";
    case Setting::all:
      return "all";
  }
  return "all";
}

std::optional<Setting> parse_setting(std::string_view s) {
  if (s == "train" || s == "I") return Setting::train;
  if (s == "held_out" || s == "II") return Setting::held_out;
  if (s == "all" || s == "III") return Setting::all;
  return std::nullopt;
}

std::string combination_id(std::vector<std::string> skill_keys, const std::string& topic_key) {
  std::sort(skill_keys.begin(), skill_keys.end());
  std::string material = "k=" + std::to_string(skill_keys.size());
  for (const auto& key : skill_keys) {
    material.push_back('\x1f');
    material += key;
  }
  material.push_back('\x1e');
  material += topic_key;
  return text::sha256_hex(material).substr(0, 16);
}

std::vector<Skill> skill_pool(const SkillRegistry& registry, Setting pool) {
  switch (pool) {
    case Setting::train:
      return registry.skills_in(Split::train);
    case Setting::held_out:
      return registry.skills_in(Split::held_out);
    case Setting::all:
      return registry.skills();
  }
  return {};
}

std::vector<Topic> topic_pool(const SkillRegistry& registry, Setting pool) {
  switch (pool) {
    case Setting::train:
      return registry.topics_in(Split::train);
    case Setting::held_out:
      return registry.topics_in(Split::held_out);
    case Setting::all:
      return registry.topics();
  }
  return {};
}

Combination sample_combination(std::span<const Skill> skills, std::span<const Topic> topics,
                               int k, Rng& rng, Setting setting) {
  if (skills.empty()) throw SamplingError("empty skill pool");
  if (topics.empty()) throw SamplingError("empty topic pool");
  if (k < 1) throw SamplingError("k must be at least 1");
  if (static_cast<std::size_t>(k) > skills.size()) {
    throw SamplingError("k = " + std::to_string(k) + " exceeds skill pool size " +
                        std::to_string(skills.size()));
  }
  Combination c;
  c.k = k;
  c.setting = setting;
  std::vector<std::string> keys;
  for (std::size_t idx : rng.sample_indices(skills.size(), static_cast<std::size_t>(k))) {
    c.skills.push_back(skills[idx].name);
    keys.push_back(skills[idx].key.empty() ? text::normalize_key(skills[idx].name)
                                           : skills[idx].key);
  }
  const Topic& topic = topics[rng.below(topics.size())];
  c.topic = topic.name;
  c.id = combination_id(std::move(keys),
                        topic.key.empty() ? text::normalize_key(topic.name) : topic.key);
  return c;
}

std::uint64_t count_combinations(std::size_t n_skills, std::size_t n_topics, int k) {
  if (k < 0 || static_cast<std::size_t>(k) > n_skills) return 0;
  constexpr auto max = std::numeric_limits<std::uint64_t>::max();
  unsigned __int128 c = 1;
  for (int i = 1; i <= k; ++i) {
    c = c * (n_skills - static_cast<std::size_t>(k) + static_cast<std::size_t>(i)) /
        static_cast<unsigned>(i);
    if (c > max) return max;
  }
  c *= n_topics;
  return c > max ? max : static_cast<std::uint64_t>(c);
}

namespace {

// Lexicographic successor of a k-subset of [0, n). Returns false after the last.
bool next_subset(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  std::size_t i = k;
  while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
  if (i == 0) return false;
  ++idx[i - 1];
  for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  return true;
}

constexpr std::uint64_t k_enumeration_limit = 2'000'000;

}  // namespace

std::vector<Combination> sample_batch(const SamplingPlan& plan, const SkillRegistry& registry,
                                      const std::set<std::string>& exclude) {
  if (plan.n_combinations < 1) throw SamplingError("n_combinations must be at least 1");
  std::vector<Skill> skills = skill_pool(registry, plan.setting);
  if (plan.common_skill_threshold) {
    skills = filter_common_skills(skills, *plan.common_skill_threshold);
  }
  std::vector<Topic> topics = topic_pool(registry, plan.topic_pool.value_or(plan.setting));
  if (skills.empty() || topics.empty()) {
    throw SamplingError("pool for setting '" + std::string(to_string(plan.setting)) +
                        "' is empty");
  }
  if (static_cast<std::size_t>(plan.k) > skills.size() || plan.k < 1) {
    throw SamplingError("k = " + std::to_string(plan.k) + " invalid for skill pool of size " +
                        std::to_string(skills.size()));
  }

  Rng rng(plan.seed);
  std::vector<Combination> out;
  out.reserve(plan.n_combinations);

  if (!plan.dedupe) {
    for (std::size_t i = 0; i < plan.n_combinations; ++i) {
      Combination c = sample_combination(skills, topics, plan.k, rng, plan.setting);
      c.seed = plan.seed;
      out.push_back(std::move(c));
    }
    return out;
  }

  const std::uint64_t total = count_combinations(skills.size(), topics.size(), plan.k);
  if (plan.n_combinations > total) {
    throw SamplingError("dedupe requested " + std::to_string(plan.n_combinations) +
                        " combinations but the pool only has " + std::to_string(total));
  }

  if (total <= k_enumeration_limit && plan.n_combinations * 2 > total) {
    // Dense request: enumerate the pool, then draw without replacement.
    std::vector<Combination> all;
    all.reserve(static_cast<std::size_t>(total));
    std::vector<std::size_t> idx(static_cast<std::size_t>(plan.k));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    do {
      for (const Topic& t : topics) {
        Combination c;
        c.k = plan.k;
        c.setting = plan.setting;
        c.seed = plan.seed;
        std::vector<std::string> keys;
        for (std::size_t i : idx) {
          c.skills.push_back(skills[i].name);
          keys.push_back(skills[i].key);
        }
        c.topic = t.name;
        c.id = combination_id(std::move(keys), t.key);
        if (!exclude.contains(c.id)) all.push_back(std::move(c));
      }
    } while (next_subset(idx, skills.size()));
    if (plan.n_combinations > all.size()) {
      throw SamplingError("dedupe requested " + std::to_string(plan.n_combinations) +
                          " combinations but only " + std::to_string(all.size()) +
                          " remain unused in the pool");
    }
    for (std::size_t i = 0; i < plan.n_combinations; ++i) {
      std::size_t j = i + rng.below(all.size() - i);
      std::swap(all[i], all[j]);
      // Present skills in a random order like the sparse path does.
      rng.shuffle(all[i].skills);
      out.push_back(std::move(all[i]));
    }
    return out;
  }

  std::set<std::string> seen = exclude;
  std::size_t rejected = 0;
  while (out.size() < plan.n_combinations) {
    Combination c = sample_combination(skills, topics, plan.k, rng, plan.setting);
    if (!seen.insert(c.id).second) {
      if (++rejected > 1000 * plan.n_combinations + 1'000'000) {
        throw SamplingError("could not find enough distinct combinations");
      }
      continue;
    }
    c.seed = plan.seed;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Skill> filter_common_skills(std::span<const Skill> pool, double threshold) {
  std::vector<Skill> out;
  for (const Skill& s : pool) {
    if (!s.occurrence_rate) {
      throw SamplingError("skill \"" + s.name + "\" has no occurrence_rate");
    }
    if (*s.occurrence_rate < threshold) out.push_back(s);
  }
  return out;
}

nlohmann::json to_json(const Combination& c) {
  return {{"id", c.id},           {"k", c.k},
          {"skills", c.skills},   {"topic", c.topic},
          {"setting", to_string(c.setting)}, {"seed", c.seed}};
}

Combination combination_from_json(const nlohmann::json& j) {
  Combination c;
  c.id = j.at("id").get<std::string>();
  c.k = j.at("k").get<int>();
  c.skills = j.at("skills").get<std::vector<std::string>>();
  c.topic = j.at("topic").get<std::string>();
  auto setting = parse_setting(j.at("setting").get<std::string>());
  if (!setting) throw SamplingError("unknown setting in combination " + c.id);
  c.setting = *setting;
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

}  // namespace skillmix
