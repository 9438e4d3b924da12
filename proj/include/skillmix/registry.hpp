#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/error.hpp"

namespace skillmix {

enum class Category {
  literary,
  rhetorical,
  reasoning,
  logic,
  theory_of_mind,
  pragmatics,
  common_sense,
  physical_knowledge,
};

enum class Split { train, held_out };

std::string_view to_string(Category c);
std::string_view to_string(Split s);
std::optional<Category> parse_category(std::string_view s);
std::optional<Split> parse_split(std::string_view s);

/// True for the categories that make up the training skill set.
bool is_train_category(Category c);

struct Skill {
  std::string name;  // display form
  std::string key;   // normalize_key(name)
  Category category = Category::literary;
  std::string definition;
  std::string example;
  std::optional<double> occurrence_rate;
  std::optional<Split> split;
  std::string definition_source = "reconstructed";

  friend bool operator==(const Skill&, const Skill&) = default;
};

struct Topic {
  std::string name;
  std::string key;
  std::optional<Split> split;

  friend bool operator==(const Topic&, const Topic&) = default;
};

enum class PartitionRule { by_category, explicit_labels };

/// Immutable after load. Lookups go through normalized keys.
class SkillRegistry {
 public:
  SkillRegistry() = default;
  SkillRegistry(std::vector<Skill> skills, std::vector<Topic> topics);

  const std::vector<Skill>& skills() const { return skills_; }
  const std::vector<Topic>& topics() const { return topics_; }
  const std::map<std::string, Split>& partition() const { return partition_; }
  PartitionRule partition_rule() const { return rule_; }

  const Skill* find_skill(std::string_view name) const;
  const Topic* find_topic(std::string_view name) const;
  const Skill& skill(std::string_view name) const;
  const Topic& topic(std::string_view name) const;

  std::vector<Skill> skills_in(Split s) const;
  std::vector<Topic> topics_in(Split s) const;

  friend bool operator==(const SkillRegistry& a, const SkillRegistry& b) {
    return a.skills_ == b.skills_ && a.topics_ == b.topics_;
  }

 private:
  std::vector<Skill> skills_;
  std::vector<Topic> topics_;
  std::map<std::string, Split> partition_;  // skill key -> split
  PartitionRule rule_ = PartitionRule::by_category;
  std::map<std::string, std::size_t> skill_index_;
  std::map<std::string, std::size_t> topic_index_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DuplicateNameError : public Error {
 public:
  using Error::Error;
};

class UnknownNameError : public Error {
 public:
  using Error::Error;
};

/// Loads the registry JSON document. Throws IoError, SchemaError or
/// DuplicateNameError.
SkillRegistry load_registry(const std::filesystem::path& path);
SkillRegistry registry_from_json(const nlohmann::json& doc);
nlohmann::json registry_to_json(const SkillRegistry& registry);

struct SkillPartition {
  std::vector<Skill> train;
  std::vector<Skill> held_out;
};

/// by_category: literary and rhetorical skills train, everything else held out.
/// explicit_labels: uses each skill's `split`; throws SchemaError if missing.
SkillPartition partition_skills(const SkillRegistry& registry, PartitionRule rule);

struct Violation {
  std::string subject;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

struct ValidationOptions {
  /// Required (train, held_out) topic counts, if any.
  std::optional<std::pair<std::size_t, std::size_t>> topic_split;
};

ValidationReport validate_registry(const SkillRegistry& registry,
                                   const ValidationOptions& options = {});

}  // namespace skillmix
