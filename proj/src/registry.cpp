#include "skillmix/registry.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include "skillmix/text.hpp"

namespace skillmix {
namespace {

constexpr std::array<std::pair<Category, std::string_view>, 8> k_categories{{
    {Category::literary, "literary"},
    {Category::rhetorical, "rhetorical"},
    {Category::reasoning, "reasoning"},
    {Category::logic, "logic"},
    {Category::theory_of_mind, "theory_of_mind"},
    {Category::pragmatics, "pragmatics"},
    {Category::common_sense, "common_sense"},
    {Category::physical_knowledge, "physical_knowledge"},
}};

std::string describe(const char* kind, std::size_t index, const nlohmann::json& rec) {
  std::ostringstream os;
  os << kind << "[" << index << "]";
  if (rec.is_object() && rec.contains("name") && rec["name"].is_string()) {
    os << " (\"" << rec["name"].get<std::string>() << "\")";
  }
  return os.str();
}

const std::string& require_string(const nlohmann::json& rec, const char* field,
                                  const std::string& where, bool non_empty) {
  if (!rec.contains(field) || !rec[field].is_string()) {
    throw SchemaError(where + ": field '" + field + "' must be a string");
  }
  const auto& s = rec[field].get_ref<const std::string&>();
  if (non_empty && text::trim(s).empty()) {
    throw SchemaError(where + ": field '" + field + "' must be non-empty");
  }
  return s;
}

}  // namespace

std::string_view to_string(Category c) {
  for (const auto& [cat, name] : k_categories) {
    if (cat == c) return name;
  }
  return "unknown";
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "held_out"; }

std::optional<Category> parse_category(std::string_view s) {
  for (const auto& [cat, name] : k_categories) {
    if (name == s) return cat;
  }
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "held_out") return Split::held_out;
  return std::nullopt;
}

bool is_train_category(Category c) {
  return c == Category::literary || c == Category::rhetorical;
}

SkillRegistry::SkillRegistry(std::vector<Skill> skills, std::vector<Topic> topics)
    : skills_(std::move(skills)), topics_(std::move(topics)) {
  bool all_labelled = !skills_.empty();
  for (std::size_t i = 0; i < skills_.size(); ++i) {
    Skill& s = skills_[i];
    if (s.key.empty()) s.key = text::normalize_key(s.name);
    if (!skill_index_.emplace(s.key, i).second) {
      throw DuplicateNameError("duplicate skill name \"" + s.name + "\"");
    }
    all_labelled = all_labelled && s.split.has_value();
  }
  for (std::size_t i = 0; i < topics_.size(); ++i) {
    Topic& t = topics_[i];
    if (t.key.empty()) t.key = text::normalize_key(t.name);
    if (!topic_index_.emplace(t.key, i).second) {
      throw DuplicateNameError("duplicate topic name \"" + t.name + "\"");
    }
  }
  rule_ = all_labelled ? PartitionRule::explicit_labels : PartitionRule::by_category;
  for (const Skill& s : skills_) {
    Split split = rule_ == PartitionRule::explicit_labels
                      ? *s.split
                      : (is_train_category(s.category) ? Split::train : Split::held_out);
    partition_.emplace(s.key, split);
  }
}

const Skill* SkillRegistry::find_skill(std::string_view name) const {
  auto it = skill_index_.find(text::normalize_key(name));
  return it == skill_index_.end() ? nullptr : &skills_[it->second];
}

const Topic* SkillRegistry::find_topic(std::string_view name) const {
  auto it = topic_index_.find(text::normalize_key(name));
  return it == topic_index_.end() ? nullptr : &topics_[it->second];
}

const Skill& SkillRegistry::skill(std::string_view name) const {
  const Skill* s = find_skill(name);
  if (!s) throw UnknownNameError("unknown skill \"" + std::string(name) + "\"");
  return *s;
}

const Topic& SkillRegistry::topic(std::string_view name) const {
  const Topic* t = find_topic(name);
  if (!t) throw UnknownNameError("unknown topic \"" + std::string(name) + "\"");
  return *t;
}

std::vector<Skill> SkillRegistry::skills_in(Split s) const {
  std::vector<Skill> out;
  for (const Skill& skill : skills_) {
    if (partition_.at(skill.key) == s) out.push_back(skill);
  }
  return out;
}

std::vector<Topic> SkillRegistry::topics_in(Split s) const {
  std::vector<Topic> out;
  for (const Topic& t : topics_) {
    if (t.split == s) out.push_back(t);
  }
  return out;
}

SkillRegistry registry_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("registry: top level must be an object");
  if (!doc.contains("skills") || !doc["skills"].is_array() || doc["skills"].empty()) {
    throw SchemaError("registry: 'skills' must be a non-empty array");
  }
  if (!doc.contains("topics") || !doc["topics"].is_array() || doc["topics"].empty()) {
    throw SchemaError("registry: 'topics' must be a non-empty array");
  }

  std::vector<Skill> skills;
  const auto& skill_docs = doc["skills"];
  for (std::size_t i = 0; i < skill_docs.size(); ++i) {
    const auto& rec = skill_docs[i];
    const std::string where = describe("skills", i, rec);
    if (!rec.is_object()) throw SchemaError(where + ": must be an object");
    Skill s;
    s.name = require_string(rec, "name", where, true);
    const std::string& cat = require_string(rec, "category", where, true);
    auto parsed = parse_category(cat);
    if (!parsed) throw SchemaError(where + ": unknown category '" + cat + "'");
    s.category = *parsed;
    s.definition = require_string(rec, "definition", where, false);
    s.example = require_string(rec, "example", where, false);
    if (rec.contains("occurrence_rate") && !rec["occurrence_rate"].is_null()) {
      if (!rec["occurrence_rate"].is_number()) {
        throw SchemaError(where + ": 'occurrence_rate' must be a number");
      }
      double r = rec["occurrence_rate"].get<double>();
      if (!(r >= 0.0 && r <= 1.0)) {
        throw SchemaError(where + ": 'occurrence_rate' must lie in [0, 1]");
      }
      s.occurrence_rate = r;
    }
    if (rec.contains("split") && !rec["split"].is_null()) {
      const std::string& sp = require_string(rec, "split", where, true);
      s.split = parse_split(sp);
      if (!s.split) throw SchemaError(where + ": unknown split '" + sp + "'");
    }
    if (rec.contains("definition_source")) {
      s.definition_source = require_string(rec, "definition_source", where, true);
    }
    skills.push_back(std::move(s));
  }

  std::vector<Topic> topics;
  const auto& topic_docs = doc["topics"];
  for (std::size_t i = 0; i < topic_docs.size(); ++i) {
    const auto& rec = topic_docs[i];
    const std::string where = describe("topics", i, rec);
    if (!rec.is_object()) throw SchemaError(where + ": must be an object");
    Topic t;
    t.name = require_string(rec, "name", where, true);
    const std::string& sp = require_string(rec, "split", where, true);
    t.split = parse_split(sp);
    if (!t.split) throw SchemaError(where + ": unknown split '" + sp + "'");
    topics.push_back(std::move(t));
  }
  return SkillRegistry(std::move(skills), std::move(topics));
}

SkillRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open registry file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("registry " + path.string() + ": invalid JSON: " + e.what());
  }
  SkillRegistry reg = registry_from_json(doc);
  ValidationReport report = validate_registry(reg);
  if (!report.ok()) {
    const Violation& v = report.violations.front();
    throw SchemaError("registry " + path.string() + ": " + v.subject + ": " + v.message);
  }
  return reg;
}

nlohmann::json registry_to_json(const SkillRegistry& registry) {
  nlohmann::json skills = nlohmann::json::array();
  for (const Skill& s : registry.skills()) {
    nlohmann::json rec = {{"name", s.name},
                          {"category", to_string(s.category)},
                          {"definition", s.definition},
                          {"example", s.example},
                          {"definition_source", s.definition_source}};
    if (s.occurrence_rate) rec["occurrence_rate"] = *s.occurrence_rate;
    if (s.split) rec["split"] = to_string(*s.split);
    skills.push_back(std::move(rec));
  }
  nlohmann::json topics = nlohmann::json::array();
  for (const Topic& t : registry.topics()) {
    nlohmann::json rec = {{"name", t.name}};
    rec["split"] = t.split ? nlohmann::json(to_string(*t.split)) : nlohmann::json(nullptr);
    topics.push_back(std::move(rec));
  }
  return {{"skills", std::move(skills)}, {"topics", std::move(topics)}};
}

SkillPartition partition_skills(const SkillRegistry& registry, PartitionRule rule) {
  SkillPartition out;
  for (const Skill& s : registry.skills()) {
    Split split;
    if (rule == PartitionRule::by_category) {
      split = is_train_category(s.category) ? Split::train : Split::held_out;
    } else {
      if (!s.split) {
        throw SchemaError("skill \"" + s.name + "\" has no explicit split label");
      }
      split = *s.split;
    }
    (split == Split::train ? out.train : out.held_out).push_back(s);
  }
  return out;
}

ValidationReport validate_registry(const SkillRegistry& registry,
                                   const ValidationOptions& options) {
  ValidationReport report;
  auto add = [&](std::string subject, std::string message) {
    report.violations.push_back({std::move(subject), std::move(message)});
  };

  if (registry.skills().empty()) add("registry", "no skills");
  if (registry.topics().empty()) add("registry", "no topics");

  std::set<std::string> seen;
  for (const Skill& s : registry.skills()) {
    const std::string subject = "skill \"" + s.name + "\"";
    if (text::trim(s.name).empty()) add(subject, "empty name");
    if (!seen.insert(text::normalize_key(s.name)).second) add(subject, "duplicate name");
    if (s.occurrence_rate && !(*s.occurrence_rate >= 0.0 && *s.occurrence_rate <= 1.0)) {
      add(subject, "occurrence_rate outside [0, 1]");
    }
    auto it = registry.partition().find(s.key);
    if (it == registry.partition().end()) {
      add(subject, "no partition label");
    } else if (registry.partition_rule() == PartitionRule::by_category &&
               it->second == Split::train && !is_train_category(s.category)) {
      add(subject, "train skill outside literary/rhetorical categories");
    }
  }

  seen.clear();
  std::size_t n_train = 0;
  std::size_t n_held = 0;
  for (const Topic& t : registry.topics()) {
    const std::string subject = "topic \"" + t.name + "\"";
    if (text::trim(t.name).empty()) add(subject, "empty name");
    if (!seen.insert(text::normalize_key(t.name)).second) add(subject, "duplicate name");
    if (!t.split) {
      add(subject, "no split assigned");
    } else {
      (*t.split == Split::train ? n_train : n_held) += 1;
    }
  }
  if (options.topic_split) {
    auto [want_train, want_held] = *options.topic_split;
    if (n_train != want_train || n_held != want_held) {
      add("topics", "split is " + std::to_string(n_train) + "/" + std::to_string(n_held) +
                        ", expected " + std::to_string(want_train) + "/" +
                        std::to_string(want_held));
    }
  }
  return report;
}

}  // namespace skillmix
