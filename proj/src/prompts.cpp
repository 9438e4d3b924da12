#include "skillmix/prompts.hpp"

#include <set>

#include "skillmix/templates.hpp"
#include "skillmix/text.hpp"

namespace skillmix {
namespace {

std::vector<const Skill*> resolve_skills(const Combination& combination,
                                         const SkillRegistry& registry) {
  std::vector<const Skill*> out;
  for (const auto& name : combination.skills) {
    const Skill* s = registry.find_skill(name);
    if (!s) throw PromptError("unresolved skill \"" + name + "\" in combination " + combination.id);
    out.push_back(s);
  }
  return out;
}

const Topic& resolve_topic(const Combination& combination, const SkillRegistry& registry) {
  const Topic* t = registry.find_topic(combination.topic);
  if (!t) {
    throw PromptError("unresolved topic \"" + combination.topic + "\" in combination " +
                      combination.id);
  }
  return *t;
}

}  // namespace

std::string_view to_string(GraderStyle s) { return s == GraderStyle::gpt4 ? "gpt4" : "claude"; }

std::optional<GraderStyle> parse_grader_style(std::string_view s) {
  if (s == "gpt4") return GraderStyle::gpt4;
  if (s == "claude") return GraderStyle::claude;
  return std::nullopt;
}

std::string fill_template(std::string_view tmpl,
                          const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size() * 2);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(tmpl.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string num_sentences(int k) {
  if (k < 1) throw PromptError("k must be at least 1, got " + std::to_string(k));
  const int n = k > 1 ? k - 1 : 1;
  return std::to_string(n) + (n == 1 ? " sentence" : " sentences");
}

RubricItems rubric_items(const Combination& combination, const SkillRegistry& registry,
                         const RubricLabels& labels) {
  RubricItems rubric;
  rubric.k = static_cast<int>(combination.skills.size());
  for (const Skill* s : resolve_skills(combination, registry)) rubric.items.push_back(s->name);
  const Topic& topic = resolve_topic(combination, registry);
  rubric.items.push_back(fill_template(labels.topic, {{"topic", topic.name}}));
  rubric.items.push_back(labels.coherence);
  rubric.items.push_back(labels.length);

  std::set<std::string> keys;
  for (const auto& item : rubric.items) {
    if (!keys.insert(text::normalize_key(item)).second) {
      throw PromptError("rubric label \"" + item + "\" is not unique");
    }
  }
  return rubric;
}

std::string render_rubric_items(const RubricItems& rubric) {
  std::string out;
  for (std::size_t i = 0; i < rubric.items.size(); ++i) {
    if (i) out += ", ";
    out += "(" + std::to_string(i + 1) + ") " + rubric.items[i];
  }
  return out;
}

std::string skills_str(const Combination& combination, const SkillRegistry& registry) {
  std::vector<std::string> names;
  for (const Skill* s : resolve_skills(combination, registry)) names.push_back(s->name);
  return text::join(names, ", ");
}

std::string skills_defs_and_examples(const Combination& combination,
                                     const SkillRegistry& registry) {
  std::string out;
  std::size_t i = 0;
  for (const Skill* s : resolve_skills(combination, registry)) {
    if (i) out.push_back('\n');
    out += std::to_string(++i) + ". **" + s->name + "**: " + s->definition +
           " For example, " + s->example;
  }
  return out;
}

std::string build_prompt1(const Combination& combination, const SkillRegistry& registry) {
  return fill_template(templates::k_prompt1,
                       {{"topic", resolve_topic(combination, registry).name},
                        {"skills_str", skills_str(combination, registry)},
                        {"skills_defs_and_examples_simple",
                         skills_defs_and_examples(combination, registry)}});
}

std::string build_prompt2(int k) {
  return fill_template(templates::k_prompt2, {{"num_sentences_str", num_sentences(k)}});
}

std::string build_grading_prompt(GraderStyle style, const Combination& combination,
                                 std::string_view student_answer,
                                 const SkillRegistry& registry, const RubricLabels& labels) {
  if (text::trim(student_answer).empty()) throw PromptError("empty student answer");
  const RubricItems rubric = rubric_items(combination, registry, labels);
  const std::string_view tmpl =
      style == GraderStyle::gpt4 ? templates::k_grading_gpt4 : templates::k_grading_claude;
  return fill_template(tmpl,
                       {{"num_sentences_str", num_sentences(rubric.k)},
                        {"topic", resolve_topic(combination, registry).name},
                        {"skills_str", skills_str(combination, registry)},
                        {"student_answer", std::string(student_answer)},
                        {"skills_defs_and_examples_simple",
                         skills_defs_and_examples(combination, registry)},
                        {"rubric_items", render_rubric_items(rubric)}});
}

PromptBundle build_prompt_bundle(const Combination& combination, std::string_view student_answer,
                                 const SkillRegistry& registry, const RubricLabels& labels) {
  PromptBundle b;
  b.prompt1 = build_prompt1(combination, registry);
  b.prompt2 = build_prompt2(static_cast<int>(combination.skills.size()));
  b.grading_prompt_gpt4_style =
      build_grading_prompt(GraderStyle::gpt4, combination, student_answer, registry, labels);
  b.grading_prompt_claude_style =
      build_grading_prompt(GraderStyle::claude, combination, student_answer, registry, labels);
  b.num_sentences_str = num_sentences(static_cast<int>(combination.skills.size()));
  b.skills_str = skills_str(combination, registry);
  b.skills_defs_and_examples = skills_defs_and_examples(combination, registry);
  return b;
}

}  // namespace skillmix
