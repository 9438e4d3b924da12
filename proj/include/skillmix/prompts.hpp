#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "skillmix/registry.hpp"
#include "skillmix/sampler.hpp"

namespace skillmix {

enum class GraderStyle { gpt4, claude };

std::string_view to_string(GraderStyle s);
std::optional<GraderStyle> parse_grader_style(std::string_view s);

/// Wording of the three non-skill rubric criteria. `{topic}` is substituted.
struct RubricLabels {
  std::string topic = "sticks to the topic of {topic}";
  std::string coherence = "coherence / making sense";
  std::string length = "meets the length requirement";
};

/// k skill criteria (display names, combination order) followed by topic,
/// coherence and length: k + 3 items.
struct RubricItems {
  std::vector<std::string> items;
  int k = 0;

  friend bool operator==(const RubricItems&, const RubricItems&) = default;
};

struct PromptBundle {
  std::string prompt1;
  std::string prompt2;
  std::string grading_prompt_gpt4_style;
  std::string grading_prompt_claude_style;
  std::string num_sentences_str;
  std::string skills_str;
  std::string skills_defs_and_examples;
};

class PromptError : public Error {
 public:
  using Error::Error;
};

/// "1 sentence" for k <= 2, otherwise "{k-1} sentences".
std::string num_sentences(int k);

RubricItems rubric_items(const Combination& combination, const SkillRegistry& registry,
                         const RubricLabels& labels = {});

/// "(1) label, (2) label, ..." as placed in the grading prompt.
std::string render_rubric_items(const RubricItems& rubric);

std::string skills_str(const Combination& combination, const SkillRegistry& registry);
std::string skills_defs_and_examples(const Combination& combination,
                                     const SkillRegistry& registry);

std::string build_prompt1(const Combination& combination, const SkillRegistry& registry);
std::string build_prompt2(int k);
std::string build_grading_prompt(GraderStyle style, const Combination& combination,
                                 std::string_view student_answer,
                                 const SkillRegistry& registry,
                                 const RubricLabels& labels = {});

PromptBundle build_prompt_bundle(const Combination& combination, std::string_view student_answer,
                                 const SkillRegistry& registry,
                                 const RubricLabels& labels = {});

/// Single-pass `{name}` substitution; unknown placeholders are left as is and
/// substituted text is never rescanned.
std::string fill_template(std::string_view tmpl,
                          const std::map<std::string, std::string, std::less<>>& values);

}  // namespace skillmix
