#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/parser.hpp"
#include "skillmix/sampler.hpp"

namespace skillmix {

/// Per-criterion binary points for one generation, ordered as
/// (k skills in combination order, topic, coherence, length).
struct CombinedGrade {
  std::string combination_id;
  int generation_index = 0;
  int k = 0;
  std::vector<int> points;
  std::vector<std::string> penalized_skills;
  int rounds_used = 0;
  /// No usable grading rounds or no extractable answer; points are all zero.
  bool failed = false;

  friend bool operator==(const CombinedGrade&, const CombinedGrade&) = default;
};

class ScoringError : public Error {
 public:
  using Error::Error;
};

/// Rounds needed for a criterion point: 3 -> 2, 2 -> 2, 1 -> 1.
int majority_threshold(std::size_t n_rounds);

/// Per-criterion majority over up to three rounds. Zero rounds yield an
/// all-zero, failed grade.
CombinedGrade majority_vote(std::span<const GradeRound> rounds, std::string combination_id,
                            int generation_index, int k);

/// Zeros the point of every combination skill named verbatim in the answer.
/// `skills` are the combination's skills in order.
CombinedGrade apply_name_mention_penalty(CombinedGrade grade, const ExtractedAnswer& answer,
                                         std::span<const Skill> skills);

int metric_full_marks(const CombinedGrade& grade);
int metric_all_skills(const CombinedGrade& grade);
double metric_skills_fraction(const CombinedGrade& grade);

struct ScoredGeneration {
  CombinedGrade grade;
  Setting setting = Setting::all;
  std::string model_label;
};

struct MetricRow {
  int k = 0;
  Setting setting = Setting::all;
  std::string model_label;
  double ratio_full_marks = 0.0;
  double ratio_all_skills = 0.0;
  double skills_fraction = 0.0;
  std::size_t n_combinations = 0;
  std::size_t n_failed_generations = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // sorted by (model_label, setting, k)
  std::string provenance;
};

/// Max over each combination's generations, then mean over combinations,
/// per (k, setting, model_label).
MetricReport aggregate(std::span<const ScoredGeneration> generations, std::string provenance = {});

struct Agreement {
  double p_a = 0.0;
  double p_b = 0.0;
  double p_both = 0.0;
};

/// Full-marks bits per combination id from two graders over the same ids.
Agreement grader_agreement(const std::map<std::string, int>& a, const std::map<std::string, int>& b);

nlohmann::json to_json(const CombinedGrade& g);
CombinedGrade combined_grade_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricReport& r);

/// Two-decimal cell in the ".52/.56/.52" style; 1 renders as "1.0".
std::string format_metric(double v);
/// Plain-text table per (model, setting) with one "{FullMarks}/{AllSkills}/{SkillsFraction}" cell per k.
std::string render_report_table(const MetricReport& r);

}  // namespace skillmix
