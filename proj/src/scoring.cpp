#include "skillmix/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

#include "skillmix/text.hpp"

namespace skillmix {

int majority_threshold(std::size_t n_rounds) {
  return static_cast<int>((n_rounds + 2) / 2);  // ceil((n + 1) / 2)
}

CombinedGrade majority_vote(std::span<const GradeRound> rounds, std::string combination_id,
                            int generation_index, int k) {
  if (k < 1) throw ScoringError("k must be at least 1");
  if (rounds.size() > 3) throw ScoringError("at most three grading rounds are combined");
  CombinedGrade g;
  g.combination_id = std::move(combination_id);
  g.generation_index = generation_index;
  g.k = k;
  const std::size_t n = static_cast<std::size_t>(k) + 3;
  g.points.assign(n, 0);
  g.rounds_used = static_cast<int>(rounds.size());
  if (rounds.empty()) {
    g.failed = true;
    return g;
  }
  for (const GradeRound& r : rounds) {
    if (r.criterion_points.size() != n) {
      throw ScoringError("round has " + std::to_string(r.criterion_points.size()) +
                         " criteria, expected " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (r.criterion_points[i].label != rounds.front().criterion_points[i].label) {
        throw ScoringError("criterion mismatch across rounds at position " + std::to_string(i));
      }
    }
  }
  const int need = majority_threshold(rounds.size());
  for (std::size_t i = 0; i < n; ++i) {
    int votes = 0;
    for (const GradeRound& r : rounds) votes += r.criterion_points[i].binarized;
    g.points[i] = votes >= need ? 1 : 0;
  }
  return g;
}

CombinedGrade apply_name_mention_penalty(CombinedGrade grade, const ExtractedAnswer& answer,
                                         std::span<const Skill> skills) {
  if (grade.points.size() != static_cast<std::size_t>(grade.k) + 3) {
    throw ScoringError("grade has " + std::to_string(grade.points.size()) + " points for k = " +
                       std::to_string(grade.k));
  }
  if (skills.size() != static_cast<std::size_t>(grade.k)) {
    throw ScoringError("penalty needs the combination's " + std::to_string(grade.k) + " skills");
  }
  const auto mentioned = detect_skill_name_mentions(answer.answer, skills);
  for (std::size_t i = 0; i < skills.size(); ++i) {
    if (std::find(mentioned.begin(), mentioned.end(), skills[i].name) == mentioned.end()) continue;
    grade.points[i] = 0;
    if (std::find(grade.penalized_skills.begin(), grade.penalized_skills.end(), skills[i].name) ==
        grade.penalized_skills.end()) {
      grade.penalized_skills.push_back(skills[i].name);
    }
  }
  return grade;
}

namespace {

struct Split3 {
  int skills;
  int rest;
};

Split3 split_points(const CombinedGrade& g) {
  if (g.k < 1 || g.points.size() != static_cast<std::size_t>(g.k) + 3) {
    throw ScoringError("invalid grade: " + std::to_string(g.points.size()) + " points for k = " +
                       std::to_string(g.k));
  }
  Split3 s{0, 0};
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    (i < static_cast<std::size_t>(g.k) ? s.skills : s.rest) += g.points[i];
  }
  return s;
}

}  // namespace

int metric_full_marks(const CombinedGrade& grade) {
  const Split3 s = split_points(grade);
  return s.skills == grade.k && s.rest == 3 ? 1 : 0;
}

int metric_all_skills(const CombinedGrade& grade) {
  const Split3 s = split_points(grade);
  return s.skills == grade.k && s.rest >= 2 ? 1 : 0;
}

double metric_skills_fraction(const CombinedGrade& grade) {
  const Split3 s = split_points(grade);
  return s.rest == 3 ? static_cast<double>(s.skills) / grade.k : 0.0;
}

MetricReport aggregate(std::span<const ScoredGeneration> generations, std::string provenance) {
  if (generations.empty()) throw ScoringError("cannot aggregate an empty run");

  using GroupKey = std::tuple<std::string, int, int>;  // label, setting, k
  struct Best {
    double full = 0.0;
    double all = 0.0;
    double frac = 0.0;
  };
  struct Group {
    std::map<std::string, Best> per_combination;
    std::size_t failed = 0;
  };
  std::map<GroupKey, Group> groups;
  for (const ScoredGeneration& sg : generations) {
    const CombinedGrade& g = sg.grade;
    Group& group = groups[{sg.model_label, static_cast<int>(sg.setting), g.k}];
    Best& best = group.per_combination[g.combination_id];
    if (g.failed) {
      ++group.failed;
      continue;
    }
    best.full = std::max(best.full, static_cast<double>(metric_full_marks(g)));
    best.all = std::max(best.all, static_cast<double>(metric_all_skills(g)));
    best.frac = std::max(best.frac, metric_skills_fraction(g));
  }

  MetricReport report;
  report.provenance = std::move(provenance);
  for (const auto& [key, group] : groups) {
    MetricRow row;
    row.model_label = std::get<0>(key);
    row.setting = static_cast<Setting>(std::get<1>(key));
    row.k = std::get<2>(key);
    row.n_combinations = group.per_combination.size();
    row.n_failed_generations = group.failed;
    for (const auto& [id, best] : group.per_combination) {
      row.ratio_full_marks += best.full;
      row.ratio_all_skills += best.all;
      row.skills_fraction += best.frac;
    }
    const double n = static_cast<double>(row.n_combinations);
    row.ratio_full_marks /= n;
    row.ratio_all_skills /= n;
    row.skills_fraction /= n;
    report.rows.push_back(std::move(row));
  }
  return report;
}

Agreement grader_agreement(const std::map<std::string, int>& a, const std::map<std::string, int>& b) {
  if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin(),
                                          [](const auto& x, const auto& y) { return x.first == y.first; })) {
    throw ScoringError("graders were run over different combination sets");
  }
  if (a.empty()) throw ScoringError("no combinations to compare");
  Agreement out;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    out.p_a += ia->second;
    out.p_b += ib->second;
    out.p_both += (ia->second && ib->second) ? 1 : 0;
  }
  const double n = static_cast<double>(a.size());
  out.p_a /= n;
  out.p_b /= n;
  out.p_both /= n;
  return out;
}

nlohmann::json to_json(const CombinedGrade& g) {
  return {{"combination_id", g.combination_id},
          {"generation_index", g.generation_index},
          {"k", g.k},
          {"points", g.points},
          {"penalized_skills", g.penalized_skills},
          {"rounds_used", g.rounds_used},
          {"failed", g.failed}};
}

CombinedGrade combined_grade_from_json(const nlohmann::json& j) {
  CombinedGrade g;
  g.combination_id = j.at("combination_id").get<std::string>();
  g.generation_index = j.at("generation_index").get<int>();
  g.k = j.at("k").get<int>();
  g.points = j.at("points").get<std::vector<int>>();
  g.penalized_skills = j.value("penalized_skills", std::vector<std::string>{});
  g.rounds_used = j.value("rounds_used", 0);
  g.failed = j.value("failed", false);
  return g;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& row : r.rows) {
    rows.push_back({{"k", row.k},
                    {"setting", to_string(row.setting)},
                    {"model_label", row.model_label},
                    {"ratio_full_marks", row.ratio_full_marks},
                    {"ratio_all_skills", row.ratio_all_skills},
                    {"skills_fraction", row.skills_fraction},
                    {"n_combinations", row.n_combinations},
                    {"n_failed_generations", row.n_failed_generations}});
  }
  return {{"rows", rows}, {"provenance", r.provenance}};
}

std::string format_metric(double v) {
  const long hundredths = std::lround(v * 100.0);
  if (hundredths >= 100) return "1.0";
  char buf[8];
  std::snprintf(buf, sizeof buf, ".%02ld", std::max(0L, hundredths));
  return buf;
}

std::string render_report_table(const MetricReport& r) {
  std::ostringstream os;
  os << "Cells: Ratio of Full Marks/Ratio of All Skills/Skills Fraction\n";
  std::map<std::pair<std::string, int>, std::map<int, const MetricRow*>> tables;
  std::set<int> ks;
  for (const MetricRow& row : r.rows) {
    tables[{row.model_label, static_cast<int>(row.setting)}][row.k] = &row;
    ks.insert(row.k);
  }
  for (const auto& [key, by_k] : tables) {
    os << "\nSetting: " << to_string(static_cast<Setting>(key.second)) << "\n";
    os << "| Model |";
    for (int k : ks) os << " k=" << k << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < ks.size(); ++i) os << "---|";
    os << "\n| " << key.first << " |";
    for (int k : ks) {
      auto it = by_k.find(k);
      if (it == by_k.end()) {
        os << " - |";
      } else {
        const MetricRow& row = *it->second;
        os << " " << format_metric(row.ratio_full_marks) << "/" << format_metric(row.ratio_all_skills)
           << "/" << format_metric(row.skills_fraction) << " |";
      }
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace skillmix
