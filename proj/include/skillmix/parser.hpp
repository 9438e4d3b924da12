#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skillmix/error.hpp"
#include "skillmix/prompts.hpp"
#include "skillmix/registry.hpp"

namespace skillmix {

struct ExtractedAnswer {
  std::string answer;
  std::optional<std::string> explanation;
  std::string raw;

  friend bool operator==(const ExtractedAnswer&, const ExtractedAnswer&) = default;
};

/// No usable "Answer:" section. The generation scores zero and is flagged.
class ExtractionError : public Error {
 public:
  using Error::Error;
};

/// Text after the last "Answer:" marker (line-anchored occurrences win over
/// inline ones) up to the next "Explanation:", trimmed and unquoted.
ExtractedAnswer extract_answer(std::string_view student_text);

struct CriterionPoint {
  std::string label;      // expected rubric label
  std::string row_label;  // label as the grader wrote it
  double raw_value = 0.0;
  int binarized = 0;

  friend bool operator==(const CriterionPoint&, const CriterionPoint&) = default;
};

struct GradeRound {
  std::vector<CriterionPoint> criterion_points;  // in rubric order
  std::optional<double> reported_total;
  std::optional<std::string> explanation;
  std::vector<std::string> warnings;
  std::string raw;

  std::vector<int> points() const;
};

enum class GradeParseErrorKind { no_table, too_few_rows, non_numeric };

std::string_view to_string(GradeParseErrorKind k);

class GradeParseError : public Error {
 public:
  GradeParseError(GradeParseErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  GradeParseErrorKind kind() const { return kind_; }

 private:
  GradeParseErrorKind kind_;
};

/// Warning prefixes recorded on GradeRound::warnings.
namespace warning {
inline constexpr std::string_view k_non_integer = "non-integer raw value";
inline constexpr std::string_view k_out_of_range = "out-of-range raw value";
inline constexpr std::string_view k_total_mismatch = "total mismatch";
inline constexpr std::string_view k_missing_total = "missing total row";
inline constexpr std::string_view k_positional = "positional match";
inline constexpr std::string_view k_unmatched_row = "unmatched row ignored";
}  // namespace warning

/// Reads the Criteria | Points Earned table and maps its rows onto the
/// expected rubric items. Raw values >= 0.5 binarize to 1.
GradeRound parse_grade_table(std::string_view grader_text, const RubricItems& expected);

/// Skills whose full display name occurs in the answer as a whole-word,
/// case-insensitive phrase. Returned in `skills` order.
std::vector<std::string> detect_skill_name_mentions(std::string_view answer,
                                                    std::span<const Skill> skills);

}  // namespace skillmix
