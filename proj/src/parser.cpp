#include "skillmix/parser.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <regex>
#include <sstream>

#include "skillmix/text.hpp"

namespace skillmix {
namespace {

bool is_markup(char c) { return c == '*' || c == '_' || c == '#' || c == '`' || c == '>'; }
bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::string strip_markup(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (is_ws(s[b]) || is_markup(s[b]))) ++b;
  while (e > b && (is_ws(s[e - 1]) || s[e - 1] == '*' || s[e - 1] == '_' || s[e - 1] == '`')) --e;
  return std::string(s.substr(b, e - b));
}

std::string strip_quotes(std::string s) {
  static const std::vector<std::pair<std::string, std::string>> pairs{
      {"\"", "\""}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"'", "'"}};
  for (const auto& [open, close] : pairs) {
    if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
      return text::trim(s.substr(open.size(), s.size() - open.size() - close.size()));
    }
  }
  return s;
}

bool line_anchored(std::string_view s, std::size_t pos) {
  while (pos > 0) {
    const char c = s[pos - 1];
    if (c == '\n') return true;
    if (!(c == ' ' || c == '\t' || is_markup(c))) return false;
    --pos;
  }
  return true;
}

std::vector<std::size_t> find_all(std::string_view hay, std::string_view needle) {
  std::vector<std::size_t> out;
  for (std::size_t p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) {
    out.push_back(p);
  }
  return out;
}

}  // namespace

ExtractedAnswer extract_answer(std::string_view student_text) {
  static constexpr std::string_view k_answer = "answer:";
  static constexpr std::string_view k_explanation = "explanation:";
  const std::string lower = text::ascii_lower(student_text);
  const auto hits = find_all(lower, k_answer);
  if (hits.empty()) throw ExtractionError("no 'Answer:' marker in student output");

  std::size_t chosen = hits.back();
  for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
    if (line_anchored(lower, *it)) {
      chosen = *it;
      break;
    }
  }
  const std::size_t start = chosen + k_answer.size();
  const std::size_t expl = lower.find(k_explanation, start);

  ExtractedAnswer out;
  out.raw = std::string(student_text);
  std::string_view body = student_text.substr(start, expl == std::string::npos ? std::string::npos : expl - start);
  out.answer = strip_quotes(strip_markup(body));
  if (expl != std::string::npos) {
    std::string e = strip_markup(student_text.substr(expl + k_explanation.size()));
    if (!e.empty()) out.explanation = std::move(e);
  }
  const std::string answer_lower = text::ascii_lower(out.answer);
  if (out.answer.empty()) throw ExtractionError("empty text after the 'Answer:' marker");
  if (answer_lower.find(k_answer) != std::string::npos ||
      answer_lower.find(k_explanation) != std::string::npos) {
    throw ExtractionError("extracted answer still contains a marker");
  }
  return out;
}

std::vector<int> GradeRound::points() const {
  std::vector<int> p;
  p.reserve(criterion_points.size());
  for (const auto& c : criterion_points) p.push_back(c.binarized);
  return p;
}

std::string_view to_string(GradeParseErrorKind k) {
  switch (k) {
    case GradeParseErrorKind::no_table:
      return "no table found";
    case GradeParseErrorKind::too_few_rows:
      return "fewer matched rows than rubric items";
    case GradeParseErrorKind::non_numeric:
      return "non-numeric points cell";
  }
  return "parse error";
}

namespace {

struct TableRow {
  std::vector<std::string> cells;
};

std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = line.find('|', start);
    cells.push_back(text::trim(line.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  if (!cells.empty() && cells.front().empty()) cells.erase(cells.begin());
  if (!cells.empty() && cells.back().empty()) cells.pop_back();
  return cells;
}

bool is_separator(const std::vector<std::string>& cells) {
  if (cells.empty()) return true;
  for (const auto& c : cells) {
    if (c.empty()) continue;
    if (c.find_first_not_of(":-= ") != std::string::npos) return false;
  }
  return true;
}

// Consecutive '|' lines starting at or after `from`.
std::vector<TableRow> find_table(const std::vector<std::string>& lines, std::size_t from) {
  std::vector<TableRow> rows;
  for (std::size_t i = from; i < lines.size(); ++i) {
    if (lines[i].find('|') == std::string::npos) {
      if (!rows.empty()) break;
      continue;
    }
    auto cells = split_cells(lines[i]);
    if (is_separator(cells)) continue;
    rows.push_back({std::move(cells)});
  }
  return rows;
}

std::string normalize_label(std::string_view s) {
  std::string t = text::normalize_key(s);
  std::string out;
  for (char c : t) {
    if (c == '*' || c == '`') continue;
    out.push_back(c);
  }
  out = text::trim(out);
  // Strip leading enumeration: "1.", "1)", "(1)".
  static const std::regex numbering(R"(^\(?\d+[\.\)]\s*)");
  out = std::regex_replace(out, numbering, "");
  while (!out.empty() && (out.back() == ':' || out.back() == '.')) out.pop_back();
  while (!out.empty() && out.front() == '_') out.erase(out.begin());
  while (!out.empty() && out.back() == '_') out.pop_back();
  return text::trim(out);
}

std::optional<double> parse_number(std::string_view cell) {
  std::string s = strip_markup(cell);
  static const std::regex number(R"(^([+-]?\d+(?:\.\d+)?|[+-]?\.\d+)(?:\s*/\s*\d+(?:\.\d+)?)?$)");
  std::smatch m;
  if (!std::regex_match(s, m, number)) return std::nullopt;
  return std::stod(m[1].str());
}

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

GradeRound parse_grade_table(std::string_view grader_text, const RubricItems& expected) {
  GradeRound round;
  round.raw = std::string(grader_text);
  const std::size_t n = expected.items.size();
  if (n == 0) throw GradeParseError(GradeParseErrorKind::too_few_rows, "empty rubric");

  const std::vector<std::string> lines = text::split_lines(grader_text);
  std::size_t start_line = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string lower = text::ascii_lower(lines[i]);
    if (lower.find("here's the grading table") != std::string::npos ||
        lower.find("here\xE2\x80\x99s the grading table") != std::string::npos) {
      start_line = i;
      break;
    }
  }
  std::vector<TableRow> table = find_table(lines, start_line);
  if (table.empty() && start_line > 0) table = find_table(lines, 0);
  if (table.empty()) throw GradeParseError(GradeParseErrorKind::no_table, "no '|' table in grader output");

  // Header row, if present, tells which column holds the points.
  std::size_t points_col = 1;
  std::size_t first_data = 0;
  {
    const auto& head = table.front().cells;
    bool is_header = false;
    for (std::size_t c = 0; c < head.size(); ++c) {
      const std::string h = normalize_label(head[c]);
      if (h == "criteria" || h == "criterion") is_header = true;
      if (h.find("point") != std::string::npos && c > 0) {
        points_col = c;
        is_header = true;
      }
    }
    if (is_header) first_data = 1;
  }

  struct Row {
    std::string label;
    std::string norm;
    double value;
  };
  std::vector<Row> rows;
  for (std::size_t r = first_data; r < table.size(); ++r) {
    const auto& cells = table[r].cells;
    if (cells.empty()) continue;
    const std::string label = strip_markup(cells.front());
    const std::string norm = normalize_label(label);
    const std::size_t col = cells.size() > points_col ? points_col : cells.size() - 1;
    if (col == 0) {
      throw GradeParseError(GradeParseErrorKind::non_numeric, "row '" + label + "' has no points cell");
    }
    auto value = parse_number(cells[col]);
    if (!value) {
      throw GradeParseError(GradeParseErrorKind::non_numeric,
                            "row '" + label + "' has points cell '" + cells[col] + "'");
    }
    if (norm.find("total") != std::string::npos) {
      round.reported_total = *value;
      continue;
    }
    rows.push_back({label, norm, *value});
  }

  std::vector<std::string> expected_norm;
  for (const auto& item : expected.items) expected_norm.push_back(normalize_label(item));

  std::vector<int> match(n, -1);
  std::vector<bool> used(rows.size(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!used[r] && rows[r].norm == expected_norm[i]) {
        match[i] = static_cast<int>(r);
        used[r] = true;
        break;
      }
    }
  }
  std::vector<std::size_t> by_length(n);
  std::iota(by_length.begin(), by_length.end(), 0);
  std::stable_sort(by_length.begin(), by_length.end(), [&](std::size_t a, std::size_t b) {
    return expected_norm[a].size() > expected_norm[b].size();
  });
  for (std::size_t i : by_length) {
    if (match[i] >= 0) continue;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (used[r] || rows[r].norm.size() < 3) continue;
      if (rows[r].norm.find(expected_norm[i]) != std::string::npos ||
          expected_norm[i].find(rows[r].norm) != std::string::npos) {
        match[i] = static_cast<int>(r);
        used[r] = true;
        break;
      }
    }
  }
  std::vector<bool> positional(n, false);
  if (rows.size() == n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (match[i] < 0 && !used[i]) {
        match[i] = static_cast<int>(i);
        used[i] = true;
        positional[i] = true;
      }
    }
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (match[i] >= 0) continue;
      while (next < rows.size() && used[next]) ++next;
      if (next == rows.size()) break;
      match[i] = static_cast<int>(next);
      used[next] = true;
      positional[i] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!positional[i]) continue;
      round.warnings.push_back(std::string(warning::k_positional) + ": '" +
                               rows[static_cast<std::size_t>(match[i])].label + "' -> '" +
                               expected.items[i] + "'");
    }
  }
  std::size_t matched = 0;
  for (int m : match) matched += m >= 0 ? 1 : 0;
  if (matched < n) {
    std::string missing;
    for (std::size_t i = 0; i < n; ++i) {
      if (match[i] < 0) missing += (missing.empty() ? "'" : ", '") + expected.items[i] + "'";
    }
    throw GradeParseError(GradeParseErrorKind::too_few_rows,
                          std::to_string(matched) + " of " + std::to_string(n) +
                              " criteria matched; missing " + missing);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!used[r]) round.warnings.push_back(std::string(warning::k_unmatched_row) + ": '" + rows[r].label + "'");
  }

  int sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Row& row = rows[static_cast<std::size_t>(match[i])];
    CriterionPoint cp;
    cp.label = expected.items[i];
    cp.row_label = row.label;
    cp.raw_value = row.value;
    cp.binarized = row.value >= 0.5 ? 1 : 0;
    if (row.value != std::floor(row.value)) {
      round.warnings.push_back(std::string(warning::k_non_integer) + ": '" + cp.label + "' = " +
                               format_value(row.value));
    } else if (row.value < 0 || row.value > 1) {
      round.warnings.push_back(std::string(warning::k_out_of_range) + ": '" + cp.label + "' = " +
                               format_value(row.value));
    }
    sum += cp.binarized;
    round.criterion_points.push_back(std::move(cp));
  }
  if (!round.reported_total) {
    round.warnings.push_back(std::string(warning::k_missing_total));
  } else if (std::abs(*round.reported_total - sum) > 1e-9) {
    round.warnings.push_back(std::string(warning::k_total_mismatch) + ": reported " +
                             format_value(*round.reported_total) + ", binarized sum " +
                             std::to_string(sum));
  }

  const std::string lower = text::ascii_lower(grader_text);
  const auto expl = lower.rfind("explanation");
  if (expl != std::string::npos) {
    std::string e = strip_markup(grader_text.substr(expl + 11));
    while (!e.empty() && (e.front() == ':' || e.front() == '\'' || is_ws(e.front()) || e.front() == '*')) e.erase(e.begin());
    if (!e.empty()) round.explanation = std::move(e);
  }
  return round;
}

std::vector<std::string> detect_skill_name_mentions(std::string_view answer,
                                                    std::span<const Skill> skills) {
  const std::string hay = text::normalize_key(answer);
  std::vector<std::string> out;
  for (const Skill& s : skills) {
    const std::string needle = text::normalize_key(s.name);
    if (needle.empty()) continue;
    for (std::size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) {
      if (!text::alnum_before(hay, p) && !text::alnum_at(hay, p + needle.size())) {
        if (std::find(out.begin(), out.end(), s.name) == out.end()) out.push_back(s.name);
        break;
      }
    }
  }
  return out;
}

}  // namespace skillmix
