// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Tolerances and time limits are fixed here and must not be loosened.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "skillmix/analysis.hpp"
#include "skillmix/datagen.hpp"
#include "skillmix/parser.hpp"
#include "skillmix/pipeline.hpp"
#include "skillmix/prompts.hpp"
#include "skillmix/registry.hpp"
#include "skillmix/scoring.hpp"
#include "synthetic.hpp"

using namespace skillmix;
namespace fs = std::filesystem;

namespace {

/// Collects failures for one criterion; keeps the first few messages.
struct Check {
  std::vector<std::string> failures;
  std::size_t n_failures = 0;
  std::size_t n_checks = 0;

  bool expect(bool ok, const std::string& what) {
    ++n_checks;
    if (!ok) {
      ++n_failures;
      if (failures.size() < 5) failures.push_back(what);
    }
    return ok;
  }
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // 0 = no limit
  std::function<void(Check&)> body;
};

std::vector<int> bits_of(unsigned mask, int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = (mask >> i) & 1;
  return v;
}

CombinedGrade grade_of(int k, std::vector<int> points, std::string id = "c", int gen = 0) {
  CombinedGrade g;
  g.combination_id = std::move(id);
  g.generation_index = gen;
  g.k = k;
  g.points = std::move(points);
  g.rounds_used = 3;
  return g;
}

GradeRound round_of(const std::vector<int>& bits) {
  GradeRound r;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    r.criterion_points.push_back({"c" + std::to_string(i), "c" + std::to_string(i), double(bits[i]), bits[i]});
  }
  return r;
}

std::string str(const std::vector<int>& v) {
  std::string s;
  for (int x : v) s += std::to_string(x);
  return s;
}

// 1 -------------------------------------------------------------------------
void metric_oracle(Check& c) {
  for (int k = 1; k <= 5; ++k) {
    for (unsigned m = 0; m < (1u << (k + 3)); ++m) {
      const auto p = bits_of(m, k + 3);
      const auto g = grade_of(k, p);
      c.expect(metric_full_marks(g) == oracle::full_marks(p, k), "full marks k=" + std::to_string(k) + " " + str(p));
      c.expect(metric_all_skills(g) == oracle::all_skills(p, k), "all skills k=" + std::to_string(k) + " " + str(p));
      c.expect(metric_skills_fraction(g) == oracle::skills_fraction(p, k),
               "skills fraction k=" + std::to_string(k) + " " + str(p));
    }
  }
}

// 2 -------------------------------------------------------------------------
void majority_table(Check& c) {
  for (unsigned n = 1; n <= 3; ++n) {
    for (unsigned m = 0; m < (1u << n); ++m) {
      std::vector<GradeRound> rounds;
      std::vector<int> votes;
      for (unsigned r = 0; r < n; ++r) {
        const int bit = (m >> r) & 1;
        votes.push_back(bit);
        // Same vote on every criterion, so each one exercises the rule.
        rounds.push_back(round_of(std::vector<int>(5, bit)));
      }
      const int pop = std::count(votes.begin(), votes.end(), 1);
      // Stated thresholds: three rounds need popcount >= 2, two rounds need
      // both, one round is that round.
      const int stated = n == 3 ? pop >= 2 : n == 2 ? pop == 2 : pop == 1;
      const CombinedGrade g = majority_vote(rounds, "id", 0, 2);
      for (int bit : g.points) {
        c.expect(bit == stated, std::to_string(n) + " rounds votes " + str(votes));
        c.expect(bit == oracle::majority_bit(votes), "oracle " + str(votes));
      }
      c.expect(g.rounds_used == static_cast<int>(n), "rounds_used");
    }
  }
  const CombinedGrade none = majority_vote({}, "id", 0, 2);
  c.expect(none.failed && none.points == std::vector<int>(5, 0), "zero rounds give a failed all-zero grade");
}

// 3 -------------------------------------------------------------------------
void aggregation_oracle(Check& c) {
  std::mt19937_64 rng(20240603);
  for (int fixture = 0; fixture < 200; ++fixture) {
    std::vector<ScoredGeneration> gens;
    std::vector<oracle::Gen> ref;
    const int n = 1 + static_cast<int>(rng() % 50);
    for (int ci = 0; ci < n; ++ci) {
      const int k = 1 + static_cast<int>(rng() % 5);
      for (int g = 0; g < 3; ++g) {
        std::vector<int> p(k + 3);
        for (auto& b : p) b = rng() % 4 != 0;
        auto grade = grade_of(k, p, "f" + std::to_string(fixture) + "c" + std::to_string(ci), g);
        if (rng() % 25 == 0) {
          grade.failed = true;
          std::fill(grade.points.begin(), grade.points.end(), 0);
        }
        gens.push_back({grade, Setting::held_out, "student"});
        ref.push_back({grade.combination_id, k, grade.points, grade.failed});
      }
    }
    std::shuffle(gens.begin(), gens.end(), rng);
    const MetricReport r = aggregate(gens);
    const auto expected = oracle::max_then_mean(ref);
    c.expect(r.rows.size() == expected.size(), "row count, fixture " + std::to_string(fixture));
    for (const MetricRow& row : r.rows) {
      auto it = expected.find(row.k);
      if (!c.expect(it != expected.end(), "unexpected k")) continue;
      const auto& e = it->second;
      const std::string where = "fixture " + std::to_string(fixture) + " k=" + std::to_string(row.k);
      c.expect(std::abs(row.ratio_full_marks - e.full) <= 1e-12, where + " full marks");
      c.expect(std::abs(row.ratio_all_skills - e.all) <= 1e-12, where + " all skills");
      c.expect(std::abs(row.skills_fraction - e.frac) <= 1e-12, where + " skills fraction");
      c.expect(row.n_combinations == e.n_combinations, where + " n_combinations");
    }
  }
}

// 4 -------------------------------------------------------------------------
void registry_structure(Check& c) {
  const SkillRegistry& reg = synth::bundled_registry();
  c.expect(reg.skills().size() == 101, "101 skills, got " + std::to_string(reg.skills().size()));
  const SkillPartition part = partition_skills(reg, PartitionRule::by_category);
  c.expect(part.train.size() == 53, "53 train skills, got " + std::to_string(part.train.size()));
  c.expect(part.held_out.size() == 48, "48 held-out skills, got " + std::to_string(part.held_out.size()));
  c.expect(reg.topics().size() == 100, "100 topics, got " + std::to_string(reg.topics().size()));
  std::size_t train_topics = 0;
  for (const Topic& t : reg.topics()) train_topics += t.split == Split::train ? 1 : 0;
  c.expect(train_topics == 50, "50 train topics, got " + std::to_string(train_topics));
  c.expect(validate_registry(reg, {std::make_pair(std::size_t{50}, std::size_t{50})}).ok(), "registry validates cleanly");
}

// 5 -------------------------------------------------------------------------
void prompt_goldens(Check& c) {
  const SkillRegistry& reg = synth::bundled_registry();
  for (const synth::GoldenCase& gc : synth::golden_cases()) {
    const PromptBundle b = build_prompt_bundle(gc.combination, gc.answer, reg);
    const std::pair<const char*, const std::string*> files[] = {{"prompt1.txt", &b.prompt1},
                                                                {"prompt2.txt", &b.prompt2},
                                                                {"grading_gpt4.txt", &b.grading_prompt_gpt4_style},
                                                                {"grading_claude.txt", &b.grading_prompt_claude_style}};
    for (const auto& [file, text] : files) {
      const std::string diff = synth::golden_mismatch(gc.name, file, *text);
      c.expect(diff.empty(), gc.name + "/" + file + ": " + diff);
    }
    for (const std::string* g : {&b.grading_prompt_gpt4_style, &b.grading_prompt_claude_style}) {
      c.expect(g->find("Here's the grading table:") != std::string::npos, gc.name + ": grading table marker");
      c.expect(g->find("Total Points Earned") != std::string::npos, gc.name + ": total row marker");
    }
    c.expect(b.grading_prompt_claude_style.find("('|' as the delimiter)") != std::string::npos,
             gc.name + ": claude delimiter clause");
    c.expect(b.grading_prompt_gpt4_style.find("('|' as the delimiter)") == std::string::npos,
             gc.name + ": gpt4 prompt has no delimiter clause");
  }
}

// 6 -------------------------------------------------------------------------
void parser_robustness(Check& c) {
  std::mt19937_64 rng(6);
  std::map<std::string, int> noise_seen;
  for (int t = 0; t < 500; ++t) {
    const int k = 1 + static_cast<int>(rng() % 5);
    const RubricItems rubric = synth::random_rubric(k, rng);
    std::vector<int> bits;
    for (int i = 0; i < k + 3; ++i) bits.push_back(static_cast<int>(rng() & 1));
    const synth::TableNoise noise = synth::random_noise(rng);
    noise_seen["whitespace"] += noise.extra_whitespace;
    noise_seen["bold"] += noise.bold_labels;
    noise_seen["permuted"] += noise.permute_rows;
    noise_seen["fractional"] += noise.fractional;
    noise_seen["total mismatch"] += noise.total_mismatch;
    const synth::SyntheticTable table = synth::render_table(rubric, bits, noise, rng);
    try {
      const GradeRound r = parse_grade_table(table.text, rubric);
      c.expect(r.points() == table.planted, "case " + std::to_string(t) + ": points " + str(r.points()) +
                                                " vs planted " + str(table.planted));
      std::vector<std::string> prefixes;
      for (const auto& w : r.warnings) prefixes.push_back(w.substr(0, w.find(':')));
      std::sort(prefixes.begin(), prefixes.end());
      prefixes.erase(std::unique(prefixes.begin(), prefixes.end()), prefixes.end());
      c.expect(prefixes == table.expected_warning_prefixes, "case " + std::to_string(t) + ": warnings differ");
    } catch (const GradeParseError& e) {
      c.expect(false, "case " + std::to_string(t) + ": " + e.what());
    }
  }
  for (const auto& [kind, n] : noise_seen) c.expect(n > 0, "noise kind never exercised: " + kind);

  // Malformed outputs and the error each must raise.
  const RubricItems r3 = synth::random_rubric(3, rng);
  auto table = [&](std::vector<std::string> labels, std::vector<std::string> values) {
    std::string s = "Here's the grading table:\n| Criteria | Points Earned |\n|---|---|\n";
    for (std::size_t i = 0; i < labels.size(); ++i) s += "| " + labels[i] + " | " + values[i] + " |\n";
    return s;
  };
  auto with_value = [&](std::size_t row, const std::string& v) {
    std::vector<std::string> vals(r3.items.size(), "1");
    vals[row] = v;
    return table(r3.items, vals);
  };
  std::vector<std::string> drop_last(r3.items.begin(), r3.items.end() - 1);
  std::vector<std::string> unrelated;
  for (int i = 0; i < 7; ++i) unrelated.push_back("qqq row " + std::to_string(i));
  using K = GradeParseErrorKind;
  const std::vector<std::pair<std::string, K>> malformed{
      {"", K::no_table},
      {"I cannot grade this answer.", K::no_table},
      {"Here's the grading table:\n\n(no table)\nExplanation: none", K::no_table},
      {"metaphor: 1\ntopic: 1\ncoherence: 1\nlength: 1\nTotal: 4", K::no_table},
      {"Here's the grading table:\n- metaphor 1\n- topic 1", K::no_table},
      {table(drop_last, std::vector<std::string>(drop_last.size(), "1")), K::too_few_rows},
      {table({r3.items[0]}, {"1"}), K::too_few_rows},
      {table({}, {}), K::too_few_rows},
      {table({"Total Points Earned"}, {"6"}), K::too_few_rows},
      {table(unrelated, std::vector<std::string>(unrelated.size(), "1")), K::too_few_rows},
      {table({"qqq a", "qqq b"}, {"1", "0"}), K::too_few_rows},
      {with_value(0, "yes"), K::non_numeric},
      {with_value(1, "N/A"), K::non_numeric},
      {with_value(2, ""), K::non_numeric},
      {with_value(3, "one"), K::non_numeric},
      {with_value(4, "1 point"), K::non_numeric},
      {with_value(5, "\xE2\x9C\x93"), K::non_numeric},
      {with_value(0, "full"), K::non_numeric},
      {with_value(2, "-"), K::non_numeric},
      {with_value(1, "1.0.0"), K::non_numeric},
  };
  c.expect(malformed.size() == 20, "20 malformed cases");
  for (std::size_t i = 0; i < malformed.size(); ++i) {
    const auto& [text, kind] = malformed[i];
    try {
      parse_grade_table(text, r3);
      c.expect(false, "malformed case " + std::to_string(i) + " parsed");
    } catch (const GradeParseError& e) {
      c.expect(e.kind() == kind, "malformed case " + std::to_string(i) + ": got " + std::string(to_string(e.kind())));
    }
  }
}

// 7 -------------------------------------------------------------------------
Skill named(const std::string& name) {
  Skill s;
  s.name = name;
  s.key = name;
  return s;
}

void penalty_rule(Check& c) {
  struct Case {
    std::string answer;
    std::vector<std::string> skills;
    std::vector<std::string> expected;
  };
  const std::vector<Case> cases{
      {"Just had the most underwhelming experience at #Sally'sProduce! As a seasoned agrologist, I can assure you "
       "their produce is anything but 'sustainable.' #FalseExpertise #AppealToAuthority #Jargon",
       {"false claim of expertise", "appeal to authority (argumentum ab auctoritate)", "using jargon"},
       {}},
      {"This metaphor shows the hill as a river.", {"metaphor"}, {"metaphor"}},
      {"Such metaphorical language.", {"metaphor"}, {}},
      {"Metaphors abound.", {"metaphor"}, {}},
      {"A METAPHOR, plainly.", {"metaphor"}, {"metaphor"}},
      {"#metaphor #RedHerring", {"metaphor", "red herring"}, {"metaphor"}},
      {"That was a red\n   herring and some hyperbole.", {"red herring", "hyperbole"}, {"red herring", "hyperbole"}},
      {"A red herringbone coat.", {"red herring"}, {}},
      {"Nothing named here at all.", {"metaphor", "red herring", "hyperbole"}, {}},
      {"Pure hyperbole!", {"metaphor", "hyperbole"}, {"hyperbole"}},
  };
  for (const Case& cs : cases) {
    std::vector<Skill> skills;
    for (const auto& n : cs.skills) skills.push_back(named(n));
    const auto got = detect_skill_name_mentions(cs.answer, skills);
    c.expect(got == cs.expected, "mentions in \"" + cs.answer.substr(0, 40) + "\"");
    // The penalty zeros exactly the detected skills.
    const int k = static_cast<int>(skills.size());
    const auto penalized =
        apply_name_mention_penalty(grade_of(k, std::vector<int>(k + 3, 1)), {cs.answer, {}, cs.answer}, skills);
    for (int i = 0; i < k; ++i) {
      const bool hit = std::find(cs.expected.begin(), cs.expected.end(), cs.skills[i]) != cs.expected.end();
      c.expect(penalized.points[i] == (hit ? 0 : 1), "penalty point for " + cs.skills[i]);
    }
  }

  const std::vector<Skill> pool{named("metaphor"), named("red herring"), named("hyperbole"), named("irony"),
                                named("false claim of expertise")};
  std::mt19937_64 rng(7);
  for (int t = 0; t < 1000; ++t) {
    const int k = 1 + static_cast<int>(rng() % 5);
    const auto g = grade_of(k, bits_of(static_cast<unsigned>(rng()), k + 3));
    std::string answer = "text";
    for (int i = 0; i < k; ++i) {
      if (rng() % 3 == 0) answer += " " + pool[i].name;
    }
    const auto p = apply_name_mention_penalty(g, {answer, {}, answer}, std::span(pool).first(k));
    c.expect(metric_full_marks(p) <= metric_full_marks(g), "full marks increased");
    c.expect(metric_all_skills(p) <= metric_all_skills(g), "all skills increased");
    c.expect(metric_skills_fraction(p) <= metric_skills_fraction(g), "skills fraction increased");
  }
}

// 8 -------------------------------------------------------------------------
void filtering_and_export(Check& c) {
  const std::vector<std::tuple<int, std::size_t, std::size_t>> plan{{1, 5000, 4077}, {2, 10000, 6277}, {3, 10000, 3603}};
  for (const auto& [k, total, full] : plan) {
    const auto corpus = synth::graded_corpus(k, total, full, 100 + k);
    const auto kept = filter_full_marks(corpus);
    c.expect(kept.size() == full, "k=" + std::to_string(k) + ": kept " + std::to_string(kept.size()));
    std::size_t bad = 0;
    for (const auto& rec : kept) {
      const TrainingExample ex = training_example_from_json(nlohmann::json::parse(to_json(to_training_example(rec)).dump()));
      const bool ok = ex.segments.size() == 4 && !ex.segments[0].loss && ex.segments[1].loss && !ex.segments[2].loss &&
                      ex.segments[3].loss && full_text(ex) == rec.prompt1 + rec.answer1 + rec.prompt2 + rec.answer2;
      bad += ok ? 0 : 1;
    }
    c.expect(bad == 0, "k=" + std::to_string(k) + ": " + std::to_string(bad) + " examples with wrong segments");
  }
}

// 9 -------------------------------------------------------------------------
void constrained_subsample(Check& c) {
  const auto pools = synth::example_pools({{1, 4077}, {2, 6277}, {3, 3603}});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto out = subsample(pools, 8000, 6277, seed);
    std::size_t n23 = 0;
    for (const auto& ex : out) n23 += ex.k == 2 || ex.k == 3;
    c.expect(out.size() == 8000, "seed " + std::to_string(seed) + ": size " + std::to_string(out.size()));
    c.expect(n23 < 6277, "seed " + std::to_string(seed) + ": n2+n3 = " + std::to_string(n23));
  }
}

// 10 ------------------------------------------------------------------------
std::map<std::string, std::string> mock_run(const std::string& name, int concurrency, PipelineOptions opts = {}) {
  synth::MockRunSpec spec;  // 10 combinations each for k = 1, 2, 3
  spec.max_concurrency = concurrency;
  const fs::path dir = synth::fresh_dir(name);
  Pipeline p(load_pipeline_config(synth::write_mock_config(dir / "cfg", spec)), dir / "run", std::move(opts));
  p.run_all();
  auto snap = synth::snapshot(dir / "run");
  fs::remove_all(dir);
  return snap;
}

void mock_determinism(Check& c) {
  const auto reference = mock_run("acc_ref", 4);
  c.expect(reference.size() >= 8, "run directory has all stage files");
  for (int rep = 0; rep < 2; ++rep) {
    c.expect(mock_run("acc_rep" + std::to_string(rep), 4) == reference, "repetition " + std::to_string(rep + 2));
  }
  for (int conc : {1, 8}) {
    c.expect(mock_run("acc_conc" + std::to_string(conc), conc) == reference,
             "max_concurrency " + std::to_string(conc));
  }
  // Crash points in sampling, generation and grading.
  for (std::size_t crash_at : {12u, 75u, 300u}) {
    synth::MockRunSpec spec;
    const fs::path dir = synth::fresh_dir("acc_crash");
    const PipelineConfig cfg = load_pipeline_config(synth::write_mock_config(dir / "cfg", spec));
    bool crashed = false;
    try {
      PipelineOptions opts;
      opts.crash_after_appends = crash_at;
      opts.torn_bytes = 11;
      Pipeline(cfg, dir / "run", opts).run_all();
    } catch (const SimulatedCrash&) {
      crashed = true;
    }
    c.expect(crashed, "crash injected after " + std::to_string(crash_at) + " appends");
    PipelineOptions resume;
    resume.resume = true;
    Pipeline p(cfg, dir / "run", resume);
    p.run_all();
    c.expect(synth::snapshot(dir / "run") == reference, "resume after crash at " + std::to_string(crash_at));
    c.expect(p.verify().ok(), "verify after resume at " + std::to_string(crash_at));
    fs::remove_all(dir);
  }
}

// 11 ------------------------------------------------------------------------
void novelty_estimator(Check& c) {
  NoveltyModel base;
  base.tokens_per_piece = 100;
  base.topic_frequency = 0.01;
  for (int i = 0; i < 6; ++i) base.skill_frequencies["s" + std::to_string(i)] = 0.05;

  auto zero = base;
  zero.skill_frequencies["s3"] = 0.0;
  c.expect(estimate_novelty_probability(zero, 5) == 0.0, "annihilation (worst case)");
  c.expect(estimate_novelty_probability(zero, 2, NoveltyMode::combination, {"s0", "s3"}) == 0.0,
           "annihilation (combination)");
  auto ones = base;
  ones.topic_frequency = 1.0;
  for (auto& [name, f] : ones.skill_frequencies) f = 1.0;
  c.expect(estimate_novelty_probability(ones, 5) == 1.0, "certainty");

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    NoveltyModel m;
    m.tokens_per_piece = 10 + 1000 * u(rng);
    m.corpus_tokens = std::pow(10.0, 6 + 7 * u(rng));
    m.topic_frequency = std::pow(u(rng), 3);
    for (int i = 0; i < 6; ++i) m.skill_frequencies["s" + std::to_string(i)] = std::pow(u(rng), 2);
    double prev = 1.0;
    for (int k = 1; k <= 6; ++k) {
      const double p = estimate_novelty_probability(m, k);
      c.expect(p >= 0.0 && p <= 1.0 && p <= prev, "monotone in k, model " + std::to_string(t));
      prev = p;
    }
    auto bigger = m;
    bigger.corpus_tokens *= 1 + 10 * u(rng);
    c.expect(estimate_novelty_probability(bigger, 3) >= estimate_novelty_probability(m, 3),
             "monotone in corpus size, model " + std::to_string(t));
  }

  // Reference agreement, including regimes far from saturation.
  const std::vector<std::tuple<double, double, double>> regimes{
      {0.05, 0.01, 100}, {0.001, 0.001, 1000}, {0.2, 0.05, 500}, {1e-3, 1e-2, 1e5}, {0.5, 0.5, 1e9}};
  for (const auto& [sf, tf, tpp] : regimes) {
    NoveltyModel m;
    m.tokens_per_piece = tpp;
    m.topic_frequency = tf;
    for (int i = 0; i < 5; ++i) m.skill_frequencies["s" + std::to_string(i)] = sf;
    const double got = estimate_novelty_probability(m, 5);
    const double ref = oracle::novelty_reference(tf, std::vector<double>(5, sf), m.corpus_tokens / tpp);
    c.expect(ref > 0 && std::abs(got - ref) / ref < 1e-9,
             "reference agreement: got " + std::to_string(got) + " ref " + std::to_string(ref));
  }

  const ParrotsVerdict above = beyond_parrots_check(0.15, 0.11);
  c.expect(above.beyond && std::abs(above.margin - 0.04) < 1e-12, "0.15 vs 0.11 is beyond by 0.04");
  c.expect(!beyond_parrots_check(0.11, 0.11).beyond, "0.11 vs 0.11 is not beyond");
  c.expect(!beyond_parrots_check(0.06, 0.11).beyond, "0.06 vs 0.11 is not beyond");
}

// 12 ------------------------------------------------------------------------
std::string random_text(std::size_t n, std::mt19937_64& rng) {
  static const char* seps[] = {" ", "  ", "\n", "\t", " \n "};
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += seps[rng() % 5];
    s += "w" + std::to_string(rng() % 1000);
  }
  return s;
}

void chunking_perplexity(Check& c) {
  std::mt19937_64 rng(12);
  const ChunkedBook book = chunk_text(random_text(2500, rng));
  std::vector<std::size_t> sizes;
  for (const auto& ch : book.chunks) sizes.push_back(ch.size());
  c.expect(sizes == std::vector<std::size_t>{1024, 1024, 452}, "2500 words -> [1024, 1024, 452]");

  for (double vocab : {2.0, 1000.0, 32000.0, 50257.0}) {
    const PerplexityResult r = average_perplexity({{oracle::uniform_sum_log_likelihood(vocab, 1024), 1024}});
    c.expect(std::abs(r.per_chunk_ppl[0] - vocab) / vocab < 1e-12, "uniform ppl for V=" + std::to_string(vocab));
    c.expect(std::abs(r.book_ppl - vocab) / vocab < 1e-12, "book ppl for V=" + std::to_string(vocab));
  }

  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 5000;
    const ChunkedBook b = chunk_text(random_text(n, rng));
    std::size_t total = 0;
    for (const auto& ch : b.chunks) total += ch.size();
    c.expect(total == n, "word conservation, text " + std::to_string(t));
  }
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "Metric oracle equivalence", 1.0, metric_oracle},
      {2, "Majority-vote table", 1.0, majority_table},
      {3, "Aggregation oracle", 5.0, aggregation_oracle},
      {4, "Registry structure", 0.0, registry_structure},
      {5, "Prompt golden files", 0.0, prompt_goldens},
      {6, "Parser robustness", 5.0, parser_robustness},
      {7, "Penalty rule", 0.0, penalty_rule},
      {8, "Full-mark filtering and dataset structure", 0.0, filtering_and_export},
      {9, "Constrained subsample", 0.0, constrained_subsample},
      {10, "End-to-end mock determinism", 60.0, mock_determinism},
      {11, "Novelty estimator", 5.0, novelty_estimator},
      {12, "Chunking and perplexity", 1.0, chunking_perplexity},
  };
  int failed = 0;
  for (const Criterion& cr : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.body(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.time_limit_s > 0 && secs >= cr.time_limit_s) {
      check.expect(false, "took " + std::to_string(secs) + " s, limit " + std::to_string(cr.time_limit_s) + " s");
    }
    const bool ok = check.n_failures == 0;
    failed += ok ? 0 : 1;
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.3f s", secs);
    std::cout << (ok ? "PASS" : "FAIL") << "  [" << cr.id << "] " << cr.name << " (" << check.n_checks
              << " checks, " << timing << ")\n";
    for (const auto& f : check.failures) std::cout << "        - " << f << "\n";
    if (check.n_failures > check.failures.size()) {
      std::cout << "        ... " << (check.n_failures - check.failures.size()) << " more\n";
    }
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
