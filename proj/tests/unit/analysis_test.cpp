#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "skillmix/analysis.hpp"

using namespace skillmix;

namespace {

NoveltyModel uniform_model(double skill_freq, double topic_freq, int n_skills, double tokens_per_piece = 100) {
  NoveltyModel m;
  m.tokens_per_piece = tokens_per_piece;
  m.topic_frequency = topic_freq;
  for (int i = 0; i < n_skills; ++i) m.skill_frequencies["s" + std::to_string(i)] = skill_freq;
  return m;
}

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? (i % 7 == 0 ? "\n\t" : " ") : "") + std::string("w") + std::to_string(i);
  return s;
}

}  // namespace

TEST(Novelty, AnnihilationAndCertainty) {
  auto m = uniform_model(0.5, 0.5, 6);
  m.skill_frequencies["s2"] = 0.0;
  EXPECT_EQ(estimate_novelty_probability(m, 5, NoveltyMode::combination, {"s0", "s1", "s2", "s3", "s4"}), 0.0);
  EXPECT_EQ(estimate_novelty_probability(m, 5), 0.0);
  EXPECT_EQ(estimate_novelty_probability(uniform_model(1.0, 1.0, 5), 5), 1.0);
  auto zero_topic = uniform_model(0.5, 0.0, 5);
  EXPECT_EQ(estimate_novelty_probability(zero_topic, 3), 0.0);
}

TEST(Novelty, MatchesHighPrecisionReference) {
  const auto m = uniform_model(0.05, 0.01, 5);
  const double got = estimate_novelty_probability(m, 5);
  const double ref = oracle::novelty_reference(0.01, std::vector<double>(5, 0.05), 2e12 / 100);
  EXPECT_NEAR(got / ref, 1.0, 1e-9);

  // A regime where the answer is far from 1, so rounding actually matters.
  const auto rare = uniform_model(0.001, 0.001, 5, 1000);
  const double got2 = estimate_novelty_probability(rare, 5);
  const double ref2 = oracle::novelty_reference(0.001, std::vector<double>(5, 0.001), 2e12 / 1000);
  EXPECT_GT(ref2, 0.0);
  EXPECT_LT(ref2, 1e-6);
  EXPECT_NEAR(got2 / ref2, 1.0, 1e-9);
}

TEST(Novelty, WorstCaseUsesRarestSkills) {
  NoveltyModel m;
  m.tokens_per_piece = 100;
  m.topic_frequency = 0.01;
  m.skill_frequencies = {{"a", 0.5}, {"b", 0.001}, {"c", 0.2}, {"d", 0.002}};
  EXPECT_DOUBLE_EQ(estimate_novelty_probability(m, 2),
                   estimate_novelty_probability(m, 2, NoveltyMode::combination, {"b", "d"}));
}

TEST(Novelty, Errors) {
  auto m = uniform_model(0.1, 0.1, 3);
  EXPECT_THROW(estimate_novelty_probability(m, 4), AnalysisError);
  EXPECT_THROW(estimate_novelty_probability(m, 1, NoveltyMode::combination, {"missing"}), AnalysisError);
  m.skill_frequencies["s0"] = 1.5;
  EXPECT_THROW(estimate_novelty_probability(m, 1), AnalysisError);
  auto bad = uniform_model(0.1, 0.1, 3, 0);
  EXPECT_THROW(estimate_novelty_probability(bad, 1), AnalysisError);
}

TEST(Novelty, MonotoneInCorpusSizeAndK) {
  std::mt19937_64 rng(8);
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
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
      ASSERT_LE(p, prev);
      prev = p;
    }
    auto bigger = m;
    bigger.corpus_tokens *= 1 + 10 * u(rng);
    ASSERT_GE(estimate_novelty_probability(bigger, 3), estimate_novelty_probability(m, 3));
  }
}

TEST(Parrots, Boundaries) {
  const auto beyond = beyond_parrots_check(0.15, 0.11);
  EXPECT_TRUE(beyond.beyond);
  EXPECT_NEAR(beyond.margin, 0.04, 1e-15);
  EXPECT_FALSE(beyond_parrots_check(0.11, 0.11).beyond);
  EXPECT_EQ(beyond_parrots_check(0.11, 0.11).margin, 0.0);
  const auto below = beyond_parrots_check(0.06, 0.11);
  EXPECT_FALSE(below.beyond);
  EXPECT_NEAR(below.margin, -0.05, 1e-15);
}

TEST(Chunking, Sizes) {
  auto sizes = [](const ChunkedBook& b) {
    std::vector<std::size_t> s;
    for (const auto& c : b.chunks) s.push_back(c.size());
    return s;
  };
  EXPECT_EQ(sizes(chunk_text(words(2500))), (std::vector<std::size_t>{1024, 1024, 452}));
  EXPECT_EQ(sizes(chunk_text(words(1024))), (std::vector<std::size_t>{1024}));
  EXPECT_EQ(sizes(chunk_text("one")), (std::vector<std::size_t>{1}));
  EXPECT_EQ(chunk_text("  a  b\n", 1, "T").title, "T");
  EXPECT_THROW(chunk_text(""), AnalysisError);
  EXPECT_THROW(chunk_text(" \n\t "), AnalysisError);
  EXPECT_THROW(chunk_text("a", 0), AnalysisError);
}

TEST(Chunking, ConservesWords) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 5000;
    const std::size_t per = 1 + rng() % 2000;
    const auto book = chunk_text(words(n), per);
    std::size_t total = 0;
    for (std::size_t i = 0; i < book.chunks.size(); ++i) {
      total += book.chunks[i].size();
      if (i + 1 < book.chunks.size()) ASSERT_EQ(book.chunks[i].size(), per);
    }
    ASSERT_EQ(total, n);
    ASSERT_EQ(book.chunks.back().back(), "w" + std::to_string(n - 1));
  }
}

TEST(Perplexity, ClosedForms) {
  const auto one = average_perplexity({{-std::log(2.0) * 100, 100}});
  EXPECT_NEAR(one.book_ppl, 2.0, 1e-12);
  const auto two = average_perplexity({{-std::log(2.0) * 10, 10}, {-std::log(4.0) * 30, 30}});
  EXPECT_NEAR(two.per_chunk_ppl[0], 2.0, 1e-12);
  EXPECT_NEAR(two.per_chunk_ppl[1], 4.0, 1e-12);
  EXPECT_NEAR(two.book_ppl, 3.0, 1e-12);
  // Token-weighted: exp((10 ln2 + 30 ln4) / 40) = 2^(70/40).
  EXPECT_NEAR(two.corpus_level_ppl, std::pow(2.0, 70.0 / 40.0), 1e-12);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  for (double vocab : {2.0, 50257.0, 32000.0}) {
    const auto r = average_perplexity({{oracle::uniform_sum_log_likelihood(vocab, 1024), 1024}});
    EXPECT_NEAR(r.book_ppl / vocab, 1.0, 1e-12);
  }
}

TEST(Perplexity, Errors) {
  EXPECT_THROW(average_perplexity({}), AnalysisError);
  EXPECT_THROW(average_perplexity({{-1.0, 0}}), AnalysisError);
  EXPECT_THROW(average_perplexity({{0.5, 10}}), AnalysisError);
}
