#include "skillmix/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "skillmix/text.hpp"

namespace skillmix {

namespace {

void check_fraction(double v, const std::string& what) {
  if (!(v >= 0.0 && v <= 1.0)) throw AnalysisError(what + " must lie in [0, 1]");
}

}  // namespace

double estimate_novelty_probability(const NoveltyModel& model, int k, NoveltyMode mode,
                                    const std::vector<std::string>& combination) {
  if (!(model.corpus_tokens > 0.0) || !(model.tokens_per_piece > 0.0)) {
    throw AnalysisError("corpus_tokens and tokens_per_piece must be positive");
  }
  if (k < 1) throw AnalysisError("k must be at least 1");
  check_fraction(model.topic_frequency, "topic frequency");
  for (const auto& [name, f] : model.skill_frequencies) check_fraction(f, "frequency of '" + name + "'");

  std::vector<double> freqs;
  if (mode == NoveltyMode::worst_case) {
    if (static_cast<std::size_t>(k) > model.skill_frequencies.size()) {
      throw AnalysisError("k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(model.skill_frequencies.size()) + " skills with frequencies");
    }
    for (const auto& [name, f] : model.skill_frequencies) freqs.push_back(f);
    std::partial_sort(freqs.begin(), freqs.begin() + k, freqs.end());
    freqs.resize(static_cast<std::size_t>(k));
  } else {
    if (combination.size() != static_cast<std::size_t>(k)) {
      throw AnalysisError("combination has " + std::to_string(combination.size()) + " skills, expected " +
                          std::to_string(k));
    }
    for (const std::string& name : combination) {
      auto it = model.skill_frequencies.find(name);
      if (it == model.skill_frequencies.end()) throw AnalysisError("no frequency for skill '" + name + "'");
      freqs.push_back(it->second);
    }
  }

  double p = model.topic_frequency;
  for (double f : freqs) p *= f;
  const double n = model.corpus_tokens / model.tokens_per_piece;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  // 1 - (1 - p)^n without cancellation for tiny p.
  return -std::expm1(n * std::log1p(-p));
}

ParrotsVerdict beyond_parrots_check(double ratio_full_marks, double estimated_probability) {
  check_fraction(ratio_full_marks, "ratio of full marks");
  check_fraction(estimated_probability, "estimated probability");
  return {ratio_full_marks > estimated_probability, ratio_full_marks - estimated_probability};
}

ChunkedBook chunk_text(const std::string& text, std::size_t words_per_chunk, std::string title) {
  if (words_per_chunk < 1) throw AnalysisError("words_per_chunk must be at least 1");
  std::vector<std::string> words = text::split_whitespace(text);
  if (words.empty()) throw AnalysisError("text has no words");
  ChunkedBook book;
  book.title = std::move(title);
  book.words_per_chunk = words_per_chunk;
  for (std::size_t i = 0; i < words.size(); i += words_per_chunk) {
    const std::size_t end = std::min(words.size(), i + words_per_chunk);
    book.chunks.emplace_back(std::make_move_iterator(words.begin() + static_cast<std::ptrdiff_t>(i)),
                             std::make_move_iterator(words.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  return book;
}

PerplexityResult average_perplexity(const std::vector<ChunkScore>& chunk_scores) {
  if (chunk_scores.empty()) throw AnalysisError("no chunk scores");
  PerplexityResult r;
  double ppl_sum = 0.0, nll_sum = 0.0, tokens = 0.0;
  for (std::size_t i = 0; i < chunk_scores.size(); ++i) {
    const ChunkScore& c = chunk_scores[i];
    if (!(c.token_count >= 1.0)) throw AnalysisError("chunk " + std::to_string(i) + ": token_count must be >= 1");
    if (c.sum_log_likelihood > 0.0 || std::isnan(c.sum_log_likelihood)) {
      throw AnalysisError("chunk " + std::to_string(i) + ": sum_log_likelihood must be <= 0 (natural-log likelihood)");
    }
    const double ppl = std::exp(-c.sum_log_likelihood / c.token_count);
    r.per_chunk_ppl.push_back(ppl);
    ppl_sum += ppl;
    nll_sum -= c.sum_log_likelihood;
    tokens += c.token_count;
  }
  r.book_ppl = ppl_sum / static_cast<double>(chunk_scores.size());
  r.corpus_level_ppl = std::exp(nll_sum / tokens);
  return r;
}

}  // namespace skillmix
