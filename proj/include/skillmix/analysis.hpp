#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "skillmix/error.hpp"

namespace skillmix {

struct NoveltyModel {
  double corpus_tokens = 2e12;
  double tokens_per_piece = 0.0;
  std::map<std::string, double> skill_frequencies;
  double topic_frequency = 0.0;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

enum class NoveltyMode {
  worst_case,   // the k rarest skills: the smallest probability over k-subsets
  combination,  // the skills passed explicitly
};

/// Probability that at least one piece of the corpus shows a given (k skills,
/// topic) combination, treating pieces as independent trials with
/// p = topic_frequency * prod(skill frequencies).
double estimate_novelty_probability(const NoveltyModel& model, int k,
                                    NoveltyMode mode = NoveltyMode::worst_case,
                                    const std::vector<std::string>& combination = {});

struct ParrotsVerdict {
  bool beyond = false;
  double margin = 0.0;
};

/// Beyond iff ratio_full_marks > estimated_probability (strict).
ParrotsVerdict beyond_parrots_check(double ratio_full_marks, double estimated_probability);

struct ChunkedBook {
  std::string title;
  std::vector<std::vector<std::string>> chunks;
  std::size_t words_per_chunk = 1024;
};

ChunkedBook chunk_text(const std::string& text, std::size_t words_per_chunk = 1024, std::string title = {});

struct ChunkScore {
  double sum_log_likelihood = 0.0;  // nats, <= 0
  double token_count = 0.0;
};

struct PerplexityResult {
  std::vector<double> per_chunk_ppl;
  double book_ppl = 0.0;          // mean of per-chunk perplexities
  double corpus_level_ppl = 0.0;  // exp of token-weighted mean NLL
};

PerplexityResult average_perplexity(const std::vector<ChunkScore>& chunk_scores);

}  // namespace skillmix
