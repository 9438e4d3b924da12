#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/parser.hpp"
#include "skillmix/sampler.hpp"
#include "skillmix/scoring.hpp"

namespace skillmix {

struct GenerationRecord {
  Combination combination;
  std::string prompt1;
  std::string answer1;
  std::string prompt2;
  std::string answer2;
  std::optional<ExtractedAnswer> extracted_answer;
  std::optional<CombinedGrade> combined_grade;
  std::string student_model;
  int generation_index = 0;
};

struct Segment {
  std::string text;
  bool loss = false;
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// One fine-tuning dialogue. Skill-Mix examples have four segments with loss
/// on the two answers; pretraining items have a single all-loss segment.
struct TrainingExample {
  std::string id;
  int k = 0;
  std::vector<std::string> skills;
  std::string topic;
  std::vector<Segment> segments;
  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

class DatagenError : public Error {
 public:
  using Error::Error;
};

/// Records whose combined grade earns full marks, in input order.
std::vector<GenerationRecord> filter_full_marks(const std::vector<GenerationRecord>& records);

TrainingExample to_training_example(const GenerationRecord& record);

/// [begin, end) code-point offsets of loss segments in the concatenated text.
std::vector<std::pair<std::size_t, std::size_t>> loss_spans(const TrainingExample& ex);
std::string full_text(const TrainingExample& ex);

nlohmann::json to_json(const TrainingExample& ex);
TrainingExample training_example_from_json(const nlohmann::json& j);

struct Hyperparameters {
  int steps = 4000;
  int batch_size = 64;
  std::string optimizer = "Adam";
  int warmup_steps = 64;
  double learning_rate = 2e-5;
  int max_token_length = 1024;
};

struct TrainingExportManifest {
  std::map<int, std::size_t> counts;
  Hyperparameters recommended_hyperparameters;
  std::optional<double> pretrain_mix_ratio;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainingExportManifest& m);

enum class SubsampleConstraint {
  combined,  // n(k=2) + n(k=3) < constraint
  per_k,     // n(k=2) < constraint and n(k=3) < constraint
};

/// Uniform draw of `target_total` examples among all selections that meet
/// the constraint. Output keeps input order (ascending k, then position).
std::vector<TrainingExample> subsample(const std::map<int, std::vector<TrainingExample>>& datasets,
                                       std::size_t target_total, std::size_t constraint,
                                       std::uint64_t seed,
                                       SubsampleConstraint mode = SubsampleConstraint::combined);

/// Pretraining corpus ran out before the schedule finished.
class CorpusExhausted : public DatagenError {
 public:
  CorpusExhausted(std::size_t emitted_examples, std::size_t emitted_pretrain, std::size_t slots_done,
                  std::size_t slots_total)
      : DatagenError("pretraining corpus exhausted after " + std::to_string(emitted_pretrain) +
                     " documents (" + std::to_string(slots_done) + "/" + std::to_string(slots_total) +
                     " slots, " + std::to_string(emitted_examples) + " skill-mix examples emitted)"),
        emitted_examples(emitted_examples),
        emitted_pretrain(emitted_pretrain),
        slots_done(slots_done),
        slots_total(slots_total) {}
  std::size_t emitted_examples;
  std::size_t emitted_pretrain;
  std::size_t slots_done;
  std::size_t slots_total;
};

/// Returns the next pretraining document or nullopt at end of corpus.
using CorpusReader = std::function<std::optional<std::string>()>;

/// Interleaves examples with round(ratio * n) pretraining documents in
/// expectation: each of n + round(ratio * n) slots is a pretraining document
/// with probability ratio / (1 + ratio). Example order is preserved.
std::vector<TrainingExample> mix_pretrain(const std::vector<TrainingExample>& examples,
                                          const CorpusReader& corpus, double ratio, std::uint64_t seed);

}  // namespace skillmix
