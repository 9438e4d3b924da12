#include "skillmix/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skillmix/rng.hpp"
#include "skillmix/text.hpp"

namespace skillmix {

std::vector<GenerationRecord> filter_full_marks(const std::vector<GenerationRecord>& records) {
  std::vector<GenerationRecord> out;
  for (const GenerationRecord& r : records) {
    if (!r.combined_grade) {
      throw DatagenError("record " + r.combination.id + "/g" + std::to_string(r.generation_index) +
                         " has no combined grade");
    }
    if (!r.combined_grade->failed && metric_full_marks(*r.combined_grade) == 1) out.push_back(r);
  }
  return out;
}

TrainingExample to_training_example(const GenerationRecord& record) {
  const std::string key = record.combination.id + "/g" + std::to_string(record.generation_index);
  const std::pair<const std::string*, const char*> parts[] = {{&record.prompt1, "prompt1"},
                                                              {&record.answer1, "answer1"},
                                                              {&record.prompt2, "prompt2"},
                                                              {&record.answer2, "answer2"}};
  for (const auto& [text, name] : parts) {
    if (text->empty()) throw DatagenError("record " + key + " is incomplete: empty " + name);
  }
  TrainingExample ex;
  ex.id = record.combination.id + "-g" + std::to_string(record.generation_index);
  ex.k = record.combination.k;
  ex.skills = record.combination.skills;
  ex.topic = record.combination.topic;
  ex.segments = {{record.prompt1, false}, {record.answer1, true}, {record.prompt2, false}, {record.answer2, true}};
  return ex;
}

std::vector<std::pair<std::size_t, std::size_t>> loss_spans(const TrainingExample& ex) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t offset = 0;
  for (const Segment& s : ex.segments) {
    const std::size_t len = text::codepoint_count(s.text);
    if (s.loss) spans.emplace_back(offset, offset + len);
    offset += len;
  }
  return spans;
}

std::string full_text(const TrainingExample& ex) {
  std::string out;
  for (const Segment& s : ex.segments) out += s.text;
  return out;
}

nlohmann::json to_json(const TrainingExample& ex) {
  nlohmann::json segments = nlohmann::json::array();
  for (const Segment& s : ex.segments) segments.push_back({{"text", s.text}, {"loss", s.loss}});
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& [b, e] : loss_spans(ex)) spans.push_back({b, e});
  nlohmann::json roles = nlohmann::json::array();
  if (ex.segments.size() == 4) {
    roles = {"user", "assistant", "user", "assistant"};
  } else {
    for (std::size_t i = 0; i < ex.segments.size(); ++i) roles.push_back("text");
  }
  return {{"id", ex.id},   {"k", ex.k},         {"skills", ex.skills},    {"topic", ex.topic},
          {"segments", segments}, {"loss_spans", spans}, {"roles", roles}};
}

TrainingExample training_example_from_json(const nlohmann::json& j) {
  TrainingExample ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.k = j.at("k").get<int>();
    ex.skills = j.at("skills").get<std::vector<std::string>>();
    ex.topic = j.at("topic").get<std::string>();
    for (const auto& s : j.at("segments")) {
      ex.segments.push_back({s.at("text").get<std::string>(), s.at("loss").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatagenError(std::string("malformed training example: ") + e.what());
  }
  return ex;
}

nlohmann::json to_json(const TrainingExportManifest& m) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [k, n] : m.counts) counts[std::to_string(k)] = n;
  const Hyperparameters& h = m.recommended_hyperparameters;
  return {{"counts", counts},
          {"recommended_hyperparameters",
           {{"steps", h.steps},
            {"batch_size", h.batch_size},
            {"optimizer", h.optimizer},
            {"warmup_steps", h.warmup_steps},
            {"learning_rate", h.learning_rate},
            {"max_token_length", h.max_token_length}}},
          {"pretrain_mix_ratio", m.pretrain_mix_ratio ? nlohmann::json(*m.pretrain_mix_ratio) : nlohmann::json()},
          {"seed", m.seed}};
}

namespace {

class LogChoose {
 public:
  explicit LogChoose(std::size_t n_max) : lf_(n_max + 1) {
    for (std::size_t i = 0; i <= n_max; ++i) lf_[i] = std::lgamma(static_cast<double>(i) + 1.0);
  }
  double operator()(std::size_t n, std::size_t k) const { return lf_[n] - lf_[k] - lf_[n - k]; }

 private:
  std::vector<double> lf_;
};

/// Index drawn proportionally to exp(log_w).
std::size_t draw_log_weighted(const std::vector<double>& log_w, Rng& rng) {
  const double mx = *std::max_element(log_w.begin(), log_w.end());
  std::vector<double> cum(log_w.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    sum += std::exp(log_w[i] - mx);
    cum[i] = sum;
  }
  const double u = rng.unit() * sum;
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), log_w.size() - 1);
}

std::vector<std::size_t> sorted_sample(std::size_t n, std::size_t m, Rng& rng) {
  auto idx = rng.sample_indices(n, m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<TrainingExample> subsample(const std::map<int, std::vector<TrainingExample>>& datasets,
                                       std::size_t target_total, std::size_t constraint,
                                       std::uint64_t seed, SubsampleConstraint mode) {
  // Strata: "free" (every k outside {2, 3}), k = 2, k = 3.
  std::vector<const TrainingExample*> free_pool, pool2, pool3;
  for (const auto& [k, list] : datasets) {
    auto& dst = k == 2 ? pool2 : k == 3 ? pool3 : free_pool;
    for (const auto& ex : list) dst.push_back(&ex);
  }
  const std::size_t nf = free_pool.size(), n2 = pool2.size(), n3 = pool3.size();
  const std::size_t total = nf + n2 + n3;
  if (target_total > total) {
    throw DatagenError("target " + std::to_string(target_total) + " exceeds the " + std::to_string(total) +
                       " available examples");
  }
  // "< constraint"; a zero constraint admits no k = 2 or k = 3 examples at all.
  const std::size_t cap = constraint == 0 ? 0 : constraint - 1;
  const LogChoose log_choose(total);
  Rng rng(seed);

  std::size_t take_f = 0, take2 = 0, take3 = 0;
  if (mode == SubsampleConstraint::combined) {
    const std::size_t n23 = n2 + n3;
    const std::size_t lo = target_total > nf ? target_total - nf : 0;
    const std::size_t hi = std::min({cap, n23, target_total});
    if (lo > hi) {
      throw DatagenError("infeasible subsample: need at least " + std::to_string(lo) +
                         " k=2/k=3 examples but the constraint allows " + std::to_string(hi));
    }
    std::vector<double> w;
    for (std::size_t m = lo; m <= hi; ++m) w.push_back(log_choose(nf, target_total - m) + log_choose(n23, m));
    const std::size_t m = lo + draw_log_weighted(w, rng);
    take_f = target_total - m;
    // Uniform m-subset of the merged k=2/k=3 pool, split back by stratum.
    for (std::size_t i : rng.sample_indices(n23, m)) (i < n2 ? take2 : take3) += 1;
    // Re-drawing within strata below keeps the selection uniform given (take2, take3).
  } else {
    std::vector<double> w;
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t a = 0; a <= std::min({cap, n2, target_total}); ++a) {
      for (std::size_t b = 0; b <= std::min({cap, n3, target_total - a}); ++b) {
        const std::size_t f = target_total - a - b;
        if (f > nf) continue;
        w.push_back(log_choose(nf, f) + log_choose(n2, a) + log_choose(n3, b));
        cells.emplace_back(a, b);
      }
    }
    if (w.empty()) throw DatagenError("infeasible subsample under the per-k constraint");
    std::tie(take2, take3) = cells[draw_log_weighted(w, rng)];
    take_f = target_total - take2 - take3;
  }

  std::vector<bool> keep_f(nf), keep2(n2), keep3(n3);
  for (std::size_t i : sorted_sample(nf, take_f, rng)) keep_f[i] = true;
  for (std::size_t i : sorted_sample(n2, take2, rng)) keep2[i] = true;
  for (std::size_t i : sorted_sample(n3, take3, rng)) keep3[i] = true;

  std::vector<TrainingExample> out;
  out.reserve(target_total);
  std::size_t i_f = 0, i2 = 0, i3 = 0;
  for (const auto& [k, list] : datasets) {
    for (const auto& ex : list) {
      const bool keep = k == 2 ? keep2[i2++] : k == 3 ? keep3[i3++] : keep_f[i_f++];
      if (keep) out.push_back(ex);
    }
  }
  return out;
}

std::vector<TrainingExample> mix_pretrain(const std::vector<TrainingExample>& examples,
                                          const CorpusReader& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0) || !std::isfinite(ratio)) throw DatagenError("pretrain ratio must be a finite value >= 0");
  const std::size_t n = examples.size();
  const std::size_t slots = n + static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  const double p = ratio / (1.0 + ratio);
  Rng rng(seed);
  std::vector<TrainingExample> out;
  out.reserve(slots);
  std::size_t next_example = 0, n_pretrain = 0;
  for (std::size_t slot = 0; slot < slots; ++slot) {
    if (rng.bernoulli(p)) {
      std::optional<std::string> doc = corpus();
      if (!doc) throw CorpusExhausted(next_example, n_pretrain, slot, slots);
      TrainingExample item;
      item.id = "pretrain-" + std::to_string(n_pretrain++);
      item.segments = {{std::move(*doc), true}};
      out.push_back(std::move(item));
    } else if (next_example < n) {
      out.push_back(examples[next_example++]);
    }
  }
  while (next_example < n) out.push_back(examples[next_example++]);
  return out;
}

}  // namespace skillmix
