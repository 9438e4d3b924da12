// skillmix command-line front end. Exit codes: 0 ok, 1 unexpected failure,
// 2 configuration error, 3 stage incomplete, 4 backend failure, 5 data error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "skillmix/analysis.hpp"
#include "skillmix/datagen.hpp"
#include "skillmix/jsonl.hpp"
#include "skillmix/pipeline.hpp"
#include "skillmix/registry.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace skillmix;

namespace {

enum Exit { k_ok = 0, k_other = 1, k_config = 2, k_incomplete = 3, k_backend = 4, k_data = 5 };

struct Globals {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::string backend;
  bool dry_run = false;
  bool resume = false;
};

Pipeline make_pipeline(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  ConfigOverrides ov;
  ov.seed = g.seed;
  if (!g.backend.empty()) ov.backend = g.backend;
  PipelineConfig cfg = load_pipeline_config(g.config, ov);
  fs::path run_dir;
  if (!g.run_dir.empty()) {
    run_dir = g.run_dir;
  } else if (cfg.run_dir) {
    run_dir = *cfg.run_dir;
  } else {
    throw ConfigError("no run directory: pass --run-dir or set 'run_dir' in the config");
  }
  PipelineOptions opts;
  opts.dry_run = g.dry_run;
  opts.resume = g.resume;
  opts.log = &std::cerr;
  return Pipeline(std::move(cfg), run_dir, std::move(opts));
}

void print_stage(const std::string& name, const StageResult& r) {
  if (r.dry_run) {
    std::cout << name << ": planned " << r.planned << " units, " << r.already_done << " already persisted, "
              << (r.planned > r.already_done ? r.planned - r.already_done : 0) << " to do (dry run)\n";
  } else {
    std::cout << name << ": " << r.performed << " written, " << r.already_done << " already persisted";
    if (r.failed) std::cout << ", " << r.failed << " failed";
    std::cout << "\n";
  }
}

std::vector<TrainingExample> read_examples(const std::vector<std::string>& paths) {
  std::vector<TrainingExample> out;
  for (const auto& p : paths) {
    for (const json& row : jsonl::read_file(p)) out.push_back(training_example_from_json(row));
  }
  return out;
}

void write_examples(const std::string& path, const std::vector<TrainingExample>& examples) {
  std::vector<json> rows;
  rows.reserve(examples.size());
  for (const auto& ex : examples) rows.push_back(to_json(ex));
  if (path.empty() || path == "-") {
    for (const auto& r : rows) std::cout << r.dump() << "\n";
  } else {
    jsonl::write_file(path, rows);
  }
}

std::map<std::string, int> read_bits(const std::string& path) {
  std::map<std::string, int> bits;
  for (const json& row : jsonl::read_file(path)) {
    int& b = bits[row.at("combination_id").get<std::string>()];
    b = std::max(b, row.at("full_marks").get<int>());
  }
  return bits;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill-Mix pipeline: sample, generate, grade, score and export"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config (JSON)");
  app.add_option("--run-dir", g.run_dir, "Run directory");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--backend", g.backend, "Force every backend to live or mock")->check(CLI::IsMember({"live", "mock"}));
  app.add_flag("--dry-run", g.dry_run, "Print the planned work without calling models or writing");
  app.add_flag("--resume", g.resume, "Continue a partially persisted stage");
  app.fallthrough();

  auto* sample = app.add_subcommand("sample", "Draw skill/topic combinations");
  auto* generate = app.add_subcommand("generate", "Two-round student generations");
  auto* grade = app.add_subcommand("grade", "Grade generations with every grader");
  auto* score = app.add_subcommand("score", "Majority vote, penalty and metrics");
  auto* report = app.add_subcommand("report", "Write report.json and report.txt");
  auto* verify = app.add_subcommand("verify", "Check referential integrity of a run");
  auto* build = app.add_subcommand("build-dataset", "Export full-mark generations as training data");
  auto* run = app.add_subcommand("run", "sample, generate, grade, score and report");

  auto* subsample_cmd = app.add_subcommand("subsample", "Constrained subsample of training examples");
  std::vector<std::string> ss_inputs;
  std::size_t ss_target = 0, ss_constraint = 0;
  std::uint64_t ss_seed = 0;
  bool ss_per_k = false;
  std::string ss_out;
  subsample_cmd->add_option("--input", ss_inputs, "Training JSONL files")->required();
  subsample_cmd->add_option("--target", ss_target, "Output size")->required();
  subsample_cmd->add_option("--constraint", ss_constraint, "k=2 plus k=3 examples stay below this")->required();
  subsample_cmd->add_option("--sample-seed", ss_seed, "Seed");
  subsample_cmd->add_flag("--per-k", ss_per_k, "Apply the constraint to k=2 and k=3 separately");
  subsample_cmd->add_option("--out", ss_out, "Output JSONL (default stdout)");

  auto* mix_cmd = app.add_subcommand("mix-pretrain", "Interleave pretraining documents");
  std::vector<std::string> mix_inputs;
  std::string mix_corpus, mix_out;
  double mix_ratio = 0.0;
  std::uint64_t mix_seed = 0;
  mix_cmd->add_option("--input", mix_inputs, "Training JSONL files")->required();
  mix_cmd->add_option("--corpus", mix_corpus, "JSONL corpus, one {\"text\"} per line")->required();
  mix_cmd->add_option("--ratio", mix_ratio, "Pretraining documents per skill-mix example")->required();
  mix_cmd->add_option("--mix-seed", mix_seed, "Seed");
  mix_cmd->add_option("--out", mix_out, "Output JSONL (default stdout)");

  auto* novelty_cmd = app.add_subcommand("estimate-novelty", "Probability a combination appears in a corpus");
  std::string nov_model;
  int nov_k = 5;
  std::vector<std::string> nov_skills;
  std::optional<double> nov_ratio;
  novelty_cmd->add_option("--model", nov_model,
                          "JSON {corpus_tokens, tokens_per_piece, skill_frequencies, topic_frequency}")
      ->required();
  novelty_cmd->add_option("--k", nov_k, "Number of skills");
  novelty_cmd->add_option("--skills", nov_skills, "Specific combination (default: k rarest skills)")->delimiter(',');
  novelty_cmd->add_option("--ratio-full-marks", nov_ratio, "Compare a measured ratio against the estimate");

  auto* chunk_cmd = app.add_subcommand("chunk-books", "Split texts into fixed-size word chunks");
  std::vector<std::string> chunk_inputs;
  std::size_t chunk_words = 1024;
  std::string chunk_out;
  chunk_cmd->add_option("--input", chunk_inputs, "Plain-text books")->required();
  chunk_cmd->add_option("--words", chunk_words, "Words per chunk");
  chunk_cmd->add_option("--out", chunk_out, "Output JSONL (default stdout)");

  auto* ppl_cmd = app.add_subcommand("aggregate-perplexity", "Per-chunk and per-book perplexity");
  std::string ppl_scores;
  ppl_cmd->add_option("--scores", ppl_scores, "JSONL {chunk_index, sum_log_likelihood, token_count[, title]}")
      ->required();

  auto* agree_cmd = app.add_subcommand("agreement", "Full-marks agreement between two graders");
  std::string agree_a, agree_b, agree_ga, agree_gb;
  agree_cmd->add_option("--a", agree_a, "JSONL {combination_id, full_marks} for grader A");
  agree_cmd->add_option("--b", agree_b, "JSONL {combination_id, full_marks} for grader B");
  agree_cmd->add_option("--grader-a", agree_ga, "Grader name in the run (default: first)");
  agree_cmd->add_option("--grader-b", agree_gb, "Grader name in the run (default: second)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? k_ok : k_config;
  }

  try {
    if (sample->parsed()) {
      auto p = make_pipeline(g);
      print_stage("sample", p.sample());
    } else if (generate->parsed()) {
      auto p = make_pipeline(g);
      print_stage("generate", p.generate());
    } else if (grade->parsed()) {
      auto p = make_pipeline(g);
      print_stage("grade", p.grade());
    } else if (score->parsed()) {
      auto p = make_pipeline(g);
      print_stage("score", p.score());
    } else if (report->parsed()) {
      auto p = make_pipeline(g);
      const json doc = p.report();
      if (doc.contains("text")) std::cout << doc["text"].get<std::string>();
      else std::cout << doc.dump(2) << "\n";
    } else if (build->parsed()) {
      auto p = make_pipeline(g);
      print_stage("build-dataset", p.build_dataset());
    } else if (run->parsed()) {
      auto p = make_pipeline(g);
      print_stage("sample", p.sample());
      print_stage("generate", p.generate());
      print_stage("grade", p.grade());
      print_stage("score", p.score());
      if (!g.dry_run) std::cout << p.report()["text"].get<std::string>();
    } else if (verify->parsed()) {
      auto p = make_pipeline(g);
      const VerifyReport v = p.verify();
      for (const auto& problem : v.problems) std::cerr << "verify: " << problem << "\n";
      if (!v.ok()) return k_data;
      std::cout << "verify: ok\n";
    } else if (subsample_cmd->parsed()) {
      std::map<int, std::vector<TrainingExample>> by_k;
      for (auto& ex : read_examples(ss_inputs)) by_k[ex.k].push_back(std::move(ex));
      if (g.dry_run) {
        std::cout << "subsample: would select " << ss_target << " examples\n";
        return k_ok;
      }
      const auto out = subsample(by_k, ss_target, ss_constraint, ss_seed,
                                 ss_per_k ? SubsampleConstraint::per_k : SubsampleConstraint::combined);
      write_examples(ss_out, out);
    } else if (mix_cmd->parsed()) {
      const auto examples = read_examples(mix_inputs);
      if (g.dry_run) {
        std::cout << "mix-pretrain: " << examples.size() << " examples, ratio " << mix_ratio << "\n";
        return k_ok;
      }
      const auto docs = jsonl::read_file(mix_corpus);
      std::size_t next = 0;
      CorpusReader reader = [&]() -> std::optional<std::string> {
        if (next >= docs.size()) return std::nullopt;
        return docs[next++].at("text").get<std::string>();
      };
      write_examples(mix_out, mix_pretrain(examples, reader, mix_ratio, mix_seed));
    } else if (novelty_cmd->parsed()) {
      const json mj = jsonl::read_json(nov_model);
      NoveltyModel m;
      try {
        m.corpus_tokens = mj.value("corpus_tokens", 2e12);
        m.tokens_per_piece = mj.at("tokens_per_piece").get<double>();
        m.skill_frequencies = mj.at("skill_frequencies").get<std::map<std::string, double>>();
        m.topic_frequency = mj.at("topic_frequency").get<double>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("novelty model: ") + e.what());
      }
      const bool specific = !nov_skills.empty();
      const int k = specific ? static_cast<int>(nov_skills.size()) : nov_k;
      const double p = estimate_novelty_probability(m, k, specific ? NoveltyMode::combination : NoveltyMode::worst_case,
                                                    nov_skills);
      json out = {{"k", k}, {"mode", specific ? "combination" : "worst_case"}, {"probability", p}};
      if (nov_ratio) {
        const ParrotsVerdict v = beyond_parrots_check(*nov_ratio, p);
        out["verdict"] = v.beyond ? "beyond" : "not_beyond";
        out["margin"] = v.margin;
      }
      std::cout << out.dump(2) << "\n";
    } else if (chunk_cmd->parsed()) {
      std::vector<json> rows;
      for (const auto& path : chunk_inputs) {
        const ChunkedBook book = chunk_text(jsonl::read_text(path), chunk_words, fs::path(path).stem().string());
        for (std::size_t i = 0; i < book.chunks.size(); ++i) {
          std::string text;
          for (const auto& w : book.chunks[i]) {
            if (!text.empty()) text += ' ';
            text += w;
          }
          rows.push_back({{"title", book.title}, {"chunk_index", i}, {"text", text}});
        }
      }
      if (g.dry_run) {
        std::cout << "chunk-books: " << rows.size() << " chunks\n";
      } else if (chunk_out.empty() || chunk_out == "-") {
        for (const auto& r : rows) std::cout << r.dump() << "\n";
      } else {
        jsonl::write_file(chunk_out, rows);
      }
    } else if (ppl_cmd->parsed()) {
      std::map<std::string, std::vector<ChunkScore>> books;
      for (const json& row : jsonl::read_file(ppl_scores)) {
        books[row.value("title", std::string())].push_back(
            {row.at("sum_log_likelihood").get<double>(), row.at("token_count").get<double>()});
      }
      json out = json::object();
      for (const auto& [title, scores] : books) {
        const PerplexityResult r = average_perplexity(scores);
        out[title] = {{"per_chunk_ppl", r.per_chunk_ppl},
                      {"book_ppl", r.book_ppl},
                      {"corpus_level_ppl", r.corpus_level_ppl}};
      }
      std::cout << out.dump(2) << "\n";
    } else if (agree_cmd->parsed()) {
      std::map<std::string, int> a, b;
      if (!agree_a.empty() || !agree_b.empty()) {
        if (agree_a.empty() || agree_b.empty()) throw ConfigError("--a and --b go together");
        a = read_bits(agree_a);
        b = read_bits(agree_b);
      } else {
        auto p = make_pipeline(g);
        const auto& graders = p.config().graders;
        const std::string ga = agree_ga.empty() ? graders.at(0).name : agree_ga;
        if (agree_gb.empty() && graders.size() < 2) throw ConfigError("the config has a single grader");
        const std::string gb = agree_gb.empty() ? graders.at(1).name : agree_gb;
        const fs::path scores = (g.run_dir.empty() ? *p.config().run_dir : fs::path(g.run_dir)) / "scores.jsonl";
        for (const json& row : jsonl::read_file(scores)) {
          const std::string grader = row.at("grader").get<std::string>();
          if (grader != ga && grader != gb) continue;
          int& bit = (grader == ga ? a : b)[row.at("combination_id").get<std::string>()];
          bit = std::max(bit, row.at("metrics").at("full_marks").get<int>());
        }
      }
      const Agreement ag = grader_agreement(a, b);
      std::cout << json{{"p_a", ag.p_a}, {"p_b", ag.p_b}, {"p_both", ag.p_both}, {"n", a.size()}}.dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return k_config;
  } catch (const ConfigMismatchError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return k_config;
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return k_config;
  } catch (const StageIncomplete& e) {
    std::cerr << "stage incomplete: " << e.what() << "\n";
    return k_incomplete;
  } catch (const BackendError& e) {
    std::cerr << "backend failure: " << e.what() << "\n";
    return k_backend;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return k_data;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return k_data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return k_other;
  }
  return k_ok;
}
