#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/client.hpp"
#include "skillmix/prompts.hpp"
#include "skillmix/registry.hpp"
#include "skillmix/runstore.hpp"
#include "skillmix/sampler.hpp"
#include "skillmix/scoring.hpp"

namespace skillmix {

struct PlanConfig {
  int k = 1;
  std::size_t n_combinations = 0;
  Setting setting = Setting::all;
  std::optional<Setting> topic_pool;
  bool dedupe = true;
  std::optional<double> common_skill_threshold;
};

struct GraderConfig {
  std::string name;
  GraderStyle style = GraderStyle::gpt4;
  BackendConfig backend;
};

struct PipelineConfig {
  std::filesystem::path registry_path;  // resolved against the config file
  std::uint64_t seed = 0;
  std::string student_label;
  BackendConfig student;
  std::vector<GraderConfig> graders;
  std::vector<PlanConfig> plans;
  int generations_per_combination = 3;
  int grading_rounds = 3;
  RubricLabels rubric_labels;
  /// Extra grader calls when a reply has no parseable table.
  int grade_parse_retries = 2;
  std::string dataset_grader;
  std::optional<double> pretrain_mix_ratio;
  std::optional<std::string> created_at;
  std::optional<std::filesystem::path> run_dir;
  /// Output-affecting configuration (after overrides, minus pacing and
  /// concurrency settings); hashed and copied into the run.
  nlohmann::json effective;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;  // "live" or "mock"
};

/// Default combinations per plan when a plan gives no count.
std::size_t default_generation_count(int k);

PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                     const ConfigOverrides& overrides = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// A stage ran before the stage it depends on finished.
class StageIncomplete : public Error {
 public:
  using Error::Error;
};

/// Persisted data is inconsistent or unreadable.
class DataError : public Error {
 public:
  using Error::Error;
};

using ClientFactory = std::function<std::unique_ptr<ChatClient>(const BackendConfig&)>;

struct PipelineOptions {
  bool dry_run = false;
  bool resume = false;
  ClientFactory client_factory;  // defaults to make_client
  std::ostream* log = nullptr;
  /// Test hook forwarded to RunStore::inject_crash_after.
  std::optional<std::size_t> crash_after_appends;
  std::size_t torn_bytes = 0;
};

struct StageResult {
  std::size_t planned = 0;
  std::size_t already_done = 0;
  std::size_t performed = 0;
  std::size_t failed = 0;
  bool dry_run = false;
};

struct VerifyReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::filesystem::path run_dir, PipelineOptions options = {});
  ~Pipeline();

  StageResult sample();
  StageResult generate();
  StageResult grade();
  StageResult score();
  /// Writes report.json and report.txt into the run directory.
  nlohmann::json report();
  StageResult build_dataset();
  VerifyReport verify();
  /// sample -> generate -> grade -> score -> report.
  nlohmann::json run_all();

  const PipelineConfig& config() const { return config_; }
  const SkillRegistry& registry() const { return registry_; }
  std::string config_hash() const { return config_hash_; }
  RunManifest initial_manifest() const;

 private:
  RunStore& store();
  std::optional<RunStore> read_store() const;
  void require_complete(Stage stage, const char* needed_by);
  bool begin_stage(Stage stage, std::size_t planned, StageResult& result);
  ChatClient& student_client();
  ChatClient& grader_client(std::size_t i);
  void note(const std::string& msg) const;

  PipelineConfig config_;
  std::filesystem::path run_dir_;
  PipelineOptions options_;
  SkillRegistry registry_;
  std::string registry_hash_;
  std::string config_hash_;
  std::optional<RunStore> store_;
  std::unique_ptr<ChatClient> student_;
  std::vector<std::unique_ptr<ChatClient>> graders_;
};

/// Metric report per grader from persisted score records.
std::map<std::string, MetricReport> reports_from_scores(const std::vector<nlohmann::json>& scores,
                                                        const std::vector<nlohmann::json>& combinations,
                                                        const std::string& provenance);

}  // namespace skillmix
