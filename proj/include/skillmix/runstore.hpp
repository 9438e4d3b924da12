#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillmix/error.hpp"

namespace skillmix {

enum class Stage { combinations, generations, grades, scores, exports };
inline constexpr std::array<Stage, 5> k_all_stages = {Stage::combinations, Stage::generations, Stage::grades,
                                                     Stage::scores, Stage::exports};
std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

/// Natural key of a stage record. -1 marks "not applicable"; the qualifier
/// distinguishes graders.
struct RecordKey {
  std::string combination_id;
  int generation_index = -1;
  int round_index = -1;
  std::string qualifier;

  auto operator<=>(const RecordKey&) const = default;
  std::string str() const;
};

/// Key read from a record's own fields: combination_id (or id), generation_index,
/// round_index, grader.
RecordKey key_of(const nlohmann::json& record);

struct StageProgress {
  std::size_t planned = 0;
  std::size_t done = 0;
  bool complete = false;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string registry_hash;
  std::string student_model;
  std::vector<std::string> grader_models;
  std::string created_at;
  std::string rng_algorithm;
  std::map<std::string, double> temperatures;  // backend label -> sampling temperature
  std::map<std::string, StageProgress> stage_progress;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

class RunStoreError : public Error {
 public:
  using Error::Error;
};
class DuplicateKeyError : public RunStoreError {
 public:
  using RunStoreError::RunStoreError;
};
class RunClosedError : public RunStoreError {
 public:
  using RunStoreError::RunStoreError;
};
/// The run directory was created from a different configuration.
class ConfigMismatchError : public RunStoreError {
 public:
  using RunStoreError::RunStoreError;
};
/// Thrown by the fault-injection hook in place of a process crash.
class SimulatedCrash : public RunStoreError {
 public:
  using RunStoreError::RunStoreError;
};

/// One run directory: manifest.json, config.json and one JSON Lines file per
/// stage. Appends are whole-line writes; a torn tail left by a crash is
/// invisible to readers and cut off when the run is reopened.
class RunStore {
 public:
  /// Creates the directory, or reopens it when its manifest carries the same
  /// config hash. A different hash throws ConfigMismatchError.
  static RunStore open_or_create(const std::filesystem::path& dir, const RunManifest& manifest,
                                 const nlohmann::json& config);
  /// Opens an existing run; `expected_config_hash` guards against edits.
  /// Read-only stores never touch the directory (no tail repair, no writes).
  static RunStore open(const std::filesystem::path& dir,
                       const std::optional<std::string>& expected_config_hash = std::nullopt,
                       bool read_only = false);
  static bool exists(const std::filesystem::path& dir);

  RunStore(RunStore&&) noexcept;
  RunStore& operator=(RunStore&&) noexcept;
  ~RunStore();

  const std::filesystem::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path stage_path(Stage s) const;

  /// Appends `record` (serialized compactly on one line) under key_of(record).
  void append(Stage stage, const nlohmann::json& record);
  bool contains(Stage stage, const RecordKey& key) const;
  std::size_t count(Stage stage) const;
  std::vector<nlohmann::json> read(Stage stage) const;

  /// Planned keys minus persisted ones, in planned order.
  std::vector<RecordKey> pending(Stage stage, const std::vector<RecordKey>& planned) const;

  void set_progress(Stage stage, std::size_t planned, bool complete);
  void close();

  /// Test hook: after `appends` further successful appends, the next append
  /// writes `torn_bytes` bytes of its line (if any) and throws SimulatedCrash.
  void inject_crash_after(std::size_t appends, std::size_t torn_bytes = 0);

 private:
  RunStore() = default;
  void load_keys();
  void write_manifest();

  std::filesystem::path dir_;
  RunManifest manifest_;
  std::map<Stage, std::set<RecordKey>> keys_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  bool closed_ = false;
  bool read_only_ = false;
  std::optional<std::size_t> crash_countdown_;
  std::size_t torn_bytes_ = 0;
};

}  // namespace skillmix
