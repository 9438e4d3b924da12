#include "skillmix/runstore.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <memory>

#include "skillmix/jsonl.hpp"

namespace skillmix {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::combinations: return "combinations";
    case Stage::generations: return "generations";
    case Stage::grades: return "grades";
    case Stage::scores: return "scores";
    case Stage::exports: return "exports";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (Stage st : k_all_stages) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::string RecordKey::str() const {
  std::string s = "(" + combination_id;
  if (generation_index >= 0) s += ", g" + std::to_string(generation_index);
  if (round_index >= 0) s += ", r" + std::to_string(round_index);
  if (!qualifier.empty()) s += ", " + qualifier;
  return s + ")";
}

RecordKey key_of(const nlohmann::json& record) {
  RecordKey k;
  if (record.contains("combination_id")) {
    k.combination_id = record.at("combination_id").get<std::string>();
  } else if (record.contains("id")) {
    k.combination_id = record.at("id").get<std::string>();
  } else {
    throw RunStoreError("record has neither combination_id nor id");
  }
  k.generation_index = record.value("generation_index", -1);
  k.round_index = record.value("round_index", -1);
  k.qualifier = record.value("grader", std::string());
  return k;
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json progress = nlohmann::json::object();
  for (const auto& [stage, p] : m.stage_progress) {
    progress[stage] = {{"planned", p.planned}, {"done", p.done}, {"complete", p.complete}};
  }
  return {{"run_id", m.run_id},
          {"config_hash", m.config_hash},
          {"seed", m.seed},
          {"registry_hash", m.registry_hash},
          {"student_model", m.student_model},
          {"grader_models", m.grader_models},
          {"created_at", m.created_at},
          {"rng_algorithm", m.rng_algorithm},
          {"temperatures", m.temperatures},
          {"stage_progress", progress}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.registry_hash = j.value("registry_hash", std::string());
    m.student_model = j.value("student_model", std::string());
    m.grader_models = j.value("grader_models", std::vector<std::string>{});
    m.created_at = j.value("created_at", std::string());
    m.rng_algorithm = j.value("rng_algorithm", std::string());
    m.temperatures = j.value("temperatures", std::map<std::string, double>{});
    if (j.contains("stage_progress")) {
      for (const auto& [stage, p] : j.at("stage_progress").items()) {
        m.stage_progress[stage] = {p.at("planned").get<std::size_t>(), p.at("done").get<std::size_t>(),
                                   p.at("complete").get<bool>()};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw RunStoreError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

namespace {

/// Cuts a trailing partial line; returns the number of bytes removed.
std::uintmax_t truncate_torn_tail(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  const std::string data = jsonl::read_text(p);
  if (data.empty() || data.back() == '\n') return 0;
  const std::size_t keep = data.rfind('\n') == std::string::npos ? 0 : data.rfind('\n') + 1;
  fs::resize_file(p, keep);
  return data.size() - keep;
}

void write_all(int fd, const char* data, std::size_t n, const fs::path& p) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + p.string() + ": " + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

}  // namespace

RunStore::RunStore(RunStore&&) noexcept = default;
RunStore& RunStore::operator=(RunStore&&) noexcept = default;
RunStore::~RunStore() = default;

bool RunStore::exists(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

fs::path RunStore::stage_path(Stage s) const { return dir_ / (std::string(to_string(s)) + ".jsonl"); }

RunStore RunStore::open_or_create(const fs::path& dir, const RunManifest& manifest, const nlohmann::json& config) {
  if (exists(dir)) return open(dir, manifest.config_hash);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  RunStore store;
  store.dir_ = dir;
  store.manifest_ = manifest;
  jsonl::write_json_atomic(dir / "config.json", config);
  store.write_manifest();
  return store;
}

RunStore RunStore::open(const fs::path& dir, const std::optional<std::string>& expected_config_hash,
                        bool read_only) {
  if (!exists(dir)) throw RunStoreError("no run at " + dir.string());
  RunStore store;
  store.dir_ = dir;
  store.manifest_ = manifest_from_json(jsonl::read_json(dir / "manifest.json"));
  if (expected_config_hash && *expected_config_hash != store.manifest_.config_hash) {
    throw ConfigMismatchError("run " + dir.string() + " was created with config " + store.manifest_.config_hash +
                              ", current config hashes to " + *expected_config_hash);
  }
  store.read_only_ = read_only;
  store.closed_ = read_only;
  store.load_keys();
  return store;
}

void RunStore::load_keys() {
  for (Stage s : k_all_stages) {
    const fs::path p = stage_path(s);
    auto& keys = keys_[s];
    if (!fs::exists(p)) continue;
    if (!read_only_) truncate_torn_tail(p);
    for (const auto& row : jsonl::read_file(p, /*allow_torn_tail=*/true)) {
      if (!keys.insert(key_of(row)).second) {
        throw DuplicateKeyError(std::string(to_string(s)) + ": duplicate key " + key_of(row).str() + " on disk");
      }
    }
  }
}

void RunStore::write_manifest() {
  for (Stage s : k_all_stages) manifest_.stage_progress[std::string(to_string(s))].done = keys_[s].size();
  jsonl::write_json_atomic(dir_ / "manifest.json", to_json(manifest_));
}

void RunStore::append(Stage stage, const nlohmann::json& record) {
  const RecordKey key = key_of(record);
  std::string line = record.dump();
  line += '\n';
  std::lock_guard lock(*mu_);
  if (closed_) throw RunClosedError("run " + dir_.string() + " is closed");
  auto& keys = keys_[stage];
  if (keys.count(key)) throw DuplicateKeyError(std::string(to_string(stage)) + ": duplicate key " + key.str());

  const fs::path p = stage_path(stage);
  const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("open " + p.string() + ": " + std::strerror(errno));
  std::unique_ptr<int, void (*)(int*)> guard(new int(fd), [](int* f) {
    ::close(*f);
    delete f;
  });
  if (crash_countdown_) {
    if (*crash_countdown_ == 0) {
      crash_countdown_.reset();
      write_all(fd, line.data(), std::min(torn_bytes_, line.size() - 1), p);
      closed_ = true;
      throw SimulatedCrash("simulated crash while appending " + key.str());
    }
    --*crash_countdown_;
  }
  write_all(fd, line.data(), line.size(), p);
  keys.insert(key);
}

bool RunStore::contains(Stage stage, const RecordKey& key) const {
  std::lock_guard lock(*mu_);
  auto it = keys_.find(stage);
  return it != keys_.end() && it->second.count(key) > 0;
}

std::size_t RunStore::count(Stage stage) const {
  std::lock_guard lock(*mu_);
  auto it = keys_.find(stage);
  return it == keys_.end() ? 0 : it->second.size();
}

std::vector<nlohmann::json> RunStore::read(Stage stage) const {
  const fs::path p = stage_path(stage);
  if (!fs::exists(p)) return {};
  return jsonl::read_file(p, /*allow_torn_tail=*/true);
}

std::vector<RecordKey> RunStore::pending(Stage stage, const std::vector<RecordKey>& planned) const {
  std::vector<RecordKey> out;
  for (const RecordKey& k : planned) {
    if (!contains(stage, k)) out.push_back(k);
  }
  return out;
}

void RunStore::set_progress(Stage stage, std::size_t planned, bool complete) {
  std::lock_guard lock(*mu_);
  if (closed_) throw RunClosedError("run " + dir_.string() + " is closed");
  StageProgress& p = manifest_.stage_progress[std::string(to_string(stage))];
  p.planned = planned;
  p.complete = complete;
  write_manifest();
}

void RunStore::close() {
  std::lock_guard lock(*mu_);
  closed_ = true;
}

void RunStore::inject_crash_after(std::size_t appends, std::size_t torn_bytes) {
  std::lock_guard lock(*mu_);
  crash_countdown_ = appends;
  torn_bytes_ = torn_bytes;
}

}  // namespace skillmix
