#include "skillmix/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <thread>

#include "skillmix/datagen.hpp"
#include "skillmix/jsonl.hpp"
#include "skillmix/parser.hpp"
#include "skillmix/rng.hpp"
#include "skillmix/text.hpp"

namespace skillmix {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t default_generation_count(int k) { return k == 1 ? 5000 : 10000; }

namespace {

Setting require_setting(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + " must be a string");
  auto s = parse_setting(v.get<std::string>());
  if (!s) throw ConfigError(where + ": unknown setting '" + v.get<std::string>() + "'");
  return *s;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Runs f(i) for i in [0, n) on up to `workers` threads.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& f) {
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& th : threads) th.join();
}

struct WorkOutcome {
  json record;
  std::exception_ptr fatal;
};

std::string gen_key(const std::string& cid, int g) { return cid + "#" + std::to_string(g); }

// Settings that change how fast a run goes but never what it produces. They
// stay out of the config hash so a run can resume with different pacing.
json behavioral_config(json j) {
  static const char* k_backend_exec[] = {"max_concurrency", "requests_per_minute", "timeout_ms", "retry"};
  auto strip = [](json& b) {
    if (!b.is_object()) return;
    for (const char* key : k_backend_exec) b.erase(key);
  };
  j.erase("run_dir");
  if (j.contains("student")) strip(j["student"]);
  if (j.contains("graders") && j["graders"].is_array()) {
    for (auto& g : j["graders"]) strip(g);
  }
  return j;
}

}  // namespace

PipelineConfig parse_pipeline_config(const json& j_in, const fs::path& base_dir, const ConfigOverrides& overrides) {
  if (!j_in.is_object()) throw ConfigError("config must be a JSON object");
  json j = j_in;
  if (overrides.seed) j["seed"] = *overrides.seed;
  if (overrides.backend) {
    if (*overrides.backend == "mock") {
      if (j.contains("student") && j["student"].is_object()) j["student"]["kind"] = "mock";
      if (j.contains("graders") && j["graders"].is_array()) {
        for (auto& g : j["graders"]) {
          if (g.is_object()) g["kind"] = "mock";
        }
      }
    } else if (*overrides.backend != "live") {
      throw ConfigError("--backend must be 'live' or 'mock'");
    }
  }

  PipelineConfig c;
  try {
    if (!j.contains("registry")) throw ConfigError("config: 'registry' is required");
    c.registry_path = base_dir / j.at("registry").get<std::string>();
    if (!fs::exists(c.registry_path)) throw ConfigError("registry not found: " + c.registry_path.string());
    if (!j.contains("seed")) throw ConfigError("config: 'seed' is required");
    c.seed = j.at("seed").get<std::uint64_t>();

    if (!j.contains("student")) throw ConfigError("config: 'student' backend is required");
    c.student = backend_from_json(j.at("student"), 1.0);
    c.student_label = j.at("student").value("label", c.student.model);

    if (!j.contains("graders") || !j.at("graders").is_array() || j.at("graders").empty()) {
      throw ConfigError("config: at least one grader is required");
    }
    std::set<std::string> names;
    for (const auto& g : j.at("graders")) {
      GraderConfig gc;
      gc.backend = backend_from_json(g, 0.0);
      gc.name = g.value("name", gc.backend.model);
      const std::string style = g.value("style", std::string("gpt4"));
      auto st = parse_grader_style(style);
      if (!st) throw ConfigError("grader '" + gc.name + "': unknown style '" + style + "'");
      gc.style = *st;
      if (gc.name.empty() || !names.insert(gc.name).second) {
        throw ConfigError("grader names must be non-empty and unique ('" + gc.name + "')");
      }
      c.graders.push_back(std::move(gc));
    }

    if (!j.contains("plans") || !j.at("plans").is_array() || j.at("plans").empty()) {
      throw ConfigError("config: 'plans' must be a non-empty array");
    }
    for (std::size_t i = 0; i < j.at("plans").size(); ++i) {
      const json& p = j.at("plans")[i];
      const std::string where = "plans[" + std::to_string(i) + "]";
      PlanConfig pc;
      pc.k = p.at("k").get<int>();
      if (pc.k < 1) throw ConfigError(where + ": k must be at least 1");
      // Evaluation plans must state their size; data-generation plans default
      // to the pre-filter generation counts.
      const std::string purpose = p.value("purpose", std::string("eval"));
      if (purpose != "eval" && purpose != "datagen") throw ConfigError(where + ": purpose must be eval or datagen");
      if (p.contains("n_combinations")) {
        pc.n_combinations = p.at("n_combinations").get<std::size_t>();
      } else if (purpose == "datagen") {
        pc.n_combinations = default_generation_count(pc.k);
      } else {
        throw ConfigError(where + ": evaluation plans need an explicit n_combinations");
      }
      if (pc.n_combinations < 1) throw ConfigError(where + ": n_combinations must be positive");
      pc.setting = require_setting(p.at("setting"), where + ".setting");
      if (p.contains("topic_pool")) pc.topic_pool = require_setting(p.at("topic_pool"), where + ".topic_pool");
      pc.dedupe = p.value("dedupe", true);
      if (p.contains("common_skill_threshold")) pc.common_skill_threshold = p.at("common_skill_threshold").get<double>();
      c.plans.push_back(pc);
    }

    c.generations_per_combination = j.value("generations_per_combination", 3);
    c.grading_rounds = j.value("grading_rounds", 3);
    if (c.generations_per_combination < 1) throw ConfigError("generations_per_combination must be positive");
    if (c.grading_rounds < 1 || c.grading_rounds > 3) throw ConfigError("grading_rounds must be 1, 2 or 3");
    if (j.contains("rubric_labels")) {
      const json& rl = j.at("rubric_labels");
      c.rubric_labels.topic = rl.value("topic", c.rubric_labels.topic);
      c.rubric_labels.coherence = rl.value("coherence", c.rubric_labels.coherence);
      c.rubric_labels.length = rl.value("length", c.rubric_labels.length);
    }
    c.grade_parse_retries = j.value("grade_parse_retries", 2);
    if (c.grade_parse_retries < 0) throw ConfigError("grade_parse_retries must be non-negative");
    c.dataset_grader = j.value("dataset_grader", c.graders.front().name);
    if (!names.count(c.dataset_grader)) throw ConfigError("dataset_grader '" + c.dataset_grader + "' is not a grader");
    if (j.contains("export") && j["export"].contains("pretrain_mix_ratio")) {
      c.pretrain_mix_ratio = j["export"]["pretrain_mix_ratio"].get<double>();
    }
    if (j.contains("created_at")) c.created_at = j.at("created_at").get<std::string>();
    if (j.contains("run_dir")) c.run_dir = base_dir / j.at("run_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.effective = behavioral_config(std::move(j));
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path, const ConfigOverrides& overrides) {
  json j;
  try {
    j = jsonl::read_json(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_pipeline_config(j, path.parent_path(), overrides);
}

Pipeline::Pipeline(PipelineConfig config, fs::path run_dir, PipelineOptions options)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), options_(std::move(options)) {
  try {
    registry_ = load_registry(config_.registry_path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  registry_hash_ = text::sha256_hex(jsonl::read_text(config_.registry_path));
  config_hash_ = text::sha256_hex(config_.effective.dump() + "\n" + registry_hash_);
  if (!options_.client_factory) {
    options_.client_factory = [](const BackendConfig& b) { return make_client(b); };
  }
}

Pipeline::~Pipeline() = default;

RunManifest Pipeline::initial_manifest() const {
  RunManifest m;
  m.config_hash = config_hash_;
  m.run_id = "run-" + config_hash_.substr(0, 12);
  m.seed = config_.seed;
  m.registry_hash = registry_hash_;
  m.student_model = config_.student_label;
  m.rng_algorithm = std::string(Rng::k_algorithm);
  bool all_mock = config_.student.kind == BackendKind::mock;
  m.temperatures["student"] = config_.student.temperature;
  for (const auto& g : config_.graders) {
    m.grader_models.push_back(g.name);
    m.temperatures["grader:" + g.name] = g.backend.temperature;
    all_mock = all_mock && g.backend.kind == BackendKind::mock;
  }
  // Mock runs must be byte-reproducible, so they never stamp wall-clock time.
  m.created_at = config_.created_at ? *config_.created_at : all_mock ? "1970-01-01T00:00:00Z" : utc_now();
  return m;
}

RunStore& Pipeline::store() {
  if (!store_) {
    store_.emplace(RunStore::open_or_create(run_dir_, initial_manifest(), config_.effective));
    if (options_.crash_after_appends) store_->inject_crash_after(*options_.crash_after_appends, options_.torn_bytes);
  }
  return *store_;
}

std::optional<RunStore> Pipeline::read_store() const {
  if (!RunStore::exists(run_dir_)) return std::nullopt;
  return RunStore::open(run_dir_, config_hash_, /*read_only=*/true);
}

void Pipeline::note(const std::string& msg) const {
  if (options_.log) *options_.log << msg << "\n";
}

void Pipeline::require_complete(Stage stage, const char* needed_by) {
  // Never create a run just to report that it has nothing in it.
  if (!store_ && !RunStore::exists(run_dir_)) {
    throw StageIncomplete(std::string(needed_by) + " needs a complete '" + std::string(to_string(stage)) +
                          "' stage; no run exists at " + run_dir_.string());
  }
  const auto& progress = store().manifest().stage_progress;
  auto it = progress.find(std::string(to_string(stage)));
  if (it == progress.end() || !it->second.complete) {
    throw StageIncomplete(std::string(needed_by) + " needs a complete '" + std::string(to_string(stage)) +
                          "' stage; run the earlier stage first");
  }
}

/// False when the stage is already complete. Partial stages need --resume.
bool Pipeline::begin_stage(Stage stage, std::size_t planned, StageResult& result) {
  RunStore& s = store();
  result.planned = planned;
  result.already_done = s.count(stage);
  const auto& progress = s.manifest().stage_progress;
  auto it = progress.find(std::string(to_string(stage)));
  if (it != progress.end() && it->second.complete) {
    note(std::string(to_string(stage)) + ": already complete");
    return false;
  }
  if (result.already_done > 0 && !options_.resume) {
    throw StageIncomplete(std::string(to_string(stage)) + " is partially persisted (" +
                          std::to_string(result.already_done) + " records); pass --resume to continue");
  }
  return true;
}

ChatClient& Pipeline::student_client() {
  if (!student_) student_ = options_.client_factory(config_.student);
  return *student_;
}

ChatClient& Pipeline::grader_client(std::size_t i) {
  if (graders_.size() < config_.graders.size()) graders_.resize(config_.graders.size());
  if (!graders_[i]) graders_[i] = options_.client_factory(config_.graders[i].backend);
  return *graders_[i];
}

StageResult Pipeline::sample() {
  StageResult r;
  std::size_t planned = 0;
  for (const auto& p : config_.plans) planned += p.n_combinations;
  if (options_.dry_run) {
    r.dry_run = true;
    r.planned = planned;
    if (auto s = read_store()) r.already_done = s->count(Stage::combinations);
    return r;
  }
  if (!begin_stage(Stage::combinations, planned, r)) return r;
  RunStore& s = store();
  std::set<std::string> seen;
  for (std::size_t i = 0; i < config_.plans.size(); ++i) {
    const PlanConfig& pc = config_.plans[i];
    SamplingPlan plan;
    plan.k = pc.k;
    plan.n_combinations = pc.n_combinations;
    plan.setting = pc.setting;
    plan.topic_pool = pc.topic_pool;
    plan.seed = Rng::derive_seed(config_.seed, i);
    plan.dedupe = pc.dedupe;
    plan.common_skill_threshold = pc.common_skill_threshold;
    std::vector<Combination> batch;
    try {
      batch = sample_batch(plan, registry_, seen);
    } catch (const SamplingError& e) {
      throw ConfigError("plans[" + std::to_string(i) + "]: " + e.what());
    }
    for (const Combination& c : batch) {
      seen.insert(c.id);
      json rec = to_json(c);
      rec["plan_index"] = i;
      if (s.contains(Stage::combinations, key_of(rec))) continue;
      s.append(Stage::combinations, rec);
      ++r.performed;
    }
  }
  s.set_progress(Stage::combinations, planned, true);
  note("sample: " + std::to_string(r.performed) + " combinations written");
  return r;
}

StageResult Pipeline::generate() {
  StageResult r;
  const int G = config_.generations_per_combination;
  if (options_.dry_run) {
    r.dry_run = true;
    auto s = read_store();
    std::size_t n_comb = 0;
    if (s && s->count(Stage::combinations) > 0) {
      n_comb = s->count(Stage::combinations);
    } else {
      for (const auto& p : config_.plans) n_comb += p.n_combinations;
    }
    r.planned = n_comb * static_cast<std::size_t>(G);
    if (s) r.already_done = s->count(Stage::generations);
    return r;
  }
  require_complete(Stage::combinations, "generate");
  RunStore& s = store();
  std::vector<Combination> combos;
  for (const json& row : s.read(Stage::combinations)) combos.push_back(combination_from_json(row));
  struct Item {
    const Combination* c;
    int g;
  };
  std::vector<Item> pending;
  for (const Combination& c : combos) {
    for (int g = 0; g < G; ++g) {
      if (!s.contains(Stage::generations, {c.id, g, -1, ""})) pending.push_back({&c, g});
    }
  }
  if (!begin_stage(Stage::generations, combos.size() * static_cast<std::size_t>(G), r)) return r;

  ChatClient& client = student_client();
  const int workers = config_.student.max_concurrency;
  const std::size_t chunk = static_cast<std::size_t>(workers) * 4;
  for (std::size_t start = 0; start < pending.size(); start += chunk) {
    const std::size_t n = std::min(chunk, pending.size() - start);
    std::vector<WorkOutcome> out(n);
    parallel_for(n, workers, [&](std::size_t i) {
      const Item& it = pending[start + i];
      json rec = {{"combination_id", it.c->id}, {"generation_index", it.g}, {"student_model", config_.student_label}};
      try {
        const std::string p1 = build_prompt1(*it.c, registry_);
        const std::string p2 = build_prompt2(it.c->k);
        rec["prompt1"] = p1;
        rec["prompt2"] = p2;
        const TwoRoundResult res =
            run_two_round_generation(client, p1, p2, it.c->id + "/g" + std::to_string(it.g));
        rec["status"] = "ok";
        rec["answer1"] = res.answer1;
        rec["answer2"] = res.answer2;
        try {
          const ExtractedAnswer ea = extract_answer(res.answer2);
          rec["extracted_answer"] = {{"answer", ea.answer},
                                     {"explanation", ea.explanation ? json(*ea.explanation) : json()}};
        } catch (const ExtractionError& e) {
          rec["extracted_answer"] = nullptr;
          rec["extraction_error"] = e.what();
        }
      } catch (const RoundFailure& e) {
        if (!e.transient()) {
          out[i].fatal = std::current_exception();
          return;
        }
        rec["status"] = "failed";
        rec["error"] = e.what();
        rec["failed_round"] = e.round();
      } catch (...) {
        out[i].fatal = std::current_exception();
        return;
      }
      out[i].record = std::move(rec);
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i].fatal) {
        s.set_progress(Stage::generations, r.planned, false);
        std::rethrow_exception(out[i].fatal);
      }
      if (out[i].record.value("status", "") == "failed") ++r.failed;
      s.append(Stage::generations, out[i].record);
      ++r.performed;
    }
    s.set_progress(Stage::generations, r.planned, false);
  }
  s.set_progress(Stage::generations, r.planned, true);
  note("generate: " + std::to_string(r.performed) + " generations (" + std::to_string(r.failed) + " failed)");
  return r;
}

namespace {

bool gradable(const json& gen) {
  return gen.value("status", "") == "ok" && gen.contains("extracted_answer") && !gen["extracted_answer"].is_null();
}

}  // namespace

StageResult Pipeline::grade() {
  StageResult r;
  const int R = config_.grading_rounds;
  const std::size_t n_graders = config_.graders.size();
  if (options_.dry_run) {
    r.dry_run = true;
    auto s = read_store();
    std::size_t n_gen = 0;
    if (s && s->count(Stage::generations) > 0) {
      for (const json& g : s->read(Stage::generations)) n_gen += gradable(g) ? 1 : 0;
    } else {
      for (const auto& p : config_.plans) n_gen += p.n_combinations;
      n_gen *= static_cast<std::size_t>(config_.generations_per_combination);
    }
    r.planned = n_gen * n_graders * static_cast<std::size_t>(R);
    if (s) r.already_done = s->count(Stage::grades);
    return r;
  }
  require_complete(Stage::generations, "grade");
  RunStore& s = store();
  std::map<std::string, Combination> combos;
  for (const json& row : s.read(Stage::combinations)) {
    Combination c = combination_from_json(row);
    combos.emplace(c.id, std::move(c));
  }
  const std::vector<json> gens = s.read(Stage::generations);
  struct Item {
    const json* gen;
    std::size_t grader;
    int round;
  };
  std::vector<Item> pending;
  std::size_t planned = 0;
  for (const json& gen : gens) {
    if (!gradable(gen)) continue;
    for (std::size_t gi = 0; gi < n_graders; ++gi) {
      for (int rd = 0; rd < R; ++rd) {
        ++planned;
        const RecordKey key{gen["combination_id"].get<std::string>(), gen["generation_index"].get<int>(), rd,
                            config_.graders[gi].name};
        if (!s.contains(Stage::grades, key)) pending.push_back({&gen, gi, rd});
      }
    }
  }
  if (!begin_stage(Stage::grades, planned, r)) return r;

  int workers = 1;
  for (std::size_t gi = 0; gi < n_graders; ++gi) workers = std::max(workers, config_.graders[gi].backend.max_concurrency);
  for (std::size_t gi = 0; gi < n_graders; ++gi) grader_client(gi);
  const std::size_t chunk = static_cast<std::size_t>(workers) * 4;
  for (std::size_t start = 0; start < pending.size(); start += chunk) {
    const std::size_t n = std::min(chunk, pending.size() - start);
    std::vector<WorkOutcome> out(n);
    parallel_for(n, workers, [&](std::size_t i) {
      const Item& it = pending[start + i];
      const std::string cid = (*it.gen)["combination_id"].get<std::string>();
      const int g = (*it.gen)["generation_index"].get<int>();
      const GraderConfig& gc = config_.graders[it.grader];
      json rec = {{"combination_id", cid}, {"generation_index", g}, {"round_index", it.round}, {"grader", gc.name}};
      try {
        const Combination& c = combos.at(cid);
        const std::string answer = (*it.gen)["extracted_answer"]["answer"].get<std::string>();
        const std::string prompt = build_grading_prompt(gc.style, c, answer, registry_, config_.rubric_labels);
        ChatClient& client = *graders_[it.grader];
        const RubricItems rubric = rubric_items(c, registry_, config_.rubric_labels);
        const std::string tag = cid + "/g" + std::to_string(g) + "/" + gc.name + "/r" + std::to_string(it.round);
        // Unparseable replies get fresh grader calls before the round is given up.
        for (int attempt = 0; attempt <= config_.grade_parse_retries; ++attempt) {
          std::string reply;
          try {
            reply = client
                        .complete(client.make_request({{Role::user, prompt}},
                                                      attempt == 0 ? tag : tag + "/retry" + std::to_string(attempt)))
                        .content;
          } catch (const TransientFailure& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
            break;
          }
          rec["reply"] = reply;
          rec["parse_attempts"] = attempt + 1;
          try {
            const GradeRound gr = parse_grade_table(reply, rubric);
            json pts = json::array();
            for (const CriterionPoint& cp : gr.criterion_points) {
              pts.push_back({{"label", cp.label}, {"row_label", cp.row_label}, {"raw_value", cp.raw_value},
                             {"binarized", cp.binarized}});
            }
            rec["status"] = "ok";
            rec["criterion_points"] = pts;
            rec["reported_total"] = gr.reported_total ? json(*gr.reported_total) : json();
            rec["warnings"] = gr.warnings;
            rec.erase("error_kind");
            rec.erase("error");
            break;
          } catch (const GradeParseError& e) {
            rec["status"] = "parse_error";
            rec["error_kind"] = to_string(e.kind());
            rec["error"] = e.what();
          }
        }
      } catch (...) {
        out[i].fatal = std::current_exception();
        return;
      }
      out[i].record = std::move(rec);
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i].fatal) {
        s.set_progress(Stage::grades, planned, false);
        std::rethrow_exception(out[i].fatal);
      }
      if (out[i].record.value("status", "") != "ok") ++r.failed;
      s.append(Stage::grades, out[i].record);
      ++r.performed;
    }
    s.set_progress(Stage::grades, planned, false);
  }
  s.set_progress(Stage::grades, planned, true);
  note("grade: " + std::to_string(r.performed) + " grading rounds (" + std::to_string(r.failed) + " unusable)");
  return r;
}

StageResult Pipeline::score() {
  StageResult r;
  if (options_.dry_run) {
    r.dry_run = true;
    auto s = read_store();
    std::size_t n_gen = s ? s->count(Stage::generations) : 0;
    if (n_gen == 0) {
      for (const auto& p : config_.plans) n_gen += p.n_combinations;
      n_gen *= static_cast<std::size_t>(config_.generations_per_combination);
    }
    r.planned = n_gen * config_.graders.size();
    if (s) r.already_done = s->count(Stage::scores);
    return r;
  }
  require_complete(Stage::grades, "score");
  RunStore& s = store();
  std::map<std::string, Combination> combos;
  for (const json& row : s.read(Stage::combinations)) {
    Combination c = combination_from_json(row);
    combos.emplace(c.id, std::move(c));
  }
  // (generation, grader) -> usable rounds ordered by round index.
  std::map<std::pair<std::string, std::string>, std::map<int, GradeRound>> rounds;
  for (const json& gr : s.read(Stage::grades)) {
    if (gr.value("status", "") != "ok") continue;
    GradeRound round;
    for (const json& cp : gr.at("criterion_points")) {
      round.criterion_points.push_back({cp.at("label").get<std::string>(), cp.at("row_label").get<std::string>(),
                                        cp.at("raw_value").get<double>(), cp.at("binarized").get<int>()});
    }
    rounds[{gen_key(gr["combination_id"].get<std::string>(), gr["generation_index"].get<int>()),
            gr["grader"].get<std::string>()}][gr["round_index"].get<int>()] = std::move(round);
  }
  const std::vector<json> gens = s.read(Stage::generations);
  if (!begin_stage(Stage::scores, gens.size() * config_.graders.size(), r)) return r;
  for (const json& gen : gens) {
    const std::string cid = gen["combination_id"].get<std::string>();
    const int g = gen["generation_index"].get<int>();
    auto cit = combos.find(cid);
    if (cit == combos.end()) throw DataError("generation " + gen_key(cid, g) + " references an unknown combination");
    const Combination& c = cit->second;
    for (const GraderConfig& gc : config_.graders) {
      if (s.contains(Stage::scores, {cid, g, -1, gc.name})) continue;
      std::vector<GradeRound> used;
      if (gradable(gen)) {
        auto it = rounds.find({gen_key(cid, g), gc.name});
        if (it != rounds.end()) {
          for (auto& [rd, round] : it->second) used.push_back(round);
        }
      }
      CombinedGrade cg = majority_vote(used, cid, g, c.k);
      if (!cg.failed) {
        std::vector<Skill> skills;
        for (const std::string& name : c.skills) skills.push_back(registry_.skill(name));
        ExtractedAnswer ea;
        ea.answer = gen["extracted_answer"]["answer"].get<std::string>();
        cg = apply_name_mention_penalty(std::move(cg), ea, skills);
      }
      json rec = to_json(cg);
      rec["grader"] = gc.name;
      rec["setting"] = to_string(c.setting);
      rec["model_label"] = config_.student_label;
      rec["metrics"] = {{"full_marks", metric_full_marks(cg)},
                        {"all_skills", metric_all_skills(cg)},
                        {"skills_fraction", metric_skills_fraction(cg)}};
      s.append(Stage::scores, rec);
      ++r.performed;
      if (cg.failed) ++r.failed;
    }
  }
  s.set_progress(Stage::scores, r.planned, true);
  note("score: " + std::to_string(r.performed) + " combined grades");
  return r;
}

std::map<std::string, MetricReport> reports_from_scores(const std::vector<json>& scores,
                                                        const std::vector<json>& combinations,
                                                        const std::string& provenance) {
  std::map<std::string, Setting> settings;
  for (const json& c : combinations) {
    settings[c.at("id").get<std::string>()] = *parse_setting(c.at("setting").get<std::string>());
  }
  std::map<std::string, std::vector<ScoredGeneration>> by_grader;
  for (const json& sc : scores) {
    ScoredGeneration sg;
    sg.grade = combined_grade_from_json(sc);
    auto it = settings.find(sg.grade.combination_id);
    if (it == settings.end()) throw DataError("score for unknown combination " + sg.grade.combination_id);
    sg.setting = it->second;
    sg.model_label = sc.value("model_label", std::string());
    by_grader[sc.at("grader").get<std::string>()].push_back(std::move(sg));
  }
  std::map<std::string, MetricReport> out;
  for (const auto& [grader, gens] : by_grader) out[grader] = aggregate(gens, provenance + "; grader " + grader);
  return out;
}

json Pipeline::report() {
  if (options_.dry_run) {
    auto s = read_store();
    return {{"dry_run", true}, {"planned", s ? s->count(Stage::scores) : 0}};
  }
  require_complete(Stage::scores, "report");
  RunStore& s = store();
  const std::vector<json> scores = s.read(Stage::scores);
  const std::vector<json> combos = s.read(Stage::combinations);
  const auto reports = reports_from_scores(scores, combos, s.manifest().run_id);

  json doc = {{"run_id", s.manifest().run_id}, {"config_hash", s.manifest().config_hash}};
  json graders = json::object();
  std::string txt = "Run " + s.manifest().run_id + " (student: " + config_.student_label + ")\n";
  for (const auto& [name, rep] : reports) {
    graders[name] = to_json(rep);
    txt += "\nGrader: " + name + "\n" + render_report_table(rep);
  }
  doc["graders"] = graders;

  if (config_.graders.size() >= 2) {
    const std::string& a = config_.graders[0].name;
    const std::string& b = config_.graders[1].name;
    std::map<std::string, int> ks;
    for (const json& c : combos) ks[c.at("id").get<std::string>()] = c.at("k").get<int>();
    // Full-marks bit per combination: max over its generations.
    std::map<std::string, std::map<std::string, std::map<std::string, int>>> bits;  // group -> grader -> id -> bit
    for (const json& sc : scores) {
      const std::string grader = sc.at("grader").get<std::string>();
      if (grader != a && grader != b) continue;
      const std::string cid = sc.at("combination_id").get<std::string>();
      const std::string group = "k=" + std::to_string(ks.at(cid)) + " " + sc.at("setting").get<std::string>();
      int& bit = bits[group][grader][cid];
      bit = std::max(bit, sc.at("metrics").at("full_marks").get<int>());
    }
    json agreement = json::object();
    txt += "\nGrader agreement (" + a + " / " + b + " / both)\n";
    for (const auto& [group, per] : bits) {
      auto ia = per.find(a), ib = per.find(b);
      if (ia == per.end() || ib == per.end()) continue;
      const Agreement ag = grader_agreement(ia->second, ib->second);
      agreement[group] = {{"p_a", ag.p_a}, {"p_b", ag.p_b}, {"p_both", ag.p_both}};
      txt += group + ": " + format_metric(ag.p_a) + "/" + format_metric(ag.p_b) + "/" + format_metric(ag.p_both) + "\n";
    }
    doc["agreement"] = {{"graders", {a, b}}, {"groups", agreement}};
  }

  jsonl::write_json_atomic(s.dir() / "report.json", doc);
  const fs::path tmp = s.dir() / "report.txt.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << txt;
  }
  fs::rename(tmp, s.dir() / "report.txt");
  doc["text"] = txt;
  return doc;
}

StageResult Pipeline::build_dataset() {
  StageResult r;
  if (options_.dry_run) {
    r.dry_run = true;
    if (auto s = read_store()) {
      for (const json& sc : s->read(Stage::scores)) {
        if (sc.value("grader", "") == config_.dataset_grader && sc.at("metrics").at("full_marks").get<int>() == 1) {
          ++r.planned;
        }
      }
      r.already_done = s->count(Stage::exports);
    }
    return r;
  }
  require_complete(Stage::scores, "build-dataset");
  RunStore& s = store();
  std::map<std::string, Combination> combos;
  for (const json& row : s.read(Stage::combinations)) {
    Combination c = combination_from_json(row);
    combos.emplace(c.id, std::move(c));
  }
  std::map<std::string, CombinedGrade> grades;
  for (const json& sc : s.read(Stage::scores)) {
    if (sc.at("grader").get<std::string>() != config_.dataset_grader) continue;
    CombinedGrade g = combined_grade_from_json(sc);
    grades[gen_key(g.combination_id, g.generation_index)] = std::move(g);
  }
  std::vector<GenerationRecord> records;
  for (const json& gen : s.read(Stage::generations)) {
    GenerationRecord rec;
    const std::string cid = gen.at("combination_id").get<std::string>();
    rec.combination = combos.at(cid);
    rec.generation_index = gen.at("generation_index").get<int>();
    rec.prompt1 = gen.value("prompt1", "");
    rec.answer1 = gen.value("answer1", "");
    rec.prompt2 = gen.value("prompt2", "");
    rec.answer2 = gen.value("answer2", "");
    rec.student_model = gen.value("student_model", "");
    auto it = grades.find(gen_key(cid, rec.generation_index));
    if (it == grades.end()) throw DataError("generation " + gen_key(cid, rec.generation_index) + " has no score");
    rec.combined_grade = it->second;
    records.push_back(std::move(rec));
  }
  const std::vector<GenerationRecord> kept = filter_full_marks(records);
  if (!begin_stage(Stage::exports, kept.size(), r)) return r;
  TrainingExportManifest manifest;
  manifest.seed = config_.seed;
  manifest.pretrain_mix_ratio = config_.pretrain_mix_ratio;
  for (const GenerationRecord& rec : kept) {
    const TrainingExample ex = to_training_example(rec);
    ++manifest.counts[ex.k];
    const json j = to_json(ex);
    if (s.contains(Stage::exports, key_of(j))) continue;
    s.append(Stage::exports, j);
    ++r.performed;
  }
  jsonl::write_json_atomic(s.dir() / "exports_manifest.json", to_json(manifest));
  s.set_progress(Stage::exports, kept.size(), true);
  note("build-dataset: " + std::to_string(kept.size()) + " full-mark examples");
  return r;
}

VerifyReport Pipeline::verify() {
  VerifyReport v;
  auto opened = read_store();
  if (!opened) {
    v.problems.push_back("no run at " + run_dir_.string());
    return v;
  }
  const RunStore& s = *opened;
  std::set<std::string> combo_ids;
  for (const json& c : s.read(Stage::combinations)) combo_ids.insert(c.at("id").get<std::string>());
  std::map<std::string, bool> gens;  // generation -> gradable
  for (const json& g : s.read(Stage::generations)) {
    const std::string cid = g.at("combination_id").get<std::string>();
    if (!combo_ids.count(cid)) v.problems.push_back("generation " + key_of(g).str() + ": unknown combination");
    gens[gen_key(cid, g.at("generation_index").get<int>())] = gradable(g);
  }
  std::map<std::pair<std::string, std::string>, int> usable_rounds;
  for (const json& gr : s.read(Stage::grades)) {
    const std::string gk = gen_key(gr.at("combination_id").get<std::string>(), gr.at("generation_index").get<int>());
    auto it = gens.find(gk);
    if (it == gens.end()) {
      v.problems.push_back("grade " + key_of(gr).str() + ": no persisted generation");
    } else if (!it->second) {
      v.problems.push_back("grade " + key_of(gr).str() + ": generation has no gradable answer");
    }
    if (gr.value("status", "") == "ok") ++usable_rounds[{gk, gr.at("grader").get<std::string>()}];
  }
  std::set<std::string> full_marks;
  for (const json& sc : s.read(Stage::scores)) {
    const std::string gk = gen_key(sc.at("combination_id").get<std::string>(), sc.at("generation_index").get<int>());
    const std::string grader = sc.at("grader").get<std::string>();
    if (!gens.count(gk)) v.problems.push_back("score " + key_of(sc).str() + ": no persisted generation");
    const int used = sc.value("rounds_used", 0);
    const auto it = usable_rounds.find({gk, grader});
    const int persisted = it == usable_rounds.end() ? 0 : it->second;
    if (used != persisted) {
      v.problems.push_back("score " + key_of(sc).str() + ": rounds_used " + std::to_string(used) + " but " +
                           std::to_string(persisted) + " usable grade records");
    }
    if (grader == config_.dataset_grader && sc.at("metrics").at("full_marks").get<int>() == 1) {
      full_marks.insert(sc.at("combination_id").get<std::string>() + "-g" +
                        std::to_string(sc.at("generation_index").get<int>()));
    }
  }
  for (const json& ex : s.read(Stage::exports)) {
    const std::string id = ex.at("id").get<std::string>();
    if (!full_marks.count(id)) v.problems.push_back("export " + id + ": not a full-mark generation");
  }
  for (Stage st : k_all_stages) {
    const auto& progress = s.manifest().stage_progress;
    auto it = progress.find(std::string(to_string(st)));
    if (it != progress.end() && it->second.done != s.count(st)) {
      v.problems.push_back(std::string(to_string(st)) + ": manifest counts " + std::to_string(it->second.done) +
                           " records, file has " + std::to_string(s.count(st)));
    }
    if (fs::exists(s.stage_path(st))) {
      const std::string data = jsonl::read_text(s.stage_path(st));
      if (!data.empty() && data.back() != '\n') v.problems.push_back(std::string(to_string(st)) + ": torn final line");
    }
  }
  return v;
}

json Pipeline::run_all() {
  sample();
  generate();
  grade();
  score();
  return report();
}

}  // namespace skillmix
