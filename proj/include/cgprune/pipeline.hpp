#pragma once

// End-to-end experiment stages behind the command-line tool. Every stage
// reads its inputs from, and writes its outputs to, a work directory:
//
//   <out>/ingest/    filtered graphs, labeled edges, dataset manifest
//   <out>/features/  per-program feature CSVs
//   <out>/train/     model.json, train_log.csv
//   <out>/prune/     pruned graphs and edge probabilities
//   <out>/eval/      evaluation reports
//   <out>/sweep/     (w1, tau) grid
//   <out>/vuln/      vulnerability propagation reports
//   <out>/report/    runtime table and summary
//
// Each stage finishes by writing run.json: its config hash, the config
// hashes of the stages it consumed, and content hashes of its deterministic
// outputs. Consumers re-hash upstream outputs (tamper detection) and check
// that chained stages agree on shared upstreams (staleness detection).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "cgprune/client.hpp"
#include "cgprune/error.hpp"
#include "cgprune/eval.hpp"
#include "cgprune/features.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/io.hpp"
#include "cgprune/learner.hpp"
#include "cgprune/pruner.hpp"
#include "cgprune/synth.hpp"

namespace cgprune {

inline constexpr std::string_view kToolVersion = "cgprune 1.0.0";

enum class LogLevel { debug, info, warn, error };
using LogSink = std::function<void(LogLevel, const std::string&)>;

struct ExperimentConfig {
  // ingest
  std::vector<fs::path> inputs;  // one directory per dataset
  double test_fraction = 0.3;
  std::size_t sample_cap = kDefaultSampleCap;
  std::vector<std::string> stdlib_prefixes = default_stdlib_prefixes();
  // features
  FeatureFamily family = FeatureFamily::structural;
  std::size_t semantic_dim = kDefaultSemanticDim;
  std::optional<fs::path> embeddings_dir;  // holds <program>.embeddings.jsonl
  // train
  TrainConfig train;
  std::string model_kind = "neural";  // or "random"
  // prune / sweep
  double tau = 0.95;
  DecisionMode decision_mode = DecisionMode::confidence;
  std::vector<double> tau_grid = {0.6, 0.7, 0.8, 0.9, 0.95};
  std::vector<double> w1_grid = {0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
  // vuln
  VulnConfig vuln;
  // gen-synth
  SynthConfig synth;
  // global
  fs::path out = "out";
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  // Pushes the global seed into the per-module configs.
  void apply_seed() {
    train.seed = seed;
    vuln.seed = seed;
    synth.seed = seed;
  }

  void validate(bool need_inputs = false) const {
    if (need_inputs && inputs.empty()) throw UsageError("no input dataset directories given");
    for (const auto& p : inputs)
      if (!fs::is_directory(p)) throw UsageError("input directory does not exist: " + p.string());
    if (embeddings_dir && !fs::is_directory(*embeddings_dir))
      throw UsageError("embeddings directory does not exist: " + embeddings_dir->string());
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must lie in (0, 1)");
    if (sample_cap == 0) throw UsageError("sample_cap must be positive");
    if (tau_grid.empty()) throw UsageError("tau grid is empty");
    if (w1_grid.empty()) throw UsageError("w1 grid is empty");
    if (!std::is_sorted(tau_grid.begin(), tau_grid.end())) throw UsageError("tau grid must be ascending");
    if (decision_mode == DecisionMode::confidence) {
      validate_tau(tau);
      for (double t : tau_grid) validate_tau(t);
    }
    for (double w : w1_grid)
      if (!(w > 0.0 && w < 1.0)) throw UsageError("w1 grid values must lie in (0, 1)");
    if (model_kind != "neural" && model_kind != "random") throw UsageError("model kind must be neural or random");
    if (jobs == 0) throw UsageError("--jobs must be positive");
    train.validate();
    vuln.validate();
  }
};

inline Json to_json(const ExperimentConfig& c) {
  std::vector<std::string> inputs;
  for (const auto& p : c.inputs) inputs.push_back(p.string());
  return Json{{"seed", c.seed},
              {"ingest",
               {{"inputs", inputs},
                {"test_fraction", c.test_fraction},
                {"sample_cap", c.sample_cap},
                {"stdlib_prefixes", c.stdlib_prefixes}}},
              {"features",
               {{"family", to_string(c.family)},
                {"semantic_dim", c.semantic_dim},
                {"embeddings_dir", c.embeddings_dir ? Json(c.embeddings_dir->string()) : Json(nullptr)}}},
              {"train", to_json(c.train)},
              {"model_kind", c.model_kind},
              {"prune", {{"tau", c.tau}, {"decision_mode", to_string(c.decision_mode)}}},
              {"sweep", {{"tau_grid", c.tau_grid}, {"w1_grid", c.w1_grid}}},
              {"vuln",
               {{"k", c.vuln.k}, {"warmup_runs", c.vuln.warmup_runs}, {"measured_runs", c.vuln.measured_runs}}},
              {"synth", to_json(c.synth)}};
}

// Overlays a nested JSON config document onto `c`. Unknown keys are errors.
inline void apply_config_json(ExperimentConfig& c, const Json& j) {
  auto fail = [](const std::string& what) { throw UsageError("config: " + what); };
  auto check_keys = [&](const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!obj.is_object()) fail(where + " must be an object");
    for (const auto& [k, _] : obj.items())
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) fail("unknown key '" + where + "." + k + "'");
  };
  try {
    check_keys(j, {"seed", "out", "jobs", "ingest", "features", "train", "model_kind", "prune", "sweep", "vuln", "synth"},
               "<root>");
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("jobs")) c.jobs = j["jobs"].get<unsigned>();
    if (j.contains("model_kind")) c.model_kind = j["model_kind"].get<std::string>();
    if (auto it = j.find("ingest"); it != j.end()) {
      check_keys(*it, {"inputs", "test_fraction", "sample_cap", "stdlib_prefixes"}, "ingest");
      if (it->contains("inputs")) {
        c.inputs.clear();
        for (const auto& p : (*it)["inputs"]) c.inputs.emplace_back(p.get<std::string>());
      }
      if (it->contains("test_fraction")) c.test_fraction = (*it)["test_fraction"].get<double>();
      if (it->contains("sample_cap")) c.sample_cap = (*it)["sample_cap"].get<std::size_t>();
      if (it->contains("stdlib_prefixes")) c.stdlib_prefixes = (*it)["stdlib_prefixes"].get<std::vector<std::string>>();
    }
    if (auto it = j.find("features"); it != j.end()) {
      check_keys(*it, {"family", "semantic_dim", "embeddings_dir"}, "features");
      if (it->contains("family")) c.family = parse_feature_family((*it)["family"].get<std::string>());
      if (it->contains("semantic_dim")) c.semantic_dim = (*it)["semantic_dim"].get<std::size_t>();
      if (it->contains("embeddings_dir") && !(*it)["embeddings_dir"].is_null())
        c.embeddings_dir = fs::path((*it)["embeddings_dir"].get<std::string>());
    }
    if (auto it = j.find("train"); it != j.end()) {
      check_keys(*it,
                 {"w_retain", "learning_rate", "epochs", "warmup_steps", "dropout_rate", "beta1", "beta2",
                  "epsilon", "weight_decay", "batch_size", "hidden_dim", "standardize", "seed"},
                 "train");
      c.train = train_config_from_json(*it, c.train);
    }
    if (auto it = j.find("prune"); it != j.end()) {
      check_keys(*it, {"tau", "decision_mode"}, "prune");
      if (it->contains("tau")) c.tau = (*it)["tau"].get<double>();
      if (it->contains("decision_mode")) c.decision_mode = parse_decision_mode((*it)["decision_mode"].get<std::string>());
    }
    if (auto it = j.find("sweep"); it != j.end()) {
      check_keys(*it, {"tau_grid", "w1_grid"}, "sweep");
      if (it->contains("tau_grid")) c.tau_grid = (*it)["tau_grid"].get<std::vector<double>>();
      if (it->contains("w1_grid")) c.w1_grid = (*it)["w1_grid"].get<std::vector<double>>();
    }
    if (auto it = j.find("vuln"); it != j.end()) {
      check_keys(*it, {"k", "warmup_runs", "measured_runs"}, "vuln");
      if (it->contains("k")) c.vuln.k = (*it)["k"].get<std::size_t>();
      if (it->contains("warmup_runs")) c.vuln.warmup_runs = (*it)["warmup_runs"].get<std::size_t>();
      if (it->contains("measured_runs")) c.vuln.measured_runs = (*it)["measured_runs"].get<std::size_t>();
    }
    if (auto it = j.find("synth"); it != j.end()) {
      check_keys(*it,
                 {"dataset", "programs", "nodes", "imbalance", "signal_strength", "missed_rate", "app_fraction",
                  "stdlib_fraction", "max_out_degree", "embedding_dim", "seed"},
                 "synth");
      auto& s = c.synth;
      const auto& o = *it;
      if (o.contains("dataset")) s.dataset = o["dataset"].get<std::string>();
      if (o.contains("programs")) s.programs = o["programs"].get<std::size_t>();
      if (o.contains("nodes")) s.nodes = o["nodes"].get<std::size_t>();
      if (o.contains("imbalance")) s.imbalance = o["imbalance"].get<double>();
      if (o.contains("signal_strength")) s.signal_strength = o["signal_strength"].get<double>();
      if (o.contains("missed_rate")) s.missed_rate = o["missed_rate"].get<double>();
      if (o.contains("app_fraction")) s.app_fraction = o["app_fraction"].get<double>();
      if (o.contains("stdlib_fraction")) s.stdlib_fraction = o["stdlib_fraction"].get<double>();
      if (o.contains("max_out_degree")) s.max_out_degree = o["max_out_degree"].get<std::size_t>();
      if (o.contains("embedding_dim")) s.embedding_dim = o["embedding_dim"].get<std::size_t>();
    }
  } catch (const Json::exception& e) {
    fail(e.what());
  }
}

inline ExperimentConfig load_config_file(const fs::path& path, ExperimentConfig base = {}) {
  Json j;
  try {
    j = Json::parse(read_file(path), nullptr, true, /*ignore_comments=*/true);
  } catch (const Json::parse_error& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  apply_config_json(base, j);
  return base;
}

// ---------------------------------------------------------------------------
// Run manifests

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

inline std::string config_hash(const Json& j) { return content_hash(j.dump()); }

class StageWriter {
 public:
  StageWriter(fs::path root, std::string stage) : root_(std::move(root)), stage_(std::move(stage)) {
    fs::create_directories(dir());
  }

  fs::path dir() const { return root_ / stage_; }

  // Deterministic outputs are hashed into run.json; volatile ones (timings)
  // are only listed.
  void write(const std::string& rel, std::string_view content, bool is_volatile = false) {
    write_file_atomic(dir() / rel, content);
    std::lock_guard lock(mu_);
    if (is_volatile) volatile_.insert(rel);
    else outputs_[rel] = content_hash(content);
  }

  // Returns the stage's config hash.
  std::string finish(const Json& config, const std::map<std::string, std::string>& upstream) {
    Json hashed{{"stage", stage_}, {"config", config}, {"upstream", upstream}};
    const auto hash = config_hash(hashed);
    Json run;
    run["stage"] = stage_;
    run["tool_version"] = kToolVersion;
    run["config_hash"] = hash;
    run["config"] = config;
    run["upstream"] = upstream;
    run["outputs"] = outputs_;
    run["volatile_outputs"] = std::vector<std::string>(volatile_.begin(), volatile_.end());
    write_file_atomic(dir() / "run.json", run.dump(2) + "\n");
    return hash;
  }

 private:
  fs::path root_;
  std::string stage_;
  std::mutex mu_;
  std::map<std::string, std::string> outputs_;
  std::set<std::string> volatile_;
};

struct StageRecord {
  std::string stage;
  std::string config_hash;
  Json config;
  std::map<std::string, std::string> upstream;
};

// Loads <root>/<stage>/run.json and re-hashes every recorded output.
inline StageRecord verify_stage(const fs::path& root, const std::string& stage) {
  const auto run_path = root / stage / "run.json";
  if (!fs::exists(run_path)) throw UsageError("stage '" + stage + "' has not been run (missing " + run_path.string() + ")");
  Json run;
  try {
    run = Json::parse(read_file(run_path));
  } catch (const Json::parse_error& e) {
    throw IntegrityError(run_path.string() + ": " + e.what());
  }
  StageRecord rec;
  try {
    rec.stage = run.at("stage").get<std::string>();
    rec.config_hash = run.at("config_hash").get<std::string>();
    rec.config = run.at("config");
    rec.upstream = run.at("upstream").get<std::map<std::string, std::string>>();
    for (const auto& [rel, hash] : run.at("outputs").items()) {
      const auto p = root / stage / rel;
      if (!fs::exists(p)) throw IntegrityError("stage '" + stage + "': output " + rel + " is missing");
      if (content_hash(read_file(p)) != hash.get<std::string>())
        throw IntegrityError("stage '" + stage + "': output " + rel + " was modified after the run");
    }
  } catch (const Json::exception& e) {
    throw IntegrityError(run_path.string() + ": " + e.what());
  }
  if (rec.stage != stage) throw IntegrityError(run_path.string() + ": records stage '" + rec.stage + "'");
  return rec;
}

// Both records must have consumed the same run of `upstream`.
inline void require_same_upstream(const StageRecord& a, const StageRecord& b, const std::string& upstream) {
  auto ia = a.upstream.find(upstream);
  auto ib = b.upstream.find(upstream);
  if (ia == a.upstream.end() || ib == b.upstream.end()) return;
  if (ia->second != ib->second)
    throw StalenessError("stale artifacts: stage '" + a.stage + "' used " + upstream + " run " + ia->second +
                         " but stage '" + b.stage + "' used " + ib->second + "; rerun the downstream stages");
}

inline void require_upstream_is(const StageRecord& consumer, const StageRecord& upstream) {
  auto it = consumer.upstream.find(upstream.stage);
  if (it != consumer.upstream.end() && it->second != upstream.config_hash)
    throw StalenessError("stale artifacts: stage '" + consumer.stage + "' was built from " + upstream.stage + " run " +
                         it->second + " but the current " + upstream.stage + " run is " + upstream.config_hash);
}

// ---------------------------------------------------------------------------
// Helpers

// Runs fn(i) for i in [0, n) on up to `jobs` threads. fn writes results into
// per-index slots, so output order never depends on scheduling. The first
// exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string tau_label(double tau) { return "tau_" + format_double(tau); }

struct ProgramEntry {
  std::string program;
  std::string dataset;
  bool test = false;
  std::size_t duplicates = 0;
  std::size_t skipped_edges = 0;  // removed by prefix filtering
};

struct IngestManifest {
  std::vector<DatasetManifest> datasets;
  DatasetManifest combined;
  std::vector<ProgramEntry> programs;  // sorted by program id

  std::vector<std::string> train_programs() const { return combined.train_programs; }
  std::vector<std::string> test_programs() const { return combined.test_programs; }
};

inline Json to_json(const IngestManifest& m) {
  Json datasets = Json::array();
  for (const auto& d : m.datasets) datasets.push_back(to_json(d));
  Json programs = Json::array();
  for (const auto& p : m.programs)
    programs.push_back({{"program", p.program},
                        {"dataset", p.dataset},
                        {"split", p.test ? "test" : "train"},
                        {"duplicate_edges", p.duplicates},
                        {"filtered_edges", p.skipped_edges}});
  return Json{{"datasets", std::move(datasets)}, {"combined", to_json(m.combined)}, {"programs", std::move(programs)}};
}

inline IngestManifest ingest_manifest_from_json(const Json& j) {
  IngestManifest m;
  try {
    for (const auto& d : j.at("datasets")) m.datasets.push_back(dataset_manifest_from_json(d));
    m.combined = dataset_manifest_from_json(j.at("combined"));
    for (const auto& p : j.at("programs"))
      m.programs.push_back({p.at("program").get<std::string>(), p.at("dataset").get<std::string>(),
                            p.at("split").get<std::string>() == "test", p.at("duplicate_edges").get<std::size_t>(),
                            p.at("filtered_edges").get<std::size_t>()});
  } catch (const Json::exception& e) {
    throw ParseError(std::string("ingest manifest: ") + e.what());
  }
  return m;
}

inline CallGraph load_graph_file(const fs::path& p) { return load_call_graph(read_file(p)).graph; }

inline std::string graph_file_text(const CallGraph& g) { return to_json(g).dump(1) + "\n"; }

// ---------------------------------------------------------------------------
// gen-synth

inline void run_gen_synth(const SynthConfig& cfg, const fs::path& dir, const LogSink& log = {}) {
  cfg.validate();
  fs::create_directories(dir);
  Json index{{"dataset", cfg.dataset}, {"config", to_json(cfg)}, {"programs", Json::array()}};
  for (std::size_t i = 0; i < cfg.programs; ++i) {
    const auto prog = generate_program(cfg, i);
    const auto& name = prog.static_graph.program_id();
    write_file_atomic(dir / (name + ".static.json"), graph_file_text(prog.static_graph));
    write_file_atomic(dir / (name + ".dynamic.json"), graph_file_text(prog.dynamic_graph));
    if (cfg.embedding_dim > 0)
      write_file_atomic(dir / (name + ".embeddings.jsonl"), embeddings_jsonl(prog.static_graph, prog.embeddings));
    index["programs"].push_back(name);
  }
  write_file_atomic(dir / "corpus.json", index.dump(2) + "\n");
  if (log) log(LogLevel::info, "generated " + std::to_string(cfg.programs) + " programs in " + dir.string());
}

// ---------------------------------------------------------------------------
// ingest

inline IngestManifest run_ingest(const ExperimentConfig& cfg, const LogSink& log = {}) {
  cfg.validate(/*need_inputs=*/true);
  StageWriter out(cfg.out, "ingest");

  struct Found {
    std::string dataset;
    fs::path static_file, dynamic_file;
    std::string static_hash, dynamic_hash;
  };
  std::vector<Found> found;
  Json input_hashes = Json::object();
  for (const auto& dir : cfg.inputs) {
    const auto dataset = fs::path(dir).lexically_normal().filename().empty()
                             ? fs::path(dir).lexically_normal().parent_path().filename().string()
                             : fs::path(dir).lexically_normal().filename().string();
    std::vector<fs::path> statics;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.ends_with(".static.json")) statics.push_back(entry.path());
    }
    std::sort(statics.begin(), statics.end());
    for (const auto& sp : statics) {
      const auto stem = sp.filename().string().substr(0, sp.filename().string().size() - std::string(".static.json").size());
      const auto dp = sp.parent_path() / (stem + ".dynamic.json");
      if (!fs::exists(dp)) {
        if (log) log(LogLevel::warn, "skipping " + sp.filename().string() + ": no dynamic call graph " + dp.filename().string());
        continue;
      }
      Found f{dataset, sp, dp, content_hash(read_file(sp)), content_hash(read_file(dp))};
      input_hashes[dataset + "/" + sp.filename().string()] = f.static_hash;
      input_hashes[dataset + "/" + dp.filename().string()] = f.dynamic_hash;
      found.push_back(std::move(f));
    }
  }
  if (found.empty()) throw UsageError("ingest: no programs with both static and dynamic call graphs");

  struct Ingested {
    ProgramEntry entry;
    ProgramCounts counts;
  };
  std::vector<Ingested> results(found.size());
  parallel_for(found.size(), cfg.jobs, [&](std::size_t i) {
    auto s = load_call_graph(read_file(found[i].static_file));
    auto d = load_call_graph(read_file(found[i].dynamic_file));
    if (s.graph.kind() == GraphKind::dynamic)
      throw UsageError(found[i].static_file.string() + ": expected a static call graph");
    const auto fs_g = filter_stdlib_edges(s.graph, cfg.stdlib_prefixes);
    const auto fd_g = filter_stdlib_edges(d.graph, cfg.stdlib_prefixes);
    const auto labeled = label_edges(fs_g, fd_g);
    const auto sampled = sample_large_program(labeled, cfg.sample_cap, cfg.seed ^ fnv1a64(fs_g.program_id()));
    const auto& prog = fs_g.program_id();
    out.write("graphs/" + prog + ".static.json", graph_file_text(fs_g));
    out.write("graphs/" + prog + ".dynamic.json", graph_file_text(fd_g));
    out.write("labeled/" + prog + ".jsonl", to_jsonl(sampled));
    results[i].entry = {prog, found[i].dataset, false, s.duplicate_edges + d.duplicate_edges,
                        s.graph.num_edges() - fs_g.num_edges()};
    results[i].counts = {fs_g.num_edges(), sampled.size(), count_labels(sampled)};
  });

  IngestManifest m;
  std::map<std::string, std::vector<std::size_t>> by_dataset;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!seen.insert(results[i].entry.program).second)
      throw UsageError("ingest: program id '" + results[i].entry.program + "' appears more than once");
    if (results[i].entry.duplicates > 0 && log)
      log(LogLevel::warn, results[i].entry.program + ": collapsed " + std::to_string(results[i].entry.duplicates) +
                              " duplicate edges");
    by_dataset[results[i].entry.dataset].push_back(i);
  }

  m.combined.name = "combined";
  Rng split_rng(cfg.seed ^ 0x7370'6c69'7473ULL);
  for (auto& [name, idx] : by_dataset) {
    DatasetManifest d;
    d.name = name;
    std::vector<std::string> progs;
    for (auto i : idx) {
      progs.push_back(results[i].entry.program);
      d.counts[results[i].entry.program] = results[i].counts;
    }
    std::sort(progs.begin(), progs.end());
    shuffle(progs, split_rng);
    std::size_t n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(progs.size())));
    if (progs.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, progs.size() - 1);
    else n_test = 0;
    d.test_programs.assign(progs.begin(), progs.begin() + static_cast<std::ptrdiff_t>(n_test));
    d.train_programs.assign(progs.begin() + static_cast<std::ptrdiff_t>(n_test), progs.end());
    std::sort(d.test_programs.begin(), d.test_programs.end());
    std::sort(d.train_programs.begin(), d.train_programs.end());
    d.pr_ratio = pr_ratio(d.totals());
    d.validate();
    for (const auto& p : d.test_programs) m.combined.test_programs.push_back(p);
    for (const auto& p : d.train_programs) m.combined.train_programs.push_back(p);
    for (const auto& [p, c] : d.counts) m.combined.counts[p] = c;
    if (log) log(LogLevel::info, "dataset " + name + ": " + std::to_string(progs.size()) + " programs, P/R ratio " + format_double(d.pr_ratio));
    m.datasets.push_back(std::move(d));
  }
  std::sort(m.combined.test_programs.begin(), m.combined.test_programs.end());
  std::sort(m.combined.train_programs.begin(), m.combined.train_programs.end());
  m.combined.pr_ratio = pr_ratio(m.combined.totals());
  m.combined.validate();

  std::set<std::string> test_set(m.combined.test_programs.begin(), m.combined.test_programs.end());
  for (auto& r : results) {
    r.entry.test = test_set.contains(r.entry.program);
    m.programs.push_back(r.entry);
  }
  std::sort(m.programs.begin(), m.programs.end(),
            [](const ProgramEntry& a, const ProgramEntry& b) { return a.program < b.program; });

  out.write("manifest.json", to_json(m).dump(2) + "\n");
  Json config{{"test_fraction", cfg.test_fraction},
              {"sample_cap", cfg.sample_cap},
              {"stdlib_prefixes", cfg.stdlib_prefixes},
              {"seed", cfg.seed},
              {"input_files", input_hashes}};
  out.finish(config, {});
  return m;
}

inline IngestManifest load_ingest_manifest(const fs::path& root) {
  return ingest_manifest_from_json(Json::parse(read_file(root / "ingest" / "manifest.json")));
}

// ---------------------------------------------------------------------------
// features

inline FeatureTable load_features(const fs::path& root, const std::string& program, FeatureFamily family) {
  return parse_feature_csv(read_file(root / "features" / (program + ".csv")), family);
}

inline void run_features(const ExperimentConfig& cfg, const LogSink& log = {}) {
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto manifest = load_ingest_manifest(cfg.out);
  StageWriter out(cfg.out, "features");

  std::vector<double> seconds(manifest.programs.size(), 0.0);
  std::vector<std::size_t> fallbacks(manifest.programs.size(), 0);
  std::vector<std::size_t> dims(manifest.programs.size(), 0);
  parallel_for(manifest.programs.size(), cfg.jobs, [&](std::size_t i) {
    const auto& prog = manifest.programs[i].program;
    const auto g = load_graph_file(cfg.out / "ingest" / "graphs" / (prog + ".static.json"));
    std::optional<EmbeddingTable> emb;
    if (cfg.embeddings_dir && cfg.family != FeatureFamily::structural && cfg.family != FeatureFamily::signature) {
      const auto p = *cfg.embeddings_dir / (prog + ".embeddings.jsonl");
      if (fs::exists(p)) emb = load_semantic_embeddings(read_file(p));
    }
    const auto t0 = std::chrono::steady_clock::now();
    FeatureOptions opt;
    opt.family = cfg.family;
    opt.semantic_dim = cfg.semantic_dim;
    opt.embeddings = emb ? &*emb : nullptr;
    const auto table = compute_features(g, opt);
    seconds[i] = seconds_since(t0);
    fallbacks[i] = table.fallbacks;
    dims[i] = table.dim();
    out.write(prog + ".csv", to_csv(table));
  });
  for (std::size_t i = 1; i < dims.size(); ++i)
    if (dims[i] != dims[0])
      throw FormatError("features: programs disagree on feature dimension (" + std::to_string(dims[0]) + " vs " +
                        std::to_string(dims[i]) + "); check embedding files");

  Json timing = Json::object();
  for (std::size_t i = 0; i < manifest.programs.size(); ++i) {
    timing[manifest.programs[i].program] = seconds[i];
    if (fallbacks[i] > 0 && log)
      log(LogLevel::info, manifest.programs[i].program + ": " + std::to_string(fallbacks[i]) +
                              " edges without embeddings use signature features");
  }
  out.write("timing.json", timing.dump(2) + "\n", /*is_volatile=*/true);
  Json config{{"family", to_string(cfg.family)},
              {"semantic_dim", cfg.semantic_dim},
              {"dim", dims.empty() ? 0 : dims[0]},
              {"embeddings", cfg.embeddings_dir.has_value()}};
  out.finish(config, {{"ingest", ingest.config_hash}});
}

// ---------------------------------------------------------------------------
// train

// Downstream stages read features in the family they were written with.
inline FeatureFamily recorded_family(const StageRecord& features) {
  try {
    return parse_feature_family(features.config.at("family").get<std::string>());
  } catch (const Json::exception& e) {
    throw IntegrityError(std::string("features/run.json: ") + e.what());
  }
}

// Labeled (sampled) edges of the given programs joined with their features.
inline Dataset build_dataset(const fs::path& root, const std::vector<std::string>& programs, FeatureFamily family) {
  Dataset ds;
  for (const auto& prog : programs) {
    const auto table = load_features(root, prog, family);
    std::unordered_map<EdgeKey, std::size_t, EdgeKeyHash> row_of;
    for (std::size_t i = 0; i < table.keys.size(); ++i) row_of.emplace(table.keys[i], i);
    const auto labeled = parse_labeled_jsonl(read_file(root / "ingest" / "labeled" / (prog + ".jsonl")));
    if (ds.x.cols == 0) ds.x = Matrix(0, table.dim());
    if (table.dim() != ds.x.cols) throw FormatError("train: feature dimension differs across programs");
    for (const auto& le : labeled) {
      auto it = row_of.find(le.key);
      if (it == row_of.end())
        throw IntegrityError("train: no features for labeled edge " + le.key.source + " -> " + le.key.target +
                             " in " + prog);
      ds.x.append_row(table.row(it->second));
      ds.y.push_back(le.label == Label::retain ? 1 : 0);
    }
  }
  return ds;
}

inline TrainResult train_model(const Dataset& ds, const TrainConfig& tc, const std::string& kind) {
  if (kind == "random") {
    TrainResult r;
    r.model = PrunerModel::random_baseline(ds.x.cols, tc.seed);
    return r;
  }
  return train(ds, tc);
}

inline void run_train(const ExperimentConfig& cfg, const LogSink& log = {}) {
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto features = verify_stage(cfg.out, "features");
  const auto family = recorded_family(features);
  require_upstream_is(features, ingest);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto ds = build_dataset(cfg.out, manifest.train_programs(), family);
  if (ds.size() == 0) throw UsageError("train: no training edges");

  auto result = train_model(ds, cfg.train, cfg.model_kind);
  for (const auto& w : result.warnings)
    if (log) log(LogLevel::warn, "train: " + w);
  StageWriter out(cfg.out, "train");
  Json extra{{"feature_family", to_string(family)}, {"config", to_json(cfg.train)}};
  out.write("model.json", model_to_json(result.model, extra).dump(1) + "\n");
  out.write("train_log.csv", training_log_csv(result.log));
  if (log && !result.log.empty())
    log(LogLevel::info, "trained on " + std::to_string(ds.size()) + " edges; final mean loss " +
                            format_double(result.log.back().mean_loss));
  Json config{{"model_kind", cfg.model_kind}, {"train", to_json(cfg.train)}, {"family", to_string(family)}};
  out.finish(config, {{"ingest", ingest.config_hash}, {"features", features.config_hash}});
}

inline PrunerModel load_model(const fs::path& path) { return model_from_json(Json::parse(read_file(path))); }

// ---------------------------------------------------------------------------
// prune

inline void run_prune(const ExperimentConfig& cfg, const LogSink& log = {}) {
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto features = verify_stage(cfg.out, "features");
  const auto family = recorded_family(features);
  const auto trained = verify_stage(cfg.out, "train");
  require_upstream_is(features, ingest);
  require_upstream_is(trained, features);
  require_upstream_is(trained, ingest);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto model = load_model(cfg.out / "train" / "model.json");
  const std::string model_ref = "train/model.json@" + trained.config_hash;

  StageWriter out(cfg.out, "prune");
  const auto tests = manifest.test_programs();
  std::vector<double> seconds(tests.size(), 0.0);
  std::vector<std::size_t> missing(tests.size(), 0);
  parallel_for(tests.size(), cfg.jobs, [&](std::size_t i) {
    const auto& prog = tests[i];
    const auto g = load_graph_file(cfg.out / "ingest" / "graphs" / (prog + ".static.json"));
    const auto table = load_features(cfg.out, prog, family);
    const auto t0 = std::chrono::steady_clock::now();
    const auto pruned = prune_graph(g, model, table, cfg.tau, cfg.decision_mode);
    seconds[i] = seconds_since(t0);
    missing[i] = pruned.missing_features;
    out.write(prog + ".json", to_json(pruned, model_ref).dump(1) + "\n");
    out.write(prog + ".probabilities.csv", probabilities_csv(g, pruned.p_retain));
  });
  Json timing = Json::object();
  for (std::size_t i = 0; i < tests.size(); ++i) {
    timing[tests[i]] = seconds[i];
    if (missing[i] > 0 && log)
      log(LogLevel::warn, tests[i] + ": " + std::to_string(missing[i]) + " edges had no features and were retained");
  }
  out.write("timing.json", timing.dump(2) + "\n", /*is_volatile=*/true);
  Json config{{"tau", cfg.tau}, {"decision_mode", to_string(cfg.decision_mode)}};
  out.finish(config, {{"ingest", ingest.config_hash}, {"features", features.config_hash}, {"train", trained.config_hash}});
}

// ---------------------------------------------------------------------------
// eval

inline void run_eval(const ExperimentConfig& cfg, const LogSink& log = {}) {
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto pruned_rec = verify_stage(cfg.out, "prune");
  require_upstream_is(pruned_rec, ingest);
  const auto trained = verify_stage(cfg.out, "train");
  require_upstream_is(pruned_rec, trained);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto tests = manifest.test_programs();
  if (tests.empty()) throw UsageError("eval: no test programs");

  std::vector<ProgramScore> pruned_scores(tests.size()), base_scores(tests.size());
  parallel_for(tests.size(), cfg.jobs, [&](std::size_t i) {
    const auto dyn = load_graph_file(cfg.out / "ingest" / "graphs" / (tests[i] + ".dynamic.json"));
    const auto base = load_graph_file(cfg.out / "ingest" / "graphs" / (tests[i] + ".static.json"));
    const auto pruned = load_graph_file(cfg.out / "prune" / (tests[i] + ".json"));
    pruned_scores[i] = evaluate_program(pruned, dyn);
    base_scores[i] = evaluate_program(base, dyn);
  });
  const double w1 = trained.config.at("train").at("w_retain").get<double>();
  const auto tau = pruned_rec.config.at("tau").get<double>();
  const auto pruned_report = macro_average(pruned_scores, Json{{"variant", "pruned"},
                                                               {"tau", tau},
                                                               {"w1", w1},
                                                               {"feature_family", trained.config.at("family")}});
  const auto base_report = macro_average(base_scores, Json{{"variant", "unpruned"}});

  StageWriter out(cfg.out, "eval");
  out.write("eval_report.json", to_json(pruned_report).dump(2) + "\n");
  out.write("eval_report.csv", to_csv(pruned_report));
  out.write("baseline_report.json", to_json(base_report).dump(2) + "\n");
  out.write("baseline_report.csv", to_csv(base_report));
  if (log)
    log(LogLevel::info, "pruned: P " + format_double(pruned_report.precision) + " R " +
                            format_double(pruned_report.recall) + " F1 " + format_double(pruned_report.f1) + " F2 " +
                            format_double(pruned_report.f2));
  out.finish(Json::object(), {{"ingest", ingest.config_hash}, {"prune", pruned_rec.config_hash}});
}

// ---------------------------------------------------------------------------
// sweep

inline GridReport run_sweep(const ExperimentConfig& cfg, const LogSink& log = {}) {
  cfg.validate();
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto features = verify_stage(cfg.out, "features");
  const auto family = recorded_family(features);
  require_upstream_is(features, ingest);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto ds = build_dataset(cfg.out, manifest.train_programs(), family);
  const auto tests = manifest.test_programs();
  if (tests.empty()) throw UsageError("sweep: no test programs");

  struct TestProgram {
    CallGraph graph;
    CallGraph dynamic;
    FeatureTable features;
  };
  std::vector<std::optional<TestProgram>> test_data(tests.size());
  parallel_for(tests.size(), cfg.jobs, [&](std::size_t i) {
    test_data[i].emplace(TestProgram{load_graph_file(cfg.out / "ingest" / "graphs" / (tests[i] + ".static.json")),
                                     load_graph_file(cfg.out / "ingest" / "graphs" / (tests[i] + ".dynamic.json")),
                                     load_features(cfg.out, tests[i], family)});
  });

  StageWriter out(cfg.out, "sweep");
  std::vector<GridCell> cells;
  for (double w1 : cfg.w1_grid) {
    TrainConfig tc = cfg.train;
    tc.w_retain = w1;
    const auto result = train_model(ds, tc, cfg.model_kind);
    out.write("models/w1_" + format_double(w1) + ".json",
              model_to_json(result.model, Json{{"feature_family", to_string(family)}, {"config", to_json(tc)}}).dump(1) + "\n");
    std::vector<std::vector<ProgramScore>> per_tau(cfg.tau_grid.size(), std::vector<ProgramScore>(tests.size()));
    parallel_for(tests.size(), cfg.jobs, [&](std::size_t i) {
      const auto& t = *test_data[i];
      const auto sweep = threshold_sweep(t.graph, result.model, t.features, cfg.tau_grid, cfg.decision_mode);
      for (std::size_t k = 0; k < cfg.tau_grid.size(); ++k) per_tau[k][i] = evaluate_program(sweep.graphs[k], t.dynamic);
    });
    for (std::size_t k = 0; k < cfg.tau_grid.size(); ++k) {
      const double tau = cfg.tau_grid[k];
      cells.push_back({w1, tau, macro_average(per_tau[k], Json{{"w1", w1}, {"tau", tau}, {"feature_family", to_string(family)}})});
    }
    if (log) log(LogLevel::info, "sweep: w1 " + format_double(w1) + " done");
  }
  auto grid = grid_report(std::move(cells));
  out.write("grid.csv", to_csv(grid));
  Json cells_json = Json::array();
  for (const auto& c : grid.cells) cells_json.push_back(to_json(c.report));
  out.write("grid.json", cells_json.dump(2) + "\n");
  Json config{{"w1_grid", cfg.w1_grid},
              {"tau_grid", cfg.tau_grid},
              {"decision_mode", to_string(cfg.decision_mode)},
              {"model_kind", cfg.model_kind},
              {"train", to_json(cfg.train)}};
  out.finish(config, {{"ingest", ingest.config_hash}, {"features", features.config_hash}});
  return grid;
}

// ---------------------------------------------------------------------------
// vuln

inline std::vector<VulnReport> run_vuln(const ExperimentConfig& cfg, const LogSink& log = {}) {
  cfg.vuln.validate();
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto pruned_rec = verify_stage(cfg.out, "prune");
  require_upstream_is(pruned_rec, ingest);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto tests = manifest.test_programs();
  const double tau = pruned_rec.config.at("tau").get<double>();

  // Timing runs stay sequential so measurements do not interfere.
  std::vector<VulnReport> reports;
  for (const auto& prog : tests) {
    const auto base = load_graph_file(cfg.out / "ingest" / "graphs" / (prog + ".static.json"));
    const auto pruned = load_graph_file(cfg.out / "prune" / (prog + ".json"));
    VulnConfig vc = cfg.vuln;
    vc.seed = cfg.vuln.seed ^ fnv1a64(prog);
    const auto vulns = mark_vulnerable(base, vc);
    // The pruned file re-declares the same node list, so indices carry over.
    auto r0 = timed_analysis(base, vulns, vc);
    r0.variant = "unpruned";
    auto r1 = timed_analysis(pruned, vulns, vc);
    r1.variant = "pruned";
    r1.tau = tau;
    reports.push_back(r0);
    reports.push_back(r1);
    if (log)
      log(LogLevel::info, prog + ": reachable vulnerable nodes " + format_double(r0.reachable_node_fraction) + " -> " +
                              format_double(r1.reachable_node_fraction));
  }
  StageWriter out(cfg.out, "vuln");
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  out.write("vuln_report.json", arr.dump(2) + "\n", /*is_volatile=*/true);
  out.write("vuln_summary.csv", vuln_summary_csv(reports), /*is_volatile=*/true);
  Json config{{"k", cfg.vuln.k}, {"seed", cfg.vuln.seed}, {"warmup_runs", cfg.vuln.warmup_runs},
              {"measured_runs", cfg.vuln.measured_runs}};
  out.finish(config, {{"ingest", ingest.config_hash}, {"prune", pruned_rec.config_hash}});
  return reports;
}

// ---------------------------------------------------------------------------
// report

inline RuntimeReport run_report(const ExperimentConfig& cfg, const LogSink& log = {}) {
  const auto ingest = verify_stage(cfg.out, "ingest");
  const auto features = verify_stage(cfg.out, "features");
  const auto pruned_rec = verify_stage(cfg.out, "prune");
  require_upstream_is(pruned_rec, features);
  const auto manifest = load_ingest_manifest(cfg.out);
  const auto feat_t = Json::parse(read_file(cfg.out / "features" / "timing.json"));
  const auto infer_t = Json::parse(read_file(cfg.out / "prune" / "timing.json"));

  std::vector<ProgramTiming> timings;
  for (const auto& prog : manifest.test_programs()) {
    const auto g = load_graph_file(cfg.out / "ingest" / "graphs" / (prog + ".static.json"));
    ProgramTiming t;
    t.program = prog;
    t.generation_s = g.generation_time_s().value_or(0.0);
    t.feature_s = feat_t.value(prog, 0.0);
    t.inference_s = infer_t.value(prog, 0.0);
    timings.push_back(t);
  }
  const auto rt = runtime_report(std::move(timings));

  Json summary;
  Json datasets = Json::array();
  for (const auto& d : manifest.datasets)
    datasets.push_back({{"name", d.name},
                        {"train_edges", [&] {
                           std::size_t n = 0;
                           for (const auto& p : d.train_programs) n += d.counts.at(p).labeled_edges;
                           return n;
                         }()},
                        {"test_edges", [&] {
                           std::size_t n = 0;
                           for (const auto& p : d.test_programs) n += d.counts.at(p).labeled_edges;
                           return n;
                         }()},
                        {"pr_ratio", d.pr_ratio}});
  summary["datasets"] = std::move(datasets);
  summary["combined_pr_ratio"] = manifest.combined.pr_ratio;
  std::map<std::string, std::string> upstream{{"ingest", ingest.config_hash}, {"prune", pruned_rec.config_hash}};
  if (fs::exists(cfg.out / "eval" / "run.json")) {
    const auto ev = verify_stage(cfg.out, "eval");
    require_upstream_is(ev, pruned_rec);
    upstream["eval"] = ev.config_hash;
    summary["pruned"] = Json::parse(read_file(cfg.out / "eval" / "eval_report.json")).at("macro");
    summary["unpruned"] = Json::parse(read_file(cfg.out / "eval" / "baseline_report.json")).at("macro");
  }
  if (fs::exists(cfg.out / "sweep" / "run.json")) {
    const auto sw = verify_stage(cfg.out, "sweep");
    require_same_upstream(sw, pruned_rec, "features");
    upstream["sweep"] = sw.config_hash;
  }

  StageWriter out(cfg.out, "report");
  out.write("runtime.csv", to_csv(rt), /*is_volatile=*/true);
  out.write("summary.json", summary.dump(2) + "\n");
  if (log) log(LogLevel::info, "total time per program " + format_mean_std(rt.total, 3) + " s");
  out.finish(Json::object(), upstream);
  return rt;
}

}  // namespace cgprune
