#pragma once

#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cgprune/cgprune.hpp"

namespace cgtest {

using namespace cgprune;

struct EdgeSpec {
  std::string source;
  std::string target;
  std::uint64_t offset = 0;
};

// Nodes are collected from the edge list (plus `extra_nodes`) in first-seen
// order. Uris starting with "app/" are application scope.
inline CallGraph make_graph(const std::vector<EdgeSpec>& edges, GraphKind kind = GraphKind::static_0cfa,
                            std::string program = "p", const std::vector<std::string>& extra_nodes = {}) {
  std::vector<MethodId> nodes;
  std::unordered_map<std::string, NodeIndex> index;
  auto add = [&](const std::string& uri) {
    auto [it, fresh] = index.emplace(uri, static_cast<NodeIndex>(nodes.size()));
    if (fresh) nodes.push_back({uri, uri.starts_with("app/") ? Scope::application : Scope::dependency});
    return it->second;
  };
  std::vector<CallEdge> es;
  for (const auto& e : edges) {
    const auto s = add(e.source);
    const auto t = add(e.target);
    es.push_back({s, t, e.offset});
  }
  for (const auto& u : extra_nodes) add(u);
  return CallGraph(std::move(program), kind, std::move(nodes), std::move(es));
}

inline std::string node_name(std::size_t i, bool app) {
  return std::string(app ? "app/C" : "lib/D") + std::to_string(i) + ".m" + std::to_string(i) + "()V";
}

// Random multigraph over n nodes with up to m edges (duplicates dropped).
// Roughly `app_fraction` of the nodes are application scope.
inline CallGraph random_graph(Rng& rng, std::size_t n, std::size_t m, double app_fraction = 0.3,
                              std::string program = "rand", std::uint64_t max_offset = 3) {
  std::vector<MethodId> nodes;
  for (std::size_t i = 0; i < n; ++i) {
    const bool app = uniform_unit(rng) < app_fraction;
    nodes.push_back({node_name(i, app), app ? Scope::application : Scope::dependency});
  }
  std::vector<CallEdge> edges;
  std::unordered_set<CallEdge, CallEdgeHash> seen;
  for (std::size_t k = 0; k < m; ++k) {
    CallEdge e{static_cast<NodeIndex>(uniform_index(rng, n)), static_cast<NodeIndex>(uniform_index(rng, n)),
               uniform_index(rng, max_offset + 1)};
    if (seen.insert(e).second) edges.push_back(e);
  }
  return CallGraph(std::move(program), GraphKind::static_0cfa, std::move(nodes), std::move(edges));
}

// Dynamic graph over the same nodes holding a random subset of g's edges
// (offsets zeroed, as a trace would record them).
inline CallGraph random_dynamic(Rng& rng, const CallGraph& g, double keep) {
  std::vector<CallEdge> edges;
  std::unordered_set<CallEdge, CallEdgeHash> seen;
  for (const auto& e : g.edges()) {
    if (uniform_unit(rng) >= keep) continue;
    CallEdge d{e.source, e.target, 0};
    if (seen.insert(d).second) edges.push_back(d);
  }
  return CallGraph(g.program_id(), GraphKind::dynamic, std::vector<MethodId>(g.nodes().begin(), g.nodes().end()),
                   std::move(edges));
}

// Empty scratch directory under $CGPRUNE_TMP (or the system temp dir).
inline fs::path fresh_dir(const std::string& name) {
  const char* env = std::getenv("CGPRUNE_TMP");
  const fs::path root = env ? fs::path(env) : fs::temp_directory_path() / "cgprune-tests";
  const auto dir = root / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small, fast experiment: synthetic corpus in <dir>/corpus, artifacts in <dir>/out.
inline ExperimentConfig small_experiment(const fs::path& dir, std::uint64_t seed = 1) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.out = dir / "out";
  cfg.synth.programs = 6;
  cfg.synth.nodes = 120;
  cfg.synth.signal_strength = 0.8;
  cfg.train.learning_rate = 0.01;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 32;
  cfg.train.warmup_steps = 10;
  cfg.tau = 0.5;
  cfg.vuln.k = 10;
  cfg.vuln.warmup_runs = 0;
  cfg.vuln.measured_runs = 1;
  cfg.inputs = {dir / "corpus" / cfg.synth.dataset};
  cfg.apply_seed();
  return cfg;
}

inline void run_pipeline(const ExperimentConfig& cfg, bool with_sweep = true) {
  run_gen_synth(cfg.synth, cfg.inputs.front());
  run_ingest(cfg);
  run_features(cfg);
  run_train(cfg);
  run_prune(cfg);
  run_eval(cfg);
  if (with_sweep) run_sweep(cfg);
  run_vuln(cfg);
  run_report(cfg);
}

// Relative path -> bytes for every file under `root` that no run.json lists
// as volatile.
inline std::map<std::string, std::string> deterministic_files(const fs::path& root) {
  std::set<std::string> skip;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().filename() != "run.json") continue;
    const auto run = Json::parse(read_file(e.path()));
    for (const auto& v : run.at("volatile_outputs"))
      skip.insert(fs::relative(e.path().parent_path() / v.get<std::string>(), root).string());
  }
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (!skip.contains(rel)) out[rel] = read_file(e.path());
  }
  return out;
}

}  // namespace cgtest
