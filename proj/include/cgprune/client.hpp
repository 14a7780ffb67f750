#pragma once

// Vulnerability propagation over a call graph: a random set of dependency
// methods is marked vulnerable and every application method is searched
// (BFS) for the vulnerable methods it can reach.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/eval.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/random.hpp"

namespace cgprune {

struct VulnConfig {
  std::size_t k = 100;
  std::uint64_t seed = 0;
  std::size_t warmup_runs = 3;
  std::size_t measured_runs = 3;

  void validate() const {
    if (k == 0) throw UsageError("vuln k must be positive");
    if (measured_runs == 0) throw UsageError("vuln measured_runs must be positive");
  }
};

// Uniform k-subset of the dependency-scope nodes, ascending.
inline std::vector<NodeIndex> mark_vulnerable(const CallGraph& g, const VulnConfig& cfg) {
  cfg.validate();
  std::vector<NodeIndex> candidates;
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.nodes()[i].scope == Scope::dependency) candidates.push_back(static_cast<NodeIndex>(i));
  if (candidates.size() < cfg.k)
    throw UsageError("mark_vulnerable: program '" + g.program_id() + "' has only " +
                     std::to_string(candidates.size()) + " dependency nodes, need " + std::to_string(cfg.k));
  Rng rng(cfg.seed);
  std::vector<NodeIndex> out;
  out.reserve(cfg.k);
  for (auto i : sample_indices(candidates.size(), cfg.k, rng)) out.push_back(candidates[i]);
  return out;
}

struct Reachability {
  std::uint64_t reachable_paths = 0;  // (application node, vulnerable node) pairs
  double reachable_node_fraction = 0.0;
  std::size_t reached_vulnerabilities = 0;
};

// One BFS per application node. A vulnerable node counts as reached from a
// when it is reachable through zero or more edges.
inline Reachability reachability(const CallGraph& g, std::span<const NodeIndex> vulns) {
  const auto n = g.num_nodes();
  std::vector<char> is_vuln(n, 0);
  for (auto v : vulns) {
    if (v >= n) throw UsageError("reachability: vulnerable node outside the graph");
    is_vuln[v] = 1;
  }
  std::vector<std::size_t> start(n + 1, 0);
  for (const auto& e : g.edges()) ++start[e.source + 1];
  for (std::size_t i = 0; i < n; ++i) start[i + 1] += start[i];
  std::vector<NodeIndex> adj(g.num_edges());
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (const auto& e : g.edges()) adj[fill[e.source]++] = e.target;
  }

  Reachability r;
  std::vector<std::uint32_t> seen(n, 0);
  std::uint32_t stamp = 0;
  std::vector<char> reached(n, 0);
  std::vector<NodeIndex> queue;
  queue.reserve(n);
  for (NodeIndex a = 0; a < n; ++a) {
    if (g.nodes()[a].scope != Scope::application) continue;
    ++stamp;
    queue.clear();
    queue.push_back(a);
    seen[a] = stamp;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto v = queue[head];
      if (is_vuln[v]) {
        ++r.reachable_paths;
        reached[v] = 1;
      }
      for (std::size_t i = start[v]; i < start[v + 1]; ++i) {
        const auto w = adj[i];
        if (seen[w] != stamp) {
          seen[w] = stamp;
          queue.push_back(w);
        }
      }
    }
  }
  for (auto v : vulns) r.reached_vulnerabilities += reached[v] ? 1 : 0;
  if (!vulns.empty())
    r.reachable_node_fraction = static_cast<double>(r.reached_vulnerabilities) / static_cast<double>(vulns.size());
  return r;
}

struct CgSize {
  std::size_t edges = 0;
  std::size_t active_nodes = 0;  // nodes with at least one incident edge
};

inline CgSize cg_size_stats(const CallGraph& g) {
  std::vector<char> active(g.num_nodes(), 0);
  for (const auto& e : g.edges()) active[e.source] = active[e.target] = 1;
  CgSize s;
  s.edges = g.num_edges();
  for (char a : active) s.active_nodes += a ? 1 : 0;
  return s;
}

struct VulnReport {
  std::string program;
  std::optional<double> tau;  // nullopt for the unpruned graph
  std::string variant = "unpruned";
  std::size_t edges = 0;
  std::size_t active_nodes = 0;
  std::uint64_t reachable_paths = 0;
  double reachable_node_fraction = 0.0;
  double time_ms_mean = 0.0;
  double time_ms_std = 0.0;
};

// Runs the reachability analysis warmup_runs times unrecorded, then
// measured_runs times timed with a monotonic clock.
inline VulnReport timed_analysis(const CallGraph& g, std::span<const NodeIndex> vulns, const VulnConfig& cfg) {
  cfg.validate();
  VulnReport rep;
  rep.program = g.program_id();
  const auto size = cg_size_stats(g);
  rep.edges = size.edges;
  rep.active_nodes = size.active_nodes;

  Reachability result;
  for (std::size_t i = 0; i < cfg.warmup_runs; ++i) result = reachability(g, vulns);
  std::vector<double> ms;
  for (std::size_t i = 0; i < cfg.measured_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = reachability(g, vulns);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    if (i == 0 && cfg.warmup_runs == 0) result = r;
    else if (r.reachable_paths != result.reachable_paths || r.reached_vulnerabilities != result.reached_vulnerabilities)
      throw NumericError("timed_analysis: reachability result changed between runs");
  }
  rep.reachable_paths = result.reachable_paths;
  rep.reachable_node_fraction = result.reachable_node_fraction;
  const auto t = mean_std(ms);
  rep.time_ms_mean = t.mean;
  rep.time_ms_std = t.std;
  return rep;
}

inline Json to_json(const VulnReport& r) {
  Json j;
  j["program"] = r.program;
  j["variant"] = r.variant;
  j["tau"] = r.tau ? Json(*r.tau) : Json(nullptr);
  j["edges"] = r.edges;
  j["active_nodes"] = r.active_nodes;
  j["reachable_paths"] = r.reachable_paths;
  j["reachable_node_fraction"] = r.reachable_node_fraction;
  j["time_ms_mean"] = r.time_ms_mean;
  j["time_ms_std"] = r.time_ms_std;
  return j;
}

// One row per variant: mean edges, mean active nodes, mean reachable pairs,
// mean reachable fraction (percent) and time mean±std over programs.
inline std::string vuln_summary_csv(std::span<const VulnReport> reports) {
  std::vector<std::string> variants;
  for (const auto& r : reports)
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
  std::string out = "variant,edges,nodes,reachable_paths,reachable_nodes_pct,time_ms\n";
  for (const auto& v : variants) {
    std::vector<double> e, n, p, f, t;
    for (const auto& r : reports) {
      if (r.variant != v) continue;
      e.push_back(static_cast<double>(r.edges));
      n.push_back(static_cast<double>(r.active_nodes));
      p.push_back(static_cast<double>(r.reachable_paths));
      f.push_back(100.0 * r.reachable_node_fraction);
      t.push_back(r.time_ms_mean);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%.1f,%.1f", mean_std(e).mean, mean_std(n).mean, mean_std(p).mean,
                  mean_std(f).mean);
    out += csv::escape(v) + "," + buf + "," + format_mean_std(mean_std(t), 3) + "\n";
  }
  return out;
}

}  // namespace cgprune
