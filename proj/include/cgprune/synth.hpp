#pragma once

// Synthetic corpus with planted ground truth. Each program is a static call
// graph plus a dynamic graph containing its true edges (and, optionally, a
// few true edges the static graph missed).
//
// Every non-stdlib node v carries a latent liveness u_v in [0, 1) which fixes
// its out-degree (1 + floor(u_v * max_out_degree)). Edge labels are drawn
// first with exact counts for the requested prune/retain ratio; then a
// retain edge picks its callee with weight exp(+beta u) and a prune edge with
// weight exp(-beta u), beta = signal_strength * kMaxSignalBeta. With signal 0
// labels are independent of structure; with signal 1 the callee's degree
// separates the classes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/features.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/random.hpp"

namespace cgprune {

inline constexpr double kMaxSignalBeta = 30.0;

struct SynthConfig {
  std::string dataset = "synth";
  std::size_t programs = 12;
  std::size_t nodes = 300;          // application + dependency nodes per program
  double imbalance = 10.0;          // target prune/retain ratio, >= 1
  double signal_strength = 1.0;     // in [0, 1]
  double missed_rate = 0.05;        // share of dynamic edges absent from the static graph
  double app_fraction = 0.3;
  double stdlib_fraction = 0.05;    // stdlib nodes relative to `nodes`
  std::size_t max_out_degree = 8;
  std::size_t embedding_dim = 0;    // > 0 also emits per-edge embedding vectors
  std::uint64_t seed = 0;

  void validate() const {
    if (programs == 0) throw UsageError("synth: programs must be positive");
    if (nodes < 4) throw UsageError("synth: need at least 4 nodes per program");
    if (!(imbalance >= 1.0)) throw UsageError("synth: imbalance must be >= 1");
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) throw UsageError("synth: signal_strength must lie in [0, 1]");
    if (!(missed_rate >= 0.0 && missed_rate < 1.0)) throw UsageError("synth: missed_rate must lie in [0, 1)");
    if (!(app_fraction > 0.0 && app_fraction < 1.0)) throw UsageError("synth: app_fraction must lie in (0, 1)");
    if (!(stdlib_fraction >= 0.0)) throw UsageError("synth: stdlib_fraction must be non-negative");
    if (max_out_degree == 0) throw UsageError("synth: max_out_degree must be positive");
  }
};

inline Json to_json(const SynthConfig& c) {
  return Json{{"dataset", c.dataset},
              {"programs", c.programs},
              {"nodes", c.nodes},
              {"imbalance", c.imbalance},
              {"signal_strength", c.signal_strength},
              {"missed_rate", c.missed_rate},
              {"app_fraction", c.app_fraction},
              {"stdlib_fraction", c.stdlib_fraction},
              {"max_out_degree", c.max_out_degree},
              {"embedding_dim", c.embedding_dim},
              {"seed", c.seed}};
}

struct SynthProgram {
  CallGraph static_graph;
  CallGraph dynamic_graph;
  EmbeddingTable embeddings;  // empty unless embedding_dim > 0
};

namespace detail {

// Weighted sampling by binary search over a cumulative table.
class WeightedPicker {
 public:
  explicit WeightedPicker(std::vector<double> weights) : cumulative_(std::move(weights)) {
    for (std::size_t i = 1; i < cumulative_.size(); ++i) cumulative_[i] += cumulative_[i - 1];
  }
  std::size_t pick(Rng& rng) const {
    const double r = uniform_unit(rng) * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

inline std::string synth_program_name(const std::string& dataset, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return dataset + "-p" + buf;
}

}  // namespace detail

inline SynthProgram generate_program(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::string program = detail::synth_program_name(cfg.dataset, index);
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + fnv1a64(program));

  const std::size_t n_app = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.nodes * cfg.app_fraction)));
  const std::size_t n_core = cfg.nodes;
  const std::size_t n_std = static_cast<std::size_t>(std::llround(cfg.nodes * cfg.stdlib_fraction));

  static const char* kStdPackages[] = {"java/util/", "javax/swing/", "sun/misc/", "com/sun/net/", "jdk/internal/"};
  std::vector<MethodId> nodes;
  nodes.reserve(n_core + n_std);
  for (std::size_t i = 0; i < n_core; ++i) {
    const bool app = i < n_app;
    const std::size_t j = app ? i : i - n_app;
    std::string uri = app ? "org/acme/" + program + "/service/Service" : "com/thirdparty/core/Helper";
    uri += std::to_string(j / 4);
    uri += app ? ".handleRequest" : ".applyValue";
    uri += std::to_string(j % 4);
    uri += app ? "(Ljava/lang/String;I)V" : "(Ljava/lang/Object;)Z";
    nodes.push_back({std::move(uri), app ? Scope::application : Scope::dependency});
  }
  for (std::size_t s = 0; s < n_std; ++s) {
    std::string uri = std::string(kStdPackages[s % 5]) + "Runtime" + std::to_string(s) + ".invoke()V";
    nodes.push_back({std::move(uri), Scope::dependency});
  }

  std::vector<double> liveness(n_core);
  for (auto& u : liveness) u = uniform_unit(rng);
  std::vector<std::size_t> out_degree(n_core);
  std::size_t total = 0;
  for (std::size_t v = 0; v < n_core; ++v) {
    out_degree[v] = std::min(cfg.max_out_degree, 1 + static_cast<std::size_t>(liveness[v] * cfg.max_out_degree));
    out_degree[v] = std::min(out_degree[v], n_core - 1);
    total += out_degree[v];
  }

  const auto retain_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(total) / (1.0 + cfg.imbalance))));
  std::vector<char> labels(total, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(retain_count, total)), 1);
  shuffle(labels, rng);

  const double beta = cfg.signal_strength * kMaxSignalBeta;
  std::vector<double> w_true(n_core), w_false(n_core);
  for (std::size_t v = 0; v < n_core; ++v) {
    w_true[v] = std::exp(beta * (liveness[v] - 1.0));
    w_false[v] = std::exp(-beta * liveness[v]);
  }
  const detail::WeightedPicker pick_true(w_true), pick_false(w_false);

  std::vector<CallEdge> static_edges, dynamic_edges;
  std::unordered_set<std::uint64_t> pairs;
  auto pair_id = [](std::size_t s, std::size_t t) { return (static_cast<std::uint64_t>(s) << 32) | t; };
  std::size_t next_label = 0;
  for (std::size_t v = 0; v < n_core; ++v) {
    std::uint64_t site = 0;
    for (std::size_t k = 0; k < out_degree[v]; ++k) {
      const bool is_true = labels[next_label++] != 0;
      const auto& picker = is_true ? pick_true : pick_false;
      std::size_t t = v;
      for (int attempt = 0; attempt < 64 && (t == v || pairs.contains(pair_id(v, t))); ++attempt) t = picker.pick(rng);
      while (t == v || pairs.contains(pair_id(v, t))) t = static_cast<std::size_t>(uniform_index(rng, n_core));
      pairs.insert(pair_id(v, t));
      // Roughly one call site in three is polymorphic and shares its offset.
      if (k > 0 && uniform_unit(rng) >= 0.35) ++site;
      const CallEdge e{static_cast<NodeIndex>(v), static_cast<NodeIndex>(t), site};
      static_edges.push_back(e);
      if (is_true) dynamic_edges.push_back(e);
    }
  }

  // True edges the static analysis missed.
  const auto missed = static_cast<std::size_t>(
      std::llround(static_cast<double>(dynamic_edges.size()) * cfg.missed_rate / (1.0 - cfg.missed_rate)));
  for (std::size_t m = 0; m < missed; ++m) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const auto s = static_cast<std::size_t>(uniform_index(rng, n_core));
      const auto t = static_cast<std::size_t>(uniform_index(rng, n_core));
      if (s == t || pairs.contains(pair_id(s, t))) continue;
      pairs.insert(pair_id(s, t));
      dynamic_edges.push_back({static_cast<NodeIndex>(s), static_cast<NodeIndex>(t), 0});
      break;
    }
  }

  // Edges into and out of the standard library; all of them are filtered
  // before labeling, half of them also show up at run time.
  const std::size_t n_std_edges = n_std == 0 ? 0 : std::max<std::size_t>(1, total / 20);
  for (std::size_t i = 0; i < n_std_edges; ++i) {
    const auto core = static_cast<NodeIndex>(uniform_index(rng, n_core));
    const auto lib = static_cast<NodeIndex>(n_core + uniform_index(rng, n_std));
    const bool outward = uniform_unit(rng) < 0.7;
    const CallEdge e{outward ? core : lib, outward ? lib : core, 1000 + i};
    static_edges.push_back(e);
    if (i % 2 == 0) dynamic_edges.push_back(e);
  }

  const double gen_time = 0.5 + 0.002 * static_cast<double>(static_edges.size());
  SynthProgram out{CallGraph(program, GraphKind::static_0cfa, nodes, static_edges, gen_time),
                   CallGraph(program, GraphKind::dynamic, nodes, dynamic_edges), {}};

  if (cfg.embedding_dim > 0) {
    // Stand-in encoder output: noise plus the callee's liveness in column 0.
    out.embeddings.dim = cfg.embedding_dim;
    for (const auto& e : out.static_graph.edges()) {
      if (e.source >= n_core || e.target >= n_core) continue;
      std::vector<double> v(cfg.embedding_dim);
      for (auto& x : v) x = 0.1 * standard_normal(rng);
      v[0] += liveness[e.target];
      out.embeddings.vectors.emplace(out.static_graph.key(e), std::move(v));
    }
  }
  return out;
}

inline std::vector<SynthProgram> generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthProgram> out;
  out.reserve(cfg.programs);
  for (std::size_t i = 0; i < cfg.programs; ++i) out.push_back(generate_program(cfg, i));
  return out;
}

inline std::string embeddings_jsonl(const CallGraph& g, const EmbeddingTable& table) {
  std::string out;
  for (const auto& e : g.edges()) {
    const auto key = g.key(e);
    const auto* v = table.find(key);
    if (!v) continue;
    Json j{{"source", key.source}, {"target", key.target}, {"offset", key.offset}, {"vector", *v}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace cgprune
