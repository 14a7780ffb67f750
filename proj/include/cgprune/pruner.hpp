#pragma once

// Applies a trained model to a static call graph. An edge is pruned only when
// the model's prune-class probability exceeds the confidence threshold tau;
// raising tau therefore keeps a superset of edges.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/features.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/io.hpp"
#include "cgprune/learner.hpp"

namespace cgprune {

enum class Decision { retain, prune };

enum class DecisionMode {
  confidence,  // prune iff p_prune > tau (default)
  literal,     // retain iff p_retain > tau, the equation read literally
};

inline std::string_view to_string(DecisionMode m) {
  return m == DecisionMode::confidence ? "confidence" : "literal";
}

inline DecisionMode parse_decision_mode(std::string_view s) {
  if (s == "confidence") return DecisionMode::confidence;
  if (s == "literal") return DecisionMode::literal;
  throw UsageError("unknown decision mode '" + std::string(s) + "' (expected confidence|literal)");
}

// Ties keep the edge.
constexpr Decision decide(double p_retain, double tau, DecisionMode mode = DecisionMode::confidence) {
  if (mode == DecisionMode::literal) return p_retain > tau ? Decision::retain : Decision::prune;
  return (1.0 - p_retain) > tau ? Decision::prune : Decision::retain;
}

inline void validate_tau(double tau) {
  if (!(tau >= 0.5 && tau <= 1.0)) throw UsageError("tau must lie in [0.5, 1.0], got " + format_double(tau));
}

struct PruneConfig {
  double tau = 0.5;
  std::string model_ref;
  DecisionMode mode = DecisionMode::confidence;
  unsigned jobs = 1;
};

// p_retain per base edge (graph edge order); nullopt where no feature row
// exists for the edge.
struct EdgeScores {
  std::vector<std::optional<double>> p_retain;
  std::size_t predictions = 0;
  std::size_t missing = 0;
};

// Evaluates the model once per edge. Edges are sharded across `jobs` workers;
// results land at their edge position, so the outcome is independent of
// scheduling.
inline EdgeScores score_edges(const CallGraph& g, const PrunerModel& model, const FeatureTable& features,
                              unsigned jobs = 1) {
  std::unordered_map<EdgeKey, std::size_t, EdgeKeyHash> row_of;
  row_of.reserve(features.keys.size());
  for (std::size_t i = 0; i < features.keys.size(); ++i) row_of.emplace(features.keys[i], i);
  if (!features.keys.empty() && features.dim() != model.input_dim())
    throw UsageError("prune: feature dimension " + std::to_string(features.dim()) + " != model input_dim " +
                     std::to_string(model.input_dim()));

  const auto edges = g.edges();
  EdgeScores out;
  out.p_retain.assign(edges.size(), std::nullopt);
  std::vector<char> predicted(edges.size(), 0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto key = g.key(edges[i]);
      auto it = row_of.find(key);
      if (it == row_of.end()) continue;
      out.p_retain[i] = predict_edge(model, key, features.row(it->second));
      predicted[i] = 1;
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, edges.size() / 256))));
  if (jobs == 1) {
    work(0, edges.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (edges.size() + jobs - 1) / jobs;
    for (unsigned w = 0; w < jobs; ++w) {
      const std::size_t lo = w * chunk, hi = std::min(edges.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
  }
  for (char p : predicted) (p ? out.predictions : out.missing)++;
  return out;
}

struct PrunedGraph {
  CallGraph graph;  // kept edges over the base node set
  double tau = 0.5;
  DecisionMode mode = DecisionMode::confidence;
  std::vector<std::optional<double>> p_retain;  // aligned with the base graph's edges
  std::size_t base_edges = 0;
  std::size_t missing_features = 0;  // retained without a prediction

  std::size_t kept() const noexcept { return graph.num_edges(); }
  std::size_t pruned() const noexcept { return base_edges - graph.num_edges(); }
};

inline PrunedGraph apply_threshold(const CallGraph& g, const EdgeScores& scores, double tau,
                                   DecisionMode mode = DecisionMode::confidence) {
  if (mode == DecisionMode::confidence) validate_tau(tau);
  if (scores.p_retain.size() != g.num_edges()) throw UsageError("apply_threshold: scores do not match graph");
  std::vector<CallEdge> kept;
  kept.reserve(g.num_edges());
  std::size_t missing = 0;
  for (std::size_t i = 0; i < g.num_edges(); ++i) {
    const auto& p = scores.p_retain[i];
    if (!p) {
      ++missing;
      kept.push_back(g.edges()[i]);
    } else if (decide(*p, tau, mode) == Decision::retain) {
      kept.push_back(g.edges()[i]);
    }
  }
  return {g.with_edges(std::move(kept)), tau, mode, scores.p_retain, g.num_edges(), missing};
}

inline PrunedGraph prune_graph(const CallGraph& g, const PrunerModel& model, const FeatureTable& features,
                               double tau, DecisionMode mode = DecisionMode::confidence, unsigned jobs = 1) {
  return apply_threshold(g, score_edges(g, model, features, jobs), tau, mode);
}

struct SweepResult {
  std::vector<PrunedGraph> graphs;  // one per tau, same order as the input
  std::size_t predictions = 0;
};

// Scores every edge once and derives one pruned graph per threshold.
inline SweepResult threshold_sweep(const CallGraph& g, const PrunerModel& model, const FeatureTable& features,
                                   std::span<const double> taus, DecisionMode mode = DecisionMode::confidence,
                                   unsigned jobs = 1) {
  if (!std::is_sorted(taus.begin(), taus.end())) throw UsageError("threshold_sweep: taus must be ascending");
  const auto scores = score_edges(g, model, features, jobs);
  SweepResult out;
  out.predictions = scores.predictions;
  for (double tau : taus) out.graphs.push_back(apply_threshold(g, scores, tau, mode));
  return out;
}

inline Json to_json(const PrunedGraph& p, std::string_view model_ref) {
  Json base = to_json(p.graph);
  Json doc;
  for (auto it = base.begin(); it != base.end(); ++it) {
    doc[it.key()] = it.value();
    if (it.key() == "kind")
      doc["pruning"] = {{"tau", p.tau}, {"model", model_ref}, {"kept", p.kept()}, {"pruned", p.pruned()}};
  }
  return doc;
}

// source,target,offset,p_retain (empty p_retain where features were missing)
inline std::string probabilities_csv(const CallGraph& base, std::span<const std::optional<double>> p_retain) {
  std::string out = "source,target,offset,p_retain\n";
  for (std::size_t i = 0; i < base.num_edges(); ++i) {
    const auto& e = base.edges()[i];
    out += csv::escape(base.uri(e.source));
    out += ',';
    out += csv::escape(base.uri(e.target));
    out += ',';
    out += std::to_string(e.offset);
    out += ',';
    if (p_retain[i]) out += format_double(*p_retain[i]);
    out += '\n';
  }
  return out;
}

}  // namespace cgprune
