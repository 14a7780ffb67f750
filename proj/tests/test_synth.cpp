#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace cgprune;

namespace {

LabelCounts corpus_counts(const SynthConfig& cfg) {
  LabelCounts c;
  for (const auto& p : generate_corpus(cfg)) {
    const auto filtered = filter_stdlib_edges(p.static_graph);
    c += count_labels(label_edges(filtered, p.dynamic_graph));
  }
  return c;
}

}  // namespace

TEST(Synth, RealizedImbalance) {
  SynthConfig cfg;
  cfg.programs = 6;
  cfg.imbalance = 18.7;
  EXPECT_NEAR(pr_ratio(corpus_counts(cfg)), 18.7, 18.7 * 0.05);
  cfg.imbalance = 1.0;
  EXPECT_NEAR(pr_ratio(corpus_counts(cfg)), 1.0, 0.05);
}

TEST(Synth, DynamicIsSubgraphWithoutMisses) {
  SynthConfig cfg;
  cfg.programs = 3;
  cfg.missed_rate = 0.0;
  for (const auto& p : generate_corpus(cfg)) {
    const auto s = p.static_graph.pair_set();
    for (const auto& pair : p.dynamic_graph.pair_set()) EXPECT_TRUE(s.contains(pair));
  }
}

TEST(Synth, MissedEdgesAreDynamicOnly) {
  SynthConfig cfg;
  cfg.programs = 2;
  cfg.missed_rate = 0.2;
  for (const auto& p : generate_corpus(cfg)) {
    const auto s = p.static_graph.pair_set();
    std::size_t missing = 0;
    for (const auto& pair : p.dynamic_graph.pair_set()) missing += s.contains(pair) ? 0 : 1;
    EXPECT_GT(missing, 0u);
  }
}

TEST(Synth, Deterministic) {
  SynthConfig cfg;
  cfg.programs = 2;
  cfg.embedding_dim = 4;
  cfg.seed = 77;
  const auto a = generate_corpus(cfg), b = generate_corpus(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(to_json(a[i].static_graph).dump(), to_json(b[i].static_graph).dump());
    EXPECT_EQ(to_json(a[i].dynamic_graph).dump(), to_json(b[i].dynamic_graph).dump());
    EXPECT_EQ(embeddings_jsonl(a[i].static_graph, a[i].embeddings),
              embeddings_jsonl(b[i].static_graph, b[i].embeddings));
  }
  cfg.seed = 78;
  EXPECT_NE(to_json(generate_program(cfg, 0).static_graph).dump(), to_json(a[0].static_graph).dump());
}

TEST(Synth, StdlibEdgesAreFiltered) {
  SynthConfig cfg;
  cfg.programs = 1;
  const auto p = generate_program(cfg, 0);
  const auto f = filter_stdlib_edges(p.static_graph);
  EXPECT_LT(f.num_edges(), p.static_graph.num_edges());
  const auto prefixes = default_stdlib_prefixes();
  for (const auto& e : f.edges()) {
    EXPECT_FALSE(has_any_prefix(f.uri(e.source), prefixes));
    EXPECT_FALSE(has_any_prefix(f.uri(e.target), prefixes));
  }
}

TEST(Synth, EmbeddingsCoverCoreEdges) {
  SynthConfig cfg;
  cfg.programs = 1;
  cfg.embedding_dim = 8;
  const auto p = generate_program(cfg, 0);
  const auto f = filter_stdlib_edges(p.static_graph);
  EXPECT_EQ(p.embeddings.dim, 8u);
  for (const auto& e : f.edges()) {
    const auto* v = p.embeddings.find(f.key(e));
    ASSERT_NE(v, nullptr);
    EXPECT_EQ(v->size(), 8u);
  }
}

// Stronger signal separates the callee's in-degree between the classes.
TEST(Synth, SignalSeparatesClasses) {
  auto gap = [](double signal) {
    SynthConfig cfg;
    cfg.programs = 3;
    cfg.imbalance = 3;
    cfg.signal_strength = signal;
    double in_retain = 0, in_prune = 0;
    std::size_t n_retain = 0, n_prune = 0;
    for (const auto& p : generate_corpus(cfg)) {
      const auto g = filter_stdlib_edges(p.static_graph);
      std::vector<std::size_t> indeg(g.num_nodes(), 0);
      for (const auto& e : g.edges()) ++indeg[e.target];
      const auto labels = label_edges(g, p.dynamic_graph);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = static_cast<double>(indeg[g.edges()[i].target]);
        if (labels[i].label == Label::retain) in_retain += d, ++n_retain;
        else in_prune += d, ++n_prune;
      }
    }
    return std::abs(in_retain / double(n_retain) - in_prune / double(n_prune));
  };
  EXPECT_GT(gap(1.0), gap(0.0) + 1.0);
}

TEST(Synth, Validation) {
  SynthConfig cfg;
  cfg.imbalance = 0.5;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.signal_strength = 1.5;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.missed_rate = 1.0;
  EXPECT_THROW(cfg.validate(), UsageError);
}
