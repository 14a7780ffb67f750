// Trains a structural-feature classifier on a few synthetic programs and
// prunes a held-out one at several thresholds.

#include <cstdio>

#include "cgprune/cgprune.hpp"

using namespace cgprune;

int main() {
  SynthConfig sc;
  sc.programs = 6;
  sc.imbalance = 10;
  sc.signal_strength = 1.0;
  sc.seed = 7;
  const auto corpus = generate_corpus(sc);

  Dataset train_set;
  for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
    const auto& p = corpus[i];
    const auto table = compute_features(p.static_graph, {});
    for (std::size_t r = 0; r < table.keys.size(); ++r) {
      if (train_set.x.cols == 0) train_set.x = Matrix(0, table.dim());
      train_set.x.append_row(table.row(r));
      const auto e = p.dynamic_graph.find_edge(table.keys[r]);
      train_set.y.push_back(e ? 1 : 0);
    }
  }

  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.epochs = 5;
  tc.batch_size = 32;
  tc.warmup_steps = 10;
  const auto result = train(train_set, tc);
  std::printf("trained on %zu edges, final loss %.4f\n", train_set.size(), result.log.back().mean_loss);

  const auto& held_out = corpus.back();
  const auto table = compute_features(held_out.static_graph, {});
  const std::vector<double> taus = {0.5, 0.7, 0.9, 0.95};
  const auto sweep = threshold_sweep(held_out.static_graph, result.model, table, taus);
  const auto base = evaluate_program(held_out.static_graph, held_out.dynamic_graph);
  std::printf("%-10s %6s %6s %6s %6s %6s\n", "variant", "edges", "P", "R", "F1", "F2");
  std::printf("%-10s %6zu %6.3f %6.3f %6.3f %6.3f\n", "unpruned", held_out.static_graph.num_edges(), base.precision,
              base.recall, base.f1, base.f2);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const auto s = evaluate_program(sweep.graphs[i], held_out.dynamic_graph);
    std::printf("tau=%-6.2f %6zu %6.3f %6.3f %6.3f %6.3f\n", taus[i], sweep.graphs[i].graph.num_edges(), s.precision,
                s.recall, s.f1, s.f2);
  }
}
