#pragma once

// Call-graph accuracy metrics against dynamic ground truth, macro averaging
// over programs, weight x threshold grids and runtime tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/io.hpp"
#include "cgprune/pruner.hpp"

namespace cgprune {

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
  bool precision_degenerate = false;  // E_S empty
  bool recall_degenerate = false;     // E_D empty
  std::size_t static_edges = 0;
  std::size_t dynamic_edges = 0;
  std::size_t intersection = 0;
};

inline PrecisionRecall precision_recall(const EdgePairSet& static_pairs, const EdgePairSet& dynamic_pairs) {
  PrecisionRecall pr;
  pr.static_edges = static_pairs.size();
  pr.dynamic_edges = dynamic_pairs.size();
  const auto& smaller = static_pairs.size() <= dynamic_pairs.size() ? static_pairs : dynamic_pairs;
  const auto& larger = static_pairs.size() <= dynamic_pairs.size() ? dynamic_pairs : static_pairs;
  for (const auto& p : smaller)
    if (larger.contains(p)) ++pr.intersection;
  const auto hit = static_cast<double>(pr.intersection);
  if (pr.static_edges == 0) pr.precision_degenerate = true;
  else pr.precision = hit / static_cast<double>(pr.static_edges);
  if (pr.dynamic_edges == 0) pr.recall_degenerate = true;
  else pr.recall = hit / static_cast<double>(pr.dynamic_edges);
  return pr;
}

// (1 + b^2) p r / (b^2 p + r), 0 when the denominator vanishes.
inline double f_beta(double p, double r, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * p + r;
  if (denom == 0.0) return 0.0;
  return (1.0 + b2) * p * r / denom;
}

struct ProgramScore {
  std::string program;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  std::size_t static_edges = 0;
  std::size_t dynamic_edges = 0;
  std::size_t intersection = 0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
};

inline ProgramScore evaluate_program(const CallGraph& candidate, const CallGraph& dynamic_g) {
  if (candidate.program_id() != dynamic_g.program_id())
    throw UsageError("evaluate_program: program mismatch ('" + candidate.program_id() + "' vs '" +
                     dynamic_g.program_id() + "')");
  const auto pr = precision_recall(candidate.pair_set(), dynamic_g.pair_set());
  ProgramScore s;
  s.program = candidate.program_id();
  s.precision = pr.precision;
  s.recall = pr.recall;
  s.f1 = f_beta(pr.precision, pr.recall, 1.0);
  s.f2 = f_beta(pr.precision, pr.recall, 2.0);
  s.static_edges = pr.static_edges;
  s.dynamic_edges = pr.dynamic_edges;
  s.intersection = pr.intersection;
  s.precision_degenerate = pr.precision_degenerate;
  s.recall_degenerate = pr.recall_degenerate;
  return s;
}

inline ProgramScore evaluate_program(const PrunedGraph& pruned, const CallGraph& dynamic_g) {
  return evaluate_program(pruned.graph, dynamic_g);
}

struct EvalReport {
  std::vector<ProgramScore> programs;  // sorted by program id
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  Json config = Json::object();  // echo: tau, w1, feature family, ...
};

// Unweighted means over programs; F scores are averaged per program rather
// than recomputed from the mean P and R.
inline EvalReport macro_average(std::vector<ProgramScore> scores, Json config = Json::object()) {
  if (scores.empty()) throw UsageError("macro_average: no program scores");
  std::sort(scores.begin(), scores.end(),
            [](const ProgramScore& a, const ProgramScore& b) { return a.program < b.program; });
  EvalReport r;
  const double n = static_cast<double>(scores.size());
  for (const auto& s : scores) {
    r.precision += s.precision;
    r.recall += s.recall;
    r.f1 += s.f1;
    r.f2 += s.f2;
  }
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  r.f2 /= n;
  r.programs = std::move(scores);
  r.config = std::move(config);
  return r;
}

inline Json to_json(const ProgramScore& s) {
  return Json{{"program", s.program},
              {"precision", s.precision},
              {"recall", s.recall},
              {"f1", s.f1},
              {"f2", s.f2},
              {"static_edges", s.static_edges},
              {"dynamic_edges", s.dynamic_edges},
              {"intersection", s.intersection},
              {"precision_degenerate", s.precision_degenerate},
              {"recall_degenerate", s.recall_degenerate}};
}

inline Json to_json(const EvalReport& r) {
  Json programs = Json::array();
  for (const auto& s : r.programs) programs.push_back(to_json(s));
  return Json{{"config", r.config},
              {"macro", {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"f2", r.f2}}},
              {"programs", std::move(programs)}};
}

inline std::string to_csv(const EvalReport& r) {
  std::string out = "program,precision,recall,f1,f2,static_edges,dynamic_edges,intersection\n";
  for (const auto& s : r.programs) {
    out += csv::join({s.program, format_double(s.precision), format_double(s.recall), format_double(s.f1),
                      format_double(s.f2), std::to_string(s.static_edges), std::to_string(s.dynamic_edges),
                      std::to_string(s.intersection)});
    out += '\n';
  }
  out += csv::join({"MACRO", format_double(r.precision), format_double(r.recall), format_double(r.f1),
                    format_double(r.f2), "", "", ""});
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Grid over (w1, tau)

struct GridCell {
  double w1 = 0.0;
  double tau = 0.0;
  EvalReport report;
};

struct GridReport {
  std::vector<GridCell> cells;  // row order as given
};

inline GridReport grid_report(std::vector<GridCell> cells) { return GridReport{std::move(cells)}; }

inline std::string to_csv(const GridReport& g) {
  std::string out = "w1,tau,P,R,F1,F2\n";
  for (const auto& c : g.cells) {
    out += csv::join({format_double(c.w1), format_double(c.tau), format_double(c.report.precision),
                      format_double(c.report.recall), format_double(c.report.f1), format_double(c.report.f2)});
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runtime accounting

struct ProgramTiming {
  std::string program;
  double generation_s = 0.0;  // reported by the external graph generator
  double feature_s = 0.0;
  double inference_s = 0.0;

  double total_s() const noexcept { return generation_s + feature_s + inference_s; }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

inline std::string format_mean_std(const MeanStd& m, int decimals = 1) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

struct RuntimeReport {
  std::vector<ProgramTiming> programs;
  MeanStd generation, feature, inference, total;
};

inline RuntimeReport runtime_report(std::vector<ProgramTiming> timings) {
  RuntimeReport r;
  std::vector<double> g, f, i, t;
  for (const auto& p : timings) {
    if (p.generation_s < 0 || p.feature_s < 0 || p.inference_s < 0)
      throw UsageError("runtime_report: negative timing for '" + p.program + "'");
    g.push_back(p.generation_s);
    f.push_back(p.feature_s);
    i.push_back(p.inference_s);
    t.push_back(p.total_s());
  }
  r.generation = mean_std(g);
  r.feature = mean_std(f);
  r.inference = mean_std(i);
  r.total = mean_std(t);
  r.programs = std::move(timings);
  return r;
}

inline std::string to_csv(const RuntimeReport& r) {
  std::string out = "program,gen_s,feat_s,infer_s,total_s\n";
  for (const auto& p : r.programs) {
    out += csv::join({p.program, format_double(p.generation_s), format_double(p.feature_s),
                      format_double(p.inference_s), format_double(p.total_s())});
    out += '\n';
  }
  out += csv::join({"MEAN±STD", format_mean_std(r.generation, 3), format_mean_std(r.feature, 3),
                    format_mean_std(r.inference, 3), format_mean_std(r.total, 3)});
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------

// Spearman rank correlation with average ranks for ties. Returns nullopt when
// either side is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const auto mx = mean_std(rx), my = mean_std(ry);
  if (mx.std == 0.0 || my.std == 0.0) return std::nullopt;
  double cov = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) cov += (rx[i] - mx.mean) * (ry[i] - my.mean);
  cov /= static_cast<double>(rx.size());
  return cov / (mx.std * my.std);
}

}  // namespace cgprune
