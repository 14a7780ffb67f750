#pragma once

// Per-edge feature vectors: structural (graph-derived), signature (hashed
// tokens of the two method uris), semantic (precomputed embeddings read from
// disk) and combined (structural followed by semantic).

#include <array>
#include <bit>
#include <charconv>
#include <limits>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/io.hpp"
#include "cgprune/matrix.hpp"

namespace cgprune {

inline constexpr std::size_t kStructuralDim = 11;
inline constexpr std::size_t kDefaultSemanticDim = 768;

using StructuralVector = std::array<double, kStructuralDim>;

inline constexpr std::array<std::string_view, kStructuralDim> kStructuralNames = {
    "src_out_degree", "src_in_degree",    "tgt_in_degree", "tgt_out_degree",
    "site_fanout",    "pair_offsets",     "tgt_depth",     "tgt_reachable",
    "log_nodes",      "log_edges",        "tgt_in_share"};

// Counts the work done per extracted edge, for checking that extraction is
// O(1) per edge once the index exists.
struct OpCounter {
  std::size_t edge_reads = 0;
  std::size_t table_lookups = 0;

  std::size_t total() const noexcept { return edge_reads + table_lookups; }
};

// Application-scope nodes, the default entry set for depth features.
inline std::vector<NodeIndex> application_nodes(const CallGraph& g) {
  std::vector<NodeIndex> out;
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    if (g.nodes()[i].scope == Scope::application) out.push_back(static_cast<NodeIndex>(i));
  return out;
}

// Per-graph tables backing the structural features. Built once in
// O(|V| + |E|) plus the reachability closure; the graph must outlive it.
class StructuralIndex {
 public:
  StructuralIndex(const CallGraph& g, std::span<const NodeIndex> entry_nodes) : g_(&g) {
    const auto n = g.num_nodes();
    out_degree_.assign(n, 0);
    in_degree_.assign(n, 0);
    for (const auto& e : g.edges()) {
      ++out_degree_[e.source];
      ++in_degree_[e.target];
      ++site_fanout_[site_key(e.source, e.offset)];
      ++pair_offsets_[pair_key(e.source, e.target)];
    }
    build_adjacency();
    compute_depth(entry_nodes);
    compute_reachable_counts();
  }

  const CallGraph& graph() const noexcept { return *g_; }

  StructuralVector extract(const CallEdge& e, OpCounter* ops = nullptr) const {
    if (!g_->contains(e)) throw UsageError("extract_structural: edge is not part of the graph");
    const double num_edges = static_cast<double>(g_->num_edges());
    StructuralVector f{};
    f[0] = out_degree_[e.source];
    f[1] = in_degree_[e.source];
    f[2] = in_degree_[e.target];
    f[3] = out_degree_[e.target];
    f[4] = site_fanout_.at(site_key(e.source, e.offset));
    f[5] = pair_offsets_.at(pair_key(e.source, e.target));
    f[6] = static_cast<double>(depth_[e.target]);
    f[7] = static_cast<double>(reachable_[e.target]);
    f[8] = std::log1p(static_cast<double>(g_->num_nodes()));
    f[9] = std::log1p(num_edges);
    f[10] = f[2] / num_edges;
    if (ops) {
      ops->edge_reads += 1;
      ops->table_lookups += 3;  // edge membership, site fanout, pair offsets
    }
    return f;
  }

  std::int64_t depth(NodeIndex v) const { return depth_.at(v); }
  std::uint64_t reachable_count(NodeIndex v) const { return reachable_.at(v); }

 private:
  static std::uint64_t site_key(NodeIndex s, std::uint64_t off) {
    return (static_cast<std::uint64_t>(s) << 32) ^ (off * 0x9e3779b97f4a7c15ULL);
  }
  static std::uint64_t pair_key(NodeIndex s, NodeIndex t) {
    return (static_cast<std::uint64_t>(s) << 32) | t;
  }

  void build_adjacency() {
    const auto n = g_->num_nodes();
    adj_start_.assign(n + 1, 0);
    for (const auto& e : g_->edges()) ++adj_start_[e.source + 1];
    for (std::size_t i = 0; i < n; ++i) adj_start_[i + 1] += adj_start_[i];
    adj_.resize(g_->num_edges());
    std::vector<std::size_t> fill(adj_start_.begin(), adj_start_.end() - 1);
    for (const auto& e : g_->edges()) adj_[fill[e.source]++] = e.target;
  }

  std::span<const NodeIndex> successors(NodeIndex v) const {
    return {adj_.data() + adj_start_[v], adj_start_[v + 1] - adj_start_[v]};
  }

  void compute_depth(std::span<const NodeIndex> entries) {
    depth_.assign(g_->num_nodes(), -1);
    std::deque<NodeIndex> queue;
    for (auto v : entries) {
      if (v >= g_->num_nodes()) throw UsageError("entry node outside the graph");
      if (depth_[v] < 0) {
        depth_[v] = 0;
        queue.push_back(v);
      }
    }
    while (!queue.empty()) {
      const auto v = queue.front();
      queue.pop_front();
      for (auto w : successors(v)) {
        if (depth_[w] < 0) {
          depth_[w] = depth_[v] + 1;
          queue.push_back(w);
        }
      }
    }
  }

  // Number of nodes reachable through one or more edges. Strongly connected
  // components are condensed (Tarjan, iterative) and closed in reverse
  // topological order with node bitsets; memory is O(#SCC * |V| / 8) bytes.
  void compute_reachable_counts() {
    const auto n = g_->num_nodes();
    constexpr std::uint32_t kUnvisited = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> index(n, kUnvisited), low(n, 0), comp(n, kUnvisited);
    std::vector<char> on_stack(n, 0);
    std::vector<NodeIndex> stack;
    std::vector<std::pair<NodeIndex, std::size_t>> call;
    std::vector<std::vector<NodeIndex>> members;
    std::uint32_t counter = 0;

    for (NodeIndex root = 0; root < n; ++root) {
      if (index[root] != kUnvisited) continue;
      call.push_back({root, 0});
      index[root] = low[root] = counter++;
      stack.push_back(root);
      on_stack[root] = 1;
      while (!call.empty()) {
        auto& [v, next] = call.back();
        auto succ = successors(v);
        if (next < succ.size()) {
          const auto w = succ[next++];
          if (index[w] == kUnvisited) {
            index[w] = low[w] = counter++;
            stack.push_back(w);
            on_stack[w] = 1;
            call.push_back({w, 0});
          } else if (on_stack[w]) {
            low[v] = std::min(low[v], index[w]);
          }
          continue;
        }
        if (low[v] == index[v]) {
          std::vector<NodeIndex> scc;
          NodeIndex w;
          do {
            w = stack.back();
            stack.pop_back();
            on_stack[w] = 0;
            comp[w] = static_cast<std::uint32_t>(members.size());
            scc.push_back(w);
          } while (w != v);
          members.push_back(std::move(scc));
        }
        const auto finished = v;
        call.pop_back();
        if (!call.empty()) {
          auto parent = call.back().first;
          low[parent] = std::min(low[parent], low[finished]);
        }
      }
    }

    // Components come out of Tarjan in reverse topological order.
    const std::size_t words = (n + 63) / 64;
    std::vector<std::uint64_t> reach(members.size() * words, 0);
    reachable_.assign(n, 0);
    for (std::size_t c = 0; c < members.size(); ++c) {
      std::uint64_t* rc = reach.data() + c * words;
      bool cyclic = members[c].size() > 1;
      for (auto v : members[c]) {
        for (auto w : successors(v)) {
          const auto d = comp[w];
          if (d == c) {
            cyclic = true;
            continue;
          }
          const std::uint64_t* rd = reach.data() + d * words;
          for (std::size_t i = 0; i < words; ++i) rc[i] |= rd[i];
          for (auto m : members[d]) rc[m / 64] |= std::uint64_t{1} << (m % 64);
        }
      }
      if (cyclic)
        for (auto m : members[c]) rc[m / 64] |= std::uint64_t{1} << (m % 64);
      std::uint64_t count = 0;
      for (std::size_t i = 0; i < words; ++i) count += static_cast<std::uint64_t>(std::popcount(rc[i]));
      for (auto v : members[c]) reachable_[v] = count;
    }
  }

  const CallGraph* g_;
  std::vector<std::uint32_t> out_degree_;
  std::vector<std::uint32_t> in_degree_;
  std::unordered_map<std::uint64_t, std::uint32_t> site_fanout_;
  std::unordered_map<std::uint64_t, std::uint32_t> pair_offsets_;
  std::vector<std::size_t> adj_start_;
  std::vector<NodeIndex> adj_;
  std::vector<std::int64_t> depth_;
  std::vector<std::uint64_t> reachable_;
};

// Convenience form that builds a throwaway index; prefer StructuralIndex when
// extracting more than one edge of a graph.
inline StructuralVector extract_structural(const CallGraph& g, const CallEdge& e,
                                           std::span<const NodeIndex> entry_nodes) {
  if (!g.contains(e)) throw UsageError("extract_structural: edge is not part of the graph");
  return StructuralIndex(g, entry_nodes).extract(e);
}

// ---------------------------------------------------------------------------
// Signature features

// Splits a method uri on "/ . ( ) ; , $ <space>" and then on camelCase
// boundaries: lower/digit -> Upper ("getName" -> get|Name) and the last
// capital of an acronym run before a lowercase letter ("HTMLParser" ->
// HTML|Parser).
inline std::vector<std::string> signature_tokens(std::string_view uri) {
  static constexpr std::string_view kDelims = "/.();,$ ";
  std::vector<std::string> tokens;
  auto flush_word = [&](std::string_view word) {
    std::size_t start = 0;
    auto upper = [](char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; };
    auto lower = [](char c) { return std::islower(static_cast<unsigned char>(c)) != 0; };
    auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    for (std::size_t i = 1; i < word.size(); ++i) {
      const bool boundary =
          upper(word[i]) && (lower(word[i - 1]) || digit(word[i - 1]) ||
                             (upper(word[i - 1]) && i + 1 < word.size() && lower(word[i + 1])));
      if (boundary) {
        tokens.emplace_back(word.substr(start, i - start));
        start = i;
      }
    }
    if (start < word.size()) tokens.emplace_back(word.substr(start));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i <= uri.size(); ++i) {
    if (i == uri.size() || kDelims.find(uri[i]) != std::string_view::npos) {
      if (i > start) flush_word(uri.substr(start, i - start));
      start = i + 1;
    }
  }
  return tokens;
}

inline constexpr std::string_view kCalleeSalt = "#tgt";

// Hashed bag of caller and callee tokens, L2-normalized. Callee tokens are
// salted so the two roles land in different buckets.
inline std::vector<double> signature_feature(std::string_view caller_uri, std::string_view callee_uri,
                                             std::size_t dim = kDefaultSemanticDim) {
  if (dim == 0) throw UsageError("signature_feature: dim must be positive");
  std::vector<double> v(dim, 0.0);
  for (const auto& t : signature_tokens(caller_uri)) v[fnv1a64(t) % dim] += 1.0;
  for (const auto& t : signature_tokens(callee_uri)) v[fnv1a64(kCalleeSalt, fnv1a64(t)) % dim] += 1.0;
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
  }
  return v;
}

inline std::vector<double> signature_feature(const EdgeKey& key, std::size_t dim = kDefaultSemanticDim) {
  return signature_feature(key.source, key.target, dim);
}

// ---------------------------------------------------------------------------
// Semantic embeddings (computed elsewhere, loaded here)

struct EmbeddingTable {
  std::size_t dim = 0;  // 0 while empty
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> vectors;

  std::size_t size() const noexcept { return vectors.size(); }
  const std::vector<double>* find(const EdgeKey& k) const {
    auto it = vectors.find(k);
    return it == vectors.end() ? nullptr : &it->second;
  }
};

// JSONL, one {"source","target","offset","vector":[...]} object per line.
inline EmbeddingTable load_semantic_embeddings(std::string_view document) {
  EmbeddingTable table;
  std::size_t line_no = 0;
  for (auto line : split_lines(document)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "embeddings line " + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    EdgeKey key;
    try {
      key.source = j.at("source").get<std::string>();
      key.target = j.at("target").get<std::string>();
      key.offset = j.at("offset").get<std::uint64_t>();
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    const auto it = j.find("vector");
    if (it == j.end() || !it->is_array()) throw FormatError(where + ": missing 'vector' array");
    std::vector<double> v;
    v.reserve(it->size());
    for (const auto& x : *it) {
      if (!x.is_number()) throw FormatError(where + ": non-numeric vector entry");
      const double d = x.get<double>();
      if (!std::isfinite(d)) throw FormatError(where + ": non-finite vector entry");
      v.push_back(d);
    }
    if (v.empty()) throw FormatError(where + ": empty vector");
    if (table.dim == 0) table.dim = v.size();
    else if (v.size() != table.dim)
      throw FormatError(where + ": vector length " + std::to_string(v.size()) + " differs from " +
                        std::to_string(table.dim));
    table.vectors.insert_or_assign(std::move(key), std::move(v));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Combination and prompts

inline std::vector<double> combine(std::span<const double> structural, std::span<const double> semantic) {
  std::vector<double> out;
  out.reserve(structural.size() + semantic.size());
  out.insert(out.end(), structural.begin(), structural.end());
  out.insert(out.end(), semantic.begin(), semantic.end());
  return out;
}

struct SemanticPrompt {
  std::string text;
};

// Input text for an external code embedder.
inline SemanticPrompt build_semantic_prompt(std::string_view caller_src, std::string_view callee_src) {
  SemanticPrompt p;
  p.text.reserve(caller_src.size() + callee_src.size() + 16);
  p.text += "[CLS]";
  p.text += caller_src;
  p.text += "[SEP]";
  p.text += callee_src;
  p.text += "[EOS]";
  return p;
}

// Without source code the uris stand in for it.
inline SemanticPrompt build_signature_prompt(const EdgeKey& key) {
  return build_semantic_prompt(key.source, key.target);
}

// ---------------------------------------------------------------------------
// Feature families over whole graphs

enum class FeatureFamily { structural, signature, semantic, combined };

inline std::string_view to_string(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::structural: return "struct";
    case FeatureFamily::signature: return "sig";
    case FeatureFamily::semantic: return "sem";
    case FeatureFamily::combined: return "comb";
  }
  return "?";
}

inline FeatureFamily parse_feature_family(std::string_view s) {
  if (s == "struct") return FeatureFamily::structural;
  if (s == "sig") return FeatureFamily::signature;
  if (s == "sem") return FeatureFamily::semantic;
  if (s == "comb") return FeatureFamily::combined;
  throw UsageError("unknown feature family '" + std::string(s) + "' (expected struct|sig|sem|comb)");
}

// Feature rows for every edge of one graph, in graph edge order.
struct FeatureTable {
  FeatureFamily family = FeatureFamily::structural;
  std::vector<EdgeKey> keys;
  std::vector<std::string> column_names;
  Matrix values;
  std::size_t fallbacks = 0;  // edges without an embedding that used the signature vector

  std::size_t dim() const noexcept { return values.cols; }
  std::span<const double> row(std::size_t i) const { return values.row(i); }
};

struct FeatureOptions {
  FeatureFamily family = FeatureFamily::structural;
  std::size_t semantic_dim = kDefaultSemanticDim;  // used for signature vectors when no embeddings
  const EmbeddingTable* embeddings = nullptr;
  std::optional<std::vector<NodeIndex>> entry_nodes;  // default: application-scope nodes
};

inline std::vector<std::string> feature_column_names(FeatureFamily family, std::size_t k_c) {
  std::vector<std::string> names;
  if (family == FeatureFamily::structural || family == FeatureFamily::combined)
    for (auto n : kStructuralNames) names.emplace_back(n);
  if (family != FeatureFamily::structural) {
    const std::string prefix = family == FeatureFamily::signature ? "sig_" : "sem_";
    for (std::size_t i = 0; i < k_c; ++i) names.push_back(prefix + std::to_string(i));
  }
  return names;
}

inline FeatureTable compute_features(const CallGraph& g, const FeatureOptions& opt) {
  std::size_t k_c = opt.semantic_dim;
  if (opt.embeddings && opt.embeddings->dim != 0) k_c = opt.embeddings->dim;
  const bool need_struct = opt.family == FeatureFamily::structural || opt.family == FeatureFamily::combined;

  FeatureTable table;
  table.family = opt.family;
  table.column_names = feature_column_names(opt.family, k_c);
  table.values = Matrix(0, table.column_names.size());
  table.values.data.reserve(g.num_edges() * table.values.cols);
  table.keys.reserve(g.num_edges());

  std::optional<StructuralIndex> index;
  if (need_struct) {
    const auto entries = opt.entry_nodes ? *opt.entry_nodes : application_nodes(g);
    index.emplace(g, entries);
  }

  std::vector<double> row;
  for (const auto& e : g.edges()) {
    auto key = g.key(e);
    row.clear();
    if (need_struct) {
      const auto s = index->extract(e);
      row.insert(row.end(), s.begin(), s.end());
    }
    if (opt.family == FeatureFamily::signature) {
      const auto sig = signature_feature(key, k_c);
      row.insert(row.end(), sig.begin(), sig.end());
    } else if (opt.family != FeatureFamily::structural) {
      const std::vector<double>* sem = opt.embeddings ? opt.embeddings->find(key) : nullptr;
      if (sem) {
        row.insert(row.end(), sem->begin(), sem->end());
      } else {
        const auto sig = signature_feature(key, k_c);
        row.insert(row.end(), sig.begin(), sig.end());
        ++table.fallbacks;
      }
    }
    table.values.append_row(row);
    table.keys.push_back(std::move(key));
  }
  return table;
}

// Debug dump: edge key columns then one column per feature, header first.
inline std::string to_csv(const FeatureTable& t) {
  std::string out;
  std::vector<std::string> header = {"source", "target", "offset"};
  header.insert(header.end(), t.column_names.begin(), t.column_names.end());
  out += csv::join(header);
  out += '\n';
  for (std::size_t i = 0; i < t.keys.size(); ++i) {
    out += csv::escape(t.keys[i].source);
    out += ',';
    out += csv::escape(t.keys[i].target);
    out += ',';
    out += std::to_string(t.keys[i].offset);
    for (double v : t.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline FeatureTable parse_feature_csv(std::string_view text, FeatureFamily family) {
  auto lines = split_lines(text);
  if (lines.empty()) throw FormatError("feature csv: missing header");
  auto header = csv::split(lines[0]);
  if (header.size() < 4 || header[0] != "source" || header[1] != "target" || header[2] != "offset")
    throw FormatError("feature csv: header must start with source,target,offset and name at least one feature");
  FeatureTable t;
  t.family = family;
  t.column_names.assign(header.begin() + 3, header.end());
  t.values = Matrix(0, t.column_names.size());
  std::vector<double> row(t.column_names.size());
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    auto fields = csv::split(lines[ln]);
    if (fields.size() != header.size())
      throw FormatError("feature csv line " + std::to_string(ln + 1) + ": expected " +
                        std::to_string(header.size()) + " fields");
    auto bad = [&] { return FormatError("feature csv line " + std::to_string(ln + 1) + ": bad number"); };
    std::uint64_t offset = 0;
    if (!parse_number(fields[2], offset)) throw bad();
    t.keys.push_back({fields[0], fields[1], offset});
    for (std::size_t j = 0; j < row.size(); ++j)
      if (!parse_number(fields[j + 3], row[j]) || !std::isfinite(row[j])) throw bad();
    t.values.append_row(row);
  }
  return t;
}

}  // namespace cgprune
