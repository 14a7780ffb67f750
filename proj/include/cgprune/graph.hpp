#pragma once

// Call-graph data model: ingestion and serialization, standard-library edge
// filtering, labeling against a dynamic (ground-truth) graph, and sampling of
// oversized programs.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cgprune/error.hpp"
#include "cgprune/io.hpp"
#include "cgprune/random.hpp"
#include "json.hpp"

namespace cgprune {

using Json = nlohmann::ordered_json;
using NodeIndex = std::uint32_t;

enum class Scope { application, dependency };
enum class GraphKind { static_0cfa, static_1cfa, dynamic };

inline std::string_view to_string(Scope s) {
  return s == Scope::application ? "application" : "dependency";
}

inline std::string_view to_string(GraphKind k) {
  switch (k) {
    case GraphKind::static_0cfa: return "static_0cfa";
    case GraphKind::static_1cfa: return "static_1cfa";
    case GraphKind::dynamic: return "dynamic";
  }
  return "?";
}

inline std::optional<GraphKind> parse_graph_kind(std::string_view s) {
  if (s == "static_0cfa") return GraphKind::static_0cfa;
  if (s == "static_1cfa") return GraphKind::static_1cfa;
  if (s == "dynamic") return GraphKind::dynamic;
  return std::nullopt;
}

// A method, identified by "pkg/subpkg/Class.method(descriptor)".
struct MethodId {
  std::string uri;
  Scope scope = Scope::dependency;

  bool operator==(const MethodId&) const = default;
};

// Call edge between two nodes of the owning graph, tagged with the call-site
// index inside the caller.
struct CallEdge {
  NodeIndex source = 0;
  NodeIndex target = 0;
  std::uint64_t offset = 0;

  auto operator<=>(const CallEdge&) const = default;
};

struct CallEdgeHash {
  std::size_t operator()(const CallEdge& e) const noexcept {
    std::uint64_t h = (static_cast<std::uint64_t>(e.source) << 32) ^ e.target;
    h ^= e.offset + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return std::hash<std::uint64_t>{}(h);
  }
};

// Graph-independent identity of an edge.
struct EdgeKey {
  std::string source;
  std::string target;
  std::uint64_t offset = 0;

  auto operator<=>(const EdgeKey&) const = default;
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& k) const noexcept {
    std::uint64_t h = fnv1a64(k.source);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(k.target, h);
    return static_cast<std::size_t>(h ^ (k.offset * 0x9e3779b97f4a7c15ULL));
  }
};

// Offset-insensitive (caller uri, callee uri) pair.
using EdgePair = std::pair<std::string, std::string>;

struct EdgePairHash {
  std::size_t operator()(const EdgePair& p) const noexcept {
    return static_cast<std::size_t>(fnv1a64(p.second, fnv1a64("\x1f", fnv1a64(p.first))));
  }
};

using EdgePairSet = std::unordered_set<EdgePair, EdgePairHash>;

// Immutable directed multigraph. Node storage is shared between a graph and
// every graph derived from it by edge removal, so V' = V is structural.
class CallGraph {
 public:
  struct NodeTable {
    std::vector<MethodId> nodes;
    std::unordered_map<std::string, NodeIndex> index;
  };

  CallGraph(std::string program_id, GraphKind kind, std::vector<MethodId> nodes,
            std::vector<CallEdge> edges, std::optional<double> generation_time_s = std::nullopt)
      : program_id_(std::move(program_id)),
        kind_(kind),
        generation_time_s_(generation_time_s) {
    auto table = std::make_shared<NodeTable>();
    table->index.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].uri.empty()) throw IntegrityError("node " + std::to_string(i) + " has an empty uri");
      if (!table->index.emplace(nodes[i].uri, static_cast<NodeIndex>(i)).second)
        throw IntegrityError("duplicate node uri '" + nodes[i].uri + "'");
    }
    table->nodes = std::move(nodes);
    nodes_ = std::move(table);
    if (generation_time_s_ && !(*generation_time_s_ >= 0.0))
      throw IntegrityError("generation_time_s must be non-negative");
    set_edges(std::move(edges));
  }

  const std::string& program_id() const noexcept { return program_id_; }
  GraphKind kind() const noexcept { return kind_; }
  std::optional<double> generation_time_s() const noexcept { return generation_time_s_; }

  std::span<const MethodId> nodes() const noexcept { return nodes_->nodes; }
  std::span<const CallEdge> edges() const noexcept { return edges_; }
  std::size_t num_nodes() const noexcept { return nodes_->nodes.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }

  const MethodId& node(NodeIndex i) const { return nodes_->nodes.at(i); }
  const std::string& uri(NodeIndex i) const { return nodes_->nodes.at(i).uri; }

  std::optional<NodeIndex> find_node(std::string_view uri) const {
    auto it = nodes_->index.find(std::string(uri));
    if (it == nodes_->index.end()) return std::nullopt;
    return it->second;
  }

  // Position of e in edges(), if present.
  std::optional<std::size_t> find_edge(const CallEdge& e) const {
    auto it = edge_index_.find(e);
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const CallEdge& e) const { return edge_index_.contains(e); }

  std::optional<CallEdge> find_edge(const EdgeKey& key) const {
    auto s = find_node(key.source);
    auto t = find_node(key.target);
    if (!s || !t) return std::nullopt;
    CallEdge e{*s, *t, key.offset};
    if (!contains(e)) return std::nullopt;
    return e;
  }

  EdgeKey key(const CallEdge& e) const { return {uri(e.source), uri(e.target), e.offset}; }
  EdgePair pair(const CallEdge& e) const { return {uri(e.source), uri(e.target)}; }

  EdgePairSet pair_set() const {
    EdgePairSet pairs;
    pairs.reserve(edges_.size());
    for (const auto& e : edges_) pairs.insert(pair(e));
    return pairs;
  }

  // Same program, kind and node set; the given edges must all belong to this
  // graph.
  CallGraph with_edges(std::vector<CallEdge> kept) const {
    for (const auto& e : kept)
      if (!contains(e)) throw IntegrityError("edge subset contains an edge foreign to the graph");
    CallGraph out(*this, SharedNodesTag{});
    out.set_edges(std::move(kept));
    return out;
  }

  bool shares_nodes_with(const CallGraph& other) const noexcept { return nodes_ == other.nodes_; }

 private:
  struct SharedNodesTag {};

  CallGraph(const CallGraph& base, SharedNodesTag)
      : program_id_(base.program_id_),
        kind_(base.kind_),
        generation_time_s_(base.generation_time_s_),
        nodes_(base.nodes_) {}

  void set_edges(std::vector<CallEdge> edges) {
    edge_index_.clear();
    edge_index_.reserve(edges.size());
    const auto n = nodes_->nodes.size();
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto& e = edges[i];
      if (e.source >= n || e.target >= n)
        throw IntegrityError("edge " + std::to_string(i) + " references a node outside the graph");
      if (!edge_index_.emplace(e, i).second)
        throw IntegrityError("duplicate edge (" + uri(e.source) + ", " + uri(e.target) + ", " +
                             std::to_string(e.offset) + ")");
    }
    edges_ = std::move(edges);
  }

  std::string program_id_;
  GraphKind kind_;
  std::optional<double> generation_time_s_;
  std::shared_ptr<const NodeTable> nodes_;
  std::vector<CallEdge> edges_;
  std::unordered_map<CallEdge, std::size_t, CallEdgeHash> edge_index_;
};

// ---------------------------------------------------------------------------
// Serialization

struct LoadedGraph {
  CallGraph graph;
  std::size_t duplicate_edges = 0;  // repeated (source, target, offset) triples dropped
};

namespace detail {

inline const Json& require(const Json& obj, const char* field, const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(where + ": missing field '" + field + "'");
  return *it;
}

inline std::string require_string(const Json& obj, const char* field, const std::string& where) {
  const auto& v = require(obj, field, where);
  if (!v.is_string()) throw ParseError(where + ": field '" + field + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

inline LoadedGraph load_call_graph(std::string_view document) {
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("call graph document: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("call graph document: top level must be an object");

  auto program = detail::require_string(doc, "program", "document");
  auto kind_name = detail::require_string(doc, "kind", "document");
  auto kind = parse_graph_kind(kind_name);
  if (!kind) throw ParseError("document: unknown graph kind '" + kind_name + "'");

  std::optional<double> gen_time;
  if (auto it = doc.find("generation_time_s"); it != doc.end() && !it->is_null()) {
    if (!it->is_number()) throw ParseError("document: generation_time_s must be a number");
    gen_time = it->get<double>();
  }

  const auto& jnodes = detail::require(doc, "nodes", "document");
  const auto& jedges = detail::require(doc, "edges", "document");
  if (!jnodes.is_array()) throw ParseError("document: 'nodes' must be an array");
  if (!jedges.is_array()) throw ParseError("document: 'edges' must be an array");

  std::vector<MethodId> nodes;
  nodes.reserve(jnodes.size());
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    const auto& jn = jnodes[i];
    if (!jn.is_object()) throw ParseError(where + ": must be an object");
    MethodId m;
    m.uri = detail::require_string(jn, "uri", where);
    if (auto it = jn.find("scope"); it != jn.end() && !it->is_null()) {
      if (*it == "application") m.scope = Scope::application;
      else if (*it == "dependency") m.scope = Scope::dependency;
      else throw ParseError(where + ": scope must be 'application' or 'dependency'");
    }
    nodes.push_back(std::move(m));
  }

  std::unordered_map<std::string_view, NodeIndex> index;
  index.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!index.emplace(nodes[i].uri, static_cast<NodeIndex>(i)).second)
      throw IntegrityError("nodes[" + std::to_string(i) + "]: duplicate uri '" + nodes[i].uri + "'");
  }

  std::vector<CallEdge> edges;
  edges.reserve(jedges.size());
  std::unordered_set<CallEdge, CallEdgeHash> seen;
  std::size_t duplicates = 0;
  for (std::size_t i = 0; i < jedges.size(); ++i) {
    const std::string where = "edges[" + std::to_string(i) + "]";
    const auto& je = jedges[i];
    if (!je.is_object()) throw ParseError(where + ": must be an object");
    auto src = detail::require_string(je, "source", where);
    auto tgt = detail::require_string(je, "target", where);
    const auto& joff = detail::require(je, "offset", where);
    if (!joff.is_number_unsigned())
      throw ParseError(where + ": offset must be a non-negative integer");
    auto s = index.find(src);
    if (s == index.end()) throw IntegrityError(where + ": unknown source node '" + src + "'");
    auto t = index.find(tgt);
    if (t == index.end()) throw IntegrityError(where + ": unknown target node '" + tgt + "'");
    CallEdge e{s->second, t->second, joff.get<std::uint64_t>()};
    if (!seen.insert(e).second) {
      ++duplicates;
      continue;
    }
    edges.push_back(e);
  }

  return {CallGraph(std::move(program), *kind, std::move(nodes), std::move(edges), gen_time), duplicates};
}

inline Json to_json(const CallGraph& g) {
  Json doc;
  doc["program"] = g.program_id();
  doc["kind"] = to_string(g.kind());
  if (g.generation_time_s()) doc["generation_time_s"] = *g.generation_time_s();
  Json nodes = Json::array();
  for (const auto& n : g.nodes()) nodes.push_back({{"uri", n.uri}, {"scope", to_string(n.scope)}});
  Json edges = Json::array();
  for (const auto& e : g.edges())
    edges.push_back({{"source", g.uri(e.source)}, {"target", g.uri(e.target)}, {"offset", e.offset}});
  doc["nodes"] = std::move(nodes);
  doc["edges"] = std::move(edges);
  return doc;
}

// ---------------------------------------------------------------------------
// Filtering

inline std::vector<std::string> default_stdlib_prefixes() {
  return {"java/", "javax/", "sun/", "com/sun/", "jdk/"};
}

inline bool has_any_prefix(std::string_view uri, std::span<const std::string> prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return uri.starts_with(p); });
}

// Drops every edge whose caller or callee uri starts with one of the
// prefixes. Nodes are kept.
inline CallGraph filter_stdlib_edges(const CallGraph& g, std::span<const std::string> prefixes) {
  std::vector<char> excluded(g.num_nodes(), 0);
  for (std::size_t i = 0; i < g.num_nodes(); ++i)
    excluded[i] = has_any_prefix(g.nodes()[i].uri, prefixes) ? 1 : 0;
  std::vector<CallEdge> kept;
  kept.reserve(g.num_edges());
  for (const auto& e : g.edges())
    if (!excluded[e.source] && !excluded[e.target]) kept.push_back(e);
  return g.with_edges(std::move(kept));
}

inline CallGraph filter_stdlib_edges(const CallGraph& g) {
  const auto prefixes = default_stdlib_prefixes();
  return filter_stdlib_edges(g, prefixes);
}

// ---------------------------------------------------------------------------
// Labeling

enum class Label : int { prune = 0, retain = 1 };

struct LabeledEdge {
  EdgeKey key;
  Label label = Label::prune;
  std::string program;

  bool operator==(const LabeledEdge&) const = default;
};

// One labeled edge per static edge, in static edge order. An edge is retained
// iff its (caller, callee) pair occurs in the dynamic graph; offsets are not
// compared because traces do not pin down call sites.
inline std::vector<LabeledEdge> label_edges(const CallGraph& static_g, const CallGraph& dynamic_g) {
  if (static_g.program_id() != dynamic_g.program_id())
    throw UsageError("label_edges: program mismatch ('" + static_g.program_id() + "' vs '" +
                     dynamic_g.program_id() + "')");
  if (dynamic_g.kind() != GraphKind::dynamic)
    throw UsageError("label_edges: ground-truth graph for '" + dynamic_g.program_id() + "' is not dynamic");
  const auto truth = dynamic_g.pair_set();
  std::vector<LabeledEdge> out;
  out.reserve(static_g.num_edges());
  for (const auto& e : static_g.edges()) {
    LabeledEdge le{static_g.key(e), Label::prune, static_g.program_id()};
    if (truth.contains(EdgePair{le.key.source, le.key.target})) le.label = Label::retain;
    out.push_back(std::move(le));
  }
  return out;
}

struct LabelCounts {
  std::size_t retain = 0;
  std::size_t prune = 0;

  std::size_t total() const noexcept { return retain + prune; }
  LabelCounts& operator+=(const LabelCounts& o) noexcept {
    retain += o.retain;
    prune += o.prune;
    return *this;
  }
};

inline LabelCounts count_labels(std::span<const LabeledEdge> edges) {
  LabelCounts c;
  for (const auto& e : edges) (e.label == Label::retain ? c.retain : c.prune)++;
  return c;
}

inline double pr_ratio(const LabelCounts& c) {
  if (c.retain == 0) throw DegenerateDatasetError("P/R ratio undefined: no retain-labeled edges");
  return static_cast<double>(c.prune) / static_cast<double>(c.retain);
}

// Ratio of to-be-pruned to to-be-retained edges.
inline double pr_ratio(std::span<const LabeledEdge> edges) { return pr_ratio(count_labels(edges)); }

inline constexpr std::size_t kDefaultSampleCap = 20000;

// Caps a program's labeled edges. Retain-labeled edges are never dropped;
// prune-labeled edges are subsampled uniformly so the result has
// max(cap, #retain) edges. Input order is preserved.
inline std::vector<LabeledEdge> sample_large_program(std::span<const LabeledEdge> edges,
                                                     std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw UsageError("sample_large_program: cap must be positive");
  if (edges.size() <= cap) return {edges.begin(), edges.end()};

  std::vector<std::size_t> prune_pos;
  std::size_t retain = 0;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].label == Label::retain) ++retain;
    else prune_pos.push_back(i);
  }
  const std::size_t want_prune = cap > retain ? cap - retain : 0;
  Rng rng(seed);
  std::vector<char> keep(edges.size(), 0);
  for (std::size_t i = 0; i < edges.size(); ++i) keep[i] = edges[i].label == Label::retain;
  for (auto k : sample_indices(prune_pos.size(), want_prune, rng)) keep[prune_pos[k]] = 1;

  std::vector<LabeledEdge> out;
  out.reserve(std::max(cap, retain));
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (keep[i]) out.push_back(edges[i]);
  return out;
}

// JSON Lines: {"source","target","offset","label","program"} per edge.
inline std::string to_jsonl(std::span<const LabeledEdge> edges) {
  std::string out;
  for (const auto& e : edges) {
    Json j;
    j["source"] = e.key.source;
    j["target"] = e.key.target;
    j["offset"] = e.key.offset;
    j["label"] = static_cast<int>(e.label);
    j["program"] = e.program;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<LabeledEdge> parse_labeled_jsonl(std::string_view text) {
  std::vector<LabeledEdge> out;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "labeled edges line " + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    LabeledEdge le;
    le.key.source = detail::require_string(j, "source", where);
    le.key.target = detail::require_string(j, "target", where);
    const auto& off = detail::require(j, "offset", where);
    if (!off.is_number_unsigned()) throw ParseError(where + ": offset must be a non-negative integer");
    le.key.offset = off.get<std::uint64_t>();
    const auto& lab = detail::require(j, "label", where);
    if (lab != 0 && lab != 1) throw ParseError(where + ": label must be 0 or 1");
    le.label = lab == 1 ? Label::retain : Label::prune;
    le.program = detail::require_string(j, "program", where);
    out.push_back(std::move(le));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct ProgramCounts {
  std::size_t static_edges = 0;   // after filtering, before sampling
  std::size_t labeled_edges = 0;  // after sampling
  LabelCounts labels;             // of the sampled edges
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> train_programs;
  std::vector<std::string> test_programs;
  std::map<std::string, ProgramCounts> counts;
  double pr_ratio = 0.0;

  LabelCounts totals() const {
    LabelCounts t;
    for (const auto& [_, c] : counts) t += c.labels;
    return t;
  }

  void validate() const {
    std::unordered_set<std::string> train(train_programs.begin(), train_programs.end());
    for (const auto& p : test_programs)
      if (train.contains(p)) throw UsageError("dataset '" + name + "': program '" + p + "' is in both train and test");
    if (!(pr_ratio > 0.0)) throw DegenerateDatasetError("dataset '" + name + "': P/R ratio must be positive");
  }
};

inline Json to_json(const DatasetManifest& m) {
  Json j;
  j["name"] = m.name;
  j["train_programs"] = m.train_programs;
  j["test_programs"] = m.test_programs;
  Json counts = Json::object();
  for (const auto& [prog, c] : m.counts) {
    counts[prog] = {{"static_edges", c.static_edges},
                    {"labeled_edges", c.labeled_edges},
                    {"retain", c.labels.retain},
                    {"prune", c.labels.prune}};
  }
  j["counts"] = std::move(counts);
  j["pr_ratio"] = m.pr_ratio;
  return j;
}

inline DatasetManifest dataset_manifest_from_json(const Json& j) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.train_programs = j.at("train_programs").get<std::vector<std::string>>();
    m.test_programs = j.at("test_programs").get<std::vector<std::string>>();
    for (const auto& [prog, c] : j.at("counts").items()) {
      ProgramCounts pc;
      pc.static_edges = c.at("static_edges").get<std::size_t>();
      pc.labeled_edges = c.at("labeled_edges").get<std::size_t>();
      pc.labels.retain = c.at("retain").get<std::size_t>();
      pc.labels.prune = c.at("prune").get<std::size_t>();
      m.counts.emplace(prog, pc);
    }
    m.pr_ratio = j.at("pr_ratio").get<double>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("dataset manifest: ") + e.what());
  }
  return m;
}

}  // namespace cgprune
