// Vulnerability propagation on a hand-built graph.
//
//   app/Main.main -> app/Svc.run -> lib/Json.parse -> lib/Json.scan
//                                \-> lib/Log.write
//   lib/Xml.read (never called from the application)

#include <cstdio>

#include "cgprune/cgprune.hpp"

using namespace cgprune;

int main() {
  std::vector<MethodId> nodes = {
      {"app/Main.main()V", Scope::application}, {"app/Svc.run()V", Scope::application},
      {"lib/Json.parse()V", Scope::dependency},  {"lib/Json.scan()V", Scope::dependency},
      {"lib/Log.write()V", Scope::dependency},   {"lib/Xml.read()V", Scope::dependency},
  };
  std::vector<CallEdge> edges = {{0, 1, 0}, {1, 2, 0}, {2, 3, 0}, {1, 4, 1}};
  const CallGraph g("demo", GraphKind::static_0cfa, nodes, edges);

  const std::vector<NodeIndex> vulnerable = {3, 5};
  const auto r = reachability(g, vulnerable);
  const auto size = cg_size_stats(g);
  std::printf("edges %zu, active nodes %zu\n", size.edges, size.active_nodes);
  std::printf("reachable (app, vulnerable) pairs: %zu\n", r.reachable_paths);
  std::printf("vulnerable nodes reached: %zu of %zu (%.0f%%)\n", r.reached_vulnerabilities, vulnerable.size(),
              100.0 * r.reachable_node_fraction);
}
