#include "bgnn/graph.hpp"

#include <algorithm>
#include <cmath>

#include "bgnn/errors.hpp"

namespace bgnn {

std::vector<Edge> Graph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(num_edges());
  for (std::size_t e = 0; e < num_edges(); ++e) out.push_back({sources_[e], destinations_[e]});
  return out;
}

std::size_t Graph::num_proper_edges() const noexcept {
  std::size_t count = 0;
  for (std::size_t e = 0; e < num_edges(); ++e) count += sources_[e] != destinations_[e];
  return count;
}

Graph build_graph(std::span<const Edge> edges, std::size_t n, const GraphOptions& options) {
  std::vector<Edge> all;
  all.reserve(edges.size() * (options.symmetric ? 2 : 1) + (options.add_self_loops ? n : 0));
  for (const Edge& e : edges) {
    if (e.src >= n || e.dst >= n) {
      throw IndexError("build_graph: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                       ") has an endpoint >= " + std::to_string(n));
    }
    all.push_back(e);
    if (options.symmetric && e.src != e.dst) all.push_back({e.dst, e.src});
  }
  if (options.add_self_loops) {
    for (std::size_t v = 0; v < n; ++v) all.push_back({v, v});
  }
  std::sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
    return a.dst != b.dst ? a.dst < b.dst : a.src < b.src;
  });
  all.erase(std::unique(all.begin(), all.end()), all.end());

  Graph g;
  g.offsets_.assign(n + 1, 0);
  g.sources_.reserve(all.size());
  g.destinations_.reserve(all.size());
  for (const Edge& e : all) {
    ++g.offsets_[e.dst + 1];
    g.sources_.push_back(e.src);
    g.destinations_.push_back(e.dst);
  }
  for (std::size_t v = 0; v < n; ++v) g.offsets_[v + 1] += g.offsets_[v];

  bool loops = n > 0;
  std::vector<std::size_t> out_degree(n, 0);
  for (std::size_t v = 0; v < n && loops; ++v) {
    const auto nbrs = g.in_neighbors(v);
    loops = std::binary_search(nbrs.begin(), nbrs.end(), v);
  }
  g.has_self_loops_ = options.add_self_loops || loops;
  g.symmetric_ = options.symmetric;

  if (options.normalize) {
    for (std::size_t s : g.sources_) ++out_degree[s];
    g.norm_coeffs_.resize(all.size());
    for (std::size_t e = 0; e < all.size(); ++e) {
      const double in_deg = static_cast<double>(g.offsets_[all[e].dst + 1] - g.offsets_[all[e].dst]);
      g.norm_coeffs_[e] = 1.0 / std::sqrt(static_cast<double>(out_degree[all[e].src]) * in_deg);
    }
  }
  return g;
}

void require_permutation(std::span<const std::size_t> perm, std::size_t n) {
  if (perm.size() != n) throw ConfigError("permutation has " + std::to_string(perm.size()) + " entries, expected " + std::to_string(n));
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw ConfigError("permutation is not a bijection on [0, n)");
    seen[p] = true;
  }
}

Graph permute_graph(const Graph& graph, std::span<const std::size_t> perm) {
  require_permutation(perm, graph.num_nodes());
  std::vector<Edge> edges = graph.edge_list();
  for (Edge& e : edges) e = {perm[e.src], perm[e.dst]};
  GraphOptions opts;
  opts.add_self_loops = false;
  opts.symmetric = false;
  opts.normalize = !graph.norm_coeffs().empty();
  Graph out = build_graph(edges, graph.num_nodes(), opts);
  out.symmetric_ = graph.symmetric_;
  out.has_self_loops_ = graph.has_self_loops_;
  return out;
}

}  // namespace bgnn
