#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bgnn {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct GraphOptions {
  bool add_self_loops = true;
  /// Store each input edge in both directions.
  bool symmetric = true;
  /// Compute 1/sqrt(deg(src) * deg(dst)) per edge.
  bool normalize = true;
};

/// Immutable incoming-edge CSR. Edges are sorted by destination, then source;
/// edge e runs sources()[e] -> destinations()[e], and the incoming edges of v
/// occupy [offsets()[v], offsets()[v + 1]).
class Graph {
 public:
  Graph() = default;

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const noexcept { return sources_.size(); }

  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const std::size_t> sources() const noexcept { return sources_; }
  std::span<const std::size_t> destinations() const noexcept { return destinations_; }
  std::span<const std::size_t> in_neighbors(std::size_t v) const noexcept {
    return {sources_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }

  bool has_self_loops() const noexcept { return has_self_loops_; }
  bool is_symmetric() const noexcept { return symmetric_; }
  bool has_norm_coeffs() const noexcept { return !norm_coeffs_.empty() || sources_.empty(); }
  /// Per-edge symmetric normalization weights; empty when not computed.
  std::span<const double> norm_coeffs() const noexcept { return norm_coeffs_; }

  /// Edges in CSR order, self-loops included.
  std::vector<Edge> edge_list() const;
  /// Number of non-self-loop edges.
  std::size_t num_proper_edges() const noexcept;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  friend Graph build_graph(std::span<const Edge> edges, std::size_t n, const GraphOptions& options);
  friend Graph permute_graph(const Graph& graph, std::span<const std::size_t> perm);

  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> sources_;
  std::vector<std::size_t> destinations_;
  std::vector<double> norm_coeffs_;
  bool has_self_loops_ = false;
  bool symmetric_ = false;
};

/// Builds the CSR. Duplicate edges collapse; normalization uses degrees after
/// self-loops are added. Throws IndexError for an endpoint >= n.
Graph build_graph(std::span<const Edge> edges, std::size_t n, const GraphOptions& options = {});

/// Rebuilds `graph` with node v renamed perm[v]. The result keeps the
/// self-loop, symmetry and normalization state of the input.
Graph permute_graph(const Graph& graph, std::span<const std::size_t> perm);

/// Throws ConfigError unless perm is a bijection on [0, n).
void require_permutation(std::span<const std::size_t> perm, std::size_t n);

}  // namespace bgnn
