#pragma once

// Brute-force greedy tree oracle. Enumerates every (feature, threshold,
// missing side) candidate at every node by materializing both child row sets
// and recomputing their squared error from scratch with two-pass means. It
// shares only the documented tie-break and stopping rule with fit_tree.

#include <cstddef>
#include <span>
#include <vector>

#include "bgnn/dataset.hpp"
#include "bgnn/gbdt.hpp"
#include "bgnn/matrix.hpp"

namespace bgnn::testing {

/// Leaf row sets (each ascending) of the oracle tree, in depth-first order.
std::vector<std::vector<std::size_t>> oracle_tree_leaves(const FeatureMatrix& x, const Matrix& y,
                                                         std::span<const std::size_t> rows, const TreeParams& params);

/// Training SSE of a partition, using ascending-order leaf means.
double partition_sse(const Matrix& y, const std::vector<std::vector<std::size_t>>& leaves);

/// Groups `rows` by the leaf they reach in `tree`.
std::vector<std::vector<std::size_t>> tree_partition(const DecisionTree& tree, const FeatureMatrix& x,
                                                     std::span<const std::size_t> rows);

}  // namespace bgnn::testing
