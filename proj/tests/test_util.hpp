#pragma once

// Shared oracles for the unit and acceptance suites. Everything here computes
// expected values from first principles (finite differences, brute-force
// loops) and only uses the library's forward passes as black boxes.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bgnn/dataset.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/matrix.hpp"
#include "bgnn/rng.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn::testing {

Matrix random_normal(std::size_t rows, std::size_t cols, CounterRng& rng);

/// Scalar function of a list of leaf tensors, built on a fresh tape.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheck {
  double worst_ratio = 0.0;  // max over entries of |analytic - numeric| / (rtol * scale + atol)
  bool ok() const { return worst_ratio <= 1.0; }
};

/// Compares tape gradients of f against central differences with step h.
GradCheck check_gradients(const ScalarFn& f, const std::vector<Matrix>& inputs, double h = 1e-5,
                          double rtol = 1e-4, double atol = 1e-8);

/// Central-difference gradient of f with respect to inputs[which].
Matrix numeric_gradient(const ScalarFn& f, const std::vector<Matrix>& inputs, std::size_t which, double h = 1e-5);

/// Random simple undirected edge list on n nodes with about n * avg_degree / 2 edges.
std::vector<Edge> random_edges(std::size_t n, double avg_degree, CounterRng& rng);

/// Uniformly random permutation of [0, n).
std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

/// rows[perm[v]] = m.rows[v].
Matrix permute_rows(const Matrix& m, std::span<const std::size_t> perm);

/// All-numeric feature matrix from a dense matrix; NaN cells become missing.
FeatureMatrix numeric_features(const Matrix& values);

}  // namespace bgnn::testing
