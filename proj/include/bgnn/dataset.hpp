#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "bgnn/graph.hpp"
#include "bgnn/matrix.hpp"

namespace bgnn {

enum class ColumnKind { Numeric, Categorical };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  /// Dictionary of a categorical column; code i names categories[i].
  std::vector<std::string> categories;
  friend bool operator==(const Column&, const Column&) = default;
};

struct ColumnSchema {
  std::vector<Column> columns;

  std::size_t size() const noexcept { return columns.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  friend bool operator==(const ColumnSchema&, const ColumnSchema&) = default;
};

/// Node-by-column table stored column-major. Categorical cells hold dense
/// integer codes; missing cells are flagged and their stored value is 0.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(ColumnSchema schema, std::size_t rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return schema_.size(); }
  const ColumnSchema& schema() const noexcept { return schema_; }
  ColumnKind kind(std::size_t c) const noexcept { return schema_.columns[c].kind; }

  double value(std::size_t r, std::size_t c) const noexcept { return values_[c][r]; }
  bool missing(std::size_t r, std::size_t c) const noexcept { return missing_[c][r] != 0; }
  std::span<const double> column(std::size_t c) const noexcept { return values_[c]; }
  std::span<const std::uint8_t> missing_mask(std::size_t c) const noexcept { return missing_[c]; }

  /// Throws IndexError for a categorical code outside the column dictionary.
  void set(std::size_t r, std::size_t c, double v);
  void set_missing(std::size_t r, std::size_t c) noexcept;

  FeatureMatrix select_rows(std::span<const std::size_t> rows) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  ColumnSchema schema_;
  std::size_t rows_ = 0;
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<std::uint8_t>> missing_;
};

enum class Task { Regression, Classification };

struct TargetVector {
  Task task = Task::Regression;
  /// Class count for classification, 0 for regression.
  int num_classes = 0;
  /// Regression value or class index per node; undefined where unlabeled.
  std::vector<double> values;
  std::vector<std::uint8_t> labeled;

  std::size_t size() const noexcept { return values.size(); }
  std::vector<std::size_t> labeled_nodes() const;
  std::vector<int> class_labels() const;
  /// Output width of a predictor for this task.
  std::size_t out_dim() const noexcept { return task == Task::Regression ? 1 : static_cast<std::size_t>(num_classes); }
  /// n x 1 matrix of values (regression); unlabeled rows hold 0.
  Matrix as_column() const;
  /// Throws ContractError on out-of-range labels or size mismatch.
  void validate() const;
  friend bool operator==(const TargetVector&, const TargetVector&) = default;
};

struct DataSplit {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  friend bool operator==(const DataSplit&, const DataSplit&) = default;
};

/// Random train/validation/test partitions of the labeled nodes, one per
/// sub-seed derived from master_seed. Classification splits are stratified.
/// Index lists are sorted ascending.
std::vector<DataSplit> make_splits(const TargetVector& targets, std::size_t n_seeds = 5,
                                   std::array<double, 3> ratios = {0.6, 0.2, 0.2}, std::uint64_t master_seed = 0);

/// Relabels node v as perm[v] in all three structures.
std::tuple<Graph, FeatureMatrix, TargetVector> permute_nodes(const Graph& graph, const FeatureMatrix& features,
                                                             const TargetVector& targets,
                                                             std::span<const std::size_t> perm);

/// Inverse of a permutation.
std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

}  // namespace bgnn
