#include "bgnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bgnn/errors.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

std::optional<std::size_t> ColumnSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return i;
  return std::nullopt;
}

FeatureMatrix::FeatureMatrix(ColumnSchema schema, std::size_t rows)
    : schema_(std::move(schema)),
      rows_(rows),
      values_(schema_.size(), std::vector<double>(rows, 0.0)),
      missing_(schema_.size(), std::vector<std::uint8_t>(rows, 0)) {}

void FeatureMatrix::set(std::size_t r, std::size_t c, double v) {
  if (kind(c) == ColumnKind::Categorical) {
    const auto& dict = schema_.columns[c].categories;
    if (v < 0 || v != std::floor(v) || v >= static_cast<double>(dict.size())) {
      throw IndexError("FeatureMatrix::set: code " + std::to_string(v) + " outside dictionary of column '" +
                       schema_.columns[c].name + "'");
    }
  }
  values_[c][r] = v;
  missing_[c][r] = 0;
}

void FeatureMatrix::set_missing(std::size_t r, std::size_t c) noexcept {
  values_[c][r] = 0.0;
  missing_[c][r] = 1;
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> rows) const {
  FeatureMatrix out(schema_, rows.size());
  for (std::size_t c = 0; c < cols(); ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.values_[c][i] = values_[c][rows[i]];
      out.missing_[c][i] = missing_[c][rows[i]];
    }
  }
  return out;
}

std::vector<std::size_t> TargetVector::labeled_nodes() const {
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < labeled.size(); ++v)
    if (labeled[v]) out.push_back(v);
  return out;
}

std::vector<int> TargetVector::class_labels() const {
  std::vector<int> out(values.size(), 0);
  for (std::size_t v = 0; v < values.size(); ++v)
    if (labeled[v]) out[v] = static_cast<int>(values[v]);
  return out;
}

Matrix TargetVector::as_column() const {
  Matrix out(values.size(), 1);
  for (std::size_t v = 0; v < values.size(); ++v)
    if (labeled[v]) out(v, 0) = values[v];
  return out;
}

void TargetVector::validate() const {
  if (values.size() != labeled.size()) throw ContractError("TargetVector: values/labeled size mismatch");
  if (task == Task::Classification) {
    if (num_classes < 2) throw ContractError("TargetVector: classification needs at least two classes");
    for (std::size_t v = 0; v < values.size(); ++v) {
      if (!labeled[v]) continue;
      const double y = values[v];
      if (y < 0 || y >= num_classes || y != std::floor(y)) {
        throw ContractError("TargetVector: label " + std::to_string(y) + " at node " + std::to_string(v) +
                            " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
}

std::vector<DataSplit> make_splits(const TargetVector& targets, std::size_t n_seeds, std::array<double, 3> ratios,
                                   std::uint64_t master_seed) {
  targets.validate();
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0) throw ConfigError("make_splits: ratios must be positive");
  const double total = ratios[0] + ratios[1] + ratios[2];

  // Strata: one per class for classification, a single one for regression.
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t v : targets.labeled_nodes()) {
    const int key = targets.task == Task::Classification ? static_cast<int>(targets.values[v]) : 0;
    strata[key].push_back(v);
  }

  std::vector<DataSplit> splits;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    DataSplit split;
    split.seed = derive_key(master_seed, s);
    CounterRng rng(split.seed);
    for (auto& [key, nodes] : strata) {
      std::vector<std::size_t> shuffled = nodes;
      rng.shuffle(std::span<std::size_t>(shuffled));
      const auto count = static_cast<double>(shuffled.size());
      const auto n_train = static_cast<std::size_t>(std::llround(count * ratios[0] / total));
      const auto n_val = std::min(shuffled.size() - n_train, static_cast<std::size_t>(std::llround(count * ratios[1] / total)));
      split.train.insert(split.train.end(), shuffled.begin(), shuffled.begin() + n_train);
      split.val.insert(split.val.end(), shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
      split.test.insert(split.test.end(), shuffled.begin() + n_train + n_val, shuffled.end());
    }
    if (split.train.empty() || split.val.empty() || split.test.empty()) {
      throw ContractError("make_splits: too few labeled nodes for a non-empty train/validation/test partition");
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  require_permutation(perm, perm.size());
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t v = 0; v < perm.size(); ++v) inv[perm[v]] = v;
  return inv;
}

std::tuple<Graph, FeatureMatrix, TargetVector> permute_nodes(const Graph& graph, const FeatureMatrix& features,
                                                             const TargetVector& targets,
                                                             std::span<const std::size_t> perm) {
  const std::size_t n = graph.num_nodes();
  if (features.rows() != n || targets.size() != n) {
    throw ShapeError("permute_nodes: graph, features and targets disagree on node count");
  }
  const std::vector<std::size_t> inv = invert_permutation(perm);
  FeatureMatrix pf = features.select_rows(inv);
  TargetVector pt = targets;
  for (std::size_t v = 0; v < n; ++v) {
    pt.values[perm[v]] = targets.values[v];
    pt.labeled[perm[v]] = targets.labeled[v];
  }
  return {permute_graph(graph, perm), std::move(pf), std::move(pt)};
}

}  // namespace bgnn
