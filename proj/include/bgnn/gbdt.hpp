#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgnn/dataset.hpp"
#include "bgnn/matrix.hpp"

namespace bgnn {

enum class BoostLoss { SquaredError, CrossEntropy };

struct TreeParams {
  std::size_t max_depth = 6;
  std::size_t min_samples_leaf = 1;
  /// Leaf budget for best-first growth; 0 means unlimited (depth-limited only).
  std::size_t max_leaves = 0;
};

struct TreeNode {
  bool is_leaf = true;
  std::size_t depth = 0;

  // Internal nodes.
  std::size_t feature = 0;
  bool categorical = false;
  /// Numeric split: value <= threshold goes left.
  double threshold = 0.0;
  /// Categorical split: codes routed each way; other codes follow missing_left.
  std::vector<int> left_categories;
  std::vector<int> right_categories;
  bool missing_left = true;
  std::size_t left = 0;
  std::size_t right = 0;
  /// Reduction of the summed squared error achieved by this split.
  double gain = 0.0;

  // Leaves.
  std::vector<double> leaf_value;
};

/// Regression tree with vector-valued leaves. Node 0 is the root.
class DecisionTree {
 public:
  DecisionTree() = default;
  DecisionTree(std::vector<TreeNode> nodes, std::size_t out_dim, std::size_t max_depth);

  std::size_t out_dim() const noexcept { return out_dim_; }
  std::size_t max_depth() const noexcept { return max_depth_; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_leaves() const noexcept;
  std::size_t depth() const noexcept;
  const TreeNode& node(std::size_t i) const noexcept { return nodes_[i]; }
  std::span<const TreeNode> nodes() const noexcept { return nodes_; }

  /// Index of the leaf row r of `features` is routed to.
  std::size_t leaf_index(const FeatureMatrix& features, std::size_t r) const;
  std::span<const double> predict_row(const FeatureMatrix& features, std::size_t r) const {
    return nodes_[leaf_index(features, r)].leaf_value;
  }

  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);

 private:
  std::vector<TreeNode> nodes_;
  std::size_t out_dim_ = 0;
  std::size_t max_depth_ = 0;
};

/// Greedy exact tree fit on rows of `targets` (indexed by node id, one column per output).
///
/// Every node takes the split with the largest reduction of squared error summed
/// over all output columns. Numeric columns are scanned over midpoints of
/// consecutive distinct values; categorical columns are ordered by the mean of
/// the first output column and scanned the same way. Missing cells are tried on
/// both sides. Candidates are visited by feature index, then threshold, then
/// missing side (left first); a later candidate replaces the incumbent only if
/// its gain is larger by more than 1e-10 of the node's squared error, so
/// near-ties resolve to the lowest feature and threshold. A node splits only if
/// its best gain exceeds 1e-12 of its squared error (plus a 1e-20 floor scaled by
/// the targets' energy). Leaves hold the arithmetic mean of their rows' targets.
DecisionTree fit_tree(const FeatureMatrix& features, const Matrix& targets, std::span<const std::size_t> rows,
                      const TreeParams& params);

struct TreeEntry {
  DecisionTree tree;
  /// First ensemble output column this tree writes to.
  std::size_t column_offset = 0;
};

/// Additive model: predict = init + learning_rate * sum of tree outputs.
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(BoostLoss loss, double learning_rate, std::vector<double> init_prediction);

  BoostLoss loss() const noexcept { return loss_; }
  double learning_rate() const noexcept { return learning_rate_; }
  std::size_t out_dim() const noexcept { return init_.size(); }
  std::span<const double> init_prediction() const noexcept { return init_; }
  std::span<const TreeEntry> trees() const noexcept { return trees_; }
  std::size_t num_trees() const noexcept { return trees_.size(); }

  void append(DecisionTree tree, std::size_t column_offset = 0);
  /// Widens the output to new_dim by inserting zero columns in front of the
  /// existing ones; existing trees keep writing to their original outputs.
  void expand_outputs(std::size_t new_dim);
  /// Copy holding only the first n trees.
  Ensemble truncated(std::size_t n) const;

  /// Predictions for the listed rows (rows.size() x out_dim).
  Matrix predict(const FeatureMatrix& features, std::span<const std::size_t> rows) const;
  /// Predictions for every row of `features`.
  Matrix predict(const FeatureMatrix& features) const;
  /// Adds learning_rate times tree t's output into out (rows.size() x out_dim).
  void add_tree_output(std::size_t t, const FeatureMatrix& features, std::span<const std::size_t> rows,
                       Matrix& out) const;

  nlohmann::json to_json() const;
  static Ensemble from_json(const nlohmann::json& j);

 private:
  BoostLoss loss_ = BoostLoss::SquaredError;
  double learning_rate_ = 0.1;
  std::vector<double> init_;
  std::vector<TreeEntry> trees_;
};

/// Negative gradient of the loss at `pred`. Squared error uses the
/// half-squared convention (target - pred); cross-entropy expects `targets` as
/// an n x 1 column of class indices and returns onehot - softmax(pred).
Matrix negative_gradient(BoostLoss loss, const Matrix& pred, const Matrix& targets);

/// Starting prediction: per-column target mean (squared error) or smoothed
/// log class priors log((count + 1) / (n + C)) (cross-entropy).
std::vector<double> initial_prediction(BoostLoss loss, const Matrix& targets, std::span<const std::size_t> rows,
                                       std::size_t num_classes);

struct BoostParams {
  BoostLoss loss = BoostLoss::SquaredError;
  std::size_t n_trees = 100;
  double learning_rate = 0.1;
  TreeParams tree;
  /// Output width for cross-entropy (class count); ignored for squared error.
  std::size_t num_classes = 0;
};

/// Fits params.n_trees trees on the negative gradient of the running
/// prediction. With `warm`, boosting continues from that ensemble.
Ensemble boost(const FeatureMatrix& features, const Matrix& targets, std::span<const std::size_t> rows,
               const BoostParams& params, const Ensemble* warm = nullptr);

/// Fits a fresh k-tree squared-error block to `targets` (its own prediction
/// starting at zero) and appends it to `ensemble` at column_offset. Returns
/// the summed split gain of the new trees.
double boost_block(Ensemble& ensemble, const FeatureMatrix& features, const Matrix& targets,
                   std::span<const std::size_t> rows, std::size_t k, const TreeParams& tree,
                   std::size_t column_offset = 0);

struct EarlyStoppedBoost {
  Ensemble ensemble;  // truncated to the best validation iteration
  std::size_t best_iteration = 0;
  std::vector<double> val_curve;
  /// Metric on the monitor rows after each tree (empty without monitor rows).
  std::vector<double> monitor_curve;
};

/// Boosts up to params.n_trees trees, stopping when the validation metric
/// (RMSE, or accuracy for cross-entropy) has not improved for `patience` trees.
/// `monitor` rows are scored alongside and never influence stopping.
EarlyStoppedBoost boost_with_early_stopping(const FeatureMatrix& features, const Matrix& targets,
                                            std::span<const std::size_t> train, std::span<const std::size_t> val,
                                            const BoostParams& params, std::size_t patience,
                                            std::span<const std::size_t> monitor = {});

}  // namespace bgnn
