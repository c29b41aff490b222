#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgnn/dataset.hpp"
#include "bgnn/gbdt.hpp"
#include "bgnn/gnn.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/matrix.hpp"

namespace bgnn {

/// Numeric encoding of a feature table for the neural path: numeric columns
/// are standardized with training-row statistics (missing cells become the
/// mean, i.e. 0), categorical columns are one-hot (missing cells all zero).
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  static FeatureEncoder fit(const FeatureMatrix& x, std::span<const std::size_t> rows);

  std::size_t width() const noexcept { return width_; }
  Matrix transform(const FeatureMatrix& x) const;

  nlohmann::json to_json() const;
  static FeatureEncoder from_json(const nlohmann::json& j);

 private:
  struct ColumnCode {
    bool categorical = false;
    double mean = 0.0;
    double scale = 1.0;
    std::size_t categories = 0;
  };
  std::vector<ColumnCode> columns_;
  std::size_t width_ = 0;
};

/// How GBDT output enters the GNN. Raw ignores it (plain GNN on encoded features).
enum class FeatureMode { Raw, Replace, Append };

std::string_view to_string(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view name);

/// GNN input width for encoded width `enc` and GBDT output width `d_f`.
std::size_t input_width(FeatureMode mode, std::size_t enc, std::size_t d_f);

/// Builds the GNN input from encoded features and GBDT output.
/// Replace returns fX. Append returns [encX | 0] + fX with fX right-aligned in
/// an (enc + d_f)-wide result, so a d_f-wide fX gives [encX | fX] and a
/// full-width fX also adjusts the encoded block. d_f = 0 means fX's width.
/// Raw returns encX.
Matrix update_features(const Matrix& encoded, const Matrix& fx, FeatureMode mode, std::size_t d_f = 0);

/// A trained feature pipeline plus GNN.
struct GraphPredictor {
  FeatureEncoder encoder;
  FeatureMode mode = FeatureMode::Raw;
  /// Unused when mode is Raw.
  Ensemble gbdt;
  /// Width of GBDT's own output block (d_f).
  std::size_t gbdt_columns = 0;
  GnnModel gnn;

  /// GNN input for every node.
  Matrix gnn_input(const FeatureMatrix& x) const;
  /// Output for every node (n x out_dim); dropout off.
  Matrix predict(const Graph& graph, const FeatureMatrix& x, ForwardTrace* trace = nullptr) const;

  nlohmann::json to_json() const;
  static GraphPredictor from_json(const nlohmann::json& j);
};

/// RMSE for regression, accuracy for classification, of the first column
/// (or row-wise argmax) of `pred` against the labeled `rows`.
double evaluate(const Matrix& pred, const TargetVector& targets, std::span<const std::size_t> rows);
/// True when larger values of the task metric are better.
bool higher_is_better(Task task);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double test_metric = 0.0;
  double wall_ms = 0.0;
  std::size_t n_trees = 0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = 0.0;

  /// One JSON object per epoch. Timing is omitted unless requested.
  std::string to_jsonl(bool with_timing) const;
};

/// Tracks the best validation metric and the epochs since it last improved.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, bool higher_better);
  /// Records the next epoch's metric; returns true if it is a new best.
  bool update(double metric);
  bool should_stop() const noexcept;
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  bool higher_better_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

/// True iff the metric has not improved for `patience` consecutive epochs.
bool early_stop(std::span<const double> history, std::size_t patience, bool higher_better = false);

/// Data handed to an epoch observer after the GNN steps of an epoch.
struct EpochTrace {
  std::size_t epoch = 0;
  /// GNN input before the steps.
  const Matrix* x_prime = nullptr;
  /// Next GBDT target, X'_new - X'.
  const Matrix* next_targets = nullptr;
  /// GNN state before the steps.
  const GnnModel* gnn_before = nullptr;
};

struct TrainConfig {
  /// Maximum epochs (N).
  std::size_t epochs = 200;
  /// Trees per epoch (k).
  std::size_t trees_per_epoch = 20;
  /// GNN steps per epoch (l).
  std::size_t gnn_steps = 20;
  /// GBDT learning rate.
  double gbdt_lr = 0.1;
  TreeParams tree{.max_depth = 6};
  /// Feature learning rate (eta).
  double feature_lr = 0.1;
  /// Multiply eta by the number of training rows, undoing the 1/|train|
  /// factor of a mean loss.
  bool feature_lr_per_row = true;
  OptimizerConfig optimizer{OptimizerConfig::Kind::Adam, 0.01};
  FeatureMode mode = FeatureMode::Replace;
  /// Append mode only: fit GBDT to the residual of every GNN input column
  /// (true) or only of the columns GBDT produced (false).
  bool full_residual = true;
  std::size_t patience = 10;
  /// GNN architecture; in_dim and out_dim are filled in by the trainer.
  GnnConfig gnn;
  /// Observer for diagnostics and tests; makes a copy of the GNN per epoch.
  std::function<void(const EpochTrace&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  GraphPredictor model;
  History history;
};

/// Joint GBDT and GNN training. Each epoch boosts k trees on the current
/// target (first epoch: the task targets under the task loss; later epochs:
/// the GNN input residual under squared error), rebuilds the GNN input from
/// the whole ensemble, runs l GNN steps that also move the input, and takes
/// the input change as the next target. GBDT fits training rows only. The
/// best validation epoch is returned.
TrainResult train_bgnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                       const TrainConfig& config);

struct GnnTrainConfig {
  std::size_t epochs = 2000;
  std::size_t patience = 200;
  OptimizerConfig optimizer{OptimizerConfig::Kind::Adam, 0.01};
  GnnConfig gnn;
};

/// Plain GNN on encoded raw features, one full-batch step per epoch.
TrainResult train_gnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                      const GnnTrainConfig& config);

struct ResGnnConfig {
  BoostParams gbdt{.n_trees = 1000, .learning_rate = 0.1, .tree = {.max_depth = 6}};
  std::size_t gbdt_patience = 100;
  FeatureMode mode = FeatureMode::Append;
  GnnTrainConfig gnn{.epochs = 1000, .patience = 100, .optimizer = {}, .gnn = {}};
};

/// Two stages: GBDT with early stopping, then a GNN on the frozen GBDT output.
TrainResult train_resgnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                         const ResGnnConfig& config);

}  // namespace bgnn
