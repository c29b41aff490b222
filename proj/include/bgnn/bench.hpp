#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgnn/bgnn.hpp"
#include "bgnn/data_io.hpp"

namespace bgnn {

enum class ModelKind { Gbdt, LightGbm, Gcn, Gat, Agnn, Appnp, Fcnn, FcnnGnn, ResGnn, Bgnn };

std::string_view to_string(ModelKind kind);
/// Accepts the names printed by to_string; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);

/// Hyperparameter grid: key -> list of candidate values.
using Grid = nlohmann::ordered_json;
/// One assignment of every grid key.
using GridPoint = nlohmann::ordered_json;

/// Default grid for a model. Keys with a single value are fixed settings.
Grid default_grid(ModelKind kind);
/// Throws ConfigError when a key is unknown for the model or a value list is
/// empty or not an array.
void validate_grid(ModelKind kind, const Grid& grid);
/// Cartesian product in key order, the last key varying fastest.
std::vector<GridPoint> expand_grid(const Grid& grid);

struct ExperimentConfig {
  std::filesystem::path dataset;
  ModelKind model = ModelKind::Gbdt;
  /// Merged over default_grid: listed keys replace the defaults.
  Grid grid = Grid::object();
  /// Split seeds; each gives one 60/20/20 split.
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t repetitions = 3;
  std::size_t workers = 1;
  std::filesystem::path output_dir = "out";

  /// Relative paths are resolved against `base`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  nlohmann::json to_json() const;
  /// Full grid after merging the defaults.
  Grid effective_grid() const;
  void validate() const;
};

/// Outcome of one training run.
struct RunOutcome {
  double val_metric = 0.0;
  double test_metric = 0.0;
  /// Per-epoch (per-tree for GBDT models) test metric.
  std::vector<double> curve;
  double wall_seconds = 0.0;
};

struct RunRecord {
  std::size_t point = 0;
  std::uint64_t seed = 0;
  std::size_t rep = 0;
  bool failed = false;
  std::string error;
  RunOutcome outcome;
};

struct PointSummary {
  bool failed = false;
  double val_mean = 0.0;
  double test_mean = 0.0;
  /// Sample std over seeds of the repetition-averaged test metric.
  double test_std = 0.0;
};

struct RunReport {
  std::string model;
  std::string dataset;
  bool higher_better = false;
  std::vector<GridPoint> points;
  std::vector<RunRecord> runs;
  std::vector<PointSummary> summaries;
  std::optional<std::size_t> selected;

  /// Winner's test mean and std; throws ContractError when every point failed.
  double test_mean() const;
  double test_std() const;

  /// Deterministic JSON-lines: header, runs, points, summary. No timing.
  std::string to_jsonl() const;
  /// Wall-clock seconds per run, one line each.
  std::string timing_jsonl() const;
  static RunReport from_jsonl(const std::string& text);
};

/// Fills summaries and selected from runs. A point with any failed run is
/// excluded from selection (a warning goes to `warn`). Selection uses the mean
/// validation metric only; ties go to the lower index.
void summarize(RunReport& report, std::ostream* warn = nullptr);

using RunFn = std::function<RunOutcome(const GridPoint& point, std::uint64_t seed, std::size_t rep)>;

/// Runs every point x seed x repetition on a pool of `workers` threads and
/// summarizes. Exceptions from `fn` mark the run failed.
RunReport run_grid(const std::vector<GridPoint>& points, const std::vector<std::uint64_t>& seeds,
                   std::size_t repetitions, bool higher_better, std::size_t workers, const RunFn& fn,
                   std::ostream* warn = nullptr);

/// Trained artefact of one run; exactly one of the two members is set.
struct TrainedModel {
  ModelKind kind = ModelKind::Gbdt;
  GridPoint params;
  std::optional<Ensemble> gbdt;
  std::optional<GraphPredictor> predictor;

  Matrix predict(const Graph& graph, const FeatureMatrix& x) const;
  nlohmann::json to_json() const;
  static TrainedModel from_json(const nlohmann::json& j);
};

struct FitResult {
  TrainedModel model;
  RunOutcome outcome;
};

/// Trains one model on one split. `model_seed` seeds weights and dropout.
FitResult fit_model(ModelKind kind, const GridPoint& params, const Dataset& ds, const DataSplit& split,
                    std::uint64_t model_seed);

/// Split for a seed: make_splits(targets, 1, 60/20/20, seed).
DataSplit split_for_seed(const Dataset& ds, std::uint64_t seed);
/// Model seed for a (split seed, repetition) pair.
std::uint64_t model_seed(std::uint64_t seed, std::size_t rep);

/// Full experiment on a loaded dataset.
RunReport run_grid(const ExperimentConfig& config, const Dataset& ds, std::ostream* warn = nullptr);

/// Signed relative gap in percent, 100 (r_m - r_ref) / r_ref.
double compute_gap(double r_model, double r_ref);
double compute_gap(const RunReport& report, const RunReport& reference);

/// CSV: point,seed,rep,epoch,metric (epochs from 1); failed runs are skipped.
void export_curves(const RunReport& report, const std::filesystem::path& path);
/// CSV: node_id,h1..h_dim,prediction,true_target with the first hidden layer.
/// Classification predictions are argmax classes; unlabeled targets are blank.
void export_representations(const GraphPredictor& model, const Graph& graph, const FeatureMatrix& x,
                            const TargetVector& y, const std::filesystem::path& path);

}  // namespace bgnn
