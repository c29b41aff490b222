#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgnn/dataset.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/matrix.hpp"

namespace bgnn {

/// Describes an on-disk dataset: manifest.json next to features.csv,
/// edges.csv and targets.csv.
struct DatasetManifest {
  std::string name;
  Task task = Task::Regression;
  /// Class count for classification datasets.
  int num_classes = 0;
  std::string features_file = "features.csv";
  std::string edges_file = "edges.csv";
  std::string targets_file = "targets.csv";
  /// Column order and kinds. Categorical columns without categories get a
  /// sorted dictionary built from the data.
  ColumnSchema schema;
  /// When set, raw targets are binned into classes on load.
  std::vector<double> class_bins;
  /// Radius used when the graph was built by k-NN, for the record.
  std::optional<double> knn_radius;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetManifest manifest;
  /// Deduplicated input edges, each unordered pair once as (min, max).
  std::vector<Edge> edges;
  Graph graph;
  FeatureMatrix features;
  TargetVector targets;
};

/// Reads a manifest and its files. Errors carry the file and line.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json and the three CSV files into `dir` (created if needed).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Each node's k nearest other nodes by Euclidean distance on coords (n x 2),
/// ascending by distance then index.
struct KnnTable {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<std::vector<double>> distances;
};
KnnTable knn_table(const Matrix& coords, std::size_t k);

/// Undirected edges (min, max) to the k nearest neighbours within `radius`.
std::vector<Edge> knn_edges(const KnnTable& table, double radius);
std::vector<Edge> build_knn_graph(const Matrix& coords, std::size_t k, double radius);

/// Smallest radius whose k-NN graph has at least `target_directed` directed
/// non-self-loop edges; nullopt if even an unbounded radius falls short.
std::optional<double> fit_knn_radius(const KnnTable& table, std::size_t target_directed);

/// Left-closed bins: class = number of edges <= value.
std::vector<int> bin_targets(std::span<const double> values, std::span<const double> edges);

inline const std::vector<double> kHouseClassBins{1.0, 1.5, 2.0, 2.5};
inline const std::vector<double> kVkClassBins{20, 25, 30, 35, 40, 45, 50};

struct SyntheticSpec {
  std::size_t n = 2000;
  /// Nearest neighbours per node in the latent-position graph.
  std::size_t k = 5;
  std::size_t n_numeric = 4;
  std::size_t n_categorical = 2;
  std::size_t categories = 5;
  std::size_t rule_depth = 4;
  double missing_rate = 0.05;
  /// Weight of the neighbour mean in the target.
  double smoothing = 0.5;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Mixed-type features with missing cells on a latent k-NN graph. The target
/// is (1 - smoothing) * rule(x) + smoothing * mean of rule over neighbours
/// plus Gaussian noise, where rule is a random depth-limited decision tree.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Raw California housing rows in either the original block-group layout
/// (longitude, latitude, housingMedianAge, totalRooms, totalBedrooms,
/// population, households, medianIncome, medianHouseValue) or the
/// scikit-learn column names with a MedHouseVal target.
struct HouseOptions {
  std::size_t k = 5;
  std::size_t target_edges = 182146;
  bool classification = false;
};
Dataset prepare_house(const std::filesystem::path& raw_csv, const HouseOptions& options = {});

}  // namespace bgnn
