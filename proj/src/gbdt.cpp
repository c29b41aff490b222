#include "bgnn/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bgnn/errors.hpp"

namespace bgnn {

namespace {

constexpr double kTieTolerance = 1e-10;
constexpr double kMinRelativeGain = 1e-12;
constexpr double kEnergyFloor = 1e-20;

/// Per-feature present rows of the root, ordered by (value, row). Empty for
/// categorical columns.
using SortedColumns = std::vector<std::vector<std::size_t>>;

SortedColumns presort(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  SortedColumns sorted(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    if (x.kind(f) != ColumnKind::Numeric) continue;
    auto& list = sorted[f];
    for (std::size_t r : rows)
      if (!x.missing(r, f)) list.push_back(r);
    const auto col = x.column(f);
    std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      return col[a] != col[b] ? col[a] < col[b] : a < b;
    });
  }
  return sorted;
}

struct Split {
  bool valid = false;
  double gain = 0.0;
  std::size_t feature = 0;
  bool categorical = false;
  double threshold = 0.0;
  bool missing_left = true;
  std::vector<int> left_categories;
  std::vector<int> right_categories;
};

struct OpenNode {
  std::size_t id = 0;
  std::size_t depth = 0;
  std::vector<std::size_t> rows;  // ascending
  SortedColumns sorted;
  Split best;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const Matrix& y, const TreeParams& params)
      : x_(x), y_(y), params_(params), d_(y.cols()) {}

  DecisionTree build(std::vector<std::size_t> rows, SortedColumns sorted) {
    std::vector<OpenNode> open;
    open.push_back(make_node(0, std::move(rows), std::move(sorted)));
    nodes_.emplace_back();
    std::size_t leaves = 1;
    while (!open.empty()) {
      std::size_t pick = 0;
      if (params_.max_leaves > 0) {
        for (std::size_t i = 1; i < open.size(); ++i) {
          const bool better = open[i].best.valid &&
                              (!open[pick].best.valid || open[i].best.gain > open[pick].best.gain ||
                               (open[i].best.gain == open[pick].best.gain && open[i].id < open[pick].id));
          if (better) pick = i;
        }
      }
      OpenNode node = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      const bool budget_left = params_.max_leaves == 0 || leaves < params_.max_leaves;
      if (!node.best.valid || !budget_left) {
        finalize_leaf(node);
        continue;
      }
      auto [left, right] = split(node);
      ++leaves;
      open.push_back(std::move(left));
      open.push_back(std::move(right));
    }
    return DecisionTree(std::move(nodes_), d_, params_.max_depth);
  }

 private:
  OpenNode make_node(std::size_t depth, std::vector<std::size_t> rows, SortedColumns sorted) {
    OpenNode node;
    node.id = nodes_.size();
    node.depth = depth;
    node.rows = std::move(rows);
    node.sorted = std::move(sorted);
    node.best = find_best_split(node);
    return node;
  }

  void finalize_leaf(const OpenNode& node) {
    TreeNode& out = nodes_[node.id];
    out.is_leaf = true;
    out.depth = node.depth;
    out.leaf_value.assign(d_, 0.0);
    for (std::size_t r : node.rows)
      for (std::size_t c = 0; c < d_; ++c) out.leaf_value[c] += y_(r, c);
    for (double& v : out.leaf_value) v /= static_cast<double>(node.rows.size());
  }

  bool goes_left(const Split& s, std::size_t r) const {
    if (x_.missing(r, s.feature)) return s.missing_left;
    const double v = x_.value(r, s.feature);
    if (!s.categorical) return v <= s.threshold;
    const int code = static_cast<int>(v);
    if (std::binary_search(s.left_categories.begin(), s.left_categories.end(), code)) return true;
    if (std::binary_search(s.right_categories.begin(), s.right_categories.end(), code)) return false;
    return s.missing_left;
  }

  std::pair<OpenNode, OpenNode> split(OpenNode& node) {
    const Split& s = node.best;
    side_.resize(x_.rows());
    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : node.rows) {
      side_[r] = goes_left(s, r);
      (side_[r] ? left_rows : right_rows).push_back(r);
    }
    SortedColumns left_sorted(x_.cols()), right_sorted(x_.cols());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      for (std::size_t r : node.sorted[f]) (side_[r] ? left_sorted[f] : right_sorted[f]).push_back(r);
      node.sorted[f].clear();
      node.sorted[f].shrink_to_fit();
    }
    TreeNode& out = nodes_[node.id];
    out.is_leaf = false;
    out.depth = node.depth;
    out.feature = s.feature;
    out.categorical = s.categorical;
    out.threshold = s.threshold;
    out.left_categories = s.left_categories;
    out.right_categories = s.right_categories;
    out.missing_left = s.missing_left;
    out.gain = s.gain;
    const std::size_t left_id = nodes_.size();
    out.left = left_id;
    out.right = left_id + 1;
    nodes_.resize(nodes_.size() + 2);
    OpenNode left = make_node(node.depth + 1, std::move(left_rows), std::move(left_sorted));
    left.id = left_id;
    OpenNode right = make_node(node.depth + 1, std::move(right_rows), std::move(right_sorted));
    right.id = left_id + 1;
    return {std::move(left), std::move(right)};
  }

  // Gain of a partition from its column sums: sum_c nL*nR/n * (meanL - meanR)^2.
  double gain_of(std::span<const double> sum_left, double n_left, std::span<const double> sum_total,
                 double n_total) const {
    const double n_right = n_total - n_left;
    double g = 0.0;
    for (std::size_t c = 0; c < d_; ++c) {
      const double diff = sum_left[c] / n_left - (sum_total[c] - sum_left[c]) / n_right;
      g += diff * diff;
    }
    return g * n_left * n_right / n_total;
  }

  Split find_best_split(const OpenNode& node) {
    Split best;
    const std::size_t n = node.rows.size();
    if (node.depth >= params_.max_depth || n < 2 * std::max<std::size_t>(params_.min_samples_leaf, 1)) return best;

    std::vector<double> total(d_, 0.0);
    double energy = 0.0;
    for (std::size_t r : node.rows) {
      for (std::size_t c = 0; c < d_; ++c) {
        total[c] += y_(r, c);
        energy += y_(r, c) * y_(r, c);
      }
    }
    double sse = 0.0;
    for (std::size_t r : node.rows) {
      for (std::size_t c = 0; c < d_; ++c) {
        const double diff = y_(r, c) - total[c] / static_cast<double>(n);
        sse += diff * diff;
      }
    }
    const double tie = kTieTolerance * sse;
    const double min_gain = kMinRelativeGain * sse + kEnergyFloor * energy;
    const double n_total = static_cast<double>(n);
    const double min_leaf = static_cast<double>(std::max<std::size_t>(params_.min_samples_leaf, 1));

    std::vector<double> sum_missing(d_), sum_left(d_), with_missing(d_);
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      std::fill(sum_missing.begin(), sum_missing.end(), 0.0);
      double n_missing = 0.0;
      for (std::size_t r : node.rows) {
        if (!x_.missing(r, f)) continue;
        n_missing += 1.0;
        for (std::size_t c = 0; c < d_; ++c) sum_missing[c] += y_(r, c);
      }

      // Evaluates "first `n_left` present units go left" for both missing sides.
      // Returns true when the candidate became the incumbent.
      auto consider = [&](double n_left_present, bool last_boundary, auto&& describe) {
        for (int side = 0; side < 2; ++side) {
          const bool missing_left = side == 0;
          if (n_missing == 0.0 && !missing_left) continue;
          if (last_boundary && missing_left) continue;  // would leave the right side empty
          double n_left = n_left_present;
          std::span<const double> left = sum_left;
          if (missing_left && n_missing > 0.0) {
            for (std::size_t c = 0; c < d_; ++c) with_missing[c] = sum_left[c] + sum_missing[c];
            left = with_missing;
            n_left += n_missing;
          }
          if (n_left < min_leaf || n_total - n_left < min_leaf) continue;
          const double g = gain_of(left, n_left, total, n_total);
          if (!best.valid || g > best.gain + tie) {
            best.valid = true;
            best.gain = g;
            best.feature = f;
            best.missing_left = missing_left;
            describe(best);
          }
        }
      };

      std::fill(sum_left.begin(), sum_left.end(), 0.0);
      if (x_.kind(f) == ColumnKind::Numeric) {
        const auto& order = node.sorted[f];
        const auto col = x_.column(f);
        for (std::size_t i = 0; i < order.size(); ++i) {
          for (std::size_t c = 0; c < d_; ++c) sum_left[c] += y_(order[i], c);
          const bool last = i + 1 == order.size();
          if (!last && col[order[i + 1]] == col[order[i]]) continue;
          if (last && n_missing == 0.0) break;
          const double lo = col[order[i]];
          double threshold = lo;
          if (!last) {
            const double hi = col[order[i + 1]];
            threshold = lo + (hi - lo) / 2.0;
            if (!(threshold < hi)) threshold = lo;
          }
          consider(static_cast<double>(i + 1), last, [&](Split& s) {
            s.categorical = false;
            s.threshold = threshold;
            s.left_categories.clear();
            s.right_categories.clear();
          });
        }
      } else {
        const std::size_t n_codes = x_.schema().columns[f].categories.size();
        std::vector<double> code_sum(n_codes * d_, 0.0);
        std::vector<double> code_count(n_codes, 0.0);
        for (std::size_t r : node.rows) {
          if (x_.missing(r, f)) continue;
          const auto code = static_cast<std::size_t>(x_.value(r, f));
          code_count[code] += 1.0;
          for (std::size_t c = 0; c < d_; ++c) code_sum[code * d_ + c] += y_(r, c);
        }
        std::vector<int> present;
        for (std::size_t k = 0; k < n_codes; ++k)
          if (code_count[k] > 0.0) present.push_back(static_cast<int>(k));
        std::stable_sort(present.begin(), present.end(), [&](int a, int b) {
          return code_sum[a * d_] / code_count[a] < code_sum[b * d_] / code_count[b];
        });
        double n_left = 0.0;
        for (std::size_t i = 0; i < present.size(); ++i) {
          const auto code = static_cast<std::size_t>(present[i]);
          n_left += code_count[code];
          for (std::size_t c = 0; c < d_; ++c) sum_left[c] += code_sum[code * d_ + c];
          const bool last = i + 1 == present.size();
          if (last && n_missing == 0.0) break;
          consider(n_left, last, [&](Split& s) {
            s.categorical = true;
            s.threshold = static_cast<double>(i + 1);
            s.left_categories.assign(present.begin(), present.begin() + static_cast<std::ptrdiff_t>(i + 1));
            s.right_categories.assign(present.begin() + static_cast<std::ptrdiff_t>(i + 1), present.end());
            std::sort(s.left_categories.begin(), s.left_categories.end());
            std::sort(s.right_categories.begin(), s.right_categories.end());
          });
        }
      }
    }
    if (best.valid && !(best.gain > min_gain && best.gain > 0.0)) best.valid = false;
    return best;
  }

  const FeatureMatrix& x_;
  const Matrix& y_;
  const TreeParams& params_;
  std::size_t d_;
  std::vector<TreeNode> nodes_;
  std::vector<std::uint8_t> side_;
};

void check_fit_inputs(const FeatureMatrix& features, const Matrix& targets, std::span<const std::size_t> rows,
                      const TreeParams& params) {
  if (rows.empty()) throw ContractError("fit_tree: empty row set");
  if (rows.size() < params.min_samples_leaf) throw ContractError("fit_tree: fewer rows than min_samples_leaf");
  if (targets.rows() != features.rows()) {
    throw ShapeError("fit_tree: " + std::to_string(targets.rows()) + " target rows for " +
                     std::to_string(features.rows()) + " feature rows");
  }
  if (targets.cols() == 0) throw ShapeError("fit_tree: targets have no columns");
  for (std::size_t r : rows)
    if (r >= features.rows()) throw IndexError("fit_tree: row " + std::to_string(r));
}

std::vector<std::size_t> sorted_rows(std::span<const std::size_t> rows) {
  std::vector<std::size_t> out(rows.begin(), rows.end());
  std::sort(out.begin(), out.end());
  return out;
}

DecisionTree fit_presorted(const FeatureMatrix& features, const Matrix& targets, const std::vector<std::size_t>& rows,
                           const SortedColumns& sorted, const TreeParams& params) {
  TreeBuilder builder(features, targets, params);
  return builder.build(rows, sorted);
}

const char* loss_name(BoostLoss loss) { return loss == BoostLoss::SquaredError ? "squared_error" : "cross_entropy"; }

BoostLoss parse_loss(const std::string& s) {
  if (s == "squared_error") return BoostLoss::SquaredError;
  if (s == "cross_entropy") return BoostLoss::CrossEntropy;
  throw LoadError("ensemble: unknown loss '" + s + "'");
}

double metric(BoostLoss loss, const Matrix& pred, const Matrix& targets, std::span<const std::size_t> rows) {
  if (loss == BoostLoss::SquaredError) {
    double sse = 0.0;
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < pred.cols(); ++c) {
        const double diff = pred(r, c) - targets(r, c);
        sse += diff * diff;
      }
    return std::sqrt(sse / static_cast<double>(rows.size() * pred.cols()));
  }
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    const auto row = pred.row(r);
    const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += static_cast<double>(arg) == targets(r, 0);
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// DecisionTree

DecisionTree::DecisionTree(std::vector<TreeNode> nodes, std::size_t out_dim, std::size_t max_depth)
    : nodes_(std::move(nodes)), out_dim_(out_dim), max_depth_(max_depth) {}

std::size_t DecisionTree::num_leaves() const noexcept {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

std::size_t DecisionTree::depth() const noexcept {
  std::size_t d = 0;
  for (const TreeNode& n : nodes_) d = std::max(d, n.depth);
  return d;
}

std::size_t DecisionTree::leaf_index(const FeatureMatrix& features, std::size_t r) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf) {
    const TreeNode& n = nodes_[i];
    bool left;
    if (features.missing(r, n.feature)) {
      left = n.missing_left;
    } else if (!n.categorical) {
      left = features.value(r, n.feature) <= n.threshold;
    } else {
      const int code = static_cast<int>(features.value(r, n.feature));
      if (std::binary_search(n.left_categories.begin(), n.left_categories.end(), code)) {
        left = true;
      } else if (std::binary_search(n.right_categories.begin(), n.right_categories.end(), code)) {
        left = false;
      } else {
        left = n.missing_left;
      }
    }
    i = left ? n.left : n.right;
  }
  return i;
}

nlohmann::json DecisionTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const TreeNode& n : nodes_) {
    nlohmann::json j;
    j["depth"] = n.depth;
    if (n.is_leaf) {
      j["leaf"] = n.leaf_value;
    } else {
      j["feature"] = n.feature;
      j["missing"] = n.missing_left ? "left" : "right";
      j["left"] = n.left;
      j["right"] = n.right;
      j["gain"] = n.gain;
      if (n.categorical) {
        j["left_categories"] = n.left_categories;
        j["right_categories"] = n.right_categories;
      } else {
        j["threshold"] = n.threshold;
      }
    }
    nodes.push_back(std::move(j));
  }
  return {{"out_dim", out_dim_}, {"max_depth", max_depth_}, {"nodes", std::move(nodes)}};
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.depth = jn.at("depth").get<std::size_t>();
    if (jn.contains("leaf")) {
      n.is_leaf = true;
      n.leaf_value = jn.at("leaf").get<std::vector<double>>();
    } else {
      n.is_leaf = false;
      n.feature = jn.at("feature").get<std::size_t>();
      n.missing_left = jn.at("missing").get<std::string>() == "left";
      n.left = jn.at("left").get<std::size_t>();
      n.right = jn.at("right").get<std::size_t>();
      n.gain = jn.at("gain").get<double>();
      n.categorical = jn.contains("left_categories");
      if (n.categorical) {
        n.left_categories = jn.at("left_categories").get<std::vector<int>>();
        n.right_categories = jn.at("right_categories").get<std::vector<int>>();
      } else {
        n.threshold = jn.at("threshold").get<double>();
      }
    }
    nodes.push_back(std::move(n));
  }
  for (const TreeNode& n : nodes) {
    if (!n.is_leaf && (n.left >= nodes.size() || n.right >= nodes.size())) throw LoadError("tree: child index out of range");
  }
  if (nodes.empty()) throw LoadError("tree: no nodes");
  return DecisionTree(std::move(nodes), j.at("out_dim").get<std::size_t>(), j.at("max_depth").get<std::size_t>());
}

DecisionTree fit_tree(const FeatureMatrix& features, const Matrix& targets, std::span<const std::size_t> rows,
                      const TreeParams& params) {
  check_fit_inputs(features, targets, rows, params);
  auto ordered = sorted_rows(rows);
  return fit_presorted(features, targets, ordered, presort(features, ordered), params);
}

// ---------------------------------------------------------------------------
// Ensemble

Ensemble::Ensemble(BoostLoss loss, double learning_rate, std::vector<double> init_prediction)
    : loss_(loss), learning_rate_(learning_rate), init_(std::move(init_prediction)) {
  if (!(learning_rate > 0.0)) throw ConfigError("Ensemble: learning rate must be positive");
}

void Ensemble::append(DecisionTree tree, std::size_t column_offset) {
  if (column_offset + tree.out_dim() > out_dim()) {
    throw ShapeError("Ensemble::append: tree writes columns [" + std::to_string(column_offset) + ", " +
                     std::to_string(column_offset + tree.out_dim()) + ") of a " + std::to_string(out_dim()) +
                     "-output ensemble");
  }
  trees_.push_back({std::move(tree), column_offset});
}

void Ensemble::expand_outputs(std::size_t new_dim) {
  if (new_dim < out_dim()) throw ShapeError("Ensemble::expand_outputs: cannot shrink outputs");
  const std::size_t pad = new_dim - out_dim();
  init_.insert(init_.begin(), pad, 0.0);
  for (TreeEntry& t : trees_) t.column_offset += pad;
}

Ensemble Ensemble::truncated(std::size_t n) const {
  Ensemble out = *this;
  out.trees_.resize(std::min(n, trees_.size()));
  return out;
}

void Ensemble::add_tree_output(std::size_t t, const FeatureMatrix& features, std::span<const std::size_t> rows,
                               Matrix& out) const {
  const TreeEntry& entry = trees_[t];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto leaf = entry.tree.predict_row(features, rows[i]);
    for (std::size_t c = 0; c < leaf.size(); ++c) out(i, entry.column_offset + c) += learning_rate_ * leaf[c];
  }
}

Matrix Ensemble::predict(const FeatureMatrix& features, std::span<const std::size_t> rows) const {
  Matrix out(rows.size(), out_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= features.rows()) throw IndexError("Ensemble::predict: row " + std::to_string(rows[i]));
    std::copy(init_.begin(), init_.end(), out.row(i).begin());
  }
  for (std::size_t t = 0; t < trees_.size(); ++t) add_tree_output(t, features, rows, out);
  return out;
}

Matrix Ensemble::predict(const FeatureMatrix& features) const {
  std::vector<std::size_t> rows(features.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return predict(features, rows);
}

nlohmann::json Ensemble::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const TreeEntry& t : trees_) {
    nlohmann::json jt = t.tree.to_json();
    jt["column_offset"] = t.column_offset;
    trees.push_back(std::move(jt));
  }
  return {{"format_version", 1}, {"loss", loss_name(loss_)}, {"learning_rate", learning_rate_},
          {"init_prediction", init_}, {"trees", std::move(trees)}};
}

Ensemble Ensemble::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw LoadError("ensemble: unsupported format_version");
    Ensemble e(parse_loss(j.at("loss").get<std::string>()), j.at("learning_rate").get<double>(),
               j.at("init_prediction").get<std::vector<double>>());
    for (const auto& jt : j.at("trees")) e.append(DecisionTree::from_json(jt), jt.at("column_offset").get<std::size_t>());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError(std::string("ensemble: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Boosting

Matrix negative_gradient(BoostLoss loss, const Matrix& pred, const Matrix& targets) {
  if (pred.rows() != targets.rows()) throw ShapeError("negative_gradient: row count mismatch");
  if (loss == BoostLoss::SquaredError) {
    if (!pred.same_shape(targets)) {
      throw ShapeError("negative_gradient: " + pred.shape_string() + " vs " + targets.shape_string());
    }
    Matrix out = targets;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= pred.data()[i];
    return out;
  }
  if (targets.cols() != 1) throw ShapeError("negative_gradient: cross-entropy expects a label column");
  Matrix out(pred.rows(), pred.cols());
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    const auto z = pred.row(r);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const auto label = static_cast<std::size_t>(targets(r, 0));
    if (label >= pred.cols()) throw IndexError("negative_gradient: label " + std::to_string(label));
    for (std::size_t c = 0; c < pred.cols(); ++c) out(r, c) = (c == label ? 1.0 : 0.0) - std::exp(z[c] - zmax) / denom;
  }
  return out;
}

std::vector<double> initial_prediction(BoostLoss loss, const Matrix& targets, std::span<const std::size_t> rows,
                                       std::size_t num_classes) {
  if (rows.empty()) throw ContractError("initial_prediction: empty row set");
  const auto n = static_cast<double>(rows.size());
  if (loss == BoostLoss::SquaredError) {
    std::vector<double> mean(targets.cols(), 0.0);
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < targets.cols(); ++c) mean[c] += targets(r, c);
    for (double& m : mean) m /= n;
    return mean;
  }
  if (num_classes < 2) throw ConfigError("initial_prediction: cross-entropy needs num_classes >= 2");
  std::vector<double> counts(num_classes, 0.0);
  for (std::size_t r : rows) {
    const auto label = static_cast<std::size_t>(targets(r, 0));
    if (label >= num_classes) throw IndexError("initial_prediction: label " + std::to_string(label));
    counts[label] += 1.0;
  }
  std::vector<double> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) out[c] = std::log((counts[c] + 1.0) / (n + static_cast<double>(num_classes)));
  return out;
}

Ensemble boost(const FeatureMatrix& features, const Matrix& targets, std::span<const std::size_t> rows,
               const BoostParams& params, const Ensemble* warm) {
  if (params.n_trees < 1) throw ConfigError("boost: need at least one tree");
  check_fit_inputs(features, targets, rows, params.tree);
  const auto ordered = sorted_rows(rows);
  Ensemble ensemble = warm != nullptr
                          ? *warm
                          : Ensemble(params.loss, params.learning_rate,
                                     initial_prediction(params.loss, targets, ordered, params.num_classes));
  if (warm != nullptr && warm->loss() != params.loss) throw ConfigError("boost: warm ensemble uses a different loss");

  const Matrix start = ensemble.predict(features, ordered);
  Matrix pred(features.rows(), ensemble.out_dim());
  for (std::size_t i = 0; i < ordered.size(); ++i) std::copy_n(start.row(i).data(), start.cols(), pred.row(ordered[i]).data());

  const SortedColumns sorted = presort(features, ordered);
  const double lr = ensemble.learning_rate();
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    Matrix grad = negative_gradient(params.loss, pred, targets);
    DecisionTree tree = fit_presorted(features, grad, ordered, sorted, params.tree);
    for (std::size_t r : ordered) {
      const auto leaf = tree.predict_row(features, r);
      for (std::size_t c = 0; c < leaf.size(); ++c) pred(r, c) += lr * leaf[c];
    }
    ensemble.append(std::move(tree), 0);
  }
  return ensemble;
}

double boost_block(Ensemble& ensemble, const FeatureMatrix& features, const Matrix& targets,
                   std::span<const std::size_t> rows, std::size_t k, const TreeParams& tree,
                   std::size_t column_offset) {
  if (k < 1) throw ConfigError("boost_block: need at least one tree");
  check_fit_inputs(features, targets, rows, tree);
  if (column_offset + targets.cols() > ensemble.out_dim()) {
    throw ShapeError("boost_block: targets with " + std::to_string(targets.cols()) + " columns at offset " +
                     std::to_string(column_offset) + " exceed " + std::to_string(ensemble.out_dim()) + " outputs");
  }
  const auto ordered = sorted_rows(rows);
  const SortedColumns sorted = presort(features, ordered);
  const double lr = ensemble.learning_rate();
  Matrix block_pred(features.rows(), targets.cols());
  double total_gain = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    Matrix residual = negative_gradient(BoostLoss::SquaredError, block_pred, targets);
    DecisionTree fitted = fit_presorted(features, residual, ordered, sorted, tree);
    for (const TreeNode& n : fitted.nodes())
      if (!n.is_leaf) total_gain += n.gain;
    for (std::size_t r : ordered) {
      const auto leaf = fitted.predict_row(features, r);
      for (std::size_t c = 0; c < leaf.size(); ++c) block_pred(r, c) += lr * leaf[c];
    }
    ensemble.append(std::move(fitted), column_offset);
  }
  return total_gain;
}

EarlyStoppedBoost boost_with_early_stopping(const FeatureMatrix& features, const Matrix& targets,
                                            std::span<const std::size_t> train, std::span<const std::size_t> val,
                                            const BoostParams& params, std::size_t patience,
                                            std::span<const std::size_t> monitor) {
  if (params.n_trees < 1) throw ConfigError("boost_with_early_stopping: need at least one tree");
  if (val.empty()) throw ContractError("boost_with_early_stopping: empty validation set");
  check_fit_inputs(features, targets, train, params.tree);
  for (auto part : {val, monitor})
    for (std::size_t r : part)
      if (r >= features.rows()) throw IndexError("boost_with_early_stopping: row " + std::to_string(r));
  const auto ordered = sorted_rows(train);
  Ensemble ensemble(params.loss, params.learning_rate,
                    initial_prediction(params.loss, targets, ordered, params.num_classes));
  Matrix pred(features.rows(), ensemble.out_dim());
  std::vector<std::size_t> all(ordered);
  all.insert(all.end(), val.begin(), val.end());
  all.insert(all.end(), monitor.begin(), monitor.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (std::size_t r : all) std::copy(ensemble.init_prediction().begin(), ensemble.init_prediction().end(), pred.row(r).begin());

  const bool higher_better = params.loss == BoostLoss::CrossEntropy;
  const SortedColumns sorted = presort(features, ordered);
  EarlyStoppedBoost result;
  double best = metric(params.loss, pred, targets, val);
  std::size_t best_iter = 0;
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    Matrix grad = negative_gradient(params.loss, pred, targets);
    DecisionTree tree = fit_presorted(features, grad, ordered, sorted, params.tree);
    for (std::size_t r : all) {
      const auto leaf = tree.predict_row(features, r);
      for (std::size_t c = 0; c < leaf.size(); ++c) pred(r, c) += params.learning_rate * leaf[c];
    }
    ensemble.append(std::move(tree), 0);
    const double m = metric(params.loss, pred, targets, val);
    result.val_curve.push_back(m);
    if (!monitor.empty()) result.monitor_curve.push_back(metric(params.loss, pred, targets, monitor));
    if (higher_better ? m > best : m < best) {
      best = m;
      best_iter = t + 1;
    } else if (t + 1 - best_iter >= patience) {
      break;
    }
  }
  result.best_iteration = best_iter;
  result.ensemble = ensemble.truncated(best_iter);
  return result;
}

}  // namespace bgnn
