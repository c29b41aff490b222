#include "bgnn/bgnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "bgnn/errors.hpp"

namespace bgnn {

namespace {

constexpr int kFormatVersion = 1;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void require_split(const DataSplit& split, std::size_t n) {
  if (split.train.empty()) throw ContractError("training split is empty");
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (std::size_t r : *part)
      if (r >= n) throw IndexError("split row " + std::to_string(r) + " outside " + std::to_string(n) + " nodes");
}

Matrix gbdt_targets(const TargetVector& y) {
  // Class labels and regression values both travel as a single column.
  Matrix out(y.size(), 1);
  for (std::size_t v = 0; v < y.size(); ++v)
    if (y.labeled[v]) out(v, 0) = y.values[v];
  return out;
}

void check_finite_matrix(const Matrix& m, std::size_t epoch, const char* phase) {
  if (!m.all_finite())
    throw NumericError("epoch " + std::to_string(epoch) + ", " + phase + ": non-finite values");
}

}  // namespace

FeatureEncoder FeatureEncoder::fit(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("FeatureEncoder::fit: no rows");
  FeatureEncoder enc;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    ColumnCode code;
    if (x.kind(c) == ColumnKind::Categorical) {
      code.categorical = true;
      code.categories = x.schema().columns[c].categories.size();
      enc.width_ += code.categories;
    } else {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t r : rows)
        if (!x.missing(r, c)) {
          sum += x.value(r, c);
          ++count;
        }
      if (count > 0) code.mean = sum / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t r : rows)
        if (!x.missing(r, c)) ss += (x.value(r, c) - code.mean) * (x.value(r, c) - code.mean);
      const double sd = count > 0 ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
      code.scale = sd > 0.0 ? 1.0 / sd : 1.0;
      enc.width_ += 1;
    }
    enc.columns_.push_back(code);
  }
  return enc;
}

Matrix FeatureEncoder::transform(const FeatureMatrix& x) const {
  if (x.cols() != columns_.size())
    throw ShapeError("FeatureEncoder: expected " + std::to_string(columns_.size()) + " columns, got " +
                     std::to_string(x.cols()));
  Matrix out(x.rows(), width_, 0.0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    const ColumnCode& code = columns_[c];
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (x.missing(r, c)) continue;
      if (code.categorical) {
        const auto k = static_cast<std::size_t>(x.value(r, c));
        if (k < code.categories) out(r, offset + k) = 1.0;
      } else {
        out(r, offset) = (x.value(r, c) - code.mean) * code.scale;
      }
    }
    offset += code.categorical ? code.categories : 1;
  }
  return out;
}

nlohmann::json FeatureEncoder::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const ColumnCode& c : columns_) {
    if (c.categorical) cols.push_back({{"categorical", true}, {"categories", c.categories}});
    else cols.push_back({{"categorical", false}, {"mean", c.mean}, {"scale", c.scale}});
  }
  return {{"format_version", kFormatVersion}, {"columns", cols}};
}

FeatureEncoder FeatureEncoder::from_json(const nlohmann::json& j) {
  FeatureEncoder enc;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) throw LoadError("encoder: unsupported format_version");
    for (const auto& jc : j.at("columns")) {
      ColumnCode c;
      c.categorical = jc.at("categorical").get<bool>();
      if (c.categorical) {
        c.categories = jc.at("categories").get<std::size_t>();
        enc.width_ += c.categories;
      } else {
        c.mean = jc.at("mean").get<double>();
        c.scale = jc.at("scale").get<double>();
        enc.width_ += 1;
      }
      enc.columns_.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("encoder: ") + e.what());
  }
  return enc;
}

std::string_view to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::Raw: return "raw";
    case FeatureMode::Replace: return "replace";
    case FeatureMode::Append: return "append";
  }
  return "unknown";
}

FeatureMode parse_feature_mode(std::string_view name) {
  if (name == "raw") return FeatureMode::Raw;
  if (name == "replace") return FeatureMode::Replace;
  if (name == "append") return FeatureMode::Append;
  throw ConfigError("unknown feature mode '" + std::string(name) + "'");
}

std::size_t input_width(FeatureMode mode, std::size_t enc, std::size_t d_f) {
  switch (mode) {
    case FeatureMode::Raw: return enc;
    case FeatureMode::Replace: return d_f;
    case FeatureMode::Append: return enc + d_f;
  }
  return 0;
}

Matrix update_features(const Matrix& encoded, const Matrix& fx, FeatureMode mode, std::size_t d_f) {
  switch (mode) {
    case FeatureMode::Raw:
      return encoded;
    case FeatureMode::Replace:
      return fx;
    case FeatureMode::Append: {
      if (encoded.rows() != fx.rows())
        throw ShapeError("update_features: " + std::to_string(encoded.rows()) + " encoded rows vs " +
                         std::to_string(fx.rows()) + " GBDT rows");
      if (d_f == 0) d_f = fx.cols();
      const std::size_t out_w = encoded.cols() + d_f;
      if (fx.cols() != d_f && fx.cols() != out_w)
        throw ShapeError("update_features: GBDT output has " + std::to_string(fx.cols()) + " columns, expected " +
                         std::to_string(d_f) + " or " + std::to_string(out_w));
      Matrix out(encoded.rows(), out_w, 0.0);
      const std::size_t shift = out_w - fx.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < encoded.cols(); ++c) out(r, c) = encoded(r, c);
        for (std::size_t c = 0; c < fx.cols(); ++c) out(r, shift + c) += fx(r, c);
      }
      return out;
    }
  }
  throw ContractError("update_features: unhandled mode");
}

Matrix GraphPredictor::gnn_input(const FeatureMatrix& x) const {
  const Matrix enc = encoder.transform(x);
  if (mode == FeatureMode::Raw) return enc;
  return update_features(enc, gbdt.predict(x), mode, gbdt_columns);
}

Matrix GraphPredictor::predict(const Graph& graph, const FeatureMatrix& x, ForwardTrace* trace) const {
  return gnn.predict(graph, gnn_input(x), trace);
}

nlohmann::json GraphPredictor::to_json() const {
  nlohmann::json j{{"format_version", kFormatVersion},
                   {"mode", to_string(mode)},
                   {"gbdt_columns", gbdt_columns},
                   {"encoder", encoder.to_json()},
                   {"gnn", gnn.to_json()}};
  if (mode != FeatureMode::Raw) j["gbdt"] = gbdt.to_json();
  return j;
}

GraphPredictor GraphPredictor::from_json(const nlohmann::json& j) {
  GraphPredictor p;
  try {
    if (j.at("format_version").get<int>() != kFormatVersion) throw LoadError("model: unsupported format_version");
    p.mode = parse_feature_mode(j.at("mode").get<std::string>());
    p.gbdt_columns = j.at("gbdt_columns").get<std::size_t>();
    p.encoder = FeatureEncoder::from_json(j.at("encoder"));
    p.gnn = GnnModel::from_json(j.at("gnn"));
    if (p.mode != FeatureMode::Raw) p.gbdt = Ensemble::from_json(j.at("gbdt"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("model: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("model: ") + e.what());
  }
  return p;
}

bool higher_is_better(Task task) { return task == Task::Classification; }

double evaluate(const Matrix& pred, const TargetVector& y, std::span<const std::size_t> rows) {
  if (rows.empty()) return std::nan("");
  if (y.task == Task::Regression) {
    double s = 0.0;
    for (std::size_t r : rows) s += (pred(r, 0) - y.values[r]) * (pred(r, 0) - y.values[r]);
    return std::sqrt(s / static_cast<double>(rows.size()));
  }
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    const auto row = pred.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += static_cast<double>(best) == y.values[r];
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::string History::to_jsonl(bool with_timing) const {
  std::string out;
  for (const EpochRecord& e : epochs) {
    nlohmann::ordered_json j{{"epoch", e.epoch},
                             {"train_loss", e.train_loss},
                             {"val_metric", e.val_metric},
                             {"test_metric", e.test_metric},
                             {"n_trees", e.n_trees}};
    if (with_timing) j["wall_ms"] = e.wall_ms;
    out += j.dump() + "\n";
  }
  return out;
}

EarlyStopper::EarlyStopper(std::size_t patience, bool higher_better)
    : patience_(patience), higher_better_(higher_better) {
  if (patience < 1) throw ConfigError("early stopping patience must be at least 1");
}

bool EarlyStopper::update(double metric) {
  ++epoch_;
  const bool better = best_epoch_ == 0 || (higher_better_ ? metric > best_ : metric < best_);
  if (better) {
    best_ = metric;
    best_epoch_ = epoch_;
  }
  return better;
}

bool EarlyStopper::should_stop() const noexcept { return best_epoch_ > 0 && epoch_ - best_epoch_ >= patience_; }

bool early_stop(std::span<const double> history, std::size_t patience, bool higher_better) {
  EarlyStopper s(patience, higher_better);
  for (double m : history) s.update(m);
  return s.should_stop();
}

void TrainConfig::validate() const {
  if (epochs < 1 || trees_per_epoch < 1 || gnn_steps < 1)
    throw ConfigError("train config: epochs, trees per epoch and GNN steps must be at least 1");
  if (!(gbdt_lr > 0.0)) throw ConfigError("train config: GBDT learning rate must be positive");
  if (!(feature_lr >= 0.0)) throw ConfigError("train config: feature learning rate must be non-negative");
  if (mode == FeatureMode::Raw) throw ConfigError("train config: BGNN needs replace or append mode");
  if (patience < 1) throw ConfigError("train config: patience must be at least 1");
}

namespace {

// Runs `epochs` single-step epochs of a GNN on a fixed input, keeping the
// best validation snapshot in `model.gnn`.
History fit_gnn(GraphPredictor& model, const Graph& graph, const Matrix& input,
                const TargetVector& y, const DataSplit& split, const GnnTrainConfig& config) {
  if (config.epochs < 1) throw ConfigError("GNN epochs must be at least 1");
  GnnConfig gc = config.gnn;
  gc.in_dim = input.cols();
  gc.out_dim = y.out_dim();
  GnnModel g(gc);
  GnnModel best = g.clone();
  Optimizer opt(config.optimizer);
  EarlyStopper stopper(config.patience, higher_is_better(y.task));
  History h;
  const auto start = Clock::now();
  Tensor xt(input, false);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    TrainStepsResult steps;
    try {
      steps = train_steps(g, graph, xt, y, split.train, 1, opt, 0.0, false);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", gnn: " + e.what());
    }
    const Matrix pred = g.predict(graph, input);
    EpochRecord rec{epoch, steps.losses.back(), evaluate(pred, y, split.val), evaluate(pred, y, split.test),
                    elapsed_ms(start), model.mode == FeatureMode::Raw ? 0 : model.gbdt.num_trees()};
    h.epochs.push_back(rec);
    if (stopper.update(rec.val_metric)) best = g.clone();
    if (stopper.should_stop()) break;
  }
  h.best_epoch = stopper.best_epoch();
  h.best_val = stopper.best();
  model.gnn = std::move(best);
  return h;
}

}  // namespace

TrainResult train_gnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                      const GnnTrainConfig& config) {
  require_split(split, x.rows());
  TrainResult res;
  res.model.encoder = FeatureEncoder::fit(x, split.train);
  res.model.mode = FeatureMode::Raw;
  const Matrix input = res.model.encoder.transform(x);
  res.history = fit_gnn(res.model, graph, input, y, split, config);
  return res;
}

TrainResult train_resgnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                         const ResGnnConfig& config) {
  require_split(split, x.rows());
  if (config.mode == FeatureMode::Raw) throw ConfigError("Res-GNN needs replace or append mode");
  TrainResult res;
  res.model.encoder = FeatureEncoder::fit(x, split.train);
  res.model.mode = config.mode;
  BoostParams bp = config.gbdt;
  bp.loss = y.task == Task::Regression ? BoostLoss::SquaredError : BoostLoss::CrossEntropy;
  bp.num_classes = static_cast<std::size_t>(y.num_classes);
  const Matrix targets = gbdt_targets(y);
  const std::span<const std::size_t> val = split.val.empty() ? std::span<const std::size_t>(split.train) : split.val;
  res.model.gbdt = boost_with_early_stopping(x, targets, split.train, val, bp, config.gbdt_patience).ensemble;
  res.model.gbdt_columns = res.model.gbdt.out_dim();
  const Matrix input = res.model.gnn_input(x);
  res.history = fit_gnn(res.model, graph, input, y, split, config.gnn);
  return res;
}

TrainResult train_bgnn(const Graph& graph, const FeatureMatrix& x, const TargetVector& y, const DataSplit& split,
                       const TrainConfig& config) {
  config.validate();
  require_split(split, x.rows());
  const auto start = Clock::now();
  TrainResult res;
  GraphPredictor& model = res.model;
  model.mode = config.mode;
  model.encoder = FeatureEncoder::fit(x, split.train);
  const Matrix encoded = model.encoder.transform(x);

  BoostParams bp;
  bp.loss = y.task == Task::Regression ? BoostLoss::SquaredError : BoostLoss::CrossEntropy;
  bp.n_trees = config.trees_per_epoch;
  bp.learning_rate = config.gbdt_lr;
  bp.tree = config.tree;
  bp.num_classes = static_cast<std::size_t>(y.num_classes);
  Ensemble& f = model.gbdt;
  f = boost(x, gbdt_targets(y), split.train, bp);

  const std::size_t d_f = f.out_dim();
  model.gbdt_columns = d_f;
  const std::size_t width = input_width(config.mode, encoded.cols(), d_f);
  const bool full = config.mode == FeatureMode::Append && config.full_residual;

  GnnConfig gc = config.gnn;
  gc.in_dim = width;
  gc.out_dim = y.out_dim();
  GnnModel g(gc);
  Optimizer opt(config.optimizer);
  const double eta =
      config.feature_lr * (config.feature_lr_per_row ? static_cast<double>(split.train.size()) : 1.0);

  EarlyStopper stopper(config.patience, higher_is_better(y.task));
  GnnModel best_g = g.clone();
  std::size_t best_trees = f.num_trees();
  Matrix next_targets;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (epoch > 1) {
      if (full && f.out_dim() < width) f.expand_outputs(width);
      // Without full residuals only GBDT's own (trailing) columns are fitted.
      Matrix block = next_targets;
      if (config.mode == FeatureMode::Append && !full) {
        block = Matrix(next_targets.rows(), d_f);
        for (std::size_t r = 0; r < block.rows(); ++r)
          for (std::size_t c = 0; c < d_f; ++c) block(r, c) = next_targets(r, width - d_f + c);
      }
      boost_block(f, x, block, split.train, config.trees_per_epoch, config.tree, 0);
    }
    const Matrix fx = f.predict(x);
    check_finite_matrix(fx, epoch, "gbdt");
    const Matrix x_prime = update_features(encoded, fx, config.mode, d_f);

    std::optional<GnnModel> before;
    if (config.on_epoch) before = g.clone();
    Tensor xt(x_prime, true);
    TrainStepsResult steps;
    try {
      steps = train_steps(g, graph, xt, y, split.train, config.gnn_steps, opt, eta, true);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", gnn: " + e.what());
    }
    next_targets = xt.value();
    for (std::size_t i = 0; i < next_targets.size(); ++i) next_targets.values()[i] -= x_prime.values()[i];
    check_finite_matrix(next_targets, epoch, "feature update");
    if (config.on_epoch) config.on_epoch(EpochTrace{epoch, &x_prime, &next_targets, &*before});

    const Matrix pred = g.predict(graph, x_prime);
    EpochRecord rec{epoch, steps.losses.back(), evaluate(pred, y, split.val), evaluate(pred, y, split.test),
                    elapsed_ms(start), f.num_trees()};
    res.history.epochs.push_back(rec);
    if (stopper.update(rec.val_metric)) {
      best_g = g.clone();
      best_trees = f.num_trees();
    }
    if (stopper.should_stop()) break;
  }
  res.history.best_epoch = stopper.best_epoch();
  res.history.best_val = stopper.best();
  f = f.truncated(best_trees);
  model.gnn = std::move(best_g);
  return res;
}

}  // namespace bgnn
