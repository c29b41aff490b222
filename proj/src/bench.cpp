#include "bgnn/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "bgnn/errors.hpp"
#include "bgnn/rng.hpp"

namespace bgnn {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

constexpr std::pair<ModelKind, std::string_view> kModelNames[] = {
    {ModelKind::Gbdt, "gbdt"},   {ModelKind::LightGbm, "lightgbm"}, {ModelKind::Gcn, "gcn"},
    {ModelKind::Gat, "gat"},     {ModelKind::Agnn, "agnn"},         {ModelKind::Appnp, "appnp"},
    {ModelKind::Fcnn, "fcnn"},   {ModelKind::FcnnGnn, "fcnn-gnn"},  {ModelKind::ResGnn, "resgnn"},
    {ModelKind::Bgnn, "bgnn"},
};

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

ojson list(std::initializer_list<ojson> values) {
  ojson out = ojson::array();
  for (const auto& v : values) out.push_back(v);
  return out;
}

void add_gnn_keys(Grid& g, ModelKind kind) {
  g["dropout"] = list({0.0, 0.5});
  g["hidden_dim"] = list({64});
  if (kind == ModelKind::Gat) {
    g["heads"] = list({8});
    g["residual"] = list({false});
  }
  if (kind == ModelKind::Appnp) {
    g["alpha"] = list({0.1});
    g["propagation_steps"] = list({10});
  }
}

// Extra keys a user grid may set beyond the defaults.
std::vector<std::string_view> optional_keys(ModelKind kind) {
  switch (kind) {
    case ModelKind::Gcn:
    case ModelKind::Agnn:
    case ModelKind::Fcnn:
      return {};
    case ModelKind::Gat:
      return {"out_heads"};
    case ModelKind::Appnp:
      return {};
    case ModelKind::FcnnGnn:
    case ModelKind::ResGnn:
      return {"out_heads", "alpha", "propagation_steps"};
    case ModelKind::Bgnn:
      return {"out_heads", "alpha", "propagation_steps", "gnn_steps", "full_residual", "feature_lr_per_row"};
    case ModelKind::Gbdt:
    case ModelKind::LightGbm:
      return {};
  }
  return {};
}

GnnKind gnn_kind_of(ModelKind k) {
  switch (k) {
    case ModelKind::Gcn: return GnnKind::GCN;
    case ModelKind::Gat: return GnnKind::GAT;
    case ModelKind::Agnn: return GnnKind::AGNN;
    case ModelKind::Appnp: return GnnKind::APPNP;
    case ModelKind::Fcnn: return GnnKind::FCNN;
    default: throw ContractError("no single GNN kind for " + std::string(to_string(k)));
  }
}

std::size_t get_size(const GridPoint& p, const char* key, std::size_t fallback) {
  return p.contains(key) ? p.at(key).get<std::size_t>() : fallback;
}
double get_double(const GridPoint& p, const char* key, double fallback) {
  return p.contains(key) ? p.at(key).get<double>() : fallback;
}
bool get_bool(const GridPoint& p, const char* key, bool fallback) {
  return p.contains(key) ? p.at(key).get<bool>() : fallback;
}

GnnConfig gnn_config(const GridPoint& p, GnnKind kind, std::uint64_t seed) {
  GnnConfig c;
  c.kind = kind;
  c.hidden_dim = get_size(p, "hidden_dim", 64);
  c.dropout = get_double(p, "dropout", 0.0);
  c.heads = get_size(p, "heads", 8);
  c.out_heads = get_size(p, "out_heads", 1);
  c.residual = get_bool(p, "residual", false);
  c.alpha = get_double(p, "alpha", 0.1);
  c.propagation_steps = get_size(p, "propagation_steps", 10);
  c.fcnn_layers = get_size(p, "layers", 2);
  c.pre_layers = get_size(p, "pre_layers", 0);
  c.seed = seed;
  return c;
}

OptimizerConfig adam(const GridPoint& p) { return {OptimizerConfig::Kind::Adam, get_double(p, "lr", 0.01)}; }

FeatureMode mode_of(const GridPoint& p, FeatureMode fallback) {
  return p.contains("mode") ? parse_feature_mode(p.at("mode").get<std::string>()) : fallback;
}

std::vector<double> test_curve(const History& h) {
  std::vector<double> out;
  out.reserve(h.epochs.size());
  for (const auto& e : h.epochs) out.push_back(e.test_metric);
  return out;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& [k, name] : kModelNames)
    if (k == kind) return name;
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (const auto& [k, n] : kModelNames)
    if (n == name) return k;
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

Grid default_grid(ModelKind kind) {
  Grid g = Grid::object();
  g["lr"] = list({0.1, 0.01});
  switch (kind) {
    case ModelKind::Gbdt:
      g["depth"] = list({4, 6});
      g["n_trees"] = list({1000});
      g["patience"] = list({100});
      break;
    case ModelKind::LightGbm:
      g["num_leaves"] = list({15, 63});
      g["n_trees"] = list({1000});
      g["patience"] = list({100});
      break;
    case ModelKind::Gcn:
    case ModelKind::Gat:
    case ModelKind::Agnn:
    case ModelKind::Appnp:
      add_gnn_keys(g, kind);
      g["epochs"] = list({2000});
      g["patience"] = list({200});
      break;
    case ModelKind::Fcnn:
      g["dropout"] = list({0.0, 0.5});
      g["layers"] = list({2, 3});
      g["hidden_dim"] = list({64});
      g["epochs"] = list({5000});
      g["patience"] = list({2000});
      break;
    case ModelKind::FcnnGnn:
      add_gnn_keys(g, ModelKind::Gat);
      g["gnn"] = list({"gat"});
      g["pre_layers"] = list({2});
      g["epochs"] = list({2000});
      g["patience"] = list({200});
      break;
    case ModelKind::ResGnn:
      add_gnn_keys(g, ModelKind::Gat);
      g["gnn"] = list({"gat"});
      g["mode"] = list({"replace", "append"});
      g["epochs"] = list({1000});
      g["patience"] = list({100});
      g["gbdt_trees"] = list({1000});
      g["gbdt_lr"] = list({0.1});
      g["gbdt_depth"] = list({6});
      g["gbdt_patience"] = list({100});
      break;
    case ModelKind::Bgnn:
      add_gnn_keys(g, ModelKind::Gat);
      g["gnn"] = list({"gat"});
      g["mode"] = list({"replace", "append"});
      g["k"] = list({10, 20});
      g["depth"] = list({6});
      g["epochs"] = list({200});
      g["patience"] = list({10});
      g["gbdt_lr"] = list({0.1});
      g["feature_lr"] = list({0.1});
      break;
  }
  return g;
}

void validate_grid(ModelKind kind, const Grid& grid) {
  if (!grid.is_object()) throw ConfigError("grid must be an object");
  const Grid defaults = default_grid(kind);
  const auto extra = optional_keys(kind);
  for (const auto& [key, values] : grid.items()) {
    const bool known = defaults.contains(key) || std::find(extra.begin(), extra.end(), key) != extra.end();
    if (!known) throw ConfigError("grid key '" + key + "' is not valid for " + std::string(to_string(kind)));
    if (!values.is_array() || values.empty())
      throw ConfigError("grid key '" + key + "' needs a nonempty list of values");
    for (const auto& v : values) {
      const bool ok = key == "gnn" || key == "mode" ? v.is_string()
                      : key == "residual" || key == "full_residual" || key == "feature_lr_per_row"
                          ? v.is_boolean()
                      : key == "lr" || key == "dropout" || key == "alpha" || key == "gbdt_lr" || key == "feature_lr"
                          ? v.is_number()
                          : v.is_number_integer() && v.get<std::int64_t>() >= 0;
      if (!ok) throw ConfigError("grid key '" + key + "' has a value of the wrong type: " + v.dump());
      if (key == "gnn") {
        const GnnKind g = parse_gnn_kind(v.get<std::string>());
        if (g == GnnKind::FCNN) throw ConfigError("grid key 'gnn' must name a graph model");
      }
      if (key == "mode" && parse_feature_mode(v.get<std::string>()) == FeatureMode::Raw)
        throw ConfigError("grid key 'mode' must be replace or append");
    }
  }
}

std::vector<GridPoint> expand_grid(const Grid& grid) {
  std::vector<GridPoint> points{GridPoint::object()};
  for (const auto& [key, values] : grid.items()) {
    std::vector<GridPoint> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        GridPoint q = p;
        q[key] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
  static const std::set<std::string> keys{"format_version", "dataset",  "model",      "grid",
                                          "seeds",          "repetitions", "workers", "output_dir"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!keys.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  if (j.value("format_version", kFormatVersion) != kFormatVersion)
    throw ConfigError("unsupported config format_version " + j.at("format_version").dump());
  if (!j.contains("dataset") || !j.contains("model")) throw ConfigError("config needs 'dataset' and 'model'");
  ExperimentConfig c;
  try {
    const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };
    c.dataset = resolve(j.at("dataset").get<std::string>());
    c.model = parse_model_kind(j.at("model").get<std::string>());
    if (j.contains("grid")) c.grid = Grid(j.at("grid"));
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.repetitions = j.value("repetitions", c.repetitions);
    c.workers = j.value("workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  return {{"format_version", kFormatVersion},
          {"dataset", dataset.string()},
          {"model", to_string(model)},
          {"grid", json(grid)},
          {"seeds", seeds},
          {"repetitions", repetitions},
          {"workers", workers},
          {"output_dir", output_dir.string()}};
}

Grid ExperimentConfig::effective_grid() const {
  Grid g = default_grid(model);
  for (const auto& [k, v] : grid.items()) g[k] = v;
  return g;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (repetitions == 0) throw ConfigError("repetitions must be at least 1");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  validate_grid(model, grid);
}

double RunReport::test_mean() const {
  if (!selected) throw ContractError("no grid point succeeded");
  return summaries.at(*selected).test_mean;
}

double RunReport::test_std() const {
  if (!selected) throw ContractError("no grid point succeeded");
  return summaries.at(*selected).test_std;
}

std::string RunReport::to_jsonl() const {
  std::string out;
  const auto line = [&](const ojson& j) { out += j.dump() + '\n'; };
  line({{"format_version", kFormatVersion},
        {"type", "header"},
        {"model", model},
        {"dataset", dataset},
        {"higher_better", higher_better}});
  for (const auto& r : runs) {
    ojson j{{"type", "run"}, {"point", r.point}, {"seed", r.seed}, {"rep", r.rep}, {"failed", r.failed}};
    if (r.failed) {
      j["error"] = r.error;
    } else {
      j["val"] = r.outcome.val_metric;
      j["test"] = r.outcome.test_metric;
      j["curve"] = r.outcome.curve;
    }
    line(j);
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    ojson j{{"type", "point"}, {"index", i}, {"params", points[i]}};
    if (i < summaries.size()) {
      const auto& s = summaries[i];
      j["failed"] = s.failed;
      if (!s.failed) {
        j["val_mean"] = s.val_mean;
        j["test_mean"] = s.test_mean;
        j["test_std"] = s.test_std;
      }
    }
    line(j);
  }
  ojson summary{{"type", "summary"}};
  if (selected) {
    summary["selected"] = *selected;
    summary["test_mean"] = test_mean();
    summary["test_std"] = test_std();
  } else {
    summary["selected"] = nullptr;
  }
  line(summary);
  return out;
}

std::string RunReport::timing_jsonl() const {
  std::string out;
  for (const auto& r : runs)
    out += ojson{{"format_version", kFormatVersion},
                 {"point", r.point},
                 {"seed", r.seed},
                 {"rep", r.rep},
                 {"wall_seconds", r.outcome.wall_seconds}}
               .dump() +
           '\n';
  return out;
}

RunReport RunReport::from_jsonl(const std::string& text) {
  RunReport rep;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (raw.empty()) continue;
    try {
      const json j = json::parse(raw);
      const std::string type = j.at("type");
      if (type == "header") {
        if (j.at("format_version") != kFormatVersion)
          throw LoadError("unsupported report format_version " + j.at("format_version").dump());
        rep.model = j.at("model");
        rep.dataset = j.at("dataset");
        rep.higher_better = j.at("higher_better");
        header = true;
      } else if (type == "run") {
        RunRecord r;
        r.point = j.at("point");
        r.seed = j.at("seed");
        r.rep = j.at("rep");
        r.failed = j.at("failed");
        if (r.failed) {
          r.error = j.value("error", "");
        } else {
          r.outcome.val_metric = j.at("val");
          r.outcome.test_metric = j.at("test");
          r.outcome.curve = j.at("curve").get<std::vector<double>>();
        }
        rep.runs.push_back(std::move(r));
      } else if (type == "point") {
        if (j.at("index") != rep.points.size()) throw LoadError("grid points out of order");
        rep.points.push_back(GridPoint(j.at("params")));
      }
    } catch (const json::exception& e) {
      throw LoadError("report line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) throw LoadError("report has no header line");
  for (const auto& r : rep.runs)
    if (r.point >= rep.points.size()) throw LoadError("run refers to unknown grid point");
  summarize(rep);
  return rep;
}

void summarize(RunReport& report, std::ostream* warn) {
  report.summaries.assign(report.points.size(), {});
  report.selected.reset();
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    PointSummary& s = report.summaries[i];
    std::vector<double> vals;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> tests;
    for (const auto& r : report.runs) {
      if (r.point != i) continue;
      if (r.failed) {
        if (!s.failed && warn) *warn << "warning: grid point " << i << " " << report.points[i].dump()
                                     << " failed (seed " << r.seed << ", rep " << r.rep << "): " << r.error << '\n';
        s.failed = true;
        continue;
      }
      vals.push_back(r.outcome.val_metric);
      const auto it = std::find(seeds.begin(), seeds.end(), r.seed);
      if (it == seeds.end()) {
        seeds.push_back(r.seed);
        tests.push_back({r.outcome.test_metric});
      } else {
        tests[static_cast<std::size_t>(it - seeds.begin())].push_back(r.outcome.test_metric);
      }
    }
    if (vals.empty()) s.failed = true;
    if (s.failed) continue;
    s.val_mean = mean(vals);
    std::vector<double> per_seed;
    for (const auto& t : tests) per_seed.push_back(mean(t));
    s.test_mean = mean(per_seed);
    s.test_std = sample_std(per_seed);
    if (!report.selected) {
      report.selected = i;
    } else {
      const double best = report.summaries[*report.selected].val_mean;
      if (report.higher_better ? s.val_mean > best : s.val_mean < best) report.selected = i;
    }
  }
}

RunReport run_grid(const std::vector<GridPoint>& points, const std::vector<std::uint64_t>& seeds,
                   std::size_t repetitions, bool higher_better, std::size_t workers, const RunFn& fn,
                   std::ostream* warn) {
  if (points.empty() || seeds.empty() || repetitions == 0) throw ConfigError("run_grid: empty grid, seeds or reps");
  RunReport report;
  report.higher_better = higher_better;
  report.points = points;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::uint64_t s : seeds)
      for (std::size_t r = 0; r < repetitions; ++r) report.runs.push_back({.point = p, .seed = s, .rep = r, .failed = false, .error = {}, .outcome = {}});

  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < report.runs.size(); i = next++) {
      RunRecord& rec = report.runs[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        rec.outcome = fn(points[rec.point], rec.seed, rec.rep);
        if (!std::isfinite(rec.outcome.val_metric) || !std::isfinite(rec.outcome.test_metric))
          throw NumericError("non-finite metric");
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
        rec.outcome = {};
      }
      rec.outcome.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(workers, 1), report.runs.size());
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  summarize(report, warn);
  return report;
}

Matrix TrainedModel::predict(const Graph& graph, const FeatureMatrix& x) const {
  if (predictor) return predictor->predict(graph, x);
  if (gbdt) return gbdt->predict(x);
  throw ContractError("empty model");
}

json TrainedModel::to_json() const {
  json j{{"format_version", kFormatVersion}, {"model", to_string(kind)}, {"params", json(params)}};
  if (predictor) j["predictor"] = predictor->to_json();
  if (gbdt) j["gbdt"] = gbdt->to_json();
  return j;
}

TrainedModel TrainedModel::from_json(const json& j) {
  TrainedModel m;
  try {
    if (j.at("format_version") != kFormatVersion)
      throw LoadError("unsupported model format_version " + j.at("format_version").dump());
    m.kind = parse_model_kind(j.at("model").get<std::string>());
    m.params = GridPoint(j.at("params"));
    if (j.contains("predictor")) m.predictor = GraphPredictor::from_json(j.at("predictor"));
    if (j.contains("gbdt")) m.gbdt = Ensemble::from_json(j.at("gbdt"));
  } catch (const json::exception& e) {
    throw LoadError(std::string("bad model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("bad model file: ") + e.what());
  }
  if (m.predictor.has_value() == m.gbdt.has_value()) throw LoadError("model file needs exactly one of predictor, gbdt");
  return m;
}

DataSplit split_for_seed(const Dataset& ds, std::uint64_t seed) {
  return make_splits(ds.targets, 1, {0.6, 0.2, 0.2}, seed).front();
}

std::uint64_t model_seed(std::uint64_t seed, std::size_t rep) { return derive_key(mix64(seed), rep); }

FitResult fit_model(ModelKind kind, const GridPoint& params, const Dataset& ds, const DataSplit& split,
                    std::uint64_t seed) {
  const TargetVector& y = ds.targets;
  FitResult out;
  out.model.kind = kind;
  out.model.params = params;
  RunOutcome& o = out.outcome;
  TrainResult trained;
  try {
    switch (kind) {
      case ModelKind::Gbdt:
      case ModelKind::LightGbm: {
        BoostParams bp;
        bp.loss = y.task == Task::Regression ? BoostLoss::SquaredError : BoostLoss::CrossEntropy;
        bp.num_classes = static_cast<std::size_t>(y.num_classes);
        bp.n_trees = get_size(params, "n_trees", 1000);
        bp.learning_rate = get_double(params, "lr", 0.1);
        if (kind == ModelKind::Gbdt) {
          bp.tree.max_depth = get_size(params, "depth", 6);
        } else {
          bp.tree.max_depth = 64;
          bp.tree.max_leaves = get_size(params, "num_leaves", 31);
        }
        auto r = boost_with_early_stopping(ds.features, y.as_column(), split.train, split.val, bp,
                                           get_size(params, "patience", 100), split.test);
        const Matrix pred = r.ensemble.predict(ds.features);
        o.val_metric = evaluate(pred, y, split.val);
        o.test_metric = evaluate(pred, y, split.test);
        o.curve = std::move(r.monitor_curve);
        out.model.gbdt = std::move(r.ensemble);
        return out;
      }
      case ModelKind::Gcn:
      case ModelKind::Gat:
      case ModelKind::Agnn:
      case ModelKind::Appnp:
      case ModelKind::Fcnn:
      case ModelKind::FcnnGnn: {
        GnnTrainConfig c;
        c.epochs = get_size(params, "epochs", 2000);
        c.patience = get_size(params, "patience", 200);
        c.optimizer = adam(params);
        const GnnKind gk = kind == ModelKind::FcnnGnn ? parse_gnn_kind(params.at("gnn").get<std::string>())
                                                      : gnn_kind_of(kind);
        c.gnn = gnn_config(params, gk, seed);
        trained = train_gnn(ds.graph, ds.features, y, split, c);
        break;
      }
      case ModelKind::ResGnn: {
        ResGnnConfig c;
        c.gbdt.n_trees = get_size(params, "gbdt_trees", 1000);
        c.gbdt.learning_rate = get_double(params, "gbdt_lr", 0.1);
        c.gbdt.tree.max_depth = get_size(params, "gbdt_depth", 6);
        c.gbdt_patience = get_size(params, "gbdt_patience", 100);
        c.mode = mode_of(params, FeatureMode::Append);
        c.gnn.epochs = get_size(params, "epochs", 1000);
        c.gnn.patience = get_size(params, "patience", 100);
        c.gnn.optimizer = adam(params);
        c.gnn.gnn = gnn_config(params, parse_gnn_kind(params.value("gnn", "gat")), seed);
        trained = train_resgnn(ds.graph, ds.features, y, split, c);
        break;
      }
      case ModelKind::Bgnn: {
        TrainConfig c;
        c.epochs = get_size(params, "epochs", 200);
        c.trees_per_epoch = get_size(params, "k", 20);
        c.gnn_steps = get_size(params, "gnn_steps", c.trees_per_epoch);
        c.gbdt_lr = get_double(params, "gbdt_lr", 0.1);
        c.tree.max_depth = get_size(params, "depth", 6);
        c.feature_lr = get_double(params, "feature_lr", 0.1);
        c.feature_lr_per_row = get_bool(params, "feature_lr_per_row", true);
        c.optimizer = adam(params);
        c.mode = mode_of(params, FeatureMode::Replace);
        c.full_residual = get_bool(params, "full_residual", true);
        c.patience = get_size(params, "patience", 10);
        c.gnn = gnn_config(params, parse_gnn_kind(params.value("gnn", "gat")), seed);
        trained = train_bgnn(ds.graph, ds.features, y, split, c);
        break;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad grid point ") + params.dump() + ": " + e.what());
  }
  const Matrix pred = trained.model.predict(ds.graph, ds.features);
  o.val_metric = evaluate(pred, y, split.val);
  o.test_metric = evaluate(pred, y, split.test);
  o.curve = test_curve(trained.history);
  out.model.predictor = std::move(trained.model);
  return out;
}

RunReport run_grid(const ExperimentConfig& config, const Dataset& ds, std::ostream* warn) {
  config.validate();
  const Grid grid = config.effective_grid();
  validate_grid(config.model, grid);
  std::vector<DataSplit> splits;
  for (std::uint64_t s : config.seeds) splits.push_back(split_for_seed(ds, s));
  const auto fn = [&](const GridPoint& p, std::uint64_t seed, std::size_t rep) {
    const auto it = std::find(config.seeds.begin(), config.seeds.end(), seed);
    const DataSplit& split = splits[static_cast<std::size_t>(it - config.seeds.begin())];
    return fit_model(config.model, p, ds, split, model_seed(seed, rep)).outcome;
  };
  RunReport report = run_grid(expand_grid(grid), config.seeds, config.repetitions, higher_is_better(ds.targets.task),
                              config.workers, fn, warn);
  report.model = std::string(to_string(config.model));
  report.dataset = ds.manifest.name;
  return report;
}

double compute_gap(double r_model, double r_ref) {
  if (r_ref == 0.0) throw ContractError("compute_gap: reference metric is zero");
  return 100.0 * (r_model - r_ref) / r_ref;
}

double compute_gap(const RunReport& report, const RunReport& reference) {
  return compute_gap(report.test_mean(), reference.test_mean());
}

void export_curves(const RunReport& report, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "point,seed,rep,epoch,metric\n";
  for (const auto& r : report.runs) {
    if (r.failed) continue;
    for (std::size_t e = 0; e < r.outcome.curve.size(); ++e)
      out << r.point << ',' << r.seed << ',' << r.rep << ',' << e + 1 << ',' << number(r.outcome.curve[e]) << '\n';
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

void export_representations(const GraphPredictor& model, const Graph& graph, const FeatureMatrix& x,
                            const TargetVector& y, const fs::path& path) {
  if (y.size() != x.rows()) throw ShapeError("export_representations: targets and features differ in length");
  ForwardTrace trace;
  const Matrix pred = model.predict(graph, x, &trace);
  std::ofstream out = open_out(path);
  out << "node_id";
  for (std::size_t c = 0; c < trace.hidden.cols(); ++c) out << ",h" << c + 1;
  out << ",prediction,true_target\n";
  for (std::size_t v = 0; v < x.rows(); ++v) {
    out << v;
    for (std::size_t c = 0; c < trace.hidden.cols(); ++c) out << ',' << number(trace.hidden(v, c));
    if (y.task == Task::Regression) {
      out << ',' << number(pred(v, 0));
    } else {
      const auto row = pred.row(v);
      out << ',' << std::max_element(row.begin(), row.end()) - row.begin();
    }
    out << ',';
    if (y.labeled[v]) out << number(y.values[v]);
    out << '\n';
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

}  // namespace bgnn
