#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bgnn/bench.hpp"
#include "bgnn/errors.hpp"

namespace bgnn {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bgnn_bench_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Dataset& tiny() {
  static const Dataset ds = [] {
    SyntheticSpec s;
    s.n = 120;
    s.seed = 4;
    return generate_synthetic(s);
  }();
  return ds;
}

std::vector<GridPoint> two_points() {
  Grid g = Grid::object();
  g["a"] = Grid::array({0, 1});
  return expand_grid(g);
}

TEST(Grid, ExpandsInKeyOrder) {
  Grid g = Grid::object();
  g["lr"] = Grid::array({0.1, 0.01});
  g["dropout"] = Grid::array({0.0, 0.5});
  g["hidden_dim"] = Grid::array({64});
  const auto pts = expand_grid(g);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_EQ(pts[0].dump(), R"({"lr":0.1,"dropout":0.0,"hidden_dim":64})");
  EXPECT_EQ(pts[1].dump(), R"({"lr":0.1,"dropout":0.5,"hidden_dim":64})");
  EXPECT_EQ(pts[3].dump(), R"({"lr":0.01,"dropout":0.5,"hidden_dim":64})");
}

TEST(Grid, DefaultsAreValidAndSized) {
  for (ModelKind k : {ModelKind::Gbdt, ModelKind::LightGbm, ModelKind::Gcn, ModelKind::Gat, ModelKind::Agnn,
                      ModelKind::Appnp, ModelKind::Fcnn, ModelKind::FcnnGnn, ModelKind::ResGnn, ModelKind::Bgnn}) {
    EXPECT_NO_THROW(validate_grid(k, default_grid(k))) << to_string(k);
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  }
  EXPECT_EQ(expand_grid(default_grid(ModelKind::Bgnn)).size(), 16u);
  EXPECT_EQ(expand_grid(default_grid(ModelKind::Gat)).size(), 4u);
  EXPECT_EQ(expand_grid(default_grid(ModelKind::Fcnn)).size(), 8u);
}

TEST(Grid, RejectsBadKeysAndValues) {
  Grid g = Grid::object();
  g["depth"] = Grid::array({3});
  EXPECT_THROW(validate_grid(ModelKind::Gat, g), ConfigError);
  g = Grid::object();
  g["lr"] = Grid::array();
  EXPECT_THROW(validate_grid(ModelKind::Gat, g), ConfigError);
  g = Grid::object();
  g["hidden_dim"] = Grid::array({-1});
  EXPECT_THROW(validate_grid(ModelKind::Gat, g), ConfigError);
  g = Grid::object();
  g["mode"] = Grid::array({"raw"});
  EXPECT_THROW(validate_grid(ModelKind::Bgnn, g), ConfigError);
  g = Grid::object();
  g["gnn"] = Grid::array({"fcnn"});
  EXPECT_THROW(validate_grid(ModelKind::ResGnn, g), ConfigError);
  EXPECT_THROW(parse_model_kind("catboost"), ConfigError);
}

TEST(ExperimentConfig, ParsesAndValidates) {
  const auto j = nlohmann::json::parse(
      R"({"format_version":1,"dataset":"d/manifest.json","model":"bgnn","grid":{"k":[10]},"seeds":[3],"repetitions":1,"output_dir":"o"})");
  const ExperimentConfig c = ExperimentConfig::from_json(j, "/base");
  EXPECT_EQ(c.dataset, fs::path("/base/d/manifest.json"));
  EXPECT_EQ(c.model, ModelKind::Bgnn);
  EXPECT_EQ(c.effective_grid()["k"].dump(), "[10]");
  EXPECT_EQ(c.effective_grid()["mode"].size(), 2u);
  EXPECT_EQ(ExperimentConfig::from_json(c.to_json()).to_json(), c.to_json());

  auto bad = j;
  bad["seeds"] = nlohmann::json::array();
  EXPECT_THROW(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["colour"] = "red";
  EXPECT_THROW(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad["grid"] = {{"num_leaves", {15}}};
  EXPECT_THROW(ExperimentConfig::from_json(bad), ConfigError);
  bad = j;
  bad.erase("model");
  EXPECT_THROW(ExperimentConfig::from_json(bad), ConfigError);
}

TEST(RunGrid, SingleRunReportEqualsTheRun) {
  const auto fn = [](const GridPoint&, std::uint64_t, std::size_t) {
    return RunOutcome{.val_metric = 0.25, .test_metric = 0.5, .curve = {1.0, 0.5}, .wall_seconds = 0.0};
  };
  const RunReport r = run_grid({GridPoint::object()}, {7}, 1, false, 1, fn);
  ASSERT_TRUE(r.selected);
  EXPECT_EQ(r.test_mean(), 0.5);
  EXPECT_EQ(r.test_std(), 0.0);
  EXPECT_EQ(r.summaries[0].val_mean, 0.25);
  EXPECT_EQ(r.runs.size(), 1u);
}

TEST(RunGrid, DeterministicModelHasNoRepetitionVariance) {
  const Dataset& ds = tiny();
  GridPoint p = GridPoint::object();
  p["lr"] = 0.1;
  p["depth"] = 4;
  p["n_trees"] = 50;
  p["patience"] = 10;
  const auto fn = [&](const GridPoint& q, std::uint64_t seed, std::size_t rep) {
    return fit_model(ModelKind::Gbdt, q, ds, split_for_seed(ds, seed), model_seed(seed, rep)).outcome;
  };
  const RunReport r = run_grid({p}, {0, 1}, 3, false, 1, fn);
  for (const auto& run : r.runs) {
    const auto& first = r.runs[run.seed == 0 ? 0 : 3];
    EXPECT_EQ(run.outcome.test_metric, first.outcome.test_metric);
    EXPECT_EQ(run.outcome.curve, first.outcome.curve);
  }
}

TEST(RunGrid, SelectsOnValidationOnly) {
  // Point 0 has the better validation metric on every seed; the test metric
  // is adversarial and favours point 1.
  const auto fn = [](const GridPoint& p, std::uint64_t seed, std::size_t rep) {
    const bool a = p["a"] == 0;
    const double noise = 0.01 * static_cast<double>(seed) + 0.001 * static_cast<double>(rep);
    return RunOutcome{.val_metric = (a ? 0.3 : 0.4) + noise,
                      .test_metric = (a ? 0.9 : 0.1) + noise,
                      .curve = {},
                      .wall_seconds = 0.0};
  };
  const RunReport lower = run_grid(two_points(), {0, 1, 2, 3, 4}, 3, false, 2, fn);
  EXPECT_EQ(lower.selected, 0u);
  EXPECT_NEAR(lower.test_mean(), 0.9 + 0.02 + 0.001, 1e-12);
  const RunReport higher = run_grid(two_points(), {0, 1, 2, 3, 4}, 3, true, 2, fn);
  EXPECT_EQ(higher.selected, 1u);
}

TEST(RunGrid, TiesGoToTheFirstPoint) {
  const auto fn = [](const GridPoint&, std::uint64_t, std::size_t) {
    return RunOutcome{.val_metric = 1.0, .test_metric = 1.0, .curve = {}, .wall_seconds = 0.0};
  };
  EXPECT_EQ(run_grid(two_points(), {0}, 1, false, 1, fn).selected, 0u);
}

TEST(RunGrid, FailedPointIsExcludedWithWarning) {
  const auto fn = [](const GridPoint& p, std::uint64_t seed, std::size_t) {
    if (p["a"] == 0 && seed == 1) throw NumericError("diverged");
    return RunOutcome{.val_metric = p["a"] == 0 ? 0.1 : 0.2, .test_metric = 0.3, .curve = {}, .wall_seconds = 0.0};
  };
  std::ostringstream warn;
  const RunReport r = run_grid(two_points(), {0, 1}, 1, false, 1, fn, &warn);
  EXPECT_EQ(r.selected, 1u);
  EXPECT_TRUE(r.summaries[0].failed);
  EXPECT_NE(warn.str().find("diverged"), std::string::npos);

  const auto nan_fn = [](const GridPoint&, std::uint64_t, std::size_t) {
    return RunOutcome{.val_metric = std::nan(""), .test_metric = 0.0, .curve = {}, .wall_seconds = 0.0};
  };
  const RunReport none = run_grid(two_points(), {0}, 1, false, 1, nan_fn);
  EXPECT_FALSE(none.selected);
  EXPECT_THROW((void)none.test_mean(), ContractError);
}

TEST(RunReport, AggregatesRecomputeFromRecords) {
  const auto fn = [](const GridPoint& p, std::uint64_t seed, std::size_t rep) {
    const double base = p["a"] == 0 ? 0.5 : 0.6;
    return RunOutcome{.val_metric = base + 0.1 * static_cast<double>(rep),
                      .test_metric = base + 0.01 * static_cast<double>(seed * seed) + 0.001 * static_cast<double>(rep),
                      .curve = {1.0, base},
                      .wall_seconds = 0.0};
  };
  const RunReport r = run_grid(two_points(), {0, 1, 2}, 2, false, 3, fn);
  // Per-seed test means 0.5005, 0.5105, 0.5405.
  EXPECT_NEAR(r.test_mean(), (0.5005 + 0.5105 + 0.5405) / 3.0, 1e-12);
  const double m = (0.5005 + 0.5105 + 0.5405) / 3.0;
  const double var = ((0.5005 - m) * (0.5005 - m) + (0.5105 - m) * (0.5105 - m) + (0.5405 - m) * (0.5405 - m)) / 2.0;
  EXPECT_NEAR(r.test_std(), std::sqrt(var), 1e-12);

  const std::string text = r.to_jsonl();
  const RunReport back = RunReport::from_jsonl(text);
  EXPECT_EQ(back.to_jsonl(), text);
  EXPECT_EQ(back.selected, r.selected);
  EXPECT_EQ(text.find("wall"), std::string::npos);
  EXPECT_EQ(count_lines(r.timing_jsonl()), r.runs.size());
  EXPECT_THROW(RunReport::from_jsonl("{\"type\":\"run\"}\n"), LoadError);
}

TEST(RunGrid, RealModelsAreDeterministicAcrossWorkerCounts) {
  ExperimentConfig c;
  c.model = ModelKind::Gat;
  c.grid["epochs"] = Grid::array({15});
  c.grid["hidden_dim"] = Grid::array({8});
  c.grid["heads"] = Grid::array({2});
  c.seeds = {0, 1};
  c.repetitions = 2;
  c.workers = 1;
  const std::string a = run_grid(c, tiny()).to_jsonl();
  c.workers = 4;
  const std::string b = run_grid(c, tiny()).to_jsonl();
  EXPECT_EQ(a, b);
}

TEST(FitModel, EveryKindTrainsOnATinyGraph) {
  const Dataset& ds = tiny();
  const DataSplit split = split_for_seed(ds, 0);
  for (ModelKind k : {ModelKind::Gbdt, ModelKind::LightGbm, ModelKind::Gcn, ModelKind::Gat, ModelKind::Agnn,
                      ModelKind::Appnp, ModelKind::Fcnn, ModelKind::FcnnGnn, ModelKind::ResGnn, ModelKind::Bgnn}) {
    GridPoint p = expand_grid(default_grid(k)).front();
    for (const char* key : {"epochs", "n_trees", "gbdt_trees"})
      if (p.contains(key)) p[key] = 8;
    if (p.contains("hidden_dim")) p["hidden_dim"] = 8;
    if (p.contains("heads")) p["heads"] = 2;
    if (p.contains("k")) p["k"] = 3;
    const FitResult f = fit_model(k, p, ds, split, 1);
    EXPECT_TRUE(std::isfinite(f.outcome.test_metric)) << to_string(k);
    EXPECT_FALSE(f.outcome.curve.empty()) << to_string(k);
    EXPECT_LE(f.outcome.curve.size(), 8u) << to_string(k);
    const TrainedModel back = TrainedModel::from_json(nlohmann::json::parse(f.model.to_json().dump()));
    EXPECT_EQ(back.predict(ds.graph, ds.features), f.model.predict(ds.graph, ds.features)) << to_string(k);
  }
}

TEST(FitModel, CurveLengthIsCompletedEpochs) {
  const Dataset& ds = tiny();
  GridPoint p = expand_grid(default_grid(ModelKind::Gcn)).front();
  p["epochs"] = 40;
  p["patience"] = 5;
  p["hidden_dim"] = 8;
  const FitResult f = fit_model(ModelKind::Gcn, p, ds, split_for_seed(ds, 2), 0);
  GnnTrainConfig c;
  c.epochs = 40;
  c.patience = 5;
  c.optimizer.lr = 0.1;
  c.gnn.kind = GnnKind::GCN;
  c.gnn.hidden_dim = 8;
  c.gnn.seed = 0;
  const TrainResult direct = train_gnn(ds.graph, ds.features, ds.targets, split_for_seed(ds, 2), c);
  EXPECT_EQ(f.outcome.curve.size(), direct.history.epochs.size());
}

TEST(FitModel, ClassificationUsesAccuracy) {
  Dataset ds = tiny();
  TargetVector y;
  y.task = Task::Classification;
  y.num_classes = 2;
  y.labeled = ds.targets.labeled;
  for (double v : ds.targets.values) y.values.push_back(v > 0 ? 1 : 0);
  ds.targets = y;
  GridPoint p = expand_grid(default_grid(ModelKind::Gbdt)).front();
  p["n_trees"] = 20;
  const FitResult f = fit_model(ModelKind::Gbdt, p, ds, split_for_seed(ds, 0), 0);
  EXPECT_GE(f.outcome.test_metric, 0.0);
  EXPECT_LE(f.outcome.test_metric, 1.0);
  EXPECT_TRUE(higher_is_better(ds.targets.task));
}

TEST(Gap, Examples) {
  EXPECT_EQ(compute_gap(0.54, 0.54), 0.0);
  EXPECT_NEAR(compute_gap(0.50, 0.54), -7.407, 1e-3);
  EXPECT_NEAR(compute_gap(1.26, 1.45), -13.103, 1e-3);
  EXPECT_LT(std::abs(compute_gap(1.26, 1.45) - -13.67), 1.5);
  EXPECT_THROW(compute_gap(1.0, 0.0), ContractError);
}

TEST(Export, CurvesAndRepresentations) {
  const fs::path dir = temp_dir("export");
  const auto fn = [](const GridPoint& p, std::uint64_t, std::size_t) {
    return RunOutcome{.val_metric = 0.0,
                      .test_metric = 0.0,
                      .curve = std::vector<double>(p["a"] == 0 ? 3 : 5, 0.5),
                      .wall_seconds = 0.0};
  };
  const RunReport r = run_grid(two_points(), {0, 1}, 1, false, 1, fn);
  export_curves(r, dir / "curves.csv");
  EXPECT_EQ(count_lines(slurp(dir / "curves.csv")), 1u + 2 * 3 + 2 * 5);

  const Dataset& ds = tiny();
  GridPoint p = expand_grid(default_grid(ModelKind::Bgnn)).front();
  p["epochs"] = 3;
  p["k"] = 2;
  p["hidden_dim"] = 16;
  p["heads"] = 2;
  const FitResult f = fit_model(ModelKind::Bgnn, p, ds, split_for_seed(ds, 0), 0);
  export_representations(*f.model.predictor, ds.graph, ds.features, ds.targets, dir / "a.csv");
  const std::string a = slurp(dir / "a.csv");
  EXPECT_EQ(count_lines(a), ds.features.rows() + 1);
  EXPECT_EQ(a.substr(0, a.find('\n')).find("node_id,h1,"), 0u);
  EXPECT_NE(a.find(",h16,prediction,true_target\n"), std::string::npos);
  const TrainedModel back = TrainedModel::from_json(nlohmann::json::parse(f.model.to_json().dump()));
  export_representations(*back.predictor, ds.graph, ds.features, ds.targets, dir / "b.csv");
  EXPECT_EQ(slurp(dir / "b.csv"), a);
}

TEST(TrainedModel, RejectsBadDocuments) {
  EXPECT_THROW(TrainedModel::from_json(nlohmann::json::parse(R"({"format_version":2})")), LoadError);
  EXPECT_THROW(TrainedModel::from_json(nlohmann::json::parse(R"({"format_version":1,"model":"gat","params":{}})")),
               LoadError);
  EXPECT_THROW(TrainedModel::from_json(nlohmann::json::parse(R"({"format_version":1,"model":"xyz","params":{}})")),
               LoadError);
}

}  // namespace
}  // namespace bgnn
