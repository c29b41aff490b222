#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "bgnn/data_io.hpp"
#include "bgnn/errors.hpp"
#include "bgnn/gbdt.hpp"
#include "test_util.hpp"

namespace bgnn {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("bgnn_data_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string manifest_text(const std::string& columns) {
  return R"({"format_version": 1, "name": "toy", "task": "regression",
    "files": {"features": "features.csv", "edges": "edges.csv", "targets": "targets.csv"},
    "columns": )" + columns + "}";
}

void write_toy(const fs::path& dir, const std::string& features, const std::string& edges,
               const std::string& targets) {
  write(dir / "manifest.json",
        manifest_text(R"([{"name": "a", "kind": "numeric"}, {"name": "b", "kind": "categorical"}])"));
  write(dir / "features.csv", features);
  write(dir / "edges.csv", edges);
  write(dir / "targets.csv", targets);
}

std::string load_error(const fs::path& manifest) {
  try {
    load_dataset(manifest);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

TEST(LoadDataset, ParsesToyFiles) {
  TempDir dir;
  write_toy(dir.path(), "a,b\n1.5,\"x,y\"\n,z\n-2,x\n", "src,dst\n0,1\n1,0\n2,2\n", "target\n1\n\n3.25\n");
  const Dataset ds = load_dataset(dir.path() / "manifest.json");
  ASSERT_EQ(ds.features.rows(), 3u);
  EXPECT_EQ(ds.manifest.schema.columns[1].categories, (std::vector<std::string>{"x", "x,y", "z"}));
  EXPECT_EQ(ds.features.value(0, 0), 1.5);
  EXPECT_TRUE(ds.features.missing(1, 0));
  EXPECT_EQ(ds.features.value(0, 1), 1.0);
  EXPECT_EQ(ds.features.value(2, 1), 0.0);
  EXPECT_EQ(ds.targets.labeled, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(ds.targets.values[2], 3.25);
  EXPECT_EQ(ds.edges, (std::vector<Edge>{{0, 1}}));
  EXPECT_EQ(ds.graph.num_proper_edges(), 2u);
}

TEST(LoadDataset, EmptyEdgeFileGivesSelfLoopsOnly) {
  TempDir dir;
  write_toy(dir.path(), "a,b\n1,x\n2,y\n", "src,dst\n", "target\n1\n2\n");
  const Dataset ds = load_dataset(dir.path() / "manifest.json");
  EXPECT_EQ(ds.graph.num_edges(), 2u);
  EXPECT_EQ(ds.graph.num_proper_edges(), 0u);
  EXPECT_TRUE(ds.graph.has_self_loops());
}

TEST(LoadDataset, ErrorsNameFileAndLine) {
  TempDir dir;
  const fs::path m = dir.path() / "manifest.json";

  write_toy(dir.path(), "a,b\n1,x\noops,y\n", "src,dst\n", "target\n1\n2\n");
  EXPECT_NE(load_error(m).find("features.csv:3"), std::string::npos) << load_error(m);

  write_toy(dir.path(), "a,b\n1,x\n2,y\n", "src,dst\n0,1\n0,5\n", "target\n1\n2\n");
  EXPECT_NE(load_error(m).find("edges.csv:3"), std::string::npos) << load_error(m);

  write_toy(dir.path(), "a,b\n1,x\n2,y\n", "src,dst\n", "target\n1\n");
  EXPECT_NE(load_error(m).find("targets.csv"), std::string::npos) << load_error(m);

  write_toy(dir.path(), "a,c\n1,x\n", "src,dst\n", "target\n1\n");
  EXPECT_NE(load_error(m).find("features.csv:1"), std::string::npos) << load_error(m);

  write_toy(dir.path(), "a,b\n1,x,3\n", "src,dst\n", "target\n1\n");
  EXPECT_NE(load_error(m).find("features.csv:2"), std::string::npos) << load_error(m);

  write_toy(dir.path(), "a,b\n\"1,x\n", "src,dst\n", "target\n1\n");
  EXPECT_NE(load_error(m).find("unterminated"), std::string::npos) << load_error(m);

  write(m, "{not json");
  EXPECT_NE(load_error(m).find("manifest.json"), std::string::npos);

  EXPECT_THROW(load_dataset(dir.path() / "absent.json"), LoadError);
}

TEST(LoadDataset, UnknownCategoryWithDeclaredDictionary) {
  TempDir dir;
  write(dir.path() / "manifest.json",
        manifest_text(R"([{"name": "b", "kind": "categorical", "categories": ["p", "q"]}])"));
  write(dir.path() / "features.csv", "b\np\nr\n");
  write(dir.path() / "edges.csv", "src,dst\n");
  write(dir.path() / "targets.csv", "target\n1\n2\n");
  EXPECT_NE(load_error(dir.path() / "manifest.json").find("features.csv:3"), std::string::npos);
}

TEST(LoadDataset, ClassBinsApplyOnLoad) {
  TempDir dir;
  write(dir.path() / "manifest.json",
        R"({"format_version": 1, "name": "binned", "task": "classification",
            "files": {"features": "f.csv", "edges": "e.csv", "targets": "t.csv"},
            "columns": [{"name": "a", "kind": "numeric"}], "class_bins": [1, 1.5, 2, 2.5]})");
  write(dir.path() / "f.csv", "a\n0\n0\n0\n");
  write(dir.path() / "e.csv", "src,dst\n");
  write(dir.path() / "t.csv", "target\n0.9\n1.5\n3\n");
  const Dataset ds = load_dataset(dir.path() / "manifest.json");
  EXPECT_EQ(ds.targets.num_classes, 5);
  EXPECT_EQ(ds.targets.values, (std::vector<double>{0, 2, 4}));
}

TEST(SaveDataset, SyntheticRoundTripIsIdentity) {
  TempDir dir;
  SyntheticSpec spec;
  spec.n = 120;
  spec.seed = 5;
  spec.missing_rate = 0.2;
  Dataset ds = generate_synthetic(spec);
  ds.manifest.schema.columns[spec.n_numeric].categories[1] = "with \"quote\", comma";
  ds.features = [&] {
    FeatureMatrix f(ds.manifest.schema, ds.features.rows());
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 0; c < f.cols(); ++c) {
        if (ds.features.missing(r, c)) f.set_missing(r, c);
        else f.set(r, c, ds.features.value(r, c));
      }
    return f;
  }();
  ds.targets.labeled[3] = 0;
  ds.targets.values[3] = 0.0;
  save_dataset(ds, dir.path());
  const Dataset back = load_dataset(dir.path() / "manifest.json");
  EXPECT_EQ(back.manifest.to_json(), ds.manifest.to_json());
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.targets, ds.targets);
  EXPECT_EQ(back.edges, ds.edges);
  EXPECT_EQ(back.graph, ds.graph);
}

TEST(Knn, TwoPointsWithinRadius) {
  const auto edges = build_knn_graph(Matrix{{0.0, 0.0}, {0.5, 0.0}}, 5, 1.0);
  EXPECT_EQ(edges, (std::vector<Edge>{{0, 1}}));
  EXPECT_TRUE(build_knn_graph(Matrix{{0.0, 0.0}, {2.0, 0.0}}, 5, 1.0).empty());
}

TEST(Knn, CollinearTieBreaksByIndex) {
  // Node 1 is equidistant from 0 and 2 and keeps node 0; node 2 keeps node 1.
  const auto edges = build_knn_graph(Matrix{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}}, 1, 10.0);
  EXPECT_EQ(edges, (std::vector<Edge>{{0, 1}, {1, 2}}));
  const auto nearer = build_knn_graph(Matrix{{0.0, 0.0}, {1.0, 0.0}, {3.0, 0.0}}, 1, 10.0);
  EXPECT_EQ(nearer, (std::vector<Edge>{{0, 1}, {1, 2}}));
}

std::set<std::pair<std::size_t, std::size_t>> brute_force_knn(const Matrix& p, std::size_t k, double radius) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < p.rows(); ++j)
      if (j != i) all.emplace_back(std::hypot(p(i, 0) - p(j, 0), p(i, 1) - p(j, 1)), j);
    std::sort(all.begin(), all.end());
    for (std::size_t q = 0; q < k && q < all.size(); ++q)
      if (all[q].first <= radius) out.insert(std::minmax(i, all[q].second));
  }
  return out;
}

TEST(Knn, MatchesBruteForce) {
  CounterRng rng(21);
  Matrix p(100, 2);
  for (double& v : p.values()) v = rng.uniform();
  for (double radius : {0.05, 0.1, 1.0}) {
    const auto edges = build_knn_graph(p, 5, radius);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const Edge& e : edges) got.insert({e.src, e.dst});
    EXPECT_EQ(got, brute_force_knn(p, 5, radius)) << radius;
  }
}

TEST(Knn, FittedRadiusIsSmallestReachingTarget) {
  CounterRng rng(22);
  Matrix p(200, 2);
  for (double& v : p.values()) v = rng.uniform();
  const KnnTable table = knn_table(p, 5);
  const std::size_t target = 1200;
  const auto r = fit_knn_radius(table, target);
  ASSERT_TRUE(r.has_value());
  EXPECT_GE(2 * brute_force_knn(p, 5, *r).size(), target);
  EXPECT_LT(2 * brute_force_knn(p, 5, std::nextafter(*r, 0.0)).size(), target);
  EXPECT_FALSE(fit_knn_radius(table, 100000).has_value());
}

TEST(BinTargets, HouseAndVkRules) {
  const std::vector<double> v{0.9, 1.0, 1.5, 2.49, 2.5, 7.0};
  EXPECT_EQ(bin_targets(v, kHouseClassBins), (std::vector<int>{0, 1, 2, 3, 4, 4}));
  const std::vector<double> ages{19, 20, 27, 50, 64};
  EXPECT_EQ(bin_targets(ages, kVkClassBins), (std::vector<int>{0, 1, 2, 7, 7}));
  CounterRng rng(23);
  std::vector<double> sorted(200);
  for (double& x : sorted) x = rng.uniform(0.0, 3.0);
  std::sort(sorted.begin(), sorted.end());
  const auto cls = bin_targets(sorted, kHouseClassBins);
  EXPECT_TRUE(std::is_sorted(cls.begin(), cls.end()));
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.n = 150;
  spec.seed = 9;
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.targets, b.targets);
  EXPECT_EQ(a.edges, b.edges);
  spec.seed = 10;
  EXPECT_NE(generate_synthetic(spec).targets, a.targets);
}

TEST(Synthetic, PureRuleIsLearnableByTrees) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.smoothing = 0.0;
  spec.noise = 0.0;
  const Dataset ds = generate_synthetic(spec);
  std::vector<std::size_t> rows(spec.n);
  std::iota(rows.begin(), rows.end(), 0);
  const Matrix y = ds.targets.as_column();
  const Ensemble e = boost(ds.features, y, rows, {.n_trees = 40, .learning_rate = 0.5, .tree = {.max_depth = 12}});
  const Matrix p = e.predict(ds.features);
  double sse = 0.0, mean = 0.0, var = 0.0;
  for (double t : y.values()) mean += t / static_cast<double>(spec.n);
  for (std::size_t r = 0; r < spec.n; ++r) {
    sse += (p(r, 0) - y(r, 0)) * (p(r, 0) - y(r, 0));
    var += (y(r, 0) - mean) * (y(r, 0) - mean);
  }
  EXPECT_LT(std::sqrt(sse / var), 1e-9);
}

TEST(Synthetic, RejectsBadSpec) {
  SyntheticSpec spec;
  spec.smoothing = 1.5;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.noise = -1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(House, PreparesBothRawLayouts) {
  TempDir dir;
  // Four block groups on a line; households 2 so ratios are easy to check.
  write(dir.path() / "cal_housing.data",
        "-122.0,37.0,41,880,130,322,2,8.3,452600\n"
        "-122.1,37.0,21,700,110,240,2,8.3,358500\n"
        "-122.2,37.0,52,1400,190,500,2,7.2,352100\n"
        "-125.0,40.0,52,900,100,200,2,5.6,341300\n");
  const Dataset raw = prepare_house(dir.path() / "cal_housing.data", {.k = 5, .target_edges = 6});
  ASSERT_EQ(raw.features.rows(), 4u);
  EXPECT_EQ(raw.features.value(0, 0), 8.3);
  EXPECT_EQ(raw.features.value(0, 1), 41.0);
  EXPECT_EQ(raw.features.value(0, 2), 440.0);
  EXPECT_EQ(raw.features.value(0, 3), 65.0);
  EXPECT_EQ(raw.features.value(0, 4), 322.0);
  EXPECT_EQ(raw.features.value(0, 5), 161.0);
  EXPECT_DOUBLE_EQ(raw.targets.values[0], 4.526);
  EXPECT_EQ(raw.graph.num_proper_edges(), 6u);
  EXPECT_TRUE(raw.manifest.knn_radius.has_value());
  EXPECT_EQ(raw.edges, (std::vector<Edge>{{0, 1}, {0, 2}, {1, 2}}));

  write(dir.path() / "sk.csv",
        "MedInc,HouseAge,AveRooms,AveBedrms,Population,AveOccup,Latitude,Longitude,MedHouseVal\n"
        "8.3,41,440,65,322,161,37.0,-122.0,4.526\n"
        "8.3,21,350,55,240,120,37.0,-122.1,3.585\n");
  const Dataset sk = prepare_house(dir.path() / "sk.csv", {.k = 5, .target_edges = 2, .classification = true});
  EXPECT_EQ(sk.targets.task, Task::Classification);
  EXPECT_EQ(sk.targets.values, (std::vector<double>{4, 4}));
  EXPECT_EQ(sk.features.value(1, 2), 350.0);
}

}  // namespace
}  // namespace bgnn
