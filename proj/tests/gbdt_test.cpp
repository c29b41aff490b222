#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bgnn/errors.hpp"
#include "bgnn/gbdt.hpp"
#include "bgnn/rng.hpp"
#include "gbdt_oracle.hpp"
#include "test_util.hpp"

namespace bgnn {
namespace {

using testing::numeric_features;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

double rmse(const Matrix& pred, const Matrix& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred.values()[i] - y.values()[i]) * (pred.values()[i] - y.values()[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

// Features drawn from a small grid so ties and duplicates are common.
FeatureMatrix random_grid_features(std::size_t n, std::size_t d, double missing_rate, CounterRng& rng) {
  Matrix v(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      v(r, c) = rng.uniform() < missing_rate ? kNaN : static_cast<double>(rng.below(6)) * 0.5;
  return numeric_features(v);
}

TEST(NegativeGradient, SquaredError) {
  const Matrix target{{3.0, -1.0}};
  EXPECT_EQ(negative_gradient(BoostLoss::SquaredError, target, target), Matrix(1, 2, 0.0));
  const Matrix g = negative_gradient(BoostLoss::SquaredError, Matrix{{0.0}}, Matrix{{3.0}});
  EXPECT_EQ(g(0, 0), 3.0);
}

TEST(NegativeGradient, CrossEntropyUniformLogits) {
  const Matrix g = negative_gradient(BoostLoss::CrossEntropy, Matrix{{0.7, 0.7}}, Matrix{{0.0}});
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(0, 1), -0.5);
}

TEST(NegativeGradient, ShapeMismatch) {
  EXPECT_THROW(negative_gradient(BoostLoss::SquaredError, Matrix(2, 1), Matrix(3, 1)), ShapeError);
}

TEST(FitTree, ConstantTargetIsSingleLeaf) {
  const FeatureMatrix x = numeric_features(Matrix{{0.0}, {1.0}, {2.0}});
  const Matrix y{{4.5}, {4.5}, {4.5}};
  const auto rows = all_rows(3);
  const DecisionTree t = fit_tree(x, y, rows, {});
  EXPECT_EQ(t.num_nodes(), 1u);
  EXPECT_EQ(t.node(0).leaf_value, std::vector<double>{4.5});
}

TEST(FitTree, OneDimensionalSplit) {
  const FeatureMatrix x = numeric_features(Matrix{{0.0}, {1.0}, {2.0}, {3.0}});
  const Matrix y{{0.0}, {0.0}, {10.0}, {10.0}};
  const auto rows = all_rows(4);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 1});
  ASSERT_EQ(t.num_nodes(), 3u);
  const TreeNode& root = t.node(0);
  EXPECT_FALSE(root.is_leaf);
  EXPECT_GT(root.threshold, 1.0);
  EXPECT_LT(root.threshold, 2.0);
  EXPECT_EQ(t.node(root.left).leaf_value, std::vector<double>{0.0});
  EXPECT_EQ(t.node(root.right).leaf_value, std::vector<double>{10.0});
  EXPECT_DOUBLE_EQ(root.gain, 100.0);
}

TEST(FitTree, EmptyRowsRejected) {
  const FeatureMatrix x = numeric_features(Matrix{{0.0}});
  EXPECT_THROW(fit_tree(x, Matrix{{1.0}}, std::vector<std::size_t>{}, {}), ContractError);
}

TEST(FitTree, RespectsDepthAndMinLeaf) {
  CounterRng rng(3);
  const FeatureMatrix x = random_grid_features(50, 3, 0.1, rng);
  const Matrix y = testing::random_normal(50, 2, rng);
  const auto rows = all_rows(50);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 3, .min_samples_leaf = 4});
  EXPECT_LE(t.depth(), 3u);
  for (const auto& leaf : testing::tree_partition(t, x, rows)) EXPECT_GE(leaf.size(), 4u);
}

TEST(FitTree, LeafBudget) {
  CounterRng rng(4);
  const FeatureMatrix x = random_grid_features(80, 2, 0.0, rng);
  const Matrix y = testing::random_normal(80, 1, rng);
  const auto rows = all_rows(80);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 10, .max_leaves = 5});
  EXPECT_LE(t.num_leaves(), 5u);
}

TEST(FitTree, LeafMeanAndPositiveGain) {
  CounterRng rng(5);
  const FeatureMatrix x = random_grid_features(60, 3, 0.2, rng);
  const Matrix y = testing::random_normal(60, 2, rng);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < 60; r += 2) rows.push_back(r);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 4});
  for (const auto& leaf : testing::tree_partition(t, x, rows)) {
    const auto& value = t.node(t.leaf_index(x, leaf.front())).leaf_value;
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t r : leaf) mean += y(r, c);
      mean /= static_cast<double>(leaf.size());
      EXPECT_NEAR(value[c], mean, 1e-12);
    }
  }
  for (const TreeNode& node : t.nodes())
    if (!node.is_leaf) {
      EXPECT_GT(node.gain, 0.0);
    }
}

TEST(FitTree, MissingValuesTakeBetterSide) {
  // Missing rows share the high target, so they must be routed with x=3.
  const FeatureMatrix x = numeric_features(Matrix{{0.0}, {0.0}, {3.0}, {3.0}, {kNaN}, {kNaN}});
  const Matrix y{{0.0}, {0.0}, {5.0}, {5.0}, {5.0}, {5.0}};
  const auto rows = all_rows(6);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 1});
  EXPECT_FALSE(t.node(0).missing_left);
  EXPECT_EQ(t.predict_row(x, 4)[0], 5.0);
}

TEST(FitTree, PresentVersusMissingSplit) {
  const FeatureMatrix x = numeric_features(Matrix{{1.0}, {1.0}, {kNaN}, {kNaN}});
  const Matrix y{{2.0}, {2.0}, {8.0}, {8.0}};
  const auto rows = all_rows(4);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 1});
  ASSERT_EQ(t.num_leaves(), 2u);
  EXPECT_EQ(t.predict_row(x, 0)[0], 2.0);
  EXPECT_EQ(t.predict_row(x, 2)[0], 8.0);
}

FeatureMatrix categorical_column(const std::vector<int>& codes, std::size_t num_categories) {
  Column col{"c", ColumnKind::Categorical, {}};
  for (std::size_t k = 0; k < num_categories; ++k) col.categories.push_back("k" + std::to_string(k));
  FeatureMatrix x(ColumnSchema{{col}}, codes.size());
  for (std::size_t r = 0; r < codes.size(); ++r) {
    if (codes[r] < 0) x.set_missing(r, 0);
    else x.set(r, 0, codes[r]);
  }
  return x;
}

TEST(FitTree, CategoricalPartition) {
  // Categories 0 and 2 share a target, 1 and 3 another: not separable by any
  // threshold on the raw codes, separable after mean ordering.
  const FeatureMatrix x = categorical_column({0, 1, 2, 3, 0, 1, 2, 3}, 5);
  const Matrix y{{1.0}, {9.0}, {1.0}, {9.0}, {1.0}, {9.0}, {1.0}, {9.0}};
  const auto rows = all_rows(8);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 1});
  ASSERT_EQ(t.num_leaves(), 2u);
  EXPECT_TRUE(t.node(0).categorical);
  EXPECT_EQ(t.node(0).left_categories, (std::vector<int>{0, 2}));
  EXPECT_EQ(t.node(0).right_categories, (std::vector<int>{1, 3}));
  for (std::size_t r = 0; r < 8; ++r) EXPECT_EQ(t.predict_row(x, r)[0], y(r, 0));

  // Category 4 never appears in training: it follows the missing direction.
  const FeatureMatrix unseen = categorical_column({4, -1}, 5);
  const bool ml = t.node(0).missing_left;
  const double expected = t.node(ml ? t.node(0).left : t.node(0).right).leaf_value[0];
  EXPECT_EQ(t.predict_row(unseen, 0)[0], expected);
  EXPECT_EQ(t.predict_row(unseen, 1)[0], expected);
}

TEST(FitTree, MatchesEightPointOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed);
    Matrix v(8, 2);
    for (double& e : v.values()) e = rng.uniform();
    const FeatureMatrix x = numeric_features(v);
    const Matrix y = testing::random_normal(8, 1, rng);
    const auto rows = all_rows(8);
    const TreeParams p{.max_depth = 2};
    const DecisionTree t = fit_tree(x, y, rows, p);
    const auto oracle = testing::oracle_tree_leaves(x, y, rows, p);
    auto fitted = testing::tree_partition(t, x, rows);
    auto expected = oracle;
    std::sort(fitted.begin(), fitted.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(fitted, expected) << "seed " << seed;
    EXPECT_EQ(testing::partition_sse(y, testing::tree_partition(t, x, rows)), testing::partition_sse(y, oracle));
  }
}

TEST(FitTree, MatchesOracleWithMissingAndTies) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng(seed, 77, 0);
    const std::size_t n = 2 + rng.below(63);
    const std::size_t d = 1 + rng.below(3);
    const std::size_t d_out = 1 + rng.below(2);
    const FeatureMatrix x = random_grid_features(n, d, 0.15, rng);
    const Matrix y = testing::random_normal(n, d_out, rng);
    const TreeParams p{.max_depth = 1 + rng.below(2), .min_samples_leaf = 1 + rng.below(3)};
    const auto rows = all_rows(n);
    const DecisionTree t = fit_tree(x, y, rows, p);
    const auto oracle = testing::oracle_tree_leaves(x, y, rows, p);
    EXPECT_EQ(testing::partition_sse(y, testing::tree_partition(t, x, rows)), testing::partition_sse(y, oracle))
        << "seed " << seed;
  }
}

TEST(Boost, SingleTreeInterpolates) {
  CounterRng rng(8);
  Matrix v(30, 1);
  for (std::size_t r = 0; r < 30; ++r) v(r, 0) = static_cast<double>(r) + rng.uniform() * 0.5;
  const FeatureMatrix x = numeric_features(v);
  const Matrix y = testing::random_normal(30, 1, rng);
  const auto rows = all_rows(30);
  const Ensemble e = boost(x, y, rows, {.n_trees = 1, .learning_rate = 1.0, .tree = {.max_depth = 10}});
  EXPECT_LT(rmse(e.predict(x), y), 1e-12);
}

TEST(Boost, TrainingLossNonincreasing) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CounterRng rng(seed, 9, 0);
    const FeatureMatrix x = random_grid_features(100, 3, 0.1, rng);
    const Matrix y = testing::random_normal(100, 2, rng);
    const auto rows = all_rows(100);
    const double lr = seed == 0 ? 1.0 : 0.3;
    const Ensemble e = boost(x, y, rows, {.n_trees = 15, .learning_rate = lr, .tree = {.max_depth = 3}});
    Matrix pred = e.truncated(0).predict(x);
    double prev = rmse(pred, y);
    for (std::size_t t = 0; t < e.num_trees(); ++t) {
      e.add_tree_output(t, x, rows, pred);
      const double cur = rmse(pred, y);
      EXPECT_LE(cur, prev + 1e-12);
      prev = cur;
    }
  }
}

TEST(Boost, ParabolaConvergence) {
  // A tree can at best remove a fraction lr of every residual, so after k trees
  // the training RMSE is at least (1 - lr)^k times the target spread.
  Matrix v(64, 1), y(64, 1);
  double mean = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    v(i, 0) = -1.0 + 2.0 * static_cast<double>(i) / 63.0;
    y(i, 0) = v(i, 0) * v(i, 0);
    mean += y(i, 0);
  }
  mean /= 64.0;
  double var = 0.0;
  for (double t : y.values()) var += (t - mean) * (t - mean);
  const double sd = std::sqrt(var / 64.0);
  const FeatureMatrix x = numeric_features(v);
  const auto rows = all_rows(64);
  const Ensemble e = boost(x, y, rows, {.n_trees = 20, .learning_rate = 0.1, .tree = {.max_depth = 6}});
  const double r = rmse(e.predict(x), y);
  const double floor = std::pow(0.9, 20) * sd;
  EXPECT_GE(r, floor * (1.0 - 1e-9));
  EXPECT_LT(r, 1.02 * floor);
  // With enough trees the same setup drops below 5% of the target spread.
  const Ensemble longer = boost(x, y, rows, {.n_trees = 30, .learning_rate = 0.1, .tree = {.max_depth = 6}});
  EXPECT_LT(rmse(longer.predict(x), y), 0.05 * sd);
}

TEST(Boost, WarmStartContinues) {
  CounterRng rng(10);
  const FeatureMatrix x = random_grid_features(40, 2, 0.0, rng);
  const Matrix y = testing::random_normal(40, 1, rng);
  const auto rows = all_rows(40);
  const BoostParams p{.n_trees = 3, .learning_rate = 0.2, .tree = {.max_depth = 2}};
  const Ensemble a = boost(x, y, rows, p);
  const Ensemble b = boost(x, y, rows, p, &a);
  BoostParams six = p;
  six.n_trees = 6;
  const Ensemble c = boost(x, y, rows, six);
  EXPECT_EQ(b.num_trees(), 6u);
  EXPECT_EQ(b.predict(x), c.predict(x));
}

TEST(Boost, ClassificationPriorsAndFit) {
  const FeatureMatrix x = numeric_features(Matrix{{0.0}, {1.0}, {2.0}, {3.0}, {4.0}});
  const Matrix labels{{0.0}, {0.0}, {1.0}, {1.0}, {1.0}};
  const auto rows = all_rows(5);
  const auto init = initial_prediction(BoostLoss::CrossEntropy, labels, rows, 2);
  EXPECT_DOUBLE_EQ(init[0], std::log(3.0 / 7.0));
  EXPECT_DOUBLE_EQ(init[1], std::log(4.0 / 7.0));
  const Ensemble e = boost(x, labels, rows,
                           {.loss = BoostLoss::CrossEntropy, .n_trees = 10, .learning_rate = 0.5, .tree = {}, .num_classes = 2});
  const Matrix p = e.predict(x);
  for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(p(r, 1) > p(r, 0), labels(r, 0) == 1.0);
}

TEST(Predict, EmptyEnsembleBroadcastsInit) {
  const Ensemble e(BoostLoss::SquaredError, 0.1, {1.5, -2.0});
  const FeatureMatrix x = numeric_features(Matrix{{0.0}, {1.0}});
  EXPECT_EQ(e.predict(x), (Matrix{{1.5, -2.0}, {1.5, -2.0}}));
}

TEST(Predict, AdditivityIsExact) {
  CounterRng rng(11);
  const FeatureMatrix x = random_grid_features(40, 3, 0.2, rng);
  const Matrix y = testing::random_normal(40, 2, rng);
  const auto rows = all_rows(40);
  const Ensemble e = boost(x, y, rows, {.n_trees = 2, .learning_rate = 0.3, .tree = {.max_depth = 3}});
  const Matrix p = e.predict(x);
  for (std::size_t r = 0; r < 40; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      double manual = e.init_prediction()[c];
      manual += 0.3 * e.trees()[0].tree.predict_row(x, r)[c];
      manual += 0.3 * e.trees()[1].tree.predict_row(x, r)[c];
      EXPECT_EQ(p(r, c), manual);
    }
  const Matrix p1 = e.truncated(1).predict(x);
  for (std::size_t r = 0; r < 40; ++r)
    EXPECT_EQ(p(r, 0), p1(r, 0) + 0.3 * e.trees()[1].tree.predict_row(x, r)[0]);
}

TEST(Predict, AllMissingRowFollowsStoredDirections) {
  CounterRng rng(12);
  const FeatureMatrix x = random_grid_features(60, 3, 0.25, rng);
  const Matrix y = testing::random_normal(60, 1, rng);
  const auto rows = all_rows(60);
  const DecisionTree t = fit_tree(x, y, rows, {.max_depth = 4});
  const FeatureMatrix missing = numeric_features(Matrix{{kNaN, kNaN, kNaN}});
  std::size_t node = 0;
  while (!t.node(node).is_leaf) node = t.node(node).missing_left ? t.node(node).left : t.node(node).right;
  EXPECT_EQ(t.leaf_index(missing, 0), node);
}

TEST(Ensemble, JsonRoundTripIsBitIdentical) {
  CounterRng rng(13);
  FeatureMatrix x = random_grid_features(50, 2, 0.1, rng);
  const Matrix y = testing::random_normal(50, 2, rng);
  const auto rows = all_rows(50);
  Ensemble e = boost(x, y, rows, {.n_trees = 5, .learning_rate = 0.37, .tree = {.max_depth = 3}});
  e.expand_outputs(3);
  const Ensemble back = Ensemble::from_json(nlohmann::json::parse(e.to_json().dump()));
  EXPECT_EQ(back.predict(x), e.predict(x));
  EXPECT_EQ(back.to_json(), e.to_json());
}

TEST(Ensemble, ExpandOutputsPadsFront) {
  CounterRng rng(14);
  const FeatureMatrix x = random_grid_features(30, 2, 0.0, rng);
  const Matrix y = testing::random_normal(30, 1, rng);
  const auto rows = all_rows(30);
  Ensemble e = boost(x, y, rows, {.n_trees = 3, .learning_rate = 0.5, .tree = {.max_depth = 2}});
  const Matrix before = e.predict(x);
  e.expand_outputs(3);
  const Matrix after = e.predict(x);
  for (std::size_t r = 0; r < 30; ++r) {
    EXPECT_EQ(after(r, 0), 0.0);
    EXPECT_EQ(after(r, 1), 0.0);
    EXPECT_EQ(after(r, 2), before(r, 0));
  }
}

TEST(Ensemble, BoostBlockWritesAtOffset) {
  CounterRng rng(15);
  const FeatureMatrix x = random_grid_features(30, 2, 0.0, rng);
  const auto rows = all_rows(30);
  Ensemble e(BoostLoss::SquaredError, 1.0, {0.0, 0.0, 0.0});
  const Matrix target = testing::random_normal(30, 2, rng);
  const double gain = boost_block(e, x, target, rows, 2, {.max_depth = 2}, 1);
  EXPECT_GT(gain, 0.0);
  EXPECT_EQ(e.num_trees(), 2u);
  const Matrix p = e.predict(x);
  for (std::size_t r = 0; r < 30; ++r) EXPECT_EQ(p(r, 0), 0.0);
}

TEST(Boost, EarlyStoppingTruncatesAtBest) {
  CounterRng rng(16);
  const FeatureMatrix x = random_grid_features(80, 2, 0.0, rng);
  Matrix y = testing::random_normal(80, 1, rng);
  for (std::size_t r = 0; r < 80; ++r) y(r, 0) = 0.3 * y(r, 0) + 2.0 * x.value(r, 0);
  std::vector<std::size_t> train, val;
  for (std::size_t r = 0; r < 80; ++r) (r % 4 == 0 ? val : train).push_back(r);
  const auto res = boost_with_early_stopping(x, y, train, val,
                                             {.n_trees = 60, .learning_rate = 0.5, .tree = {.max_depth = 4}}, 5);
  ASSERT_FALSE(res.val_curve.empty());
  const auto best = std::min_element(res.val_curve.begin(), res.val_curve.end());
  EXPECT_EQ(res.best_iteration, static_cast<std::size_t>(best - res.val_curve.begin()) + 1);
  EXPECT_EQ(res.ensemble.num_trees(), res.best_iteration);
  EXPECT_LE(res.val_curve.size(), res.best_iteration + 5);
}

TEST(Boost, EarlyStoppingOnTrainingRowsMatchesPlainBoost) {
  CounterRng rng(17);
  const FeatureMatrix x = random_grid_features(50, 2, 0.1, rng);
  const Matrix y = testing::random_normal(50, 1, rng);
  std::vector<std::size_t> rows(40);
  std::iota(rows.begin(), rows.end(), 0);
  const BoostParams p{.n_trees = 15, .learning_rate = 0.3, .tree = {.max_depth = 3}};
  const auto res = boost_with_early_stopping(x, y, rows, rows, p, 15);
  ASSERT_EQ(res.best_iteration, 15u);
  EXPECT_EQ(res.ensemble.predict(x), boost(x, y, rows, p).predict(x));
}

}  // namespace
}  // namespace bgnn
