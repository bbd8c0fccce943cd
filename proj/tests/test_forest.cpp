#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "koa/forest.hpp"
#include "koa/rng.hpp"

using namespace koa;
using namespace koa::forest;

namespace {

// Friedman-style nonlinear regression surface on five useful features.
void friedman(Eigen::MatrixXd& X, Eigen::VectorXd& y, Eigen::Index n,
              std::uint64_t seed) {
  Rng rng(seed);
  X.resize(n, 7);
  y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 7; ++j) X(i, j) = rng.uniform();
    y(i) = 10.0 * std::sin(3.14159265358979 * X(i, 0) * X(i, 1)) +
           20.0 * (X(i, 2) - 0.5) * (X(i, 2) - 0.5) + 10.0 * X(i, 3) +
           5.0 * X(i, 4) + 0.5 * rng.normal();
  }
}

// Exhaustive best-split search for one feature: every midpoint between
// adjacent distinct values, plain SSE bookkeeping.
struct BruteSplit {
  double threshold = 0.0;
  double gain = -1.0;
};

BruteSplit brute_best_split(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  auto sse = [&](std::size_t lo, std::size_t hi) {  // over order[lo, hi)
    double mean = 0.0;
    for (std::size_t k = lo; k < hi; ++k) mean += y[order[k]];
    mean /= static_cast<double>(hi - lo);
    double acc = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      acc += (y[order[k]] - mean) * (y[order[k]] - mean);
    }
    return acc;
  };

  const double parent = sse(0, x.size());
  BruteSplit best;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    if (x[order[k]] == x[order[k + 1]]) continue;
    const double gain = parent - sse(0, k + 1) - sse(k + 1, x.size());
    if (gain > best.gain) {
      best.gain = gain;
      best.threshold = 0.5 * (x[order[k]] + x[order[k + 1]]);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("degenerate trees: constant response and zero depth") {
  Eigen::MatrixXd X(6, 2);
  Eigen::VectorXd y(6);
  Rng rng(3);
  for (int i = 0; i < 6; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y(i) = 2.5;
  }
  ForestConfig cfg;
  cfg.min_leaf = 1;
  const std::vector<double> w(6, 1.0);

  const RegressionTree constant = fit_tree(X, y, w, cfg, 1);
  REQUIRE(constant.nodes.size() == 1);
  CHECK(constant.nodes[0].value == 2.5);

  y << 1, 2, 3, 4, 5, 6;
  ForestConfig depth0 = cfg;
  depth0.max_depth = 0;
  const RegressionTree stumpless = fit_tree(X, y, w, depth0, 1);
  REQUIRE(stumpless.nodes.size() == 1);
  CHECK(stumpless.nodes[0].value == doctest::Approx(3.5));

  // Weighted mean under multiplicities.
  std::vector<double> w2{3, 0, 0, 0, 0, 1};
  const RegressionTree weighted = fit_tree(X, y, w2, depth0, 1);
  CHECK(weighted.nodes[0].value == doctest::Approx((3.0 * 1 + 6.0) / 4.0));
}

TEST_CASE("step function is fit exactly with the midpoint threshold") {
  Eigen::MatrixXd X(6, 1);
  X << -3.0, -2.0, -1.0, 0.5, 1.0, 2.0;
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) y(i) = X(i, 0) > 0.0 ? 1.0 : 0.0;

  ForestConfig cfg;
  cfg.min_leaf = 1;
  cfg.mtry = 1;
  const RegressionTree t = fit_tree(X, y, std::vector<double>(6, 1.0), cfg, 9);

  REQUIRE_FALSE(t.nodes[0].is_leaf);
  CHECK(t.nodes[0].feature == 0);
  CHECK(t.nodes[0].threshold == doctest::Approx(0.5 * (-1.0 + 0.5)));
  for (int i = 0; i < 6; ++i) CHECK(t.predict_row(X.row(i)) == y(i));
}

TEST_CASE("root split matches an exhaustive split search") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(900 + seed);
    const std::size_t n = 14;
    Eigen::MatrixXd X(n, 1);
    Eigen::VectorXd y(n);
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = rng.uniform(-2, 2);
      ys[i] = rng.uniform(0, 5);
      X(static_cast<Eigen::Index>(i), 0) = xs[i];
      y(static_cast<Eigen::Index>(i)) = ys[i];
    }
    ForestConfig cfg;
    cfg.min_leaf = 1;
    cfg.mtry = 1;
    cfg.max_depth = 1;
    const RegressionTree t = fit_tree(X, y, std::vector<double>(n, 1.0), cfg, seed);
    const BruteSplit oracle = brute_best_split(xs, ys);
    REQUIRE_FALSE(t.nodes[0].is_leaf);
    CHECK(t.nodes[0].threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
  }
}

TEST_CASE("identity bootstrap with one tree equals a plain tree fit") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  friedman(X, y, 80, 4);

  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  cfg.seed = 12;
  cfg.mtry = 7;  // all features: the subset draw cannot change the splits
  const ForestFit forest_fit = fit(X, y, cfg);

  const RegressionTree tree = fit_tree(X, y, std::vector<double>(80, 1.0), cfg, 0);
  const Eigen::VectorXd pf = predict(forest_fit, X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    CHECK(pf(i) == tree.predict_row(X.row(i)));
  }
  CHECK(std::isnan(forest_fit.oob_rmse));  // no OOB rows without bootstrap
  CHECK(forest_fit.never_oob_rows == 80);
}

TEST_CASE("forest beats a single tree on nonlinear data") {
  Eigen::MatrixXd X_train, X_val;
  Eigen::VectorXd y_train, y_val;
  friedman(X_train, y_train, 250, 101);
  friedman(X_val, y_val, 250, 102);

  auto rmse = [&](const Eigen::VectorXd& pred) {
    return std::sqrt((pred - y_val).squaredNorm() / y_val.size());
  };

  ForestConfig forest_cfg;
  forest_cfg.n_trees = 60;
  forest_cfg.seed = 5;
  const ForestFit many = fit(X_train, y_train, forest_cfg);

  ForestConfig single_cfg = forest_cfg;
  single_cfg.n_trees = 1;
  const ForestFit one = fit(X_train, y_train, single_cfg);

  CHECK(rmse(predict(many, X_val)) < rmse(predict(one, X_val)));
}

TEST_CASE("determinism and bootstrap bookkeeping") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  friedman(X, y, 120, 7);

  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.seed = 77;
  const ForestFit a = fit(X, y, cfg);
  const ForestFit b = fit(X, y, cfg);
  const Eigen::VectorXd pa = predict(a, X);
  const Eigen::VectorXd pb = predict(b, X);
  CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.oob_rmse == b.oob_rmse);

  // Root in-bag weight sums to n for every bootstrap tree.
  for (const auto& tree : a.trees) {
    CHECK(tree.nodes[0].count == 120.0);
  }

  // With 30+ trees every row should be out of bag somewhere.
  CHECK(a.never_oob_rows == 0);
  CHECK(a.oob_rows == 120);
  CHECK(a.oob_rmse > 0.0);
}

TEST_CASE("predictions stay within the training response range") {
  Eigen::MatrixXd X, X_far(3, 7);
  Eigen::VectorXd y;
  friedman(X, y, 150, 8);
  X_far << Eigen::RowVectorXd::Constant(7, 100.0),
      Eigen::RowVectorXd::Constant(7, -100.0), Eigen::RowVectorXd::Zero(7);

  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.seed = 9;
  const ForestFit f = fit(X, y, cfg);
  const Eigen::VectorXd pred = predict(f, X_far);
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    CHECK(pred(i) >= f.y_min);
    CHECK(pred(i) <= f.y_max);
  }

  Eigen::MatrixXd wrong(2, 3);
  CHECK_THROWS(predict(f, wrong));
}

TEST_CASE("hand-built two-tree forest averages its leaves") {
  ForestFit f;
  f.y_min = 0.0;
  f.y_max = 4.0;
  RegressionTree t1, t2;
  TreeNode leaf1;
  leaf1.value = 1.0;
  TreeNode leaf2;
  leaf2.value = 3.0;
  t1.nodes = {leaf1};
  t2.nodes = {leaf2};
  f.trees = {t1, t2};
  Eigen::MatrixXd X(2, 4);
  X.setRandom();
  const Eigen::VectorXd pred = predict(f, X);
  CHECK(pred(0) == 2.0);
  CHECK(pred(1) == 2.0);
}

TEST_CASE("strictly monotone transforms keep the tree structure") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  friedman(X, y, 100, 21);
  Eigen::MatrixXd X2 = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) X2(i, 0) = std::exp(X(i, 0));  // monotone

  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 31;
  const ForestFit a = fit(X, y, cfg);
  const ForestFit b = fit(X2, y, cfg);

  REQUIRE(a.trees.size() == b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    const auto& na = a.trees[t].nodes;
    const auto& nb = b.trees[t].nodes;
    REQUIRE(na.size() == nb.size());
    for (std::size_t k = 0; k < na.size(); ++k) {
      CHECK(na[k].is_leaf == nb[k].is_leaf);
      CHECK(na[k].feature == nb[k].feature);
      CHECK(na[k].left == nb[k].left);
      CHECK(na[k].right == nb[k].right);
      if (na[k].is_leaf) CHECK(na[k].value == nb[k].value);  // same row partition
    }
  }
}

TEST_CASE("permutation importance finds planted signal and ignores the rest") {
  Rng rng(41);
  const Eigen::Index n = 300, p = 5;
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.normal();
    X(i, 4) = 1.0;  // constant feature: unused by any split
    y(i) = 2.0 * X(i, 0) + 0.4 * rng.normal();
  }
  Eigen::MatrixXd X_val(150, p);
  Eigen::VectorXd y_val(150);
  for (Eigen::Index i = 0; i < 150; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X_val(i, j) = rng.normal();
    X_val(i, 4) = 1.0;
    y_val(i) = 2.0 * X_val(i, 0) + 0.4 * rng.normal();
  }

  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.seed = 13;
  const ForestFit f = fit(X, y, cfg);
  const ImportanceResult imp = importance(f, X_val, y_val, 10, 99);

  // The signal ranks first by a wide margin.
  CHECK(imp.permutation[0] > 0.5);
  for (std::size_t j = 1; j < 4; ++j) {
    CHECK(imp.permutation[0] > 5.0 * std::fabs(imp.permutation[j]));
  }
  // A feature no tree uses moves nothing when permuted.
  CHECK(imp.permutation[4] == 0.0);
  // Planted-null columns define the noise floor; the unused feature sits
  // at or below it.
  const double noise_floor = std::max({std::fabs(imp.permutation[1]),
                                       std::fabs(imp.permutation[2]),
                                       std::fabs(imp.permutation[3])});
  CHECK(std::fabs(imp.permutation[4]) <= noise_floor + 1e-15);

  // Impurity importance agrees on the winner.
  CHECK(imp.impurity[0] > imp.impurity[1]);
  CHECK(imp.impurity[4] == 0.0);
}

TEST_CASE("duplicated signal columns share importance above the null floor") {
  Rng rng(43);
  const Eigen::Index n = 300;
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = rng.normal();
    X(i, 0) = s;
    X(i, 1) = s;  // exact duplicate
    X(i, 2) = rng.normal();
    X(i, 3) = rng.normal();
    y(i) = 2.0 * s + 0.4 * rng.normal();
  }
  Eigen::MatrixXd X_val(150, 4);
  Eigen::VectorXd y_val(150);
  for (Eigen::Index i = 0; i < 150; ++i) {
    const double s = rng.normal();
    X_val(i, 0) = s;
    X_val(i, 1) = s;
    X_val(i, 2) = rng.normal();
    X_val(i, 3) = rng.normal();
    y_val(i) = 2.0 * s + 0.4 * rng.normal();
  }
  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.seed = 3;
  const ForestFit f = fit(X, y, cfg);
  const ImportanceResult imp = importance(f, X_val, y_val, 10, 17);
  const double null_floor =
      std::max(std::fabs(imp.permutation[2]), std::fabs(imp.permutation[3]));
  // Individually the copies may split the credit; combined they dominate.
  CHECK(imp.permutation[0] + imp.permutation[1] > null_floor);
}

TEST_CASE("forest text serialization round trips") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  friedman(X, y, 60, 55);
  ForestConfig cfg;
  cfg.n_trees = 5;
  cfg.seed = 21;
  const ForestFit f = fit(X, y, cfg);
  const std::vector<std::string> names{"a", "b", "c", "d", "e", "f", "g"};

  const std::string text = forest_to_text(f, names);
  std::vector<std::string> names2;
  const ForestFit g = forest_from_text(text, names2);
  CHECK(names2 == names);
  REQUIRE(g.trees.size() == f.trees.size());
  const Eigen::VectorXd pf = predict(f, X);
  const Eigen::VectorXd pg = predict(g, X);
  CHECK((pf - pg).cwiseAbs().maxCoeff() == 0.0);
}
