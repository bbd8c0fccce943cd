#ifndef KOA_FOREST_HPP
#define KOA_FOREST_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace koa::forest {

struct ForestConfig {
  int n_trees = 100;
  int mtry = 0;          // features per split; 0 = ceil(p/3)
  int min_leaf = 5;      // minimum weighted samples per leaf
  int max_depth = -1;    // -1 = unlimited
  std::uint64_t seed = 0;
  bool bootstrap = true;  // test hook: false keeps every row weight at 1
};

// Flat node array; children indices point into `nodes`. Leaves carry the
// weighted mean response and their in-bag count.
struct TreeNode {
  bool is_leaf = true;
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double count = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct ForestFit {
  std::vector<RegressionTree> trees;
  ForestConfig config;
  int n_features = 0;
  double oob_rmse = 0.0;
  std::size_t oob_rows = 0;              // rows with at least one OOB tree
  std::size_t never_oob_rows = 0;
  std::vector<double> impurity_importance;  // mean SSE decrease per feature
  double y_min = 0.0;
  double y_max = 0.0;
};

struct ImportanceResult {
  std::vector<double> permutation;  // mean RMSE increase per feature
  std::vector<double> impurity;     // copied from the fit
  double baseline_rmse = 0.0;
  std::string to_csv(const std::vector<std::string>& names) const;
};

// Greedy variance-reduction tree on weighted rows. Splits search an
// mtry-subset drawn fresh at each node; thresholds are midpoints between
// adjacent observed values; equal-gain ties go to the lowest feature index,
// then the smallest threshold.
RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<double>& row_weights,
                        const ForestConfig& cfg, std::uint64_t seed);

// Bagged forest. Per-tree RNG streams derive from cfg.seed by tree index,
// so any execution order yields the same forest.
ForestFit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const ForestConfig& cfg);

Eigen::VectorXd predict(const ForestFit& f, const Eigen::MatrixXd& X);

// Permutation importance on held-out data: mean RMSE increase across
// `permutations` within-column shuffles.
ImportanceResult importance(const ForestFit& f, const Eigen::MatrixXd& X_val,
                            const Eigen::VectorXd& y_val, int permutations,
                            std::uint64_t seed);

std::string forest_to_text(const ForestFit& f, const std::vector<std::string>& names);
ForestFit forest_from_text(const std::string& text, std::vector<std::string>& names);

}  // namespace koa::forest

#endif  // KOA_FOREST_HPP
