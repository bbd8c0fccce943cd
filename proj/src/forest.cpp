#include "koa/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/rng.hpp"

namespace koa::forest {

namespace {

struct SplitCandidate {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;  // SSE decrease
};

struct Builder {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  const std::vector<double>& weights;
  const ForestConfig& cfg;
  Rng rng;
  std::vector<TreeNode> nodes;
  std::vector<double>* impurity_gain;  // per-feature accumulation, optional

  // Scratch: (value, row) pairs re-sorted per feature at each node.
  std::vector<std::pair<double, int>> sorted;

  SplitCandidate best_split(const std::vector<int>& rows, double node_sum,
                            double node_weight) {
    const int p = static_cast<int>(X.cols());
    const int mtry = std::clamp(cfg.mtry > 0 ? cfg.mtry : (p + 2) / 3, 1, p);

    // Draw the feature subset without replacement, then scan in index order
    // so equal gains resolve to the lowest feature index.
    std::vector<int> features(p);
    std::iota(features.begin(), features.end(), 0);
    for (int k = 0; k < mtry; ++k) {
      const int j = k + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(p - k)));
      std::swap(features[k], features[j]);
    }
    features.resize(mtry);
    std::sort(features.begin(), features.end());

    SplitCandidate best;
    const double parent_score = node_sum * node_sum / node_weight;

    for (int f : features) {
      sorted.clear();
      for (int r : rows) sorted.emplace_back(X(r, f), r);
      std::sort(sorted.begin(), sorted.end());

      double left_sum = 0.0, left_weight = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const int r = sorted[i].second;
        left_sum += weights[r] * y(r);
        left_weight += weights[r];
        if (sorted[i].first == sorted[i + 1].first) continue;  // no boundary here
        const double right_weight = node_weight - left_weight;
        if (left_weight < cfg.min_leaf || right_weight < cfg.min_leaf) continue;
        const double right_sum = node_sum - left_sum;
        const double score = left_sum * left_sum / left_weight +
                             right_sum * right_sum / right_weight;
        const double gain = score - parent_score;
        if (gain > best.gain) {
          best.found = true;
          best.feature = f;
          best.threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  int build(std::vector<int>&& rows, int depth) {
    double node_sum = 0.0, node_weight = 0.0;
    for (int r : rows) {
      node_sum += weights[r] * y(r);
      node_weight += weights[r];
    }

    const int node_id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[node_id].value = node_sum / node_weight;
    nodes[node_id].count = node_weight;

    const bool depth_done = cfg.max_depth >= 0 && depth >= cfg.max_depth;
    if (depth_done || node_weight < 2.0 * cfg.min_leaf) return node_id;

    const SplitCandidate split = best_split(rows, node_sum, node_weight);
    if (!split.found || split.gain <= 0.0) return node_id;

    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
      (X(r, split.feature) <= split.threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    if (impurity_gain) (*impurity_gain)[static_cast<std::size_t>(split.feature)] += split.gain;

    nodes[node_id].is_leaf = false;
    nodes[node_id].feature = split.feature;
    nodes[node_id].threshold = split.threshold;
    const int left_id = build(std::move(left_rows), depth + 1);
    const int right_id = build(std::move(right_rows), depth + 1);
    nodes[node_id].left = left_id;
    nodes[node_id].right = right_id;
    return node_id;
  }
};

}  // namespace

double RegressionTree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int id = 0;
  while (!nodes[static_cast<std::size_t>(id)].is_leaf) {
    const TreeNode& n = nodes[static_cast<std::size_t>(id)];
    id = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(id)].value;
}

RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<double>& row_weights,
                        const ForestConfig& cfg, std::uint64_t seed) {
  if (X.rows() != y.size()) throw std::invalid_argument("fit_tree: X/y size mismatch");
  if (static_cast<Eigen::Index>(row_weights.size()) != X.rows()) {
    throw std::invalid_argument("fit_tree: weight count mismatch");
  }
  std::vector<int> rows;
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (row_weights[static_cast<std::size_t>(i)] > 0.0) {
      rows.push_back(static_cast<int>(i));
      total += row_weights[static_cast<std::size_t>(i)];
    }
  }
  if (rows.empty()) throw std::invalid_argument("fit_tree: no rows with positive weight");

  Builder b{X, y, row_weights, cfg, Rng(seed), {}, nullptr, {}};
  b.build(std::move(rows), 0);
  RegressionTree t;
  t.nodes = std::move(b.nodes);
  return t;
}

ForestFit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const ForestConfig& cfg) {
  const Eigen::Index n = X.rows();
  if (n < 2) throw std::invalid_argument("forest: need n >= 2");
  if (cfg.n_trees < 1) throw std::invalid_argument("forest: need n_trees >= 1");
  if (cfg.mtry > X.cols()) throw std::invalid_argument("forest: mtry exceeds feature count");

  ForestFit f;
  f.config = cfg;
  f.n_features = static_cast<int>(X.cols());
  f.y_min = y.minCoeff();
  f.y_max = y.maxCoeff();
  f.impurity_importance.assign(static_cast<std::size_t>(X.cols()), 0.0);

  const Rng master(cfg.seed);
  std::vector<double> oob_sum(static_cast<std::size_t>(n), 0.0);
  std::vector<int> oob_count(static_cast<std::size_t>(n), 0);

  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng tree_rng = master.child(static_cast<std::uint64_t>(t));
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    if (cfg.bootstrap) {
      for (Eigen::Index i = 0; i < n; ++i) {
        ++weights[tree_rng.uniform_index(static_cast<std::uint64_t>(n))];
      }
    } else {
      std::fill(weights.begin(), weights.end(), 1.0);
    }

    Builder b{X, y, weights, cfg, tree_rng.child(0), {}, &f.impurity_importance, {}};
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (weights[static_cast<std::size_t>(i)] > 0.0) rows.push_back(static_cast<int>(i));
    }
    b.build(std::move(rows), 0);
    RegressionTree tree;
    tree.nodes = std::move(b.nodes);

    if (cfg.bootstrap) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (weights[static_cast<std::size_t>(i)] == 0.0) {
          oob_sum[static_cast<std::size_t>(i)] += tree.predict_row(X.row(i));
          ++oob_count[static_cast<std::size_t>(i)];
        }
      }
    }
    f.trees.push_back(std::move(tree));
  }

  for (auto& g : f.impurity_importance) g /= static_cast<double>(cfg.n_trees);

  double sse = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (oob_count[static_cast<std::size_t>(i)] > 0) {
      const double pred = oob_sum[static_cast<std::size_t>(i)] /
                          oob_count[static_cast<std::size_t>(i)];
      sse += (pred - y(i)) * (pred - y(i));
      ++f.oob_rows;
    } else {
      ++f.never_oob_rows;
    }
  }
  f.oob_rmse = f.oob_rows ? std::sqrt(sse / static_cast<double>(f.oob_rows))
                          : std::numeric_limits<double>::quiet_NaN();
  return f;
}

Eigen::VectorXd predict(const ForestFit& f, const Eigen::MatrixXd& X) {
  if (f.trees.empty()) throw std::invalid_argument("forest: empty model");
  if (f.n_features > 0 && X.cols() != f.n_features) {
    throw std::invalid_argument("forest: feature count mismatch in predict");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  for (const auto& tree : f.trees) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) += tree.predict_row(X.row(i));
  }
  return out / static_cast<double>(f.trees.size());
}

ImportanceResult importance(const ForestFit& f, const Eigen::MatrixXd& X_val,
                            const Eigen::VectorXd& y_val, int permutations,
                            std::uint64_t seed) {
  if (X_val.rows() < 10) throw std::invalid_argument("importance: need >= 10 validation rows");
  if (permutations < 1) throw std::invalid_argument("importance: need >= 1 permutation");

  const auto rmse = [&](const Eigen::VectorXd& pred) {
    return std::sqrt((pred - y_val).squaredNorm() / static_cast<double>(y_val.size()));
  };

  ImportanceResult res;
  res.impurity = f.impurity_importance;
  res.baseline_rmse = rmse(predict(f, X_val));
  res.permutation.assign(static_cast<std::size_t>(X_val.cols()), 0.0);

  const Rng master(seed);
  for (Eigen::Index j = 0; j < X_val.cols(); ++j) {
    Rng col_rng = master.child(static_cast<std::uint64_t>(j));
    double acc = 0.0;
    Eigen::MatrixXd X_perm = X_val;
    for (int s = 0; s < permutations; ++s) {
      std::vector<int> idx(static_cast<std::size_t>(X_val.rows()));
      std::iota(idx.begin(), idx.end(), 0);
      col_rng.shuffle(idx);
      for (Eigen::Index i = 0; i < X_val.rows(); ++i) {
        X_perm(i, j) = X_val(idx[static_cast<std::size_t>(i)], j);
      }
      acc += rmse(predict(f, X_perm)) - res.baseline_rmse;
    }
    res.permutation[static_cast<std::size_t>(j)] = acc / permutations;
  }
  return res;
}

std::string ImportanceResult::to_csv(const std::vector<std::string>& names) const {
  std::string out = "feature,permutation_importance,impurity_importance\n";
  for (std::size_t j = 0; j < permutation.size(); ++j) {
    out += csv::format_row({names[j], csv::format_double(permutation[j]),
                            csv::format_double(impurity[j])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Versioned text serialization
// ---------------------------------------------------------------------------

std::string forest_to_text(const ForestFit& f, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "koa_model_version 1\n";
  out << "kind random_forest\n";
  out << "n_trees " << f.trees.size() << "\n";
  out << "min_leaf " << f.config.min_leaf << "\n";
  out << "mtry " << f.config.mtry << "\n";
  out << "seed " << f.config.seed << "\n";
  out << "y_min " << csv::format_double(f.y_min) << "\n";
  out << "y_max " << csv::format_double(f.y_max) << "\n";
  out << "oob_rmse " << csv::format_double(f.oob_rmse) << "\n";
  out << "n_features " << names.size() << "\n";
  for (const auto& name : names) out << "feature " << name << "\n";
  for (std::size_t t = 0; t < f.trees.size(); ++t) {
    const auto& nodes = f.trees[t].nodes;
    out << "tree " << t << " " << nodes.size() << "\n";
    for (const auto& n : nodes) {
      if (n.is_leaf) {
        out << "leaf " << csv::format_double(n.value) << " "
            << csv::format_double(n.count) << "\n";
      } else {
        out << "split " << n.feature << " " << csv::format_double(n.threshold)
            << " " << n.left << " " << n.right << " "
            << csv::format_double(n.value) << " " << csv::format_double(n.count)
            << "\n";
      }
    }
  }
  return out.str();
}

ForestFit forest_from_text(const std::string& text, std::vector<std::string>& names) {
  std::istringstream in(text);
  std::string key;
  ForestFit f;
  names.clear();
  std::size_t n_trees = 0;

  auto expect = [&](const std::string& want) {
    if (key != want) throw std::runtime_error("forest model: expected '" + want + "', got '" + key + "'");
  };
  // operator>> rejects "nan"/"inf"; route doubles through strtod.
  auto read_double = [&in]() {
    std::string tok;
    if (!(in >> tok)) throw std::runtime_error("forest model: truncated file");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
      throw std::runtime_error("forest model: bad number '" + tok + "'");
    }
    return v;
  };

  in >> key;
  expect("koa_model_version");
  int version;
  in >> version;
  if (version != 1) throw std::runtime_error("forest model: unsupported version");
  in >> key;
  expect("kind");
  std::string kind;
  in >> kind;
  if (kind != "random_forest") throw std::runtime_error("forest model: wrong kind " + kind);

  while (in >> key) {
    if (key == "n_trees") in >> n_trees;
    else if (key == "min_leaf") in >> f.config.min_leaf;
    else if (key == "mtry") in >> f.config.mtry;
    else if (key == "seed") in >> f.config.seed;
    else if (key == "y_min") f.y_min = read_double();
    else if (key == "y_max") f.y_max = read_double();
    else if (key == "oob_rmse") f.oob_rmse = read_double();
    else if (key == "n_features") { std::size_t n; in >> n; names.reserve(n); }
    else if (key == "feature") { std::string n; in >> n; names.push_back(n); }
    else if (key == "tree") {
      std::size_t idx, n_nodes;
      in >> idx >> n_nodes;
      RegressionTree tree;
      tree.nodes.reserve(n_nodes);
      for (std::size_t i = 0; i < n_nodes; ++i) {
        std::string tag;
        in >> tag;
        TreeNode node;
        if (tag == "leaf") {
          node.value = read_double();
          node.count = read_double();
        } else if (tag == "split") {
          node.is_leaf = false;
          in >> node.feature;
          node.threshold = read_double();
          in >> node.left >> node.right;
          node.value = read_double();
          node.count = read_double();
        } else {
          throw std::runtime_error("forest model: bad node tag " + tag);
        }
        tree.nodes.push_back(node);
      }
      f.trees.push_back(std::move(tree));
    } else {
      throw std::runtime_error("forest model: unknown key " + key);
    }
  }
  if (f.trees.size() != n_trees) throw std::runtime_error("forest model: tree count mismatch");
  f.config.n_trees = static_cast<int>(n_trees);
  f.n_features = static_cast<int>(names.size());
  return f;
}

}  // namespace koa::forest
