#include "koa/elastic_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/rng.hpp"

namespace koa::elastic_net {

namespace {

constexpr double kAlphaFloor = 1e-3;  // keeps the ridge auto grid finite

struct Standardized {
  Eigen::MatrixXd X;        // centered, optionally scaled
  Eigen::VectorXd y;        // centered
  Eigen::VectorXd col_mean;
  Eigen::VectorXd col_scale;  // 1.0 when standardize is off or sd == 0
  double y_mean = 0.0;
};

Standardized standardize_data(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              bool standardize) {
  if (!X.allFinite() || !y.allFinite()) {
    throw std::invalid_argument("elastic_net: non-finite values in X or y");
  }
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n < 2 || p < 1) throw std::invalid_argument("elastic_net: need n >= 2 and p >= 1");
  if (y.size() != n) throw std::invalid_argument("elastic_net: X/y size mismatch");

  Standardized s;
  s.col_mean = X.colwise().mean();
  s.y_mean = y.mean();
  s.X = X.rowwise() - s.col_mean.transpose();
  s.y = y.array() - s.y_mean;
  s.col_scale = Eigen::VectorXd::Ones(p);
  if (standardize) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double sd = std::sqrt(s.X.col(j).squaredNorm() / static_cast<double>(n));
      if (sd > 0.0) {
        s.col_scale(j) = sd;
        s.X.col(j) /= sd;
      }
    }
  }
  return s;
}

// Core solver on pre-centered data. theta is updated in place (warm start).
struct SolveStats {
  bool converged = false;
  int sweeps = 0;
};

SolveStats coordinate_descent(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              double alpha, double lambda, const EnConfig& cfg,
                              Eigen::VectorXd& theta,
                              std::vector<double>* objective_trace) {
  const Eigen::Index p = X.cols();
  Eigen::VectorXd col_sq(p);
  for (Eigen::Index j = 0; j < p; ++j) col_sq(j) = X.col(j).squaredNorm();

  Eigen::VectorXd residual = y - X * theta;
  SolveStats stats;
  for (int sweep = 0; sweep < cfg.max_iter; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double denom = 2.0 * col_sq(j) + 2.0 * lambda * (1.0 - alpha);
      if (denom == 0.0) continue;  // constant column: coefficient stays put
      const double old = theta(j);
      const double rho = 2.0 * (X.col(j).dot(residual) + col_sq(j) * old);
      const double updated = soft_threshold(rho, lambda * alpha) / denom;
      if (updated != old) {
        residual += X.col(j) * (old - updated);
        theta(j) = updated;
        max_change = std::max(max_change, std::fabs(updated - old));
      }
    }
    ++stats.sweeps;
    if (objective_trace) {
      const double obj = residual.squaredNorm() +
                         lambda * ((1.0 - alpha) * theta.squaredNorm() +
                                   alpha * theta.template lpNorm<1>());
      objective_trace->push_back(obj);
    }
    if (max_change < cfg.tol) {
      stats.converged = true;
      break;
    }
  }
  return stats;
}

void check_config(const EnConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) {
    throw std::invalid_argument("elastic_net: alpha must lie in [0,1]");
  }
  if (!(cfg.tol > 0.0)) throw std::invalid_argument("elastic_net: tol must be > 0");
  for (std::size_t l = 1; l < cfg.lambda_grid.size(); ++l) {
    if (!(cfg.lambda_grid[l] < cfg.lambda_grid[l - 1])) {
      throw std::invalid_argument("elastic_net: lambda grid must be strictly descending");
    }
  }
}

ElasticNetFit finalize(const Standardized& s, const Eigen::VectorXd& theta_std,
                       const EnConfig& cfg, double lambda, SolveStats stats) {
  ElasticNetFit f;
  f.alpha = cfg.alpha;
  f.lambda = lambda;
  f.converged = stats.converged;
  f.sweeps = stats.sweeps;
  f.theta = theta_std.cwiseQuotient(s.col_scale);
  f.intercept = s.y_mean - f.theta.dot(s.col_mean);
  return f;
}

double rmse_of(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
}

}  // namespace

double soft_threshold(double z, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("soft_threshold: gamma must be >= 0");
  const double mag = std::fabs(z) - gamma;
  if (mag <= 0.0) return 0.0;
  return z > 0.0 ? mag : -mag;
}

double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const EnConfig& cfg) {
  const Standardized s = standardize_data(X, y, cfg.standardize);
  const double alpha = std::max(cfg.alpha, kAlphaFloor);
  // Same per-column dot products the solver evaluates, plus a 1e-12
  // relative guard so the zero solution survives the rounding of the
  // lambda*alpha product at exact equality.
  double g = 0.0;
  for (Eigen::Index j = 0; j < s.X.cols(); ++j) {
    g = std::max(g, std::fabs(s.X.col(j).dot(s.y)));
  }
  return 2.0 * g / alpha * (1.0 + 1e-12);
}

std::vector<double> make_lambda_grid(const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& y,
                                     const EnConfig& cfg) {
  if (!cfg.lambda_grid.empty()) return cfg.lambda_grid;
  double lmax = lambda_max(X, y, cfg);
  if (!(lmax > 0.0)) lmax = 1.0;  // constant response: arbitrary finite grid
  const int L = std::max(2, cfg.n_lambda);
  const double lmin = lmax * cfg.lambda_min_ratio;
  std::vector<double> grid(L);
  const double step = std::log(lmin / lmax) / static_cast<double>(L - 1);
  for (int l = 0; l < L; ++l) grid[l] = lmax * std::exp(step * l);
  return grid;
}

ElasticNetFit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const EnConfig& cfg, double lambda) {
  check_config(cfg);
  if (!(lambda >= 0.0)) throw std::invalid_argument("elastic_net: lambda must be >= 0");
  const Standardized s = standardize_data(X, y, cfg.standardize);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(X.cols());
  std::vector<double> trace;
  SolveStats stats = coordinate_descent(s.X, s.y, cfg.alpha, lambda, cfg, theta,
                                        cfg.track_objective ? &trace : nullptr);
  ElasticNetFit f = finalize(s, theta, cfg, lambda, stats);
  f.objective_trace = std::move(trace);
  return f;
}

ElasticNetFit fit_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const EnConfig& cfg, const double* select_lambda) {
  check_config(cfg);
  const Standardized s = standardize_data(X, y, cfg.standardize);
  const std::vector<double> grid = make_lambda_grid(X, y, cfg);
  const Eigen::Index p = X.cols();

  ElasticNetFit out;
  out.lambda_grid = grid;
  out.path.resize(p, static_cast<Eigen::Index>(grid.size()));
  out.path_intercepts.resize(grid.size());
  out.n_nonzero.resize(grid.size());

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  bool have_selected = false;
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const SolveStats stats = coordinate_descent(s.X, s.y, cfg.alpha, grid[l], cfg,
                                                theta, nullptr);
    const ElasticNetFit at_l = finalize(s, theta, cfg, grid[l], stats);
    out.path.col(static_cast<Eigen::Index>(l)) = at_l.theta;
    out.path_intercepts[l] = at_l.intercept;
    out.n_nonzero[l] = static_cast<int>((theta.array() != 0.0).count());

    const bool is_selected = select_lambda && *select_lambda == grid[l];
    const bool is_last = !select_lambda && l + 1 == grid.size();
    if (is_selected || is_last) {
      out.theta = at_l.theta;
      out.intercept = at_l.intercept;
      out.lambda = grid[l];
      out.converged = at_l.converged;
      out.sweeps = at_l.sweeps;
      out.alpha = cfg.alpha;
      have_selected = true;
    }
  }
  if (select_lambda && !have_selected) {
    // Selected lambda off the grid: solve it directly, warm-started from the
    // nearest larger grid point already in theta.
    const SolveStats stats = coordinate_descent(s.X, s.y, cfg.alpha, *select_lambda,
                                                cfg, theta, nullptr);
    const ElasticNetFit at = finalize(s, theta, cfg, *select_lambda, stats);
    out.theta = at.theta;
    out.intercept = at.intercept;
    out.lambda = *select_lambda;
    out.converged = at.converged;
    out.sweeps = at.sweeps;
    out.alpha = cfg.alpha;
  }
  return out;
}

Eigen::VectorXd ElasticNetFit::predict(const Eigen::MatrixXd& X) const {
  if (X.cols() != theta.size()) {
    throw std::invalid_argument("elastic_net: feature count mismatch in predict");
  }
  return (X * theta).array() + intercept;
}

KktReport kkt_check(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const EnConfig& cfg, const ElasticNetFit& f) {
  const Standardized s = standardize_data(X, y, cfg.standardize);
  const Eigen::VectorXd theta_std = f.theta.cwiseProduct(s.col_scale);
  const Eigen::VectorXd residual = s.y - s.X * theta_std;

  KktReport rep;
  rep.scale = std::max(1.0, 2.0 * (s.X.transpose() * s.y).cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < theta_std.size(); ++j) {
    const double grad = 2.0 * s.X.col(j).dot(residual);
    if (theta_std(j) != 0.0) {
      const double sign = theta_std(j) > 0.0 ? 1.0 : -1.0;
      const double station = -grad + 2.0 * f.lambda * (1.0 - f.alpha) * theta_std(j) +
                             f.lambda * f.alpha * sign;
      rep.max_violation_active = std::max(rep.max_violation_active, std::fabs(station));
    } else {
      const double excess = std::fabs(grad) - f.lambda * f.alpha;
      rep.max_violation_zero = std::max(rep.max_violation_zero, excess);
    }
  }
  return rep;
}

double objective_value(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double alpha, double lambda, double intercept,
                       const Eigen::VectorXd& theta) {
  const Eigen::VectorXd r = y - ((X * theta).array() + intercept).matrix();
  return r.squaredNorm() +
         lambda * ((1.0 - alpha) * theta.squaredNorm() + alpha * theta.lpNorm<1>());
}

CvResult cross_validate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<int>& groups, const EnConfig& cfg,
                        int k, int repeats, std::uint64_t seed) {
  check_config(cfg);
  if (k < 2) throw std::invalid_argument("cross_validate: need k >= 2");
  if (repeats < 1) throw std::invalid_argument("cross_validate: need repeats >= 1");
  if (static_cast<Eigen::Index>(groups.size()) != X.rows()) {
    throw std::invalid_argument("cross_validate: groups/X size mismatch");
  }

  std::vector<int> unique_groups(groups.begin(), groups.end());
  std::sort(unique_groups.begin(), unique_groups.end());
  unique_groups.erase(std::unique(unique_groups.begin(), unique_groups.end()),
                      unique_groups.end());
  if (static_cast<int>(unique_groups.size()) < k) {
    throw std::invalid_argument("cross_validate: fewer groups than folds");
  }

  // The grid is built once on the full data and shared by every fold.
  const std::vector<double> grid = make_lambda_grid(X, y, cfg);
  EnConfig fold_cfg = cfg;
  fold_cfg.lambda_grid = grid;

  const std::size_t L = grid.size();
  std::vector<double> sum(L, 0.0), sum_sq(L, 0.0);
  const int total_fits = k * repeats;

  Rng master(seed);
  for (int rep = 0; rep < repeats; ++rep) {
    Rng rng = master.child(static_cast<std::uint64_t>(rep));
    std::vector<int> order = unique_groups;
    rng.shuffle(order);
    std::vector<std::vector<int>> fold_groups(k);
    for (std::size_t g = 0; g < order.size(); ++g) {
      fold_groups[g % static_cast<std::size_t>(k)].push_back(order[g]);
    }

    for (int fold = 0; fold < k; ++fold) {
      std::vector<bool> held(groups.size(), false);
      {
        std::vector<int> sorted_fold = fold_groups[fold];
        std::sort(sorted_fold.begin(), sorted_fold.end());
        for (std::size_t i = 0; i < groups.size(); ++i) {
          held[i] = std::binary_search(sorted_fold.begin(), sorted_fold.end(), groups[i]);
        }
      }
      std::vector<Eigen::Index> train_rows, val_rows;
      for (std::size_t i = 0; i < groups.size(); ++i) {
        (held[i] ? val_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
      }
      if (val_rows.empty() || train_rows.empty()) {
        throw std::runtime_error("cross_validate: fold with zero rows");
      }

      Eigen::MatrixXd Xtr(train_rows.size(), X.cols());
      Eigen::VectorXd ytr(train_rows.size());
      for (std::size_t i = 0; i < train_rows.size(); ++i) {
        Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train_rows[i]);
        ytr(static_cast<Eigen::Index>(i)) = y(train_rows[i]);
      }
      Eigen::MatrixXd Xva(val_rows.size(), X.cols());
      Eigen::VectorXd yva(val_rows.size());
      for (std::size_t i = 0; i < val_rows.size(); ++i) {
        Xva.row(static_cast<Eigen::Index>(i)) = X.row(val_rows[i]);
        yva(static_cast<Eigen::Index>(i)) = y(val_rows[i]);
      }

      const ElasticNetFit path = fit_path(Xtr, ytr, fold_cfg);
      for (std::size_t l = 0; l < L; ++l) {
        const Eigen::VectorXd pred =
            (Xva * path.path.col(static_cast<Eigen::Index>(l))).array() +
            path.path_intercepts[l];
        const double e = rmse_of(pred, yva);
        sum[l] += e;
        sum_sq[l] += e * e;
      }
    }
  }

  CvResult res;
  res.lambda_grid = grid;
  res.folds = k;
  res.repeats = repeats;
  res.seed = seed;
  res.mean_rmse.resize(L);
  res.se_rmse.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const double mean = sum[l] / total_fits;
    res.mean_rmse[l] = mean;
    const double var = total_fits > 1
        ? std::max(0.0, (sum_sq[l] - total_fits * mean * mean) / (total_fits - 1))
        : 0.0;
    res.se_rmse[l] = std::sqrt(var / total_fits);
  }

  // Minimum mean RMSE; exact ties resolve to the larger lambda (the grid is
  // descending, so the first minimizer wins).
  std::size_t best = 0;
  for (std::size_t l = 1; l < L; ++l) {
    if (res.mean_rmse[l] < res.mean_rmse[best]) best = l;
  }
  res.chosen_index = best;
  res.chosen_lambda = grid[best];
  return res;
}

std::string CvResult::to_csv() const {
  std::string out = "lambda,mean_rmse,se_rmse,chosen\n";
  for (std::size_t l = 0; l < lambda_grid.size(); ++l) {
    out += csv::format_row({csv::format_double(lambda_grid[l]),
                            csv::format_double(mean_rmse[l]),
                            csv::format_double(se_rmse[l]),
                            l == chosen_index ? "true" : "false"});
  }
  return out;
}

std::vector<Contribution> contributions(const ElasticNetFit& f,
                                        const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != f.theta.size()) {
    throw std::invalid_argument("contributions: name count mismatch");
  }
  std::vector<Contribution> rows;
  for (Eigen::Index j = 0; j < f.theta.size(); ++j) {
    if (f.theta(j) != 0.0) rows.push_back({names[static_cast<std::size_t>(j)], f.theta(j)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Contribution& a, const Contribution& b) {
    return std::fabs(a.theta) > std::fabs(b.theta);
  });
  return rows;
}

std::string contributions_to_csv(const std::vector<Contribution>& rows) {
  std::string out = "feature,coefficient\n";
  for (const auto& r : rows) {
    out += csv::format_row({r.name, csv::format_double(r.theta)});
  }
  return out;
}

std::string en_to_text(const ElasticNetFit& f, const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != f.theta.size()) {
    throw std::invalid_argument("en_to_text: name count mismatch");
  }
  std::ostringstream out;
  out << "koa_model_version 1\n";
  out << "kind elastic_net\n";
  out << "alpha " << csv::format_double(f.alpha) << "\n";
  out << "lambda " << csv::format_double(f.lambda) << "\n";
  out << "intercept " << csv::format_double(f.intercept) << "\n";
  out << "converged " << (f.converged ? 1 : 0) << "\n";
  out << "n_features " << names.size() << "\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    out << "feature " << names[j] << " "
        << csv::format_double(f.theta(static_cast<Eigen::Index>(j))) << "\n";
  }
  return out.str();
}

ElasticNetFit en_from_text(const std::string& text, std::vector<std::string>& names) {
  std::istringstream in(text);
  std::string key;
  ElasticNetFit f;
  names.clear();
  std::vector<double> thetas;

  in >> key;
  if (key != "koa_model_version") throw std::runtime_error("en model: missing version header");
  int version;
  in >> version;
  if (version != 1) throw std::runtime_error("en model: unsupported version");
  in >> key;
  std::string kind;
  in >> kind;
  if (key != "kind" || kind != "elastic_net") throw std::runtime_error("en model: wrong kind");

  while (in >> key) {
    if (key == "alpha") in >> f.alpha;
    else if (key == "lambda") in >> f.lambda;
    else if (key == "intercept") in >> f.intercept;
    else if (key == "converged") { int c; in >> c; f.converged = c != 0; }
    else if (key == "n_features") { std::size_t n; in >> n; names.reserve(n); }
    else if (key == "feature") {
      std::string name;
      double theta;
      in >> name >> theta;
      names.push_back(name);
      thetas.push_back(theta);
    } else {
      throw std::runtime_error("en model: unknown key " + key);
    }
  }
  f.theta = Eigen::Map<Eigen::VectorXd>(thetas.data(), static_cast<Eigen::Index>(thetas.size()));
  return f;
}

}  // namespace koa::elastic_net
