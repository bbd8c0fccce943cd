#ifndef KOA_ELASTIC_NET_HPP
#define KOA_ELASTIC_NET_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace koa::elastic_net {

// Objective minimized (no 1/n loss scaling, no 1/2 on the ridge term):
//   sum_i (y_i - yhat_i)^2 + lambda * [(1-alpha) * sum_j theta_j^2
//                                       + alpha  * sum_j |theta_j|]
// The intercept is never penalized. With `standardize` set, predictors are
// centered and scaled to unit variance internally and the penalty applies on
// that scale; reported coefficients are mapped back to the original scale.
struct EnConfig {
  double alpha = 0.5;                // L1/L2 mixing; 0 = ridge, 1 = lasso
  std::vector<double> lambda_grid;   // strictly descending; empty = auto grid
  bool standardize = true;
  double tol = 1e-10;                // max coefficient change per sweep
  int max_iter = 10000;              // sweep cap
  int n_lambda = 100;                // auto grid length
  double lambda_min_ratio = 1e-4;    // auto grid floor relative to lambda_max
  bool track_objective = false;      // record objective after each sweep
};

struct ElasticNetFit {
  double intercept = 0.0;
  Eigen::VectorXd theta;             // original scale
  double lambda = 0.0;
  double alpha = 0.5;
  bool converged = false;
  int sweeps = 0;

  // Warm-started regularization path (original scale), populated by
  // fit_path: column l holds the coefficients at lambda_grid[l].
  std::vector<double> lambda_grid;
  Eigen::MatrixXd path;              // p x n_lambda
  std::vector<double> path_intercepts;
  std::vector<int> n_nonzero;

  std::vector<double> objective_trace;  // per sweep, when tracked

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

struct CvResult {
  std::vector<double> lambda_grid;   // descending
  std::vector<double> mean_rmse;
  std::vector<double> se_rmse;
  int folds = 0;
  int repeats = 0;
  std::uint64_t seed = 0;
  double chosen_lambda = 0.0;
  std::size_t chosen_index = 0;
  std::string to_csv() const;
};

struct KktReport {
  double max_violation_active = 0.0;  // stationarity residual, active set
  double max_violation_zero = 0.0;    // subgradient excess over lambda*alpha
  double scale = 1.0;                 // problem scale the bounds are quoted in
};

// sign(z) * max(|z| - gamma, 0)
double soft_threshold(double z, double gamma);

// Smallest lambda with an all-zero solution on this data (standardized
// scale): (2/alpha) * max_j |x_j' (y - ybar)|. alpha is floored at 1e-3 so
// the pure-ridge auto grid stays finite.
double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const EnConfig& cfg);

std::vector<double> make_lambda_grid(const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& y,
                                     const EnConfig& cfg);

// Cyclic coordinate descent at a single lambda.
ElasticNetFit fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const EnConfig& cfg, double lambda);

// Full warm-started path over cfg.lambda_grid (auto grid when empty). The
// returned fit's theta/intercept/lambda are those of `select_lambda` if
// given, otherwise of the smallest lambda on the grid.
ElasticNetFit fit_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const EnConfig& cfg, const double* select_lambda = nullptr);

// Stationarity check at the fitted solution, on the internal scale:
//   theta_j != 0: |-2 x_j'r + 2 lambda (1-alpha) theta_j
//                  + lambda alpha sign(theta_j)| <= tol * scale
//   theta_j == 0: |2 x_j'r| <= lambda alpha + tol * scale
KktReport kkt_check(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const EnConfig& cfg, const ElasticNetFit& f);

// Eq-style objective of a candidate solution on the given (unstandardized)
// data; used for monotonicity checks against the per-sweep trace.
double objective_value(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double alpha, double lambda, double intercept,
                       const Eigen::VectorXd& theta);

// Repeated grouped k-fold CV over the lambda path. Folds partition the
// group ids, so both knees of a patient stay on one side of each fold.
CvResult cross_validate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<int>& groups, const EnConfig& cfg,
                        int k = 10, int repeats = 5, std::uint64_t seed = 0);

struct Contribution {
  std::string name;
  double theta;
};

// Nonzero coefficients sorted by |theta| descending, sign retained.
std::vector<Contribution> contributions(const ElasticNetFit& f,
                                        const std::vector<std::string>& names);
std::string contributions_to_csv(const std::vector<Contribution>& rows);

// Versioned plain-text model file (key-value lines).
std::string en_to_text(const ElasticNetFit& f, const std::vector<std::string>& names);
ElasticNetFit en_from_text(const std::string& text, std::vector<std::string>& names);

}  // namespace koa::elastic_net

#endif  // KOA_ELASTIC_NET_HPP
