#ifndef KOA_LMM_HPP
#define KOA_LMM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace koa::lmm {

// Random-intercept model: y = X beta + gamma_{cluster} + eps, with
// gamma_i ~ N(0, sigma_u^2) per cluster and eps ~ N(0, sigma_e^2).
struct LmmDesign {
  Eigen::MatrixXd X;          // fixed-effects matrix, includes any intercept
  Eigen::VectorXd y;
  std::vector<int> cluster;   // dense ids 0..m-1, one per row
};

struct LmmFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd beta_se;
  Eigen::MatrixXd beta_cov;   // sigma_e^2 (X'WX)^-1
  double sigma_u2 = 0.0;
  double sigma_e2 = 0.0;
  double phi = 0.0;           // variance ratio sigma_u^2 / sigma_e^2
  bool phi_boundary = false;  // estimate truncated at phi = 0
  double reml_loglik = 0.0;
  std::vector<double> blups;  // shrunken cluster effects, indexed by cluster id
  double icc = 0.0;
};

struct LrtResult {
  double stat = 0.0;
  double p_value = 1.0;
  double loglik_null = 0.0;
  double loglik_alt = 0.0;
};

struct LmmPredictions {
  Eigen::VectorXd fitted;
  Eigen::VectorXd se;
};

// Profiled REML: beta and sigma_e^2 have closed forms given phi, leaving a
// 1-D derivative-free search over log(phi) with the phi=0 boundary allowed.
LmmFit fit_reml(const LmmDesign& d);

double icc(const LmmFit& f);

// Restricted log-likelihood profile at a fixed phi (beta and sigma_e^2
// profiled out); exposed for local-maximum and gradient checks.
double reml_profile_loglik(const LmmDesign& d, double phi);

// Boundary likelihood-ratio test of sigma_u^2 = 0. Both fits use full ML on
// identical rows; the p-value comes from the 50:50 chi2_0/chi2_1 mixture.
LrtResult lrt_random_effect(const LmmDesign& d);

// cluster_new: dense cluster id per row, or -1 for patients unseen at fit
// time. Known clusters add their BLUP; unknown clusters get fixed effects
// only and sigma_u^2 joins their prediction variance.
LmmPredictions predict(const LmmFit& f, const Eigen::MatrixXd& X_new,
                       const std::vector<int>& cluster_new);

std::string lmm_to_text(const LmmFit& f, const std::vector<std::string>& feature_names,
                        const std::vector<std::string>& cluster_names);
LmmFit lmm_from_text(const std::string& text, std::vector<std::string>& feature_names,
                     std::vector<std::string>& cluster_names);

}  // namespace koa::lmm

#endif  // KOA_LMM_HPP
