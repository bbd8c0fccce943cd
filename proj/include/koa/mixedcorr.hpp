#ifndef KOA_MIXEDCORR_HPP
#define KOA_MIXEDCORR_HPP

#include <string>
#include <vector>

#include "koa/dataset.hpp"

namespace koa::mixedcorr {

enum class CorrMethod { pearson, polyserial, polychoric };

struct LatentCorr {
  double rho = 0.0;
  bool converged = false;   // false on iteration-cap or boundary solutions
  bool boundary = false;    // |rho| pinned at the search boundary
};

// Latent-scale thresholds of an ordinal variable: tau_k = Phi^-1(cumulative
// proportion through category k), k = 1..c-1. Strictly increasing.
std::vector<double> estimate_thresholds(const std::vector<std::size_t>& counts);

// Product-moment correlation. Inputs must be equal length (>= 3) and
// nonconstant; missing handling is the caller's job.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Two-step polychoric estimate from a contingency table: thresholds fixed
// from the margins, then a 1-D likelihood maximization over rho with
// bivariate-normal cell probabilities.
LatentCorr polychoric(const std::vector<std::vector<std::size_t>>& table);

// Two-step polyserial estimate: thresholds from the ordinal margins, rho by
// maximizing the conditional likelihood of category given standardized x.
LatentCorr polyserial(const std::vector<double>& x, const std::vector<int>& y,
                      std::size_t n_categories);

// Log-likelihoods at a fixed rho; exposed for maximizer-property checks.
double polychoric_loglik(const std::vector<std::vector<std::size_t>>& table,
                         const std::vector<double>& row_thresholds,
                         const std::vector<double>& col_thresholds, double rho);
double polyserial_loglik(const std::vector<double>& z, const std::vector<int>& y,
                         const std::vector<double>& thresholds, double rho);

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> r;             // NaN where a pair failed
  std::vector<std::vector<CorrMethod>> method;
  std::vector<std::vector<bool>> converged;
  std::vector<std::vector<std::string>> note;     // failure reason, else ""

  // Long-format table (var1,var2,correlation,method,converged) for external
  // heatmap rendering.
  std::string to_long_csv() const;
};

// Method dispatch per column-kind pair over the cohort's predictors:
// numeric-numeric Pearson, numeric-ordinal polyserial, ordinal-ordinal
// polychoric (binary treated as a 2-category ordinal). Pairwise-complete
// rows per pair; per-pair failures become flagged NaN entries.
CorrelationMatrix correlation_matrix(const dataset::Cohort& c);

const char* method_name(CorrMethod m);

}  // namespace koa::mixedcorr

#endif  // KOA_MIXEDCORR_HPP
