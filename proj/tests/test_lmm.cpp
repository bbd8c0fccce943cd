#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "koa/harness.hpp"
#include "koa/lmm.hpp"
#include "koa/rng.hpp"

using namespace koa;
using namespace koa::lmm;

namespace {

// Balanced one-way layout: m clusters of size k, intercept-only design.
LmmDesign balanced_design(int m, int k, double sigma_u, double sigma_e,
                          std::uint64_t seed) {
  Rng rng(seed);
  LmmDesign d;
  const int n = m * k;
  d.X = Eigen::MatrixXd::Ones(n, 1);
  d.y.resize(n);
  d.cluster.resize(static_cast<std::size_t>(n));
  int row = 0;
  for (int c = 0; c < m; ++c) {
    const double u = sigma_u * rng.normal();
    for (int j = 0; j < k; ++j, ++row) {
      d.y(row) = 1.7 + u + sigma_e * rng.normal();
      d.cluster[static_cast<std::size_t>(row)] = c;
    }
  }
  return d;
}

struct AnovaEstimates {
  double sigma_e2;
  double sigma_u2;
};

// Closed-form one-way ANOVA variance components (balanced, k per cluster).
AnovaEstimates anova_oracle(const LmmDesign& d, int m, int k) {
  const double grand = d.y.mean();
  Eigen::VectorXd cluster_mean = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    cluster_mean(d.cluster[static_cast<std::size_t>(i)]) += d.y(i);
  }
  cluster_mean /= static_cast<double>(k);

  double ssw = 0.0;
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    const double dmean = d.y(i) - cluster_mean(d.cluster[static_cast<std::size_t>(i)]);
    ssw += dmean * dmean;
  }
  double ssb = 0.0;
  for (int c = 0; c < m; ++c) {
    ssb += (cluster_mean(c) - grand) * (cluster_mean(c) - grand);
  }
  const double msw = ssw / (m * (k - 1));
  const double msb = k * ssb / (m - 1);
  return {msw, std::max(0.0, (msb - msw) / k)};
}

}  // namespace

TEST_CASE("balanced two-knee REML equals the ANOVA closed forms") {
  const int m = 120, k = 2;
  const LmmDesign d = balanced_design(m, k, 0.7, 1.1, 33);
  const LmmFit f = fit_reml(d);
  const AnovaEstimates oracle = anova_oracle(d, m, k);

  CHECK(f.sigma_e2 == doctest::Approx(oracle.sigma_e2).epsilon(1e-6));
  CHECK(f.sigma_u2 == doctest::Approx(oracle.sigma_u2).epsilon(1e-6));
  CHECK(std::fabs(f.sigma_e2 - oracle.sigma_e2) < 1e-6);
  CHECK(std::fabs(f.sigma_u2 - oracle.sigma_u2) < 1e-6);
  CHECK(f.beta(0) == doctest::Approx(d.y.mean()).epsilon(1e-10));  // balanced GLS = mean
}

TEST_CASE("independent rows collapse to the OLS boundary") {
  Rng rng(44);
  const int n = 200;
  LmmDesign d;
  d.X.resize(n, 2);
  d.y.resize(n);
  d.cluster.resize(n);
  for (int i = 0; i < n; ++i) {
    d.X(i, 0) = 1.0;
    d.X(i, 1) = rng.normal();
    d.y(i) = 0.5 + 0.8 * d.X(i, 1) + rng.normal();
    d.cluster[static_cast<std::size_t>(i)] = i / 2;  // pairs, but no shared effect
  }
  const LmmFit f = fit_reml(d);
  // sigma_u^2 may be tiny positive by sampling luck; across this seed the
  // boundary is the optimum.
  CHECK(f.phi_boundary);
  CHECK(f.sigma_u2 == 0.0);

  const Eigen::VectorXd ols =
      (d.X.transpose() * d.X).ldlt().solve(d.X.transpose() * d.y);
  CHECK((f.beta - ols).cwiseAbs().maxCoeff() < 1e-8);
  for (double blup : f.blups) CHECK(blup == 0.0);
}

TEST_CASE("icc arithmetic") {
  LmmFit f;
  f.sigma_u2 = 1.0;
  f.sigma_e2 = 3.0;
  CHECK(icc(f) == doctest::Approx(0.25));
  f.sigma_u2 = 0.0;
  CHECK(icc(f) == 0.0);
  for (double k : {0.1, 1.0, 250.0}) {
    f.sigma_u2 = 0.265 * k;
    f.sigma_e2 = 0.735 * k;
    CHECK(icc(f) == doctest::Approx(0.265).epsilon(1e-12));
  }
}

TEST_CASE("icc recovery at the published level on a generated cohort") {
  harness::SynthSpec spec;
  spec.n_patients = 2000;
  spec.icc = 0.265;
  spec.seed = 424243;
  spec.predictors = harness::default_blueprint();
  for (auto& b : spec.predictors) b.missing_rate = 0.0;  // keep rows aligned
  const harness::SynthResult synth = harness::generate_cohort(spec);

  dataset::DropReport report;
  const auto design = dataset::build_design(synth.cohort, report);
  REQUIRE(design.X.rows() == 4000);

  // Latent-scale response: the variance decomposition the icc target
  // calibrates. The graded response attenuates it by construction.
  LmmDesign d;
  d.X.resize(design.X.rows(), design.X.cols() + 1);
  d.X.col(0).setOnes();
  d.X.rightCols(design.X.cols()) = design.X;
  d.y = Eigen::Map<const Eigen::VectorXd>(synth.truth.latent.data(),
                                          static_cast<Eigen::Index>(synth.truth.latent.size()));
  d.cluster = design.patient_index;

  const LmmFit f = fit_reml(d);
  CHECK(std::fabs(f.icc - 0.265) < 0.03);
  CHECK(f.sigma_u2 + f.sigma_e2 == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("icc scale invariance") {
  const LmmDesign d = balanced_design(80, 2, 0.6, 1.0, 71);
  LmmDesign scaled = d;
  scaled.y *= 3.0;
  const LmmFit a = fit_reml(d);
  const LmmFit b = fit_reml(scaled);
  CHECK(a.icc == doctest::Approx(b.icc).epsilon(1e-7));
  CHECK(b.sigma_e2 == doctest::Approx(9.0 * a.sigma_e2).epsilon(1e-6));
}

TEST_CASE("likelihood ratio test: null and power behavior") {
  int null_pass = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const LmmDesign d = balanced_design(100, 2, 0.0, 1.0, 600 + seed);
    const LrtResult r = lrt_random_effect(d);
    CHECK(r.stat >= 0.0);
    null_pass += (r.p_value > 0.05);
  }
  CHECK(null_pass >= 5);

  // Strong random effect: ICC 0.5 with 500 clusters.
  const LmmDesign strong = balanced_design(500, 2, 1.0, 1.0, 911);
  const LrtResult r = lrt_random_effect(strong);
  CHECK(r.p_value < 0.001);
  CHECK(r.stat > 10.0);
}

TEST_CASE("predictions add BLUPs for known clusters only") {
  const LmmDesign d = balanced_design(50, 2, 0.9, 0.8, 81);
  const LmmFit f = fit_reml(d);

  Eigen::MatrixXd X_new = Eigen::MatrixXd::Ones(3, 1);
  const std::vector<int> clusters{0, 7, -1};
  const LmmPredictions p = predict(f, X_new, clusters);

  CHECK(p.fitted(0) == doctest::Approx(f.beta(0) + f.blups[0]));
  CHECK(p.fitted(1) == doctest::Approx(f.beta(0) + f.blups[7]));
  CHECK(p.fitted(2) == doctest::Approx(f.beta(0)));

  // Unknown clusters carry the random-intercept variance in their SE.
  CHECK(p.se(2) > p.se(0));
  CHECK(p.se(2) * p.se(2) - p.se(0) * p.se(0) ==
        doctest::Approx(f.sigma_u2).epsilon(1e-9));

  CHECK_THROWS(predict(f, Eigen::MatrixXd::Ones(1, 3), {0}));
}

TEST_CASE("phi at zero makes prediction fixed-effects only") {
  // Mirror-image pairs: every cluster mean equals the grand mean, so the
  // between-cluster variance is mechanically zero and phi must hit 0.
  Rng rng(82);
  LmmDesign d;
  const int m = 60;
  d.X = Eigen::MatrixXd::Ones(2 * m, 1);
  d.y.resize(2 * m);
  d.cluster.resize(2 * m);
  for (int c = 0; c < m; ++c) {
    const double v = 0.5 + rng.uniform();
    d.y(2 * c) = 1.0 + v;
    d.y(2 * c + 1) = 1.0 - v;
    d.cluster[static_cast<std::size_t>(2 * c)] = c;
    d.cluster[static_cast<std::size_t>(2 * c + 1)] = c;
  }
  const LmmFit f = fit_reml(d);
  REQUIRE(f.phi == 0.0);
  Eigen::MatrixXd X_new = Eigen::MatrixXd::Ones(2, 1);
  const LmmPredictions p = predict(f, X_new, {0, -1});
  CHECK(p.fitted(0) == p.fitted(1));
}

TEST_CASE("large clusters with a strong effect shrink almost nowhere") {
  // Two big, far-apart clusters: the shrinkage factor approaches 1 and the
  // BLUP approaches the raw cluster mean residual.
  Rng rng(83);
  const int per = 400;
  LmmDesign d;
  d.X = Eigen::MatrixXd::Ones(2 * per, 1);
  d.y.resize(2 * per);
  d.cluster.resize(2 * per);
  for (int i = 0; i < per; ++i) {
    d.y(i) = 10.0 + 0.05 * rng.normal();
    d.cluster[static_cast<std::size_t>(i)] = 0;
    d.y(per + i) = -10.0 + 0.05 * rng.normal();
    d.cluster[static_cast<std::size_t>(per + i)] = 1;
  }
  const LmmFit f = fit_reml(d);
  const Eigen::VectorXd r = d.y - d.X * f.beta;
  const double mean_resid_0 = r.head(per).mean();
  CHECK(f.blups[0] == doctest::Approx(mean_resid_0).epsilon(1e-3));
  CHECK(f.phi * per / (1.0 + f.phi * per) > 0.999);
}

TEST_CASE("two-cluster toy matches a mixed-model-equations solve") {
  LmmDesign d;
  d.X = Eigen::MatrixXd::Ones(4, 1);
  d.y.resize(4);
  d.y << 1.0, 2.0, 5.0, 7.0;
  d.cluster = {0, 0, 1, 1};
  const LmmFit f = fit_reml(d);
  REQUIRE(f.phi > 0.0);

  // Henderson system at the fitted phi:
  //   [X'X  X'Z      ] [beta ]   [X'y]
  //   [Z'X  Z'Z + I/phi] [gamma] = [Z'y]
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(4, 2);
  Z(0, 0) = Z(1, 0) = 1.0;
  Z(2, 1) = Z(3, 1) = 1.0;
  Eigen::MatrixXd M(3, 3);
  M(0, 0) = 4.0;
  M.block(0, 1, 1, 2) = (d.X.transpose() * Z);
  M.block(1, 0, 2, 1) = (Z.transpose() * d.X);
  M.block(1, 1, 2, 2) =
      Z.transpose() * Z + Eigen::MatrixXd::Identity(2, 2) / f.phi;
  Eigen::VectorXd rhs(3);
  rhs(0) = d.y.sum();
  rhs.tail(2) = Z.transpose() * d.y;
  const Eigen::VectorXd solution = M.ldlt().solve(rhs);

  CHECK(f.beta(0) == doctest::Approx(solution(0)).epsilon(1e-8));
  CHECK(f.blups[0] == doctest::Approx(solution(1)).epsilon(1e-8));
  CHECK(f.blups[1] == doctest::Approx(solution(2)).epsilon(1e-8));
}

TEST_CASE("REML profile is locally maximal and flat at the optimum") {
  const LmmDesign d = balanced_design(150, 2, 0.8, 1.0, 85);
  const LmmFit f = fit_reml(d);
  REQUIRE_FALSE(f.phi_boundary);

  const double at_hat = reml_profile_loglik(d, f.phi);
  CHECK(at_hat >= reml_profile_loglik(d, f.phi * 1.01));
  CHECK(at_hat >= reml_profile_loglik(d, f.phi * 0.99));
  CHECK(at_hat == doctest::Approx(f.reml_loglik).epsilon(1e-12));

  const double h = 1e-5 * f.phi;
  const double grad =
      (reml_profile_loglik(d, f.phi + h) - reml_profile_loglik(d, f.phi - h)) / (2.0 * h);
  CHECK(std::fabs(grad) < 1e-4);
}

TEST_CASE("all-singleton clusters reduce to OLS at the boundary") {
  Rng rng(86);
  const int n = 100;
  LmmDesign d;
  d.X.resize(n, 2);
  d.y.resize(n);
  d.cluster.resize(n);
  for (int i = 0; i < n; ++i) {
    d.X(i, 0) = 1.0;
    d.X(i, 1) = rng.normal();
    d.y(i) = 2.0 - 0.4 * d.X(i, 1) + rng.normal();
    d.cluster[static_cast<std::size_t>(i)] = i;
  }
  const LmmFit f = fit_reml(d);
  CHECK(f.phi == 0.0);
  CHECK(f.phi_boundary);
  const Eigen::VectorXd ols =
      (d.X.transpose() * d.X).ldlt().solve(d.X.transpose() * d.y);
  CHECK((f.beta - ols).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("design validation") {
  LmmDesign d;
  d.X = Eigen::MatrixXd::Ones(4, 2);  // rank deficient: duplicated column
  d.y = Eigen::VectorXd::Ones(4);
  d.cluster = {0, 0, 1, 1};
  CHECK_THROWS_AS(fit_reml(d), std::invalid_argument);

  LmmDesign gap;
  gap.X = Eigen::MatrixXd::Ones(2, 1);
  gap.y = Eigen::VectorXd::Ones(2);
  gap.cluster = {0, 2};  // cluster 1 empty
  CHECK_THROWS_AS(fit_reml(gap), std::invalid_argument);
}

TEST_CASE("lmm text serialization round trips") {
  const LmmDesign d = balanced_design(30, 2, 0.5, 1.0, 87);
  const LmmFit f = fit_reml(d);
  std::vector<std::string> features{"(intercept)"};
  std::vector<std::string> clusters;
  for (int c = 0; c < 30; ++c) clusters.push_back("p" + std::to_string(c));

  const std::string text = lmm_to_text(f, features, clusters);
  std::vector<std::string> f2, c2;
  const LmmFit g = lmm_from_text(text, f2, c2);
  CHECK(f2 == features);
  CHECK(c2 == clusters);
  CHECK(g.sigma_u2 == f.sigma_u2);
  CHECK(g.sigma_e2 == f.sigma_e2);
  CHECK(g.icc == f.icc);
  CHECK(g.blups == f.blups);
  CHECK(g.beta(0) == f.beta(0));
}
