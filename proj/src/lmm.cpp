#include "koa/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/normal.hpp"
#include "koa/optimize.hpp"

namespace koa::lmm {

namespace {

constexpr double kLogPhiLo = -18.420680743952367;  // log(1e-8)
constexpr double kLogPhiHi = 18.420680743952367;   // log(1e8)
constexpr double kPhiTol = 1e-8;
constexpr int kPhiMaxIter = 300;
constexpr double kLog2Pi = 1.8378770664093454836;

struct ClusterStats {
  int m = 0;                        // number of clusters
  std::vector<double> sizes;        // n_i
  Eigen::MatrixXd x_sums;           // m x p, per-cluster column sums of X
  Eigen::VectorXd y_sums;           // m, per-cluster sums of y
};

ClusterStats cluster_stats(const LmmDesign& d) {
  const Eigen::Index n = d.X.rows();
  const Eigen::Index p = d.X.cols();
  int m = 0;
  for (int c : d.cluster) {
    if (c < 0) throw std::invalid_argument("lmm: negative cluster id");
    m = std::max(m, c + 1);
  }
  ClusterStats s;
  s.m = m;
  s.sizes.assign(static_cast<std::size_t>(m), 0.0);
  s.x_sums = Eigen::MatrixXd::Zero(m, p);
  s.y_sums = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = d.cluster[static_cast<std::size_t>(i)];
    s.sizes[static_cast<std::size_t>(c)] += 1.0;
    s.x_sums.row(c) += d.X.row(i);
    s.y_sums(c) += d.y(i);
  }
  for (double size : s.sizes) {
    if (size <= 0.0) throw std::invalid_argument("lmm: empty cluster id in 0..m-1");
  }
  return s;
}

// GLS pieces at a fixed phi. H = I + phi Z Z', W = H^-1 applied through the
// per-cluster rank-one correction W_i = I - (phi/(1+phi n_i)) J.
struct GlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd xtwx;
  double rwr = 0.0;       // r' W r at beta
  double log_det_h = 0.0;
  double log_det_xtwx = 0.0;
};

GlsResult gls_at_phi(const LmmDesign& d, const ClusterStats& s, double phi) {
  const Eigen::Index p = d.X.cols();

  Eigen::MatrixXd xtwx = d.X.transpose() * d.X;
  Eigen::VectorXd xtwy = d.X.transpose() * d.y;
  double log_det_h = 0.0;
  for (int c = 0; c < s.m; ++c) {
    const double ni = s.sizes[static_cast<std::size_t>(c)];
    const double shrink = phi / (1.0 + phi * ni);
    xtwx.noalias() -= shrink * (s.x_sums.row(c).transpose() * s.x_sums.row(c));
    xtwy.noalias() -= shrink * s.x_sums.row(c).transpose() * s.y_sums(c);
    log_det_h += std::log1p(phi * ni);
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
  if (ldlt.info() != Eigen::Success) {
    throw std::runtime_error("lmm: X'WX decomposition failed");
  }
  GlsResult g;
  g.beta = ldlt.solve(xtwy);
  g.xtwx = std::move(xtwx);
  g.log_det_h = log_det_h;

  double log_det = 0.0;
  const Eigen::VectorXd diag = ldlt.vectorD();
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(diag(j) > 0.0)) throw std::runtime_error("lmm: X'WX not positive definite (rank-deficient X?)");
    log_det += std::log(diag(j));
  }
  g.log_det_xtwx = log_det;

  // r'Wr via explicit residuals and per-cluster residual sums.
  const Eigen::VectorXd r = d.y - d.X * g.beta;
  double rwr = r.squaredNorm();
  Eigen::VectorXd r_sums = Eigen::VectorXd::Zero(s.m);
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    r_sums(d.cluster[static_cast<std::size_t>(i)]) += r(i);
  }
  for (int c = 0; c < s.m; ++c) {
    const double ni = s.sizes[static_cast<std::size_t>(c)];
    rwr -= phi / (1.0 + phi * ni) * r_sums(c) * r_sums(c);
  }
  g.rwr = rwr;
  return g;
}

double reml_loglik_at(const LmmDesign& d, const ClusterStats& s, double phi) {
  const double n = static_cast<double>(d.X.rows());
  const double p = static_cast<double>(d.X.cols());
  const GlsResult g = gls_at_phi(d, s, phi);
  const double dof = n - p;
  const double sigma_e2 = g.rwr / dof;
  if (!(sigma_e2 > 0.0) || !std::isfinite(sigma_e2)) {
    throw std::runtime_error("lmm: non-finite likelihood (degenerate residual variance)");
  }
  return -0.5 * (dof * std::log(sigma_e2) + g.log_det_h + g.log_det_xtwx +
                 dof + dof * kLog2Pi);
}

double ml_loglik_at(const LmmDesign& d, const ClusterStats& s, double phi) {
  const double n = static_cast<double>(d.X.rows());
  const GlsResult g = gls_at_phi(d, s, phi);
  const double sigma2 = g.rwr / n;
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw std::runtime_error("lmm: non-finite likelihood");
  }
  return -0.5 * (n * std::log(sigma2) + g.log_det_h + n + n * kLog2Pi);
}

void validate_design(const LmmDesign& d) {
  const Eigen::Index n = d.X.rows();
  const Eigen::Index p = d.X.cols();
  if (d.y.size() != n) throw std::invalid_argument("lmm: X/y size mismatch");
  if (static_cast<Eigen::Index>(d.cluster.size()) != n) {
    throw std::invalid_argument("lmm: X/cluster size mismatch");
  }
  if (!d.X.allFinite() || !d.y.allFinite()) {
    throw std::invalid_argument("lmm: non-finite values in X or y");
  }
  // Singleton-only clusterings are allowed (phi falls to the boundary), so
  // the dof requirement is just a positive REML residual dimension.
  if (p >= n) throw std::invalid_argument("lmm: need p < n for REML");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
  if (qr.rank() < p) throw std::invalid_argument("lmm: X is rank deficient");
}

// Maximize a log-likelihood profile over phi >= 0; the boundary competes
// with the interior optimum over log(phi).
template <typename Loglik>
std::pair<double, bool> maximize_phi(const Loglik& ll) {
  const auto interior = maximize_scalar(
      [&](double t) { return ll(std::exp(t)); }, kLogPhiLo, kLogPhiHi, kPhiTol,
      kPhiMaxIter);
  const double phi_hat = std::exp(interior.x);
  const double at_zero = ll(0.0);
  if (at_zero >= interior.value - 1e-10) return {0.0, true};
  return {phi_hat, false};
}

}  // namespace

double reml_profile_loglik(const LmmDesign& d, double phi) {
  const ClusterStats s = cluster_stats(d);
  return reml_loglik_at(d, s, phi);
}

LmmFit fit_reml(const LmmDesign& d) {
  const ClusterStats s = cluster_stats(d);
  validate_design(d);

  const auto [phi, at_boundary] =
      maximize_phi([&](double p) { return reml_loglik_at(d, s, p); });

  LmmFit f;
  f.phi = phi;
  f.phi_boundary = at_boundary;

  const GlsResult g = gls_at_phi(d, s, phi);
  const double dof = static_cast<double>(d.X.rows() - d.X.cols());
  f.beta = g.beta;
  f.sigma_e2 = g.rwr / dof;
  f.sigma_u2 = phi * f.sigma_e2;
  f.reml_loglik = reml_loglik_at(d, s, phi);
  f.icc = f.sigma_u2 / (f.sigma_u2 + f.sigma_e2);

  f.beta_cov = f.sigma_e2 *
      g.xtwx.ldlt().solve(Eigen::MatrixXd::Identity(d.X.cols(), d.X.cols()));
  f.beta_se = f.beta_cov.diagonal().cwiseMax(0.0).cwiseSqrt();

  // BLUPs: gamma_i = (phi n_i / (1 + phi n_i)) * mean cluster residual.
  const Eigen::VectorXd r = d.y - d.X * f.beta;
  Eigen::VectorXd r_sums = Eigen::VectorXd::Zero(s.m);
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    r_sums(d.cluster[static_cast<std::size_t>(i)]) += r(i);
  }
  f.blups.resize(static_cast<std::size_t>(s.m));
  for (int c = 0; c < s.m; ++c) {
    const double ni = s.sizes[static_cast<std::size_t>(c)];
    f.blups[static_cast<std::size_t>(c)] =
        phi * ni / (1.0 + phi * ni) * (r_sums(c) / ni);
  }
  return f;
}

double icc(const LmmFit& f) { return f.sigma_u2 / (f.sigma_u2 + f.sigma_e2); }

LrtResult lrt_random_effect(const LmmDesign& d) {
  const ClusterStats s = cluster_stats(d);
  validate_design(d);

  const auto [phi_alt, boundary] =
      maximize_phi([&](double p) { return ml_loglik_at(d, s, p); });
  (void)boundary;

  LrtResult res;
  res.loglik_alt = ml_loglik_at(d, s, phi_alt);
  res.loglik_null = ml_loglik_at(d, s, 0.0);
  res.stat = std::max(0.0, 2.0 * (res.loglik_alt - res.loglik_null));
  // Null sits on the boundary: 50:50 mixture of chi2_0 and chi2_1.
  res.p_value = res.stat <= 0.0 ? 1.0 : 0.5 * chi2_sf_1df(res.stat);
  return res;
}

LmmPredictions predict(const LmmFit& f, const Eigen::MatrixXd& X_new,
                       const std::vector<int>& cluster_new) {
  if (X_new.cols() != f.beta.size()) {
    throw std::invalid_argument("lmm predict: feature count mismatch");
  }
  if (static_cast<Eigen::Index>(cluster_new.size()) != X_new.rows()) {
    throw std::invalid_argument("lmm predict: cluster id count mismatch");
  }
  LmmPredictions out;
  out.fitted = X_new * f.beta;
  out.se.resize(X_new.rows());

  for (Eigen::Index i = 0; i < X_new.rows(); ++i) {
    const int c = cluster_new[static_cast<std::size_t>(i)];
    double var = X_new.row(i) * f.beta_cov * X_new.row(i).transpose();
    var = std::max(var, 0.0);
    if (c >= 0) {
      if (static_cast<std::size_t>(c) >= f.blups.size()) {
        throw std::invalid_argument("lmm predict: unknown cluster id");
      }
      out.fitted(i) += f.blups[static_cast<std::size_t>(c)];
    } else {
      var += f.sigma_u2;  // unseen cluster: random-intercept variance applies
    }
    out.se(i) = std::sqrt(var);
  }
  return out;
}

std::string lmm_to_text(const LmmFit& f, const std::vector<std::string>& feature_names,
                        const std::vector<std::string>& cluster_names) {
  std::ostringstream out;
  out << "koa_model_version 1\n";
  out << "kind lmm\n";
  out << "sigma_u2 " << csv::format_double(f.sigma_u2) << "\n";
  out << "sigma_e2 " << csv::format_double(f.sigma_e2) << "\n";
  out << "phi " << csv::format_double(f.phi) << "\n";
  out << "icc " << csv::format_double(f.icc) << "\n";
  out << "reml_loglik " << csv::format_double(f.reml_loglik) << "\n";
  out << "phi_boundary " << (f.phi_boundary ? 1 : 0) << "\n";
  out << "n_features " << feature_names.size() << "\n";
  for (std::size_t j = 0; j < feature_names.size(); ++j) {
    out << "feature " << feature_names[j] << " "
        << csv::format_double(f.beta(static_cast<Eigen::Index>(j))) << " "
        << csv::format_double(f.beta_se(static_cast<Eigen::Index>(j))) << "\n";
  }
  out << "n_clusters " << cluster_names.size() << "\n";
  for (std::size_t c = 0; c < cluster_names.size(); ++c) {
    out << "blup " << cluster_names[c] << " " << csv::format_double(f.blups[c]) << "\n";
  }
  return out.str();
}

LmmFit lmm_from_text(const std::string& text, std::vector<std::string>& feature_names,
                     std::vector<std::string>& cluster_names) {
  std::istringstream in(text);
  std::string key;
  LmmFit f;
  feature_names.clear();
  cluster_names.clear();
  std::vector<double> betas, ses;

  in >> key;
  if (key != "koa_model_version") throw std::runtime_error("lmm model: missing version header");
  int version;
  in >> version;
  if (version != 1) throw std::runtime_error("lmm model: unsupported version");
  in >> key;
  std::string kind;
  in >> kind;
  if (key != "kind" || kind != "lmm") throw std::runtime_error("lmm model: wrong kind");

  while (in >> key) {
    if (key == "sigma_u2") in >> f.sigma_u2;
    else if (key == "sigma_e2") in >> f.sigma_e2;
    else if (key == "phi") in >> f.phi;
    else if (key == "icc") in >> f.icc;
    else if (key == "reml_loglik") in >> f.reml_loglik;
    else if (key == "phi_boundary") { int b; in >> b; f.phi_boundary = b != 0; }
    else if (key == "n_features" || key == "n_clusters") { std::size_t n; in >> n; (void)n; }
    else if (key == "feature") {
      std::string name;
      double beta, se;
      in >> name >> beta >> se;
      feature_names.push_back(name);
      betas.push_back(beta);
      ses.push_back(se);
    } else if (key == "blup") {
      std::string name;
      double value;
      in >> name >> value;
      cluster_names.push_back(name);
      f.blups.push_back(value);
    } else {
      throw std::runtime_error("lmm model: unknown key " + key);
    }
  }
  f.beta = Eigen::Map<Eigen::VectorXd>(betas.data(), static_cast<Eigen::Index>(betas.size()));
  f.beta_se = Eigen::Map<Eigen::VectorXd>(ses.data(), static_cast<Eigen::Index>(ses.size()));
  f.beta_cov = Eigen::MatrixXd::Zero(f.beta.size(), f.beta.size());
  f.beta_cov.diagonal() = f.beta_se.array().square();
  return f;
}

}  // namespace koa::lmm
