#include "koa/mixedcorr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "koa/csv.hpp"
#include "koa/normal.hpp"
#include "koa/optimize.hpp"

namespace koa::mixedcorr {

namespace {

constexpr double kRhoBound = 0.999;
constexpr double kRhoTol = 1e-6;
constexpr int kMaxIter = 200;
constexpr double kLogFloor = 1e-300;

// Threshold vector padded with -inf / +inf sentinels for rectangle sums.
std::vector<double> padded(const std::vector<double>& cuts) {
  std::vector<double> t;
  t.reserve(cuts.size() + 2);
  t.push_back(-std::numeric_limits<double>::infinity());
  t.insert(t.end(), cuts.begin(), cuts.end());
  t.push_back(std::numeric_limits<double>::infinity());
  return t;
}

LatentCorr maximize_rho(const std::function<double(double)>& loglik) {
  const auto res = maximize_scalar(loglik, -kRhoBound, kRhoBound, kRhoTol, kMaxIter);
  LatentCorr out;
  out.rho = res.x;
  out.boundary = std::fabs(res.x) >= kRhoBound - 10.0 * kRhoTol;
  out.converged = res.converged && !out.boundary;
  return out;
}

}  // namespace

const char* method_name(CorrMethod m) {
  switch (m) {
    case CorrMethod::pearson: return "pearson";
    case CorrMethod::polyserial: return "polyserial";
    case CorrMethod::polychoric: return "polychoric";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Pearson
// ---------------------------------------------------------------------------

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("pearson: need at least 3 observations");

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::runtime_error("pearson: correlation undefined for constant input");
  }
  double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

std::vector<double> estimate_thresholds(const std::vector<std::size_t>& counts) {
  if (counts.size() < 2) throw std::invalid_argument("estimate_thresholds: need >= 2 categories");
  std::size_t total = 0;
  for (std::size_t c : counts) {
    if (c == 0) throw std::runtime_error("estimate_thresholds: empty category (degenerate threshold)");
    total += c;
  }
  std::vector<double> cuts;
  cuts.reserve(counts.size() - 1);
  std::size_t cum = 0;
  for (std::size_t k = 0; k + 1 < counts.size(); ++k) {
    cum += counts[k];
    cuts.push_back(norm_quantile(static_cast<double>(cum) / static_cast<double>(total)));
  }
  return cuts;
}

// ---------------------------------------------------------------------------
// Polychoric
// ---------------------------------------------------------------------------

double polychoric_loglik(const std::vector<std::vector<std::size_t>>& table,
                         const std::vector<double>& row_thresholds,
                         const std::vector<double>& col_thresholds, double rho) {
  const auto tr = padded(row_thresholds);
  const auto tc = padded(col_thresholds);
  const std::size_t nr = table.size();
  const std::size_t nc = table[0].size();

  // Cache the CDF grid; each rectangle reuses four corners.
  std::vector<std::vector<double>> grid(nr + 1, std::vector<double>(nc + 1));
  for (std::size_t i = 0; i <= nr; ++i) {
    for (std::size_t j = 0; j <= nc; ++j) {
      grid[i][j] = binorm_cdf(tr[i], tc[j], rho);
    }
  }

  double ll = 0.0;
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      if (table[i][j] == 0) continue;
      double pij = grid[i + 1][j + 1] - grid[i][j + 1] - grid[i + 1][j] + grid[i][j];
      if (pij < kLogFloor) pij = kLogFloor;
      ll += static_cast<double>(table[i][j]) * std::log(pij);
    }
  }
  return ll;
}

LatentCorr polychoric(const std::vector<std::vector<std::size_t>>& table) {
  if (table.size() < 2 || table[0].size() < 2) {
    throw std::invalid_argument("polychoric: need at least a 2x2 table");
  }
  const std::size_t nr = table.size();
  const std::size_t nc = table[0].size();
  for (const auto& row : table) {
    if (row.size() != nc) throw std::invalid_argument("polychoric: ragged table");
  }

  std::vector<std::size_t> row_margin(nr, 0), col_margin(nc, 0);
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      row_margin[i] += table[i][j];
      col_margin[j] += table[i][j];
    }
  }
  // Empty margins are degenerate-threshold errors, raised by the estimator.
  const auto tr = estimate_thresholds(row_margin);
  const auto tc = estimate_thresholds(col_margin);

  return maximize_rho([&](double rho) { return polychoric_loglik(table, tr, tc, rho); });
}

// ---------------------------------------------------------------------------
// Polyserial
// ---------------------------------------------------------------------------

double polyserial_loglik(const std::vector<double>& z, const std::vector<int>& y,
                         const std::vector<double>& thresholds, double rho) {
  const auto t = padded(thresholds);
  const double denom = std::sqrt(1.0 - rho * rho);
  double ll = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const int k = y[i];
    const double upper = std::isinf(t[k + 1]) && t[k + 1] > 0
        ? 1.0
        : norm_cdf((t[k + 1] - rho * z[i]) / denom);
    const double lower = std::isinf(t[k]) && t[k] < 0
        ? 0.0
        : norm_cdf((t[k] - rho * z[i]) / denom);
    double p = upper - lower;
    if (p < kLogFloor) p = kLogFloor;
    ll += std::log(p);
  }
  return ll;
}

LatentCorr polyserial(const std::vector<double>& x, const std::vector<int>& y,
                      std::size_t n_categories) {
  if (x.size() != y.size()) throw std::invalid_argument("polyserial: length mismatch");
  const std::size_t n = x.size();
  if (n < 10) throw std::invalid_argument("polyserial: need at least 10 pairwise-complete observations");
  if (n_categories < 2) throw std::invalid_argument("polyserial: need >= 2 categories");

  std::vector<std::size_t> counts(n_categories, 0);
  for (int k : y) {
    if (k < 0 || static_cast<std::size_t>(k) >= n_categories) {
      throw std::invalid_argument("polyserial: category code out of range");
    }
    ++counts[static_cast<std::size_t>(k)];
  }
  std::size_t observed_categories = 0;
  for (std::size_t c : counts) observed_categories += (c > 0);
  if (observed_categories < 2) {
    throw std::runtime_error("polyserial: fewer than 2 observed categories");
  }
  // Collapse unobserved categories; thresholds need positive counts.
  std::vector<std::size_t> dense_counts;
  std::vector<int> remap(n_categories, -1);
  for (std::size_t k = 0; k < n_categories; ++k) {
    if (counts[k] > 0) {
      remap[k] = static_cast<int>(dense_counts.size());
      dense_counts.push_back(counts[k]);
    }
  }
  std::vector<int> yd(n);
  for (std::size_t i = 0; i < n; ++i) yd[i] = remap[static_cast<std::size_t>(y[i])];

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  if (ss == 0.0) throw std::runtime_error("polyserial: x is constant");
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - mean) / sd;

  const auto cuts = estimate_thresholds(dense_counts);
  return maximize_rho([&](double rho) { return polyserial_loglik(z, yd, cuts, rho); });
}

// ---------------------------------------------------------------------------
// Matrix assembly
// ---------------------------------------------------------------------------

namespace {

using dataset::ColumnKind;
using dataset::PredictorColumn;

struct PairData {
  std::vector<double> xa, xb;       // numeric values
  std::vector<int> ca, cb;          // category codes
  std::size_t n = 0;
};

PairData pairwise_complete(const PredictorColumn& a, const PredictorColumn& b) {
  PairData d;
  const std::size_t n = a.n_rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (a.is_missing(i) || b.is_missing(i)) continue;
    if (a.spec.kind == ColumnKind::numeric) d.xa.push_back(*a.num[i]);
    else d.ca.push_back(*a.code[i]);
    if (b.spec.kind == ColumnKind::numeric) d.xb.push_back(*b.num[i]);
    else d.cb.push_back(*b.code[i]);
    ++d.n;
  }
  return d;
}

}  // namespace

CorrelationMatrix correlation_matrix(const dataset::Cohort& c) {
  const std::size_t p = c.predictors.size();
  if (p < 2) throw std::invalid_argument("correlation_matrix: need >= 2 predictors");

  CorrelationMatrix m;
  for (const auto& col : c.predictors) m.names.push_back(col.spec.name);
  m.r.assign(p, std::vector<double>(p, 0.0));
  m.method.assign(p, std::vector<CorrMethod>(p, CorrMethod::pearson));
  m.converged.assign(p, std::vector<bool>(p, true));
  m.note.assign(p, std::vector<std::string>(p, ""));

  for (std::size_t i = 0; i < p; ++i) {
    m.r[i][i] = 1.0;
    const bool num_i = c.predictors[i].spec.kind == ColumnKind::numeric;
    m.method[i][i] = num_i ? CorrMethod::pearson : CorrMethod::polychoric;
  }

  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) {
      const PredictorColumn& a = c.predictors[i];
      const PredictorColumn& b = c.predictors[j];
      const bool num_a = a.spec.kind == ColumnKind::numeric;
      const bool num_b = b.spec.kind == ColumnKind::numeric;

      CorrMethod method = CorrMethod::pearson;
      if (!num_a && !num_b) method = CorrMethod::polychoric;
      else if (!num_a || !num_b) method = CorrMethod::polyserial;

      double value = std::numeric_limits<double>::quiet_NaN();
      bool conv = false;
      std::string note;
      try {
        const PairData d = pairwise_complete(a, b);
        switch (method) {
          case CorrMethod::pearson: {
            value = pearson(d.xa, d.xb);
            conv = true;
            break;
          }
          case CorrMethod::polyserial: {
            const auto& xs = num_a ? d.xa : d.xb;
            const auto& cs = num_a ? d.cb : d.ca;
            const auto& spec = num_a ? b.spec : a.spec;
            const LatentCorr lc = polyserial(xs, cs, spec.categories.size());
            value = lc.rho;
            conv = lc.converged;
            if (lc.boundary) note = "boundary";
            break;
          }
          case CorrMethod::polychoric: {
            std::vector<std::vector<std::size_t>> table(
                a.spec.categories.size(),
                std::vector<std::size_t>(b.spec.categories.size(), 0));
            for (std::size_t k = 0; k < d.n; ++k) {
              ++table[static_cast<std::size_t>(d.ca[k])][static_cast<std::size_t>(d.cb[k])];
            }
            // Strip empty margins; thresholds require nonempty categories.
            std::vector<std::vector<std::size_t>> dense;
            for (const auto& row : table) {
              std::size_t s = 0;
              for (auto v : row) s += v;
              if (s > 0) dense.push_back(row);
            }
            if (!dense.empty()) {
              for (std::size_t col = dense[0].size(); col-- > 0;) {
                std::size_t s = 0;
                for (const auto& row : dense) s += row[col];
                if (s == 0) {
                  for (auto& row : dense) row.erase(row.begin() + static_cast<std::ptrdiff_t>(col));
                }
              }
            }
            const LatentCorr lc = polychoric(dense);
            value = lc.rho;
            conv = lc.converged;
            if (lc.boundary) note = "boundary";
            break;
          }
        }
      } catch (const std::exception& e) {
        value = std::numeric_limits<double>::quiet_NaN();
        conv = false;
        note = e.what();
      }

      m.r[i][j] = m.r[j][i] = value;
      m.method[i][j] = m.method[j][i] = method;
      m.converged[i][j] = m.converged[j][i] = conv;
      m.note[i][j] = m.note[j][i] = note;
    }
  }
  return m;
}

std::string CorrelationMatrix::to_long_csv() const {
  std::string out = "var1,var2,correlation,method,converged\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += csv::format_row({names[i], names[j],
                              std::isnan(r[i][j]) ? "NA" : csv::format_double(r[i][j]),
                              method_name(method[i][j]),
                              converged[i][j] ? "true" : "false"});
    }
  }
  return out;
}

}  // namespace koa::mixedcorr
