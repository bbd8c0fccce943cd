#include <doctest.h>

#include <cmath>
#include <set>

#include "koa/csv.hpp"
#include "koa/normal.hpp"
#include "koa/rng.hpp"

using namespace koa;

TEST_CASE("norm_quantile round-trips against the erfc-based CDF") {
  // Validates the rational-approximation constants to near machine accuracy.
  for (double p = 0.0005; p < 1.0; p += 0.0007) {
    CHECK(norm_cdf(norm_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(norm_quantile(0.25) == doctest::Approx(-0.674489750196082).epsilon(1e-12));
  CHECK(norm_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-10));
  CHECK_THROWS(norm_quantile(0.0));
  CHECK_THROWS(norm_quantile(1.0));
}

TEST_CASE("bivariate normal CDF identities") {
  const double inf = std::numeric_limits<double>::infinity();
  for (double rho : {-0.9, -0.5, 0.0, 0.3, 0.7, 0.99}) {
    CHECK(binorm_cdf(inf, inf, rho) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(binorm_cdf(-inf, 1.0, rho) == 0.0);
  }
  CHECK(binorm_cdf(0.0, 0.0, 0.0) == doctest::Approx(0.25).epsilon(1e-12));

  // Product rule at rho = 0.
  for (double x : {-2.0, -0.5, 0.0, 1.3}) {
    for (double y : {-1.7, 0.2, 2.5}) {
      CHECK(binorm_cdf(x, y, 0.0) ==
            doctest::Approx(norm_cdf(x) * norm_cdf(y)).epsilon(1e-10));
    }
  }

  // Closed form on the diagonal: Phi2(0,0,rho) = 1/4 + asin(rho)/(2 pi).
  for (double rho : {-0.999, -0.95, -0.6, -0.2, 0.1, 0.5, 0.925, 0.99, 0.9999}) {
    const double expected = 0.25 + std::asin(rho) / (2.0 * 3.14159265358979323846);
    CHECK(binorm_cdf(0.0, 0.0, rho) == doctest::Approx(expected).epsilon(1e-9));
  }

  // Symmetry and monotonicity in rho.
  CHECK(binorm_cdf(0.3, -1.2, 0.6) == doctest::Approx(binorm_cdf(-1.2, 0.3, 0.6)).epsilon(1e-12));
  CHECK(binorm_cdf(0.5, 0.5, 0.8) > binorm_cdf(0.5, 0.5, 0.2));
}

TEST_CASE("bivariate normal CDF against brute-force quadrature") {
  // Independent 2-D Simpson integration of the density over (-8, x] x (-8, y].
  auto brute = [](double x, double y, double rho) {
    const int steps = 2000;
    const double lo = -8.0;
    auto inner = [&](double xi) {
      // integrate density over y' in (-8, y] for fixed xi
      const double h = (y - lo) / steps;
      double acc = 0.0;
      for (int i = 0; i <= steps; ++i) {
        const double yi = lo + i * h;
        const double det = 1.0 - rho * rho;
        const double q = (xi * xi - 2.0 * rho * xi * yi + yi * yi) / det;
        const double dens = std::exp(-0.5 * q) / (2.0 * 3.14159265358979323846 * std::sqrt(det));
        const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * dens;
      }
      return acc * h / 3.0;
    };
    const double h = (x - lo) / steps;
    double acc = 0.0;
    for (int i = 0; i <= steps; ++i) {
      const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      acc += w * inner(lo + i * h);
    }
    return acc * h / 3.0;
  };

  struct Case {
    double x, y, rho;
  };
  for (const Case& c : {Case{0.5, -0.3, 0.5}, Case{1.0, 1.0, -0.7}, Case{-0.2, 0.4, 0.95}}) {
    CHECK(binorm_cdf(c.x, c.y, c.rho) ==
          doctest::Approx(brute(c.x, c.y, c.rho)).epsilon(1e-6));
  }
}

TEST_CASE("chi-square one-df upper tail") {
  CHECK(chi2_sf_1df(0.0) == doctest::Approx(1.0));
  CHECK(chi2_sf_1df(3.841458820694124) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi2_sf_1df(10.827566170662733) == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("rng determinism and child streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng master(7);
  Rng c0 = master.child(0);
  Rng c1 = master.child(1);
  CHECK(c0.seed() != c1.seed());
  CHECK(master.child(0).seed() == c0.seed());  // derivation is pure

  // Uniform values live in [0,1) and look uniform.
  Rng u(3);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    mean += v;
  }
  CHECK(mean / 10000 == doctest::Approx(0.5).epsilon(0.02));

  // Normal moments.
  Rng n(11);
  double m1 = 0.0, m2 = 0.0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const double z = n.normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= N;
  m2 /= N;
  CHECK(m1 == doctest::Approx(0.0).epsilon(0.03));
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.03));

  // Shuffle is a permutation.
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7};
  Rng s(5);
  s.shuffle(v);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 7);
}

TEST_CASE("csv parse and format round trip") {
  const std::string text = "a,b,c\n1,\"x,y\",3\n4,\"he said \"\"hi\"\"\",6\n";
  const auto t = csv::parse(text);
  REQUIRE(t.header.size() == 3);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[1][1] == "he said \"hi\"");

  CHECK(csv::format_row({"1", "x,y", "3"}) == "1,\"x,y\",3\n");
  CHECK(csv::format_double(0.1) == "0.1");
  CHECK(std::strtod(csv::format_double(1.0 / 3.0).c_str(), nullptr) == 1.0 / 3.0);

  CHECK_THROWS(csv::parse("a,b\n1,2,3\n"));  // ragged row
}
