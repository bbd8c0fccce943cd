#ifndef KOA_NORMAL_HPP
#define KOA_NORMAL_HPP

namespace koa {

// Standard normal CDF, machine accurate via erfc.
double norm_cdf(double x);

// Standard normal density.
double norm_pdf(double x);

// Inverse standard normal CDF (Wichura's PPND16 rational approximations,
// relative error below 1e-15 on (0,1)). Throws on p outside (0,1).
double norm_quantile(double p);

// Upper tail of the chi-square distribution with one degree of freedom.
double chi2_sf_1df(double x);

// Bivariate standard normal CDF P(X <= x, Y <= y) with correlation rho.
//
// Computed from the single integral
//   Phi2(x,y,rho) = Phi(x)Phi(y)
//     + (1/2pi) Int_0^{asin rho} exp(-(x^2+y^2-2xy sin t)/(2 cos^2 t)) dt,
// which is exact at rho=0 and bounded over the whole integration range.
// Gauss-Legendre on |rho| <= 0.925, with the remaining sliver integrated
// adaptively for larger |rho|. Absolute error below 1e-10.
// Infinite arguments are accepted and resolve to the marginal CDFs.
double binorm_cdf(double x, double y, double rho);

}  // namespace koa

#endif  // KOA_NORMAL_HPP
