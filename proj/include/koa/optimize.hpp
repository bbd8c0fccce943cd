#ifndef KOA_OPTIMIZE_HPP
#define KOA_OPTIMIZE_HPP

#include <cmath>
#include <functional>

namespace koa {

struct ScalarMaxResult {
  double x = 0.0;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Golden-section maximization on [lo, hi]. Derivative-free; requires the
// objective to be unimodal on the bracket to find the global maximum.
inline ScalarMaxResult maximize_scalar(const std::function<double(double)>& f,
                                       double lo, double hi, double tol,
                                       int max_iter) {
  constexpr double kInvPhi = 0.6180339887498948482;
  double a = lo, b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c), fd = f(d);
  ScalarMaxResult res;
  int it = 0;
  while (it < max_iter && (b - a) > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
    ++it;
  }
  res.x = 0.5 * (a + b);
  res.value = f(res.x);
  res.converged = (b - a) <= tol;
  res.iterations = it;
  return res;
}

}  // namespace koa

#endif  // KOA_OPTIMIZE_HPP
