#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace pdv {

struct QuadratureOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-12;
  unsigned max_depth = 15;
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = true;
};

// Adaptive 15-point Gauss-Kronrod over [a, b]; a may be -inf. Optional interior
// breakpoints split the range where the integrand has a sharp feature.
template <class F>
QuadratureResult integrate(F&& f, double a, double b, std::vector<double> breakpoints = {},
                           const QuadratureOptions& opt = {}) {
  QuadratureResult out;
  if (!(a < b)) return out;
  std::vector<double> cuts;
  cuts.push_back(a);
  std::sort(breakpoints.begin(), breakpoints.end());
  for (double p : breakpoints)
    if (p > a && p < b && p > cuts.back()) cuts.push_back(p);
  cuts.push_back(b);

  using gk = boost::math::quadrature::gauss_kronrod<double, 15>;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double err = 0.0;
    double l1 = 0.0;
    const double piece = gk::integrate(f, cuts[i], cuts[i + 1], opt.max_depth, opt.rel_tol, &err, &l1);
    out.value += piece;
    out.error += err;
  }
  out.converged = std::isfinite(out.value) &&
                  out.error <= std::max(opt.abs_tol, 1e3 * opt.rel_tol * std::abs(out.value));
  return out;
}

}  // namespace pdv
