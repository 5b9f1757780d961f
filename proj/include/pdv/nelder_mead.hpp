#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pdv {

struct NelderMeadOptions {
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
  std::size_t max_iterations = 2000;
  std::size_t max_evaluations = 4000;
  double f_tol = 1e-12;   // relative spread of simplex values
  double f_abs = 1e-18;   // absolute spread of simplex values
  double x_tol = 1e-8;    // largest vertex distance from the best vertex (max norm)
  double initial_step = 0.5;
  std::size_t restarts = 1;  // fresh simplex around the optimum after convergence

  void validate() const {
    if (!(reflection > 0.0) || !(expansion > 1.0) || !(contraction > 0.0 && contraction < 1.0) ||
        !(shrink > 0.0 && shrink < 1.0))
      throw std::invalid_argument("invalid Nelder-Mead coefficients");
    if (max_evaluations == 0) throw std::invalid_argument("max_evaluations must be > 0");
    if (!(initial_step > 0.0)) throw std::invalid_argument("initial_step must be > 0");
  }
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
};

// Unconstrained minimisation; infinite values act as a barrier.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x0, const NelderMeadOptions& opt = {}) {
  opt.validate();
  const std::size_t n = x0.size();
  if (n == 0) throw std::invalid_argument("nelder_mead needs at least one parameter");

  NelderMeadResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  std::vector<std::vector<double>> x(n + 1);
  std::vector<double> fx(n + 1);
  std::vector<std::size_t> order(n + 1);
  std::vector<double> c(n), xr(n), xe(n), xc(n);

  auto point = [&](const std::vector<double>& base, const std::vector<double>& dir, double t, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = base[i] + t * (dir[i] - base[i]);
  };

  bool converged = false;
  for (std::size_t round = 0; round <= opt.restarts; ++round) {
    x[0] = x0;
    fx[0] = round == 0 ? eval(x0) : res.value;
    for (std::size_t j = 1; j <= n; ++j) {
      x[j] = x0;
      x[j][j - 1] += opt.initial_step;
      fx[j] = eval(x[j]);
    }
    converged = false;
    while (res.evaluations < opt.max_evaluations && res.iterations < opt.max_iterations) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
      const std::size_t best = order[0], worst = order[n], second = order[n - 1];

      double spread = fx[worst] - fx[best];
      double size = 0.0;
      for (std::size_t j = 0; j <= n; ++j)
        for (std::size_t i = 0; i < n; ++i) size = std::max(size, std::abs(x[j][i] - x[best][i]));
      if (std::isfinite(spread) && spread <= opt.f_abs + opt.f_tol * std::abs(fx[best]) && size <= opt.x_tol) {
        converged = true;
        break;
      }
      ++res.iterations;

      std::fill(c.begin(), c.end(), 0.0);
      for (std::size_t j = 0; j <= n; ++j) {
        if (j == worst) continue;
        for (std::size_t i = 0; i < n; ++i) c[i] += x[j][i] / static_cast<double>(n);
      }

      point(c, x[worst], -opt.reflection, xr);
      const double fr = eval(xr);
      if (fr < fx[best]) {
        point(c, xr, opt.expansion, xe);
        const double fe = eval(xe);
        if (fe < fr) {
          x[worst] = xe;
          fx[worst] = fe;
        } else {
          x[worst] = xr;
          fx[worst] = fr;
        }
        continue;
      }
      if (fr < fx[second]) {
        x[worst] = xr;
        fx[worst] = fr;
        continue;
      }
      // Outside contraction when the reflected point beats the worst, inside otherwise.
      const bool outside = fr < fx[worst];
      point(c, outside ? xr : x[worst], opt.contraction, xc);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fx[worst])) {
        x[worst] = xc;
        fx[worst] = fc;
        continue;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (j == best) continue;
        point(x[best], x[j], opt.shrink, x[j]);
        fx[j] = eval(x[j]);
      }
    }
    const auto it = std::min_element(fx.begin(), fx.end());
    const std::size_t b = static_cast<std::size_t>(it - fx.begin());
    const bool improved = *it < res.value;
    if (improved || res.x.empty()) {
      res.x = x[b];
      res.value = *it;
    }
    x0 = res.x;
    if (!converged || !improved || res.evaluations >= opt.max_evaluations) break;
  }
  res.converged = converged;
  return res;
}

}  // namespace pdv
