#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "pdv/kernel.hpp"

namespace pdv {

// K(u) = sum_k coeffs[k] * exp(-rates[k] * u) as a function of the lag u.
struct ExponentialSum {
  std::vector<double> coeffs;
  std::vector<double> rates;
  // Max relative error on the fitting grid (0 for exact decompositions).
  double fit_residual = 0.0;

  std::size_t size() const noexcept { return rates.size(); }
  double operator()(double u) const {
    double v = 0.0;
    for (std::size_t k = 0; k < rates.size(); ++k) v += coeffs[k] * std::exp(-rates[k] * u);
    return v;
  }
};

// Exact decomposition for exponential and convex-combination kernels.
inline std::optional<ExponentialSum> exponential_factors(const KernelSpec& k) {
  switch (k.family()) {
    case KernelFamily::exponential: return ExponentialSum{{k.lambda()}, {k.lambda()}, 0.0};
    case KernelFamily::convex_combo_exp: {
      ExponentialSum e;
      if (k.theta() > 0.0) {
        e.coeffs.push_back(k.theta() * k.lambda_a());
        e.rates.push_back(k.lambda_a());
      }
      if (k.theta() < 1.0) {
        e.coeffs.push_back((1.0 - k.theta()) * k.lambda_b());
        e.rates.push_back(k.lambda_b());
      }
      return e;
    }
    default: return std::nullopt;
  }
}

// Non-negative least squares min ||A x - b|| s.t. x >= 0 (Lawson-Hanson active set).
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int max_iter = 500) {
  const Eigen::Index n = a.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 1e-12 * a.norm() * std::max(1.0, b.norm());
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd w = a.transpose() * (b - a * x);
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    while (true) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
      Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) ap.col(static_cast<Eigen::Index>(c)) = a.col(idx[c]);
      const Eigen::VectorXd zp = ap.colPivHouseholderQr().solve(b);
      bool feasible = true;
      for (Eigen::Index c = 0; c < zp.size(); ++c) feasible = feasible && zp(c) > 0.0;
      if (feasible) {
        x.setZero();
        for (std::size_t c = 0; c < idx.size(); ++c) x(idx[c]) = zp(static_cast<Eigen::Index>(c));
        break;
      }
      double step = 1.0;
      for (std::size_t c = 0; c < idx.size(); ++c) {
        const double z = zp(static_cast<Eigen::Index>(c));
        if (z <= 0.0) step = std::min(step, x(idx[c]) / (x(idx[c]) - z));
      }
      for (std::size_t c = 0; c < idx.size(); ++c) {
        const Eigen::Index j = idx[c];
        x(j) += step * (zp(static_cast<Eigen::Index>(c)) - x(j));
        if (x(j) <= 1e-15) {
          x(j) = 0.0;
          passive[static_cast<std::size_t>(j)] = false;
        }
      }
    }
  }
  return x;
}

// Least-squares sum-of-exponentials approximation of a TSPL kernel with m terms.
// Rates are fixed on a geometric ladder; non-negative coefficients are fitted to
// minimise the relative error on a log-spaced lag grid in [0, max_lag].
inline ExponentialSum approximate_by_exponentials(const KernelSpec& k, int m, double max_lag = 20.0) {
  if (k.family() != KernelFamily::tspl) throw std::invalid_argument("exponential approximation targets TSPL kernels");
  if (m < 2 || m > 8) throw std::invalid_argument("number of exponential terms must lie in [2, 8]");
  const double delta = k.delta();
  const double fast = 4.0 / delta;
  const double slow = 1.0 / max_lag;
  std::vector<double> rates(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) rates[static_cast<std::size_t>(j)] = slow * std::pow(fast / slow, double(j) / (m - 1));

  std::vector<double> lags{0.0};
  const int n_grid = 200;
  const double lo = delta * 1e-2;
  for (int i = 0; i < n_grid; ++i) lags.push_back(lo * std::pow(max_lag / lo, double(i) / (n_grid - 1)));

  Eigen::MatrixXd a(static_cast<Eigen::Index>(lags.size()), m);
  Eigen::VectorXd b = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(lags.size()));
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const double target = evaluate_lag(k, lags[i]);
    for (int j = 0; j < m; ++j)
      a(static_cast<Eigen::Index>(i), j) = std::exp(-rates[static_cast<std::size_t>(j)] * lags[i]) / target;
  }
  const Eigen::VectorXd c = nnls(a, b);

  ExponentialSum out;
  for (int j = 0; j < m; ++j) {
    if (c(j) <= 0.0) continue;
    out.coeffs.push_back(c(j));
    out.rates.push_back(rates[static_cast<std::size_t>(j)]);
  }
  for (double u : lags) out.fit_residual = std::max(out.fit_residual, std::abs(out(u) / evaluate_lag(k, u) - 1.0));
  return out;
}

}  // namespace pdv
