#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdv/kernel.hpp"

namespace pdv {

struct Betas {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;

  double sigma(double r1, double r2) const { return beta0 + beta1 * r1 + beta2 * std::sqrt(r2); }
};

// Deterministic initial condition (r1, r2) on [-Delta, 0], piecewise constant:
// the value stored at times[j] holds on (left(j), times[j]], with left(0) = start.
// start may be -inf (infinite history); an empty segment means Delta = 0.
class HistorySegment {
 public:
  HistorySegment() = default;

  HistorySegment(double start, std::vector<double> times, std::vector<double> r1, std::vector<double> r2)
      : start_(start), times_(std::move(times)), r1_(std::move(r1)), r2_(std::move(r2)) {
    if (times_.size() != r1_.size() || times_.size() != r2_.size())
      throw std::invalid_argument("history arrays must share one length");
    if (std::isnan(start_) || start_ > 0.0) throw std::invalid_argument("history start must be <= 0");
    if (times_.empty()) {
      if (start_ != 0.0) throw std::invalid_argument("empty history requires Delta = 0");
      return;
    }
    if (times_.back() != 0.0) throw std::invalid_argument("history must end at time 0");
    if (times_.front() < start_) throw std::invalid_argument("history times must lie in [-Delta, 0]");
    for (std::size_t j = 1; j < times_.size(); ++j)
      if (!(times_[j] > times_[j - 1])) throw std::invalid_argument("history times must be strictly increasing");
  }

  // Constant (r1, r2) over a history of the given length (may be +inf).
  static HistorySegment constant(double r1, double r2, double length) {
    if (length == 0.0) return {};
    return HistorySegment(-length, {0.0}, {r1}, {r2});
  }

  // Constant history whose implied volatility equals sigma (r1 = 0 when beta2 > 0).
  static HistorySegment constant_sigma(double sigma, const Betas& b, double length) {
    if (b.beta2 > 0.0 && sigma >= b.beta0) {
      const double root = (sigma - b.beta0) / b.beta2;
      return constant(0.0, root * root, length);
    }
    if (b.beta1 != 0.0) return constant((sigma - b.beta0) / b.beta1, 0.0, length);
    if (sigma == b.beta0) return constant(0.0, 0.0, length);
    throw std::invalid_argument("no (r1, r2) reproduces the requested history volatility");
  }

  bool empty() const noexcept { return times_.empty(); }
  std::size_t size() const noexcept { return times_.size(); }
  double start() const noexcept { return start_; }
  double length() const noexcept { return -start_; }
  std::span<const double> times() const noexcept { return times_; }
  std::span<const double> r1() const noexcept { return r1_; }
  std::span<const double> r2() const noexcept { return r2_; }

  double left(std::size_t j) const { return j == 0 ? start_ : times_[j - 1]; }
  double sigma(std::size_t j, const Betas& b) const { return b.sigma(r1_[j], r2_[j]); }

  // Intervals of finite, positive length; each carries one past Brownian increment.
  std::vector<std::size_t> noise_intervals() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < times_.size(); ++j)
      if (std::isfinite(left(j)) && left(j) < times_[j]) out.push_back(j);
    return out;
  }

  // Same step function with an added uniform grid of spacing `step` on
  // [-lookback, 0]; the part before -lookback keeps its original breakpoints.
  HistorySegment refined(double step, double lookback) const {
    if (empty()) return *this;
    if (!(step > 0.0)) throw std::invalid_argument("refinement step must be > 0");
    lookback = std::min(lookback, length());
    std::vector<double> grid(times_.begin(), times_.end());
    if (std::isfinite(lookback) && lookback > 0.0) {
      const auto n = static_cast<std::size_t>(std::ceil(lookback / step - 1e-9));
      for (std::size_t i = 1; i <= n; ++i) {
        const double t = -static_cast<double>(i) * step;
        if (t > start_ && t > -lookback) grid.push_back(t);
      }
      if (-lookback > start_) grid.push_back(-lookback);
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               grid.end());
    grid.back() = 0.0;
    std::vector<double> r1, r2;
    r1.reserve(grid.size());
    r2.reserve(grid.size());
    std::size_t j = 0;
    for (double t : grid) {
      while (times_[j] < t - 1e-12) ++j;
      r1.push_back(r1_[j]);
      r2.push_back(r2_[j]);
    }
    if (grid.front() < start_) grid.front() = start_;
    return HistorySegment(start_, std::move(grid), std::move(r1), std::move(r2));
  }

 private:
  double start_ = 0.0;
  std::vector<double> times_;
  std::vector<double> r1_;
  std::vector<double> r2_;
};

// g2(t) = \int_{-Delta}^0 K2(s,t) sigma_s^2 ds, exact for the piecewise-constant history.
inline double history_g2(const KernelSpec& k2, const HistorySegment& h, const Betas& b, double t) {
  double g = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double sig = h.sigma(j, b);
    if (sig == 0.0) continue;
    g += sig * sig * integral(k2, 1.0, h.left(j), h.times()[j], t);
  }
  return g;
}

}  // namespace pdv
