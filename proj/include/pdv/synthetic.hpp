#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "pdv/features.hpp"
#include "pdv/history.hpp"
#include "pdv/rng.hpp"

namespace pdv {

// Daily market generated by the empirical model itself: the return on day t has
// volatility beta0 + beta1 R1 + beta2 sqrt(R2) from features up to day t-1, and
// the proxy is the model volatility on each day times (1 + noise_rel * N(0,1)).
struct SyntheticSpec {
  KernelSpec k1 = KernelSpec::exponential(50.0);
  KernelSpec k2 = KernelSpec::tspl(1.25, 0.05);
  Betas betas{0.04, -0.05, 0.6};
  std::size_t n_days = 5000;  // days carrying a proxy value
  std::size_t burn_in = 500;  // leading returns without proxy
  double noise_rel = 0.01;
  double sigma_floor = 0.02;
  double s0 = 100.0;
  double train_fraction = 0.7;
  Date start{std::chrono::year{2000}, std::chrono::January, std::chrono::day{3}};
  std::uint64_t seed = 0;

  void validate() const {
    if (n_days < 2) throw std::invalid_argument("n_days must be >= 2");
    if (!(noise_rel >= 0.0)) throw std::invalid_argument("noise_rel must be >= 0");
    if (!(sigma_floor > 0.0)) throw std::invalid_argument("sigma_floor must be > 0");
    if (!(s0 > 0.0)) throw std::invalid_argument("s0 must be > 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must lie in (0,1)");
  }
};

struct SyntheticMarket {
  DatedSeries prices;
  DatedSeries proxy;
  Date split_date{};

  MarketDataset dataset() const { return make_dataset(prices, proxy, split_date); }
};

// Weekdays only, starting at the first weekday on or after `start`.
inline std::vector<Date> business_days(Date start, std::size_t n) {
  std::vector<Date> out;
  std::chrono::sys_days d{start};
  while (out.size() < n) {
    const std::chrono::weekday w{d};
    if (w != std::chrono::Saturday && w != std::chrono::Sunday) out.emplace_back(d);
    d += std::chrono::days{1};
  }
  return out;
}

inline SyntheticMarket synthesize_market(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n_ret = spec.burn_in + spec.n_days;
  const auto dates = business_days(spec.start, n_ret + 1);
  const auto w1 = feature_weights(spec.k1, n_ret);
  const auto w2 = feature_weights(spec.k2, n_ret);

  auto rng = make_stream(spec.seed, 0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> r(n_ret);
  for (std::size_t t = 0; t < n_ret; ++t) {
    // Features through day t-1, evaluated at day t (lags start at 1).
    double r1 = 0.0, r2 = 0.0;
    for (std::size_t m = 1; m <= t; ++m) {
      r1 += w1[m] * r[t - m];
      r2 += w2[m] * r[t - m] * r[t - m];
    }
    const double sigma = std::max(spec.betas.sigma(r1, r2), spec.sigma_floor);
    r[t] = sigma * z(rng) / std::sqrt(kBusinessDaysPerYear);
  }

  SyntheticMarket m;
  double p = spec.s0;
  m.prices.dates.push_back(dates[0]);
  m.prices.values.push_back(p);
  DatedSeries returns;
  for (std::size_t t = 0; t < n_ret; ++t) {
    p *= 1.0 + r[t];
    m.prices.dates.push_back(dates[t + 1]);
    m.prices.values.push_back(p);
    returns.dates.push_back(dates[t + 1]);
    returns.values.push_back(r[t]);
  }
  const auto f = compute_features(returns, spec.k1, spec.k2);
  for (std::size_t t = spec.burn_in; t < n_ret; ++t) {
    const double sigma = spec.betas.sigma(f.r1[t], f.r2[t]);
    m.proxy.dates.push_back(f.dates[t]);
    m.proxy.values.push_back(sigma * (1.0 + spec.noise_rel * z(rng)));
  }
  const auto split = static_cast<std::size_t>(spec.train_fraction * static_cast<double>(spec.n_days));
  m.split_date = m.proxy.dates[std::clamp<std::size_t>(split, 1, spec.n_days - 1)];
  return m;
}

}  // namespace pdv
