#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pdv/assumptions.hpp"
#include "pdv/exp_sum.hpp"
#include "pdv/history.hpp"
#include "pdv/kernel.hpp"
#include "pdv/model.hpp"
#include "pdv/numeric_text.hpp"
#include "pdv/parallel.hpp"
#include "pdv/rng.hpp"
#include "pdv/stats.hpp"

namespace pdv {

enum class Scheme { markov, quadrature };
enum class G1Mode { sampled, zero };

inline std::string_view to_string(Scheme s) { return s == Scheme::markov ? "markov" : "quadrature"; }
inline std::string_view to_string(G1Mode m) { return m == G1Mode::sampled ? "sampled" : "zero"; }

inline Scheme parse_scheme(std::string_view s) {
  if (s == "markov") return Scheme::markov;
  if (s == "quadrature" || s == "direct") return Scheme::quadrature;
  throw std::invalid_argument("unknown scheme '" + std::string(s) + "' (expected markov or quadrature)");
}

inline G1Mode parse_g1_mode(std::string_view s) {
  if (s == "sampled") return G1Mode::sampled;
  if (s == "zero") return G1Mode::zero;
  throw std::invalid_argument("unknown g1 mode '" + std::string(s) + "' (expected sampled or zero)");
}

struct SimConfig {
  double horizon = 1.0;
  int steps_per_year = 2520;
  std::size_t n_paths = 1;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::markov;
  double r2_floor = 1e-12;
  G1Mode g1_mode = G1Mode::sampled;
  int tspl_exp_terms = 0;  // > 0: Markov scheme for TSPL kernels via an exponential-sum fit
  double violation_tol_factor = 10.0;  // lower-bound tolerance is factor * sqrt(dt) * sigma0
  double max_lookback_years = 5.0;     // cap on the sampled part of an infinite history
  unsigned threads = 0;                // 0: hardware concurrency
  std::vector<double> horizons;        // summary times; empty means {horizon}
  bool force = false;                  // skip the assumption gate

  std::size_t steps() const {
    return static_cast<std::size_t>(std::max(1.0, std::round(horizon * steps_per_year)));
  }
  double dt() const { return horizon / static_cast<double>(steps()); }

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be > 0");
    if (steps_per_year < 1) throw std::invalid_argument("steps_per_year must be >= 1");
    if (n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
    if (!(r2_floor > 0.0)) throw std::invalid_argument("r2_floor must be > 0");
    if (tspl_exp_terms != 0 && (tspl_exp_terms < 2 || tspl_exp_terms > 8))
      throw std::invalid_argument("tspl_exp_terms must be 0 or in [2, 8]");
    if (!(violation_tol_factor >= 0.0)) throw std::invalid_argument("violation_tol_factor must be >= 0");
    if (!(max_lookback_years > 0.0)) throw std::invalid_argument("max_lookback_years must be > 0");
    for (double h : horizons)
      if (!(h >= 0.0 && h <= horizon)) throw std::invalid_argument("summary horizons must lie in [0, T]");
  }
};

// Brownian increments of one path: one per history noise interval, then one per step.
struct PathNoise {
  std::vector<double> past;
  std::vector<double> future;
};

struct SimPath {
  std::vector<double> t, r1, r2, sigma, s, x;  // x is empty when K1 is not separable
  std::vector<double> dw;                       // dw[n] is the increment on (t_n, t_{n+1}]
  std::vector<double> past_dw;
  std::vector<std::string> events;
  std::size_t floor_events = 0;
  double sigma0 = 0.0;
  bool aborted = false;

  bool has_x() const noexcept { return !x.empty(); }
};

class GateError : public std::runtime_error {
 public:
  GateError(const std::string& what, AssumptionReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const AssumptionReport& report() const noexcept { return report_; }

 private:
  AssumptionReport report_;
};

// ---------------------------------------------------------------------------
// Exponential factor recursion.

// y_k(t) = \int_0^t c_k e^{-lambda_k (t-s)} sigma_s dW_s (and the ds analogue).
// Over one step with sigma frozen, the exact update is
//   y_k <- e^{-lambda_k dt} y_k + c_k sigma \int_t^{t+dt} e^{-lambda_k (t+dt-u)} dW_u,
// and the stochastic integral is replaced by its conditional mean given the
// increment, dW (1 - e^{-lambda_k dt}) / (lambda_k dt). The drift factor uses the
// same gain with dt in place of dW, which is exact.
class MarkovFactors {
 public:
  MarkovFactors() = default;
  MarkovFactors(const ExponentialSum& f, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be > 0");
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double x = f.rates[k] * dt;
      decay_.push_back(std::exp(-x));
      gain_.push_back(f.coeffs[k] * (x > 0.0 ? -std::expm1(-x) / x : 1.0));
    }
  }

  std::size_t size() const noexcept { return decay_.size(); }

  // Advances every factor by one step with input sigma*dW (or sigma^2*dt); returns the new sum.
  double advance(std::span<double> y, double input) const noexcept {
    double sum = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      y[k] = decay_[k] * y[k] + gain_[k] * input;
      sum += y[k];
    }
    return sum;
  }

 private:
  std::vector<double> decay_;
  std::vector<double> gain_;
};

struct MarkovState {
  std::vector<double> r1;  // per-factor values of R1 (future part)
  std::vector<double> r2;

  double sum1() const { return std::accumulate(r1.begin(), r1.end(), 0.0); }
  double sum2() const { return std::accumulate(r2.begin(), r2.end(), 0.0); }
};

// One frozen-sigma step of the factor state for kernels with exponential factors.
inline void step_markov(MarkovState& st, double sigma, double dw, double dt, const ExponentialSum& k1_factors,
                        const ExponentialSum& k2_factors) {
  if (st.r1.size() != k1_factors.size() || st.r2.size() != k2_factors.size())
    throw std::invalid_argument("factor state does not match the kernel factors");
  MarkovFactors(k1_factors, dt).advance(st.r1, sigma * dw);
  MarkovFactors(k2_factors, dt).advance(st.r2, sigma * sigma * dt);
}

inline ExponentialSum markov_factors_or_throw(const KernelSpec& k, const char* which) {
  auto f = exponential_factors(k);
  if (!f)
    throw std::invalid_argument(std::string(which) + " family " + std::string(to_string(k.family())) +
                                " has no exponential factors; use the quadrature scheme");
  return *f;
}

// ---------------------------------------------------------------------------
// Left-point convolution sums.

// (R1, R2) at t_next = g + sum_{k<=n} K(t_k, t_next) (sigma_k dW_k, sigma_k^2 dt_k).
inline std::pair<double, double> step_quadrature(const KernelSpec& k1, const KernelSpec& k2,
                                                 std::span<const double> times, std::span<const double> sigma,
                                                 std::span<const double> dw, double t_next, double g1 = 0.0,
                                                 double g2 = 0.0) {
  if (times.size() != sigma.size() || times.size() != dw.size())
    throw std::invalid_argument("times, sigma and dW must share one length");
  CompensatedSum r1, r2;
  r1.add(g1);
  r2.add(g2);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double dt = (k + 1 < times.size() ? times[k + 1] : t_next) - times[k];
    r1.add(evaluate(k1, times[k], t_next) * sigma[k] * dw[k]);
    r2.add(evaluate(k2, times[k], t_next) * sigma[k] * sigma[k] * dt);
  }
  return {r1.value(), r2.value()};
}

// ---------------------------------------------------------------------------
// History contributions.

struct GPaths {
  std::vector<double> g1;
  std::vector<double> g2;
};

namespace detail {

// Mean of K(., t) over the history interval j; zero-length intervals give 0.
inline double interval_mean(const KernelSpec& k, double left, double right, double t) {
  if (!(right > left)) return 0.0;
  return integral(k, 1.0, left, right, t) / (right - left);
}

}  // namespace detail

// g1(t) = sum_j sigma_j dW_j mean_j K1(., t) over the history noise intervals
// (the conditional mean of the Ito integral given the increments), and
// g2(t) = \int K2(s,t) sigma_s^2 ds exactly. Reference implementation.
inline GPaths build_g(const ModelParams& p, const HistorySegment& h, std::span<const double> t_grid,
                      std::span<const double> past_noise) {
  const auto idx = h.noise_intervals();
  if (past_noise.size() != idx.size())
    throw std::invalid_argument("past noise needs one increment per finite history interval (" +
                                std::to_string(idx.size()) + "), got " + std::to_string(past_noise.size()));
  GPaths g;
  for (double t : t_grid) {
    if (t < 0.0) throw std::invalid_argument("g is only defined for t >= 0");
    CompensatedSum s;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t j = idx[i];
      s.add(h.sigma(j, p.betas) * past_noise[i] * detail::interval_mean(p.k1, h.left(j), h.times()[j], t));
    }
    g.g1.push_back(s.value());
    g.g2.push_back(history_g2(p.k2, h, p.betas, t));
  }
  return g;
}

// Sums fine increments over each coarse interval; every coarse interval must be
// a union of fine ones.
inline std::vector<double> aggregate_increments(std::span<const std::pair<double, double>> fine_edges,
                                                std::span<const double> fine,
                                                std::span<const std::pair<double, double>> coarse_edges) {
  if (fine_edges.size() != fine.size()) throw std::invalid_argument("fine edges and increments differ in length");
  std::vector<double> out;
  out.reserve(coarse_edges.size());
  std::size_t i = 0;
  for (const auto& [lo, hi] : coarse_edges) {
    const double tol = 1e-9 * std::max(1.0, std::abs(lo));
    while (i < fine_edges.size() && fine_edges[i].second <= lo + tol) ++i;
    if (i >= fine_edges.size() || std::abs(fine_edges[i].first - lo) > tol)
      throw std::invalid_argument("coarse noise interval does not start on a fine edge");
    double sum = 0.0;
    while (i < fine_edges.size() && fine_edges[i].second <= hi + tol) sum += fine[i++];
    if (std::abs(fine_edges[i - 1].second - hi) > tol)
      throw std::invalid_argument("coarse noise interval does not end on a fine edge");
    out.push_back(sum);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation.

struct PathState {
  std::size_t n = 0;
  double t = 0.0, r1 = 0.0, r2 = 0.0, sigma = 0.0, s = 0.0;
  double x = std::numeric_limits<double>::quiet_NaN();
};

struct PathSummary {
  std::vector<double> sigma_at;  // values at the summary horizons
  std::vector<double> s_at;
  std::size_t violations = 0;
  std::size_t floor_events = 0;
  double min_gap = kInf;  // min over the grid of sigma - X
  double min_r2 = kInf;
  double sigma0 = 0.0;
  bool aborted = false;
  std::string message;
};

struct HorizonStats {
  double time = 0.0;
  std::size_t count = 0;
  double sigma_mean = 0.0, sigma_se = 0.0;
  double s_mean = 0.0, s_se = 0.0;
  std::vector<double> sigma_quantiles;
  std::vector<double> s_quantiles;
};

struct EnsembleSummary {
  std::size_t n_paths = 0;
  std::size_t aborted_paths = 0;
  std::size_t floor_events = 0;
  std::size_t violation_points = 0;
  std::size_t violating_paths = 0;
  bool x_available = false;
  double min_gap = kInf;
  double min_r2 = kInf;
  std::vector<double> quantile_levels{0.01, 0.05, 0.5, 0.95, 0.99};
  std::vector<HorizonStats> horizons;
  std::vector<std::string> events;
};

class Simulator {
 public:
  Simulator(ModelParams params, HistorySegment history, SimConfig config)
      : p_(std::move(params)), hist_(std::move(history)), cfg_(std::move(config)) {
    p_.validate();
    cfg_.validate();
    if (hist_.empty() != (p_.history_length == 0.0) || (!hist_.empty() && hist_.length() != p_.history_length))
      throw std::invalid_argument("history segment length does not match the model history length");
    if (!cfg_.force) {
      report_ = full_report(p_, hist_, cfg_.horizon);
      if (report_->verdict == Guarantee::neither)
        throw GateError("assumption check grants neither existence nor positivity (use force to override)",
                        *report_);
    } else {
      events_.push_back("assumption gate overridden (force)");
    }
    n_ = cfg_.steps();
    dt_ = cfg_.dt();
    setup_history();
    setup_scheme();
    setup_lower_bound();
  }

  const ModelParams& params() const noexcept { return p_; }
  const SimConfig& config() const noexcept { return cfg_; }
  const std::optional<AssumptionReport>& report() const noexcept { return report_; }
  const std::vector<std::string>& events() const noexcept { return events_; }
  std::size_t steps() const noexcept { return n_; }
  double dt() const noexcept { return dt_; }
  double time(std::size_t n) const noexcept { return n == n_ ? cfg_.horizon : static_cast<double>(n) * dt_; }
  double lookback() const noexcept { return lookback_; }
  bool has_lower_bound() const noexcept { return sep1_.has_value(); }
  const HistorySegment& noise_history() const noexcept { return past_; }
  const std::vector<double>& g2_path() const noexcept { return g2_; }

  std::vector<std::pair<double, double>> past_edges() const {
    std::vector<std::pair<double, double>> e;
    for (std::size_t j : past_idx_) e.emplace_back(past_.left(j), past_.times()[j]);
    return e;
  }
  std::vector<std::pair<double, double>> future_edges() const {
    std::vector<std::pair<double, double>> e;
    for (std::size_t n = 0; n < n_; ++n) e.emplace_back(time(n), time(n + 1));
    return e;
  }

  PathNoise draw_noise(std::uint64_t path_index) const {
    auto rng = make_stream(cfg_.seed, path_index);
    std::normal_distribution<double> normal(0.0, 1.0);
    PathNoise z;
    z.past.reserve(past_idx_.size());
    for (std::size_t i = 0; i < past_idx_.size(); ++i) z.past.push_back(past_sd_[i] * normal(rng));
    z.future.reserve(n_);
    const double sd = std::sqrt(dt_);
    for (std::size_t n = 0; n < n_; ++n) z.future.push_back(sd * normal(rng));
    return z;
  }

  // Noise of a finer simulator summed onto this simulator's grids.
  PathNoise coarsen(const Simulator& fine, const PathNoise& noise) const {
    PathNoise out;
    const auto pe = past_edges();
    const auto fpe = fine.past_edges();
    out.past = aggregate_increments(fpe, noise.past, pe);
    const auto fe = future_edges();
    const auto ffe = fine.future_edges();
    out.future = aggregate_increments(ffe, noise.future, fe);
    return out;
  }

  // g1 on the time grid for the given past increments.
  std::vector<double> g1_path(std::span<const double> past) const {
    check_noise_sizes(past.size(), n_);
    std::vector<double> g(n_ + 1, 0.0);
    if (past.empty()) return g;
    switch (g1_kind_) {
      case G1Kind::zero: break;
      case G1Kind::separable: {
        CompensatedSum g0;
        for (std::size_t i = 0; i < past.size(); ++i) g0.add(past_sigma_[i] * past[i] * g1_w0_[i]);
        for (std::size_t n = 0; n <= n_; ++n) g[n] = g1_scale_[n] * g0.value();
        break;
      }
      case G1Kind::factors: {
        const std::size_t m = g1_factor_decay_.size();
        for (std::size_t k = 0; k < m; ++k) {
          CompensatedSum gk;
          for (std::size_t i = 0; i < past.size(); ++i) gk.add(past_sigma_[i] * past[i] * g1_factor_w_[k][i]);
          for (std::size_t n = 0; n <= n_; ++n) g[n] += g1_factor_decay_[k][n] * gk.value();
        }
        break;
      }
      case G1Kind::generic: {
        std::vector<double> a(past.size());
        for (std::size_t i = 0; i < past.size(); ++i) a[i] = past_sigma_[i] * past[i];
        for (std::size_t n = 0; n <= n_; ++n) {
          double sum = 0.0;
          for (std::size_t i = 0; i < a.size(); ++i) {
            const auto cell = cell_index_[i];
            sum += a[i] * (cell >= 0 ? cell_mean_[static_cast<std::size_t>(cell) + n] : irregular_w_[i][n]);
          }
          g[n] = sum;
        }
        break;
      }
    }
    return g;
  }

  SimPath run(const PathNoise& noise) const {
    SimPath path;
    path.past_dw = noise.past;
    path.dw = noise.future;
    path.events = events_;
    Recorder rec{path, has_lower_bound()};
    core(noise, rec);
    return path;
  }

  SimPath simulate_path(std::uint64_t path_index) const { return run(draw_noise(path_index)); }

  PathSummary summarize(const PathNoise& noise) const {
    PathSummary s;
    Summarizer obs{s, horizon_steps(), cfg_.violation_tol_factor * std::sqrt(dt_), has_lower_bound()};
    s.sigma_at.assign(obs.steps.size(), std::numeric_limits<double>::quiet_NaN());
    s.s_at = s.sigma_at;
    core(noise, obs);
    return s;
  }

  EnsembleSummary monte_carlo() const {
    std::vector<PathSummary> per_path(cfg_.n_paths);
    parallel_for(cfg_.n_paths, cfg_.threads, [&](std::size_t i) { per_path[i] = summarize(draw_noise(i)); });
    return aggregate(per_path);
  }

  EnsembleSummary aggregate(const std::vector<PathSummary>& per_path) const {
    EnsembleSummary out;
    out.n_paths = per_path.size();
    out.x_available = has_lower_bound();
    out.events = events_;
    const auto steps = horizon_steps();
    std::vector<std::vector<double>> sig(steps.size()), spot(steps.size());
    for (std::size_t i = 0; i < per_path.size(); ++i) {
      const auto& p = per_path[i];
      out.floor_events += p.floor_events;
      out.min_r2 = std::min(out.min_r2, p.min_r2);
      if (p.aborted) {
        ++out.aborted_paths;
        if (out.events.size() < events_.size() + 10) out.events.push_back("path " + std::to_string(i) + ": " + p.message);
        continue;
      }
      out.violation_points += p.violations;
      out.violating_paths += p.violations > 0 ? 1 : 0;
      out.min_gap = std::min(out.min_gap, p.min_gap);
      for (std::size_t h = 0; h < steps.size(); ++h) {
        sig[h].push_back(p.sigma_at[h]);
        spot[h].push_back(p.s_at[h]);
      }
    }
    for (std::size_t h = 0; h < steps.size(); ++h) {
      HorizonStats st;
      st.time = time(steps[h]);
      st.count = sig[h].size();
      auto moments = [](const std::vector<double>& v, double& mean, double& se) {
        CompensatedSum s1;
        for (double x : v) s1.add(x);
        const double n = static_cast<double>(v.size());
        mean = v.empty() ? std::numeric_limits<double>::quiet_NaN() : s1.value() / n;
        CompensatedSum s2;
        for (double x : v) s2.add((x - mean) * (x - mean));
        se = v.size() > 1 ? std::sqrt(s2.value() / (n - 1.0) / n) : std::numeric_limits<double>::quiet_NaN();
      };
      moments(sig[h], st.sigma_mean, st.sigma_se);
      moments(spot[h], st.s_mean, st.s_se);
      std::sort(sig[h].begin(), sig[h].end());
      std::sort(spot[h].begin(), spot[h].end());
      for (double q : out.quantile_levels) {
        st.sigma_quantiles.push_back(quantile_sorted(sig[h], q));
        st.s_quantiles.push_back(quantile_sorted(spot[h], q));
      }
      out.horizons.push_back(std::move(st));
    }
    return out;
  }

 private:
  enum class G1Kind { zero, separable, factors, generic };

  struct Recorder {
    SimPath& path;
    bool with_x;
    void point(const PathState& st) {
      path.t.push_back(st.t);
      path.r1.push_back(st.r1);
      path.r2.push_back(st.r2);
      path.sigma.push_back(st.sigma);
      path.s.push_back(st.s);
      if (with_x) path.x.push_back(st.x);
      if (st.n == 0) path.sigma0 = st.sigma;
    }
    void floor(const PathState& st) {
      if (path.floor_events++ < 10)
        path.events.push_back("r2_floor activated at t=" + format_double(st.t) + " (R2=" + format_double(st.r2) + ")");
    }
    void abort(const std::string& msg) {
      path.aborted = true;
      path.events.push_back(msg);
    }
  };

  struct Summarizer {
    PathSummary& out;
    std::vector<std::size_t> steps;
    double tol_scale;
    bool with_x;
    void point(const PathState& st) {
      if (st.n == 0) out.sigma0 = st.sigma;
      out.min_r2 = std::min(out.min_r2, st.r2);
      if (with_x && st.n > 0) {
        const double gap = st.sigma - st.x;
        out.min_gap = std::min(out.min_gap, gap);
        if (gap < -tol_scale * out.sigma0) ++out.violations;
      }
      for (std::size_t h = 0; h < steps.size(); ++h) {
        if (steps[h] == st.n) {
          out.sigma_at[h] = st.sigma;
          out.s_at[h] = st.s;
        }
      }
    }
    void floor(const PathState&) { ++out.floor_events; }
    void abort(const std::string& msg) {
      out.aborted = true;
      out.message = msg;
    }
  };

  std::vector<std::size_t> horizon_steps() const {
    std::vector<std::size_t> s;
    if (cfg_.horizons.empty()) return {n_};
    for (double h : cfg_.horizons) s.push_back(static_cast<std::size_t>(std::lround(h / dt_)));
    return s;
  }

  void check_noise_sizes(std::size_t past, std::size_t future) const {
    if (past != past_idx_.size())
      throw std::invalid_argument("expected " + std::to_string(past_idx_.size()) + " past increments, got " +
                                  std::to_string(past));
    if (future != n_)
      throw std::invalid_argument("expected " + std::to_string(n_) + " future increments, got " +
                                  std::to_string(future));
  }

  // Lookback beyond which the K1-weighted history variance is below 1e-12. It is
  // rounded up to 1e-3 years and does not depend on dt, so histories sampled at
  // different steps nest.
  double choose_lookback(double sigma_max) {
    if (sigma_max == 0.0) return 0.0;
    const double length = hist_.length();
    auto residual = [&](double l) { return sigma_max * sigma_max * integral(p_.k1, 2.0, -kInf, -l, 0.0); };
    const double target = 1e-12;
    double hi = 1.0 / kBusinessDaysPerYear;
    while (residual(hi) >= target && hi < cfg_.max_lookback_years && hi < length) hi *= 2.0;
    if (residual(hi) >= target) {
      const double capped = std::min(cfg_.max_lookback_years, length);
      if (capped < length)
        events_.push_back("g1 lookback capped at " + format_double(capped) + " years (residual variance " +
                          format_double(residual(capped)) + ")");
      return capped;
    }
    double lo = hi / 2.0;
    while (hi - lo > 1e-6) {
      const double mid = 0.5 * (lo + hi);
      (residual(mid) < target ? hi : lo) = mid;
    }
    return std::min(std::ceil(hi * 1e3) / 1e3, length);
  }

  void setup_history() {
    const auto t_grid = [&] {
      std::vector<double> ts(n_ + 1);
      for (std::size_t n = 0; n <= n_; ++n) ts[n] = time(n);
      return ts;
    }();

    // g2 is deterministic and exact on the stored history.
    g2_.assign(n_ + 1, 0.0);
    if (!hist_.empty()) {
      const auto sep2 = separable_decomposition(p_.k2);
      const double g20 = history_g2(p_.k2, hist_, p_.betas, 0.0);
      for (std::size_t n = 0; n <= n_; ++n)
        g2_[n] = sep2 ? std::exp(sep2->h(t_grid[n]) - sep2->h(0.0)) * g20 : history_g2(p_.k2, hist_, p_.betas, t_grid[n]);
    }

    if (hist_.empty() || cfg_.g1_mode == G1Mode::zero) {
      g1_kind_ = G1Kind::zero;
      if (!hist_.empty()) events_.push_back("g1 treated as identically zero (g1_mode=zero)");
      return;
    }

    double sigma_max = 0.0;
    for (std::size_t j = 0; j < hist_.size(); ++j) sigma_max = std::max(sigma_max, std::abs(hist_.sigma(j, p_.betas)));
    lookback_ = choose_lookback(sigma_max);
    past_ = hist_.refined(dt_, lookback_);
    past_idx_ = past_.noise_intervals();
    for (std::size_t j : past_idx_) {
      past_sd_.push_back(std::sqrt(past_.times()[j] - past_.left(j)));
      past_sigma_.push_back(past_.sigma(j, p_.betas));
    }

    if (const auto sep = separable_decomposition(p_.k1)) {
      g1_kind_ = G1Kind::separable;
      for (std::size_t j : past_idx_) g1_w0_.push_back(detail::interval_mean(p_.k1, past_.left(j), past_.times()[j], 0.0));
      for (double t : t_grid) g1_scale_.push_back(std::exp(sep->h(t) - sep->h(0.0)));
    } else if (const auto f = exponential_factors(p_.k1)) {
      g1_kind_ = G1Kind::factors;
      const double lo_support = p_.k1.finite_support() ? -p_.k1.cutoff() : -kInf;
      for (std::size_t k = 0; k < f->size(); ++k) {
        const auto single = KernelSpec::exponential(f->rates[k]);
        const double scale = f->coeffs[k] / f->rates[k];
        std::vector<double> w;
        for (std::size_t j : past_idx_) {
          const double l = past_.left(j), r = past_.times()[j];
          const double lc = std::max(l, lo_support);
          w.push_back(lc < r ? scale * integral(single, 1.0, lc, r, 0.0) / (r - l) : 0.0);
        }
        g1_factor_w_.push_back(std::move(w));
        std::vector<double> d;
        for (double t : t_grid) d.push_back(std::exp(-f->rates[k] * t));
        g1_factor_decay_.push_back(std::move(d));
      }
    } else {
      g1_kind_ = G1Kind::generic;
      // Uniform cells (-(m+1) dt, -m dt] inside the kernel support share a lag table.
      std::size_t max_cell = 0;
      for (std::size_t j : past_idx_) {
        const double l = past_.left(j), r = past_.times()[j];
        const double m = -r / dt_;
        const bool uniform = std::abs((r - l) - dt_) <= 1e-9 * dt_ && std::abs(m - std::round(m)) <= 1e-6 &&
                             !(p_.k1.finite_support() && l < -p_.k1.cutoff());
        if (uniform) {
          cell_index_.push_back(std::lround(m));
          max_cell = std::max(max_cell, static_cast<std::size_t>(std::lround(m)));
          irregular_w_.emplace_back();
        } else {
          cell_index_.push_back(-1);
          std::vector<double> w;
          for (double t : t_grid) w.push_back(detail::interval_mean(p_.k1, l, r, t));
          irregular_w_.push_back(std::move(w));
        }
      }
      // cell_mean_[c] = mean of K1 over lags [c dt, (c+1) dt], with s >= 0 so no cutoff applies.
      cell_mean_.resize(max_cell + n_ + 1);
      for (std::size_t c = 0; c < cell_mean_.size(); ++c) {
        const double u0 = static_cast<double>(c) * dt_;
        cell_mean_[c] = integral(p_.k1, 1.0, 0.0, dt_, u0 + dt_) / dt_;
      }
    }
  }

  void setup_scheme() {
    if (cfg_.scheme == Scheme::markov) {
      auto factors = [&](const KernelSpec& k, const char* which) {
        if (k.family() == KernelFamily::tspl && cfg_.tspl_exp_terms > 0) {
          auto f = approximate_by_exponentials(k, cfg_.tspl_exp_terms);
          events_.push_back(std::string(which) + " approximated by " + std::to_string(cfg_.tspl_exp_terms) +
                            " exponentials (max relative residual " + format_double(f.fit_residual) + ")");
          return f;
        }
        return markov_factors_or_throw(k, which);
      };
      mf1_ = MarkovFactors(factors(p_.k1, "K1"), dt_);
      mf2_ = MarkovFactors(factors(p_.k2, "K2"), dt_);
      return;
    }
    // For s >= 0 the cutoff never applies, so convolution weights depend on the lag only.
    conv1_ = p_.k1.is_convolution();
    conv2_ = p_.k2.is_convolution();
    if (conv1_) {
      w1_.assign(n_ + 1, 0.0);
      for (std::size_t m = 1; m <= n_; ++m) w1_[m] = evaluate(p_.k1, 0.0, static_cast<double>(m) * dt_);
    }
    if (conv2_) {
      w2_.assign(n_ + 1, 0.0);
      for (std::size_t m = 1; m <= n_; ++m) w2_[m] = evaluate(p_.k2, 0.0, static_cast<double>(m) * dt_);
    }
  }

  void setup_lower_bound() {
    sep1_ = separable_decomposition(p_.k1);
    if (!sep1_) {
      events_.push_back("lower bound X unavailable: K1 is not separable");
      return;
    }
    for (std::size_t n = 0; n <= n_; ++n) {
      const double t = time(n);
      kdiag_.push_back(evaluate(p_.k1, t, t));
      hdiff_.push_back(sep1_->h(t) - sep1_->h(0.0));
    }
  }

  template <class Observer>
  void core(const PathNoise& noise, Observer& obs) const {
    check_noise_sizes(noise.past.size(), noise.future.size());
    const auto g1 = g1_path(noise.past);
    const auto& b = p_.betas;
    const bool with_x = has_lower_bound();

    std::vector<double> y1(mf1_.size(), 0.0), y2(mf2_.size(), 0.0);
    std::vector<double> a1, a2;  // sigma dW and sigma^2 dt per step
    if (cfg_.scheme == Scheme::quadrature) {
      a1.reserve(n_);
      a2.reserve(n_);
    }

    PathState st;
    st.r1 = g1[0];
    st.r2 = g2_[0];
    double log_s = std::log(p_.s0);
    double sigma0 = 0.0, int_k = 0.0, int_k2 = 0.0;
    for (std::size_t n = 0;; ++n) {
      st.n = n;
      st.t = time(n);
      if (st.r2 < cfg_.r2_floor) {
        obs.floor(st);
        st.r2 = cfg_.r2_floor;
      }
      st.sigma = b.beta0 + b.beta1 * st.r1 + b.beta2 * std::sqrt(st.r2);
      if (n == 0) sigma0 = st.sigma;
      st.s = std::exp(log_s);
      if (with_x)
        st.x = sigma0 * std::exp(b.beta1 * int_k + hdiff_[n] - 0.5 * b.beta1 * b.beta1 * int_k2);
      if (!std::isfinite(st.r1) || !std::isfinite(st.r2) || !std::isfinite(st.sigma) || !std::isfinite(log_s) ||
          !(st.s > 0.0) || !std::isfinite(st.s)) {
        obs.abort("aborted at t=" + format_double(st.t) + ": R1=" + format_double(st.r1) +
                  " R2=" + format_double(st.r2) + " sigma=" + format_double(st.sigma) +
                  " logS=" + format_double(log_s));
        return;
      }
      obs.point(st);
      if (n == n_) return;

      const double dt = time(n + 1) - st.t;
      const double dw = noise.future[n];
      const double in1 = st.sigma * dw;
      const double in2 = st.sigma * st.sigma * dt;
      log_s += in1 - 0.5 * in2;
      if (with_x) {
        int_k += kdiag_[n] * dw;
        int_k2 += kdiag_[n] * kdiag_[n] * dt;
      }
      if (cfg_.scheme == Scheme::markov) {
        st.r1 = g1[n + 1] + mf1_.advance(y1, in1);
        st.r2 = g2_[n + 1] + mf2_.advance(y2, in2);
        continue;
      }
      a1.push_back(in1);
      a2.push_back(in2);
      const double t_next = time(n + 1);
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t k = 0; k <= n; ++k) {
        s1 += (conv1_ ? w1_[n + 1 - k] : evaluate(p_.k1, time(k), t_next)) * a1[k];
        s2 += (conv2_ ? w2_[n + 1 - k] : evaluate(p_.k2, time(k), t_next)) * a2[k];
      }
      st.r1 = g1[n + 1] + s1;
      st.r2 = g2_[n + 1] + s2;
    }
  }

  ModelParams p_;
  HistorySegment hist_;
  SimConfig cfg_;
  std::optional<AssumptionReport> report_;
  std::vector<std::string> events_;
  std::size_t n_ = 0;
  double dt_ = 0.0;

  // History noise.
  double lookback_ = 0.0;
  HistorySegment past_;
  std::vector<std::size_t> past_idx_;
  std::vector<double> past_sd_, past_sigma_;
  std::vector<double> g2_;
  G1Kind g1_kind_ = G1Kind::zero;
  std::vector<double> g1_w0_, g1_scale_;
  std::vector<std::vector<double>> g1_factor_w_, g1_factor_decay_;
  std::vector<long> cell_index_;
  std::vector<double> cell_mean_;
  std::vector<std::vector<double>> irregular_w_;

  // Future part.
  MarkovFactors mf1_, mf2_;
  bool conv1_ = false, conv2_ = false;
  std::vector<double> w1_, w2_;

  // Lower bound X.
  std::optional<SeparableForm> sep1_;
  std::vector<double> kdiag_, hdiff_;
};

// ---------------------------------------------------------------------------
// Output.

inline void write_path(std::ostream& os, const SimPath& p) {
  os << (p.has_x() ? "t,R1,R2,sigma,S,X,dW\n" : "t,R1,R2,sigma,S,dW\n");
  for (std::size_t n = 0; n < p.t.size(); ++n) {
    os << format_sig17(p.t[n]) << ',' << format_sig17(p.r1[n]) << ',' << format_sig17(p.r2[n]) << ','
       << format_sig17(p.sigma[n]) << ',' << format_sig17(p.s[n]) << ',';
    if (p.has_x()) os << format_sig17(p.x[n]) << ',';
    os << format_sig17(n == 0 ? 0.0 : p.dw[n - 1]) << '\n';
  }
}

inline void write_summary(std::ostream& os, const EnsembleSummary& s) {
  os << "n_paths=" << s.n_paths << "\n";
  os << "aborted_paths=" << s.aborted_paths << "\n";
  os << "r2_floor_events=" << s.floor_events << "\n";
  os << "lower_bound_available=" << (s.x_available ? "true" : "false") << "\n";
  if (s.x_available) {
    os << "violation_points=" << s.violation_points << "\n";
    os << "violating_paths=" << s.violating_paths << "\n";
    os << "min_sigma_minus_x=" << format_sig17(s.min_gap) << "\n";
  }
  os << "min_r2=" << format_sig17(s.min_r2) << "\n";
  for (const auto& h : s.horizons) {
    const std::string key = "t=" + format_double(h.time);
    os << key << ".sigma_mean=" << format_sig17(h.sigma_mean) << "\n";
    os << key << ".sigma_se=" << format_sig17(h.sigma_se) << "\n";
    os << key << ".S_mean=" << format_sig17(h.s_mean) << "\n";
    os << key << ".S_se=" << format_sig17(h.s_se) << "\n";
  }
  for (const auto& e : s.events) os << "event=" << e << "\n";
  os << "\n# quantiles\nt,variable";
  for (double q : s.quantile_levels) os << ",q" << format_double(q);
  os << "\n";
  for (const auto& h : s.horizons) {
    os << format_sig17(h.time) << ",sigma";
    for (double v : h.sigma_quantiles) os << ',' << format_sig17(v);
    os << "\n" << format_sig17(h.time) << ",S";
    for (double v : h.s_quantiles) os << ',' << format_sig17(v);
    os << "\n";
  }
}

}  // namespace pdv
