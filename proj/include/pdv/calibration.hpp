#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pdv/assumptions.hpp"
#include "pdv/features.hpp"
#include "pdv/history.hpp"
#include "pdv/nelder_mead.hpp"
#include "pdv/numeric_text.hpp"
#include "pdv/parallel.hpp"
#include "pdv/rng.hpp"

namespace pdv {

// ---------------------------------------------------------------------------
// Kernel choices and their parameter vectors.

enum class KernelChoice { exp_exp, tspl_tspl, combo_combo, exp_tspl };

inline constexpr std::array<KernelChoice, 4> kAllKernelChoices{KernelChoice::exp_exp, KernelChoice::tspl_tspl,
                                                               KernelChoice::combo_combo, KernelChoice::exp_tspl};

inline std::string_view to_string(KernelChoice c) {
  switch (c) {
    case KernelChoice::exp_exp: return "exp/exp";
    case KernelChoice::tspl_tspl: return "tspl/tspl";
    case KernelChoice::combo_combo: return "combo/combo";
    case KernelChoice::exp_tspl: return "exp/tspl";
  }
  return "?";
}

inline KernelChoice parse_kernel_choice(std::string_view s) {
  for (auto c : kAllKernelChoices) {
    const auto name = to_string(c);
    std::string alt(name);
    std::replace(alt.begin(), alt.end(), '/', '_');
    if (s == name || s == alt) return c;
  }
  throw std::invalid_argument("unknown kernel choice '" + std::string(s) +
                              "' (expected exp/exp, tspl/tspl, combo/combo or exp/tspl)");
}

// How a natural parameter maps to the unconstrained search space.
enum class ParamKind { rate, alpha, delta, theta };

struct KernelPair {
  KernelSpec k1;
  KernelSpec k2;
};

namespace detail {

inline std::vector<ParamKind> param_kinds(KernelChoice c) {
  using P = ParamKind;
  switch (c) {
    case KernelChoice::exp_exp: return {P::rate, P::rate};
    case KernelChoice::tspl_tspl: return {P::alpha, P::delta, P::alpha, P::delta};
    case KernelChoice::combo_combo: return {P::theta, P::rate, P::rate, P::theta, P::rate, P::rate};
    case KernelChoice::exp_tspl: return {P::rate, P::alpha, P::delta};
  }
  return {};
}

inline double to_search(ParamKind k, double v) {
  switch (k) {
    case ParamKind::rate:
    case ParamKind::delta: return std::log(v);
    case ParamKind::alpha: return std::log(v - 1.0);
    case ParamKind::theta: return std::log(v / (1.0 - v));
  }
  return v;
}

inline double to_natural(ParamKind k, double u) {
  switch (k) {
    case ParamKind::rate:
    case ParamKind::delta: return std::exp(u);
    case ParamKind::alpha: return 1.0 + std::exp(u);
    case ParamKind::theta: return 1.0 / (1.0 + std::exp(-u));
  }
  return u;
}

// Search-space box the multistart points are spread over.
inline std::pair<double, double> start_range(ParamKind k) {
  switch (k) {
    case ParamKind::rate: return {std::log(1.0), std::log(150.0)};
    case ParamKind::alpha: return {std::log(0.05), std::log(2.0)};
    case ParamKind::delta: return {std::log(0.002), std::log(0.5)};
    case ParamKind::theta: return {-2.0, 2.0};
  }
  return {0.0, 0.0};
}

inline double radical_inverse(std::uint64_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

}  // namespace detail

inline std::vector<std::string> parameter_names(KernelChoice c) {
  switch (c) {
    case KernelChoice::exp_exp: return {"lambda1", "lambda2"};
    case KernelChoice::tspl_tspl: return {"alpha1", "delta1", "alpha2", "delta2"};
    case KernelChoice::combo_combo: return {"theta1", "lambda1a", "lambda1b", "theta2", "lambda2a", "lambda2b"};
    case KernelChoice::exp_tspl: return {"lambda1", "alpha2", "delta2"};
  }
  return {};
}

inline std::size_t parameter_count(KernelChoice c) { return detail::param_kinds(c).size(); }

// Throws std::invalid_argument outside the admissible domain.
inline KernelPair make_kernels(KernelChoice c, std::span<const double> p) {
  if (p.size() != parameter_count(c))
    throw std::invalid_argument("kernel choice " + std::string(to_string(c)) + " needs " +
                                std::to_string(parameter_count(c)) + " parameters");
  for (double v : p)
    if (!std::isfinite(v)) throw std::invalid_argument("kernel parameters must be finite");
  auto tspl = [](double a, double d) {
    if (!(a > 1.0)) throw std::invalid_argument("alpha must be > 1 for an unbounded history");
    return KernelSpec::tspl(a, d);
  };
  switch (c) {
    case KernelChoice::exp_exp: return {KernelSpec::exponential(p[0]), KernelSpec::exponential(p[1])};
    case KernelChoice::tspl_tspl: return {tspl(p[0], p[1]), tspl(p[2], p[3])};
    case KernelChoice::combo_combo:
      return {KernelSpec::convex_combo(p[0], p[1], p[2]), KernelSpec::convex_combo(p[3], p[4], p[5])};
    case KernelChoice::exp_tspl: return {KernelSpec::exponential(p[0]), tspl(p[1], p[2])};
  }
  throw std::logic_error("unhandled kernel choice");
}

inline std::vector<double> to_search_space(KernelChoice c, std::span<const double> natural) {
  const auto kinds = detail::param_kinds(c);
  std::vector<double> u(natural.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = detail::to_search(kinds[i], natural[i]);
  return u;
}

inline std::vector<double> to_natural_space(KernelChoice c, std::span<const double> u) {
  const auto kinds = detail::param_kinds(c);
  std::vector<double> p(u.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = detail::to_natural(kinds[i], u[i]);
  return p;
}

// Halton points (bases 2, 3, 5, ...) scaled to the start box, at an offset derived from the seed.
inline std::vector<std::vector<double>> multistart_points(KernelChoice c, std::size_t count, std::uint64_t seed) {
  static constexpr std::array<unsigned, 6> primes{2, 3, 5, 7, 11, 13};
  const auto kinds = detail::param_kinds(c);
  const std::uint64_t offset = 1 + splitmix64(seed) % 4096;
  std::vector<std::vector<double>> pts(count, std::vector<double>(kinds.size()));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t d = 0; d < kinds.size(); ++d) {
      const auto [lo, hi] = detail::start_range(kinds[d]);
      pts[i][d] = lo + (hi - lo) * detail::radical_inverse(offset + i, primes[d]);
    }
  return pts;
}

// ---------------------------------------------------------------------------
// Box-constrained ridge regression of y on (1, R1, sqrt R2).

struct BetaBounds {
  std::array<double, 3> lower{0.0, -kInf, 0.0};
  std::array<double, 3> upper{kInf, 1.0, kInf};

  void validate() const {
    for (std::size_t i = 0; i < 3; ++i)
      if (std::isnan(lower[i]) || std::isnan(upper[i]) || lower[i] > upper[i])
        throw std::invalid_argument("beta bounds must define a nonempty box");
  }
};

struct BetaFit {
  std::array<double, 3> beta{};
  std::array<bool, 3> at_lower{};
  std::array<bool, 3> at_upper{};
  bool rank_deficient = false;
  double mse = 0.0;
  double objective = 0.0;  // mse + kappa |beta|^2

  Betas betas() const { return {beta[0], beta[1], beta[2]}; }
  bool any_active() const {
    for (std::size_t i = 0; i < 3; ++i)
      if (at_lower[i] || at_upper[i]) return true;
    return false;
  }
};

// Minimises |X beta - y|^2 / n + kappa |beta|^2 over the box by enumerating the
// 27 free / lower / upper patterns and keeping the best feasible candidate.
// With penalize_intercept = false the penalty skips beta0.
inline BetaFit fit_betas(std::span<const double> r1, std::span<const double> sqrt_r2, std::span<const double> y,
                         const BetaBounds& bounds = {}, double kappa = 0.0, bool penalize_intercept = true) {
  const std::size_t n = y.size();
  if (r1.size() != n || sqrt_r2.size() != n) throw std::invalid_argument("design and target lengths differ");
  if (n < 3) throw std::invalid_argument("fit_betas needs at least 3 rows");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("ridge weight must be >= 0");
  bounds.validate();

  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d x(1.0, r1[i], sqrt_r2[i]);
    if (!x.allFinite() || !std::isfinite(y[i])) throw std::invalid_argument("design row " + std::to_string(i) + " is not finite");
    a.noalias() += x * x.transpose();
    b += x * y[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  a *= inv_n;
  b *= inv_n;
  Eigen::Vector3d pen(penalize_intercept ? kappa : 0.0, kappa, kappa);
  a.diagonal() += pen;

  auto value = [&](const Eigen::Vector3d& beta) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = beta[0] + beta[1] * r1[i] + beta[2] * sqrt_r2[i] - y[i];
      sse += e * e;
    }
    return std::pair{sse * inv_n, sse * inv_n + pen.dot(beta.cwiseProduct(beta))};
  };

  BetaFit best;
  best.objective = kInf;
  bool found = false;
  // Patterns ordered by number of fixed coordinates so ties favour free solutions.
  std::vector<std::array<int, 3>> patterns;
  for (int k = 0; k < 27; ++k) patterns.push_back({k % 3, (k / 3) % 3, k / 9});
  std::stable_sort(patterns.begin(), patterns.end(), [](const auto& p, const auto& q) {
    auto fixed = [](const auto& s) { return (s[0] != 0) + (s[1] != 0) + (s[2] != 0); };
    return fixed(p) < fixed(q);
  });

  for (const auto& pat : patterns) {
    Eigen::Vector3d beta = Eigen::Vector3d::Zero();
    std::vector<int> free;
    bool ok = true;
    for (int j = 0; j < 3; ++j) {
      if (pat[j] == 0) {
        free.push_back(j);
        continue;
      }
      const double v = pat[j] == 1 ? bounds.lower[j] : bounds.upper[j];
      if (!std::isfinite(v)) ok = false;
      beta[j] = v;
    }
    if (!ok) continue;
    bool deficient = false;
    if (!free.empty()) {
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd af(m, m);
      Eigen::VectorXd bf(m);
      for (Eigen::Index p = 0; p < m; ++p) {
        bf[p] = b[free[p]];
        for (int j = 0; j < 3; ++j)
          if (pat[j] != 0) bf[p] -= a(free[p], j) * beta[j];
        for (Eigen::Index q = 0; q < m; ++q) af(p, q) = a(free[p], free[q]);
      }
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(af);
      cod.setThreshold(1e-12);
      deficient = cod.rank() < m;
      const Eigen::VectorXd sol = cod.solve(bf);
      for (Eigen::Index p = 0; p < m; ++p) {
        const int j = free[p];
        const double v = sol[p];
        const double slack = 1e-12 * (1.0 + std::abs(v));
        if (!std::isfinite(v) || v < bounds.lower[j] - slack || v > bounds.upper[j] + slack) ok = false;
        beta[j] = std::clamp(v, bounds.lower[j], bounds.upper[j]);
      }
    }
    if (!ok) continue;
    const auto [mse, obj] = value(beta);
    if (!found || obj < best.objective) {
      found = true;
      for (int j = 0; j < 3; ++j) {
        best.beta[j] = beta[j];
        best.at_lower[j] = pat[j] == 1;
        best.at_upper[j] = pat[j] == 2;
      }
      best.rank_deficient = deficient;
      best.mse = mse;
      best.objective = obj;
    }
  }
  if (!found) throw std::runtime_error("no feasible beta pattern");
  return best;
}

// ---------------------------------------------------------------------------
// Goodness of fit.

struct RSquared {
  double value = 0.0;
  bool defined = false;  // false when the evaluation set has zero variance (value reported as 0)
};

// 1 - SSE/SST with SST centred on the mean of y.
inline RSquared r_squared(std::span<const double> y, std::span<const double> fitted) {
  if (y.size() != fitted.size() || y.empty()) throw std::invalid_argument("r_squared needs equal nonempty series");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double sse = 0.0, sst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    scale = std::max(scale, std::abs(y[i]));
    sse += (y[i] - fitted[i]) * (y[i] - fitted[i]);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  // Variance at rounding level counts as zero.
  const double floor = static_cast<double>(y.size()) * std::pow(64.0 * std::numeric_limits<double>::epsilon() * scale, 2);
  if (!(sst > floor)) return {0.0, false};
  return {1.0 - sse / sst, true};
}

inline std::vector<double> predict(const Betas& b, std::span<const double> r1, std::span<const double> sqrt_r2) {
  std::vector<double> out(r1.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = b.beta0 + b.beta1 * r1[i] + b.beta2 * sqrt_r2[i];
  return out;
}

// ---------------------------------------------------------------------------
// Calibration problem.

struct CalibrationSpec {
  KernelChoice choice = KernelChoice::exp_tspl;
  BetaBounds bounds;
  std::optional<double> ridge;  // default: 1e-6 for tspl/tspl, 0 otherwise
  bool penalize_intercept = true;
  std::optional<std::size_t> cutoff_days;  // feature window; unbounded by default
  std::size_t multistarts = 8;
  NelderMeadOptions optimizer;
  double positivity_horizon = 1.0;
  unsigned threads = 0;

  double ridge_weight() const {
    if (ridge) return *ridge;
    return choice == KernelChoice::tspl_tspl ? 1e-6 : 0.0;
  }

  void validate() const {
    bounds.validate();
    const double k = ridge_weight();
    if (!(k >= 0.0) || !std::isfinite(k)) throw std::invalid_argument("ridge weight must be >= 0");
    if (multistarts == 0) throw std::invalid_argument("multistarts must be >= 1");
    if (!(positivity_horizon > 0.0)) throw std::invalid_argument("positivity horizon must be > 0");
    optimizer.validate();
  }
};

// Train rows only: returns strictly before the split date and the proxy on those dates.
class CalibrationProblem {
 public:
  CalibrationProblem(const MarketDataset& data, CalibrationSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const auto& r = data.returns;
    std::size_t j = 0;
    for (std::size_t i = 0; i < r.size() && r.dates[i] < data.split_date; ++i) {
      returns_.push_back(r.values[i]);
      dates_.push_back(r.dates[i]);
      while (j < data.proxy.size() && data.proxy.dates[j] < r.dates[i]) ++j;
      if (j < data.proxy.size() && data.proxy.dates[j] == r.dates[i]) {
        rows_.push_back(i);
        y_.push_back(data.proxy.values[j]);
      }
    }
    if (rows_.size() < 3) throw std::invalid_argument("calibration needs at least 3 train rows before the split date");
    features_.cutoff_days = spec_.cutoff_days;
  }

  const CalibrationSpec& spec() const noexcept { return spec_; }
  std::size_t train_size() const noexcept { return rows_.size(); }
  const std::vector<double>& train_targets() const noexcept { return y_; }
  const std::vector<Date>& return_dates() const noexcept { return dates_; }
  std::size_t evaluations() const noexcept { return evaluations_.load(); }

  struct Fit {
    BetaFit betas;
    std::vector<double> r1;
    std::vector<double> sqrt_r2;
    RSquared r2;
  };

  Fit fit(const KernelPair& k) const {
    ++evaluations_;
    std::vector<double> sq(returns_.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = returns_[i] * returns_[i];
    const auto f1 = kernel_sum(returns_, k.k1, features_);
    const auto f2 = kernel_sum(sq, k.k2, features_);
    Fit out;
    out.r1.resize(rows_.size());
    out.sqrt_r2.resize(rows_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      out.r1[i] = f1[rows_[i]];
      out.sqrt_r2[i] = std::sqrt(std::max(f2[rows_[i]], 0.0));
    }
    out.betas = fit_betas(out.r1, out.sqrt_r2, y_, spec_.bounds, spec_.ridge_weight(), spec_.penalize_intercept);
    out.r2 = r_squared(y_, predict(out.betas.betas(), out.r1, out.sqrt_r2));
    return out;
  }

  // Train MSE + ridge penalty; +inf outside the parameter domain.
  double objective(std::span<const double> natural) const {
    try {
      const double v = fit(make_kernels(spec_.choice, natural)).betas.objective;
      return std::isfinite(v) ? v : kInf;
    } catch (const std::invalid_argument&) {
      // Inadmissible parameters, or kernels whose features overflow.
      return kInf;
    }
  }

 private:
  CalibrationSpec spec_;
  FeatureOptions features_;
  std::vector<double> returns_;
  std::vector<Date> dates_;
  std::vector<std::size_t> rows_;
  std::vector<double> y_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

inline double objective(std::span<const double> natural, const MarketDataset& data, const CalibrationSpec& spec) {
  return CalibrationProblem(data, spec).objective(natural);
}

// ---------------------------------------------------------------------------
// Calibration results.

struct StartOutcome {
  std::vector<double> initial;  // natural parameters
  std::vector<double> final;
  double value = kInf;
  std::size_t evaluations = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct CalibrationResult {
  std::string dataset = "dataset";
  KernelChoice choice = KernelChoice::exp_tspl;
  std::vector<std::string> param_names;
  std::vector<double> params;
  BetaFit fit;
  double kappa = 0.0;
  double objective = kInf;
  RSquared train_r2;
  RSquared test_r2;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  AssumptionEntry positivity;  // (II.3) on the fitted kernels
  std::optional<double> positivity_ratio;
  std::vector<StartOutcome> starts;
  std::size_t best_start = 0;

  KernelPair kernels() const { return make_kernels(choice, params); }
  std::size_t evaluations() const {
    std::size_t n = 0;
    for (const auto& s : starts) n += s.evaluations;
    return n;
  }
};

inline CalibrationResult calibrate(const MarketDataset& data, const CalibrationSpec& spec, std::uint64_t seed,
                                   const std::string& dataset_name = "dataset") {
  const CalibrationProblem problem(data, spec);
  const KernelChoice choice = spec.choice;
  const auto initial = multistart_points(choice, spec.multistarts, seed);

  std::vector<StartOutcome> out(initial.size());
  parallel_for(initial.size(), spec.threads, [&](std::size_t i) {
    auto f = [&](const std::vector<double>& u) {
      for (double v : u)
        if (!(std::abs(v) < 50.0)) return kInf;
      return problem.objective(to_natural_space(choice, u));
    };
    const auto nm = nelder_mead(f, initial[i], spec.optimizer);
    out[i].initial = to_natural_space(choice, initial[i]);
    out[i].final = to_natural_space(choice, nm.x);
    out[i].value = nm.value;
    out[i].evaluations = nm.evaluations;
    out[i].iterations = nm.iterations;
    out[i].converged = nm.converged;
  });

  std::size_t best = out.size();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (std::isfinite(out[i].value) && (best == out.size() || out[i].value < out[best].value)) best = i;
  if (best == out.size()) throw std::runtime_error("every calibration start failed the parameter domain checks");

  CalibrationResult res;
  res.dataset = dataset_name;
  res.choice = choice;
  res.param_names = parameter_names(choice);
  res.params = out[best].final;
  res.kappa = spec.ridge_weight();
  res.starts = std::move(out);
  res.best_start = best;

  const auto k = res.kernels();
  const auto train = problem.fit(k);
  res.fit = train.betas;
  res.objective = train.betas.objective;
  res.train_r2 = train.r2;
  res.n_train = problem.train_size();

  // Test rows use the train-fitted kernels and betas on the full return history.
  FeatureOptions fo;
  fo.cutoff_days = spec.cutoff_days;
  const auto path = compute_features(data.returns, k.k1, k.k2, fo);
  const auto aligned = align(path, data.proxy, data.split_date);
  res.n_test = aligned.test.size();
  res.test_r2 = r_squared(aligned.test.y, predict(res.fit.betas(), aligned.test.r1, aligned.test.sqrt_r2));

  const auto pos = check_positivity_conditions(k.k1, k.k2, spec.positivity_horizon);
  res.positivity = pos.ii3;
  res.positivity_ratio = pos.ratio;
  return res;
}

// ---------------------------------------------------------------------------
// Output.

namespace detail {

inline std::string r2_text(const RSquared& r) { return r.defined ? format_double(r.value) : "undefined"; }

inline std::string percent(const RSquared& r) {
  if (!r.defined) return "undef";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * r.value << "%";
  return os.str();
}

}  // namespace detail

inline void write_result(std::ostream& os, const CalibrationResult& r) {
  os << "dataset=" << r.dataset << "\n";
  os << "choice=" << to_string(r.choice) << "\n";
  for (std::size_t i = 0; i < r.params.size(); ++i) os << "param." << r.param_names[i] << "=" << format_double(r.params[i]) << "\n";
  static constexpr std::array<const char*, 3> names{"beta0", "beta1", "beta2"};
  for (std::size_t j = 0; j < 3; ++j) {
    os << names[j] << "=" << format_double(r.fit.beta[j]) << "\n";
    os << names[j] << ".bound=" << (r.fit.at_lower[j] ? "lower" : r.fit.at_upper[j] ? "upper" : "free") << "\n";
  }
  os << "rank_deficient=" << (r.fit.rank_deficient ? "true" : "false") << "\n";
  os << "kappa=" << format_double(r.kappa) << "\n";
  os << "objective=" << format_double(r.objective) << "\n";
  os << "train_mse=" << format_double(r.fit.mse) << "\n";
  os << "r2_train=" << detail::r2_text(r.train_r2) << "\n";
  os << "r2_test=" << detail::r2_text(r.test_r2) << "\n";
  os << "n_train=" << r.n_train << "\n";
  os << "n_test=" << r.n_test << "\n";
  os << "positivity.status=" << to_string(r.positivity.status) << "\n";
  os << "positivity.margin=" << format_double(r.positivity.margin) << "\n";
  os << "positivity.witness=" << r.positivity.witness << "\n";
  os << "positivity_ratio=" << (r.positivity_ratio ? format_double(*r.positivity_ratio) : "none") << "\n";
  std::size_t converged = 0, failed = 0;
  for (const auto& s : r.starts) {
    converged += s.converged;
    failed += !std::isfinite(s.value);
  }
  os << "optimizer.starts=" << r.starts.size() << "\n";
  os << "optimizer.best_start=" << r.best_start << "\n";
  os << "optimizer.converged_starts=" << converged << "\n";
  os << "optimizer.failed_starts=" << failed << "\n";
  os << "optimizer.evaluations=" << r.evaluations() << "\n";
  for (std::size_t i = 0; i < r.starts.size(); ++i)
    os << "optimizer.start" << i << ".value=" << format_double(r.starts[i].value) << "\n";
}

// Inverse of write_result for the fields the comparison table needs.
inline CalibrationResult read_result(std::istream& in, const std::string& source = "result") {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw std::invalid_argument(source + ": malformed line '" + std::string(t) + "'");
    kv[std::string(t.substr(0, eq))] = std::string(t.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(source + ": missing key '" + key + "'");
    return it->second;
  };
  auto r2 = [&](const std::string& key) {
    const auto& v = get(key);
    return v == "undefined" ? RSquared{0.0, false} : RSquared{parse_double(v, key), true};
  };
  CalibrationResult r;
  r.dataset = get("dataset");
  r.choice = parse_kernel_choice(get("choice"));
  r.param_names = parameter_names(r.choice);
  for (const auto& n : r.param_names) r.params.push_back(parse_double(get("param." + n), n));
  static constexpr std::array<const char*, 3> names{"beta0", "beta1", "beta2"};
  for (std::size_t j = 0; j < 3; ++j) {
    r.fit.beta[j] = parse_double(get(names[j]), names[j]);
    const auto& b = get(std::string(names[j]) + ".bound");
    r.fit.at_lower[j] = b == "lower";
    r.fit.at_upper[j] = b == "upper";
  }
  r.fit.rank_deficient = get("rank_deficient") == "true";
  r.kappa = parse_double(get("kappa"), "kappa");
  r.objective = parse_double(get("objective"), "objective");
  r.fit.mse = parse_double(get("train_mse"), "train_mse");
  r.fit.objective = r.objective;
  r.train_r2 = r2("r2_train");
  r.test_r2 = r2("r2_test");
  r.n_train = static_cast<std::size_t>(parse_integer(get("n_train"), "n_train"));
  r.n_test = static_cast<std::size_t>(parse_integer(get("n_test"), "n_test"));
  r.positivity.id = "II.3";
  r.positivity.status = parse_status(get("positivity.status"));
  r.positivity.margin = parse_double(get("positivity.margin"), "positivity.margin");
  r.positivity.witness = get("positivity.witness");
  const auto& ratio = get("positivity_ratio");
  if (ratio != "none") r.positivity_ratio = parse_double(ratio, "positivity_ratio");
  return r;
}

inline constexpr std::string_view kR2Convention =
    "R^2 = 1 - SSE/SST, SST centred on the mean of the evaluated set (train or test); "
    "test rows use train-fitted parameters.";

// Kernel choice x dataset grid of train/test R^2, then the positivity ratio row.
inline std::string render_table(const std::vector<CalibrationResult>& results) {
  std::vector<std::string> datasets;
  std::vector<KernelChoice> choices;
  for (const auto& r : results) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    if (std::find(choices.begin(), choices.end(), r.choice) == choices.end()) choices.push_back(r.choice);
  }
  std::sort(choices.begin(), choices.end());
  auto find = [&](KernelChoice c, const std::string& d) -> const CalibrationResult* {
    for (const auto& r : results)
      if (r.choice == c && r.dataset == d) return &r;
    return nullptr;
  };

  std::ostringstream os;
  os << "# " << kR2Convention << "\n";
  os << std::left << std::setw(14) << "kernels";
  for (const auto& d : datasets) os << std::setw(16) << (d + " train") << std::setw(16) << (d + " test");
  os << "ratio\n";
  for (auto c : choices) {
    os << std::setw(14) << to_string(c);
    std::string ratio = "-";
    for (const auto& d : datasets) {
      const auto* r = find(c, d);
      os << std::setw(16) << (r ? detail::percent(r->train_r2) : "-") << std::setw(16)
         << (r ? detail::percent(r->test_r2) : "-");
      if (r && r->positivity_ratio && ratio == "-") {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << *r->positivity_ratio;
        ratio = cell.str();
      }
    }
    os << ratio << "\n";
  }

  const bool any_ratio = std::any_of(results.begin(), results.end(), [](const auto& r) {
    return r.choice == KernelChoice::exp_tspl && r.positivity_ratio;
  });
  if (any_ratio) {
    os << "\n" << std::setw(30) << "positivity (exp/tspl)";
    for (const auto& d : datasets) os << std::setw(16) << d;
    os << "\n" << std::setw(30) << "value of 2*lambda*delta/alpha";
    for (const auto& d : datasets) {
      const auto* r = find(KernelChoice::exp_tspl, d);
      std::ostringstream cell;
      if (r && r->positivity_ratio) cell << std::fixed << std::setprecision(2) << *r->positivity_ratio;
      os << std::setw(16) << (cell.str().empty() ? "-" : cell.str());
    }
    os << "\n" << std::setw(30) << "status";
    for (const auto& d : datasets) {
      const auto* r = find(KernelChoice::exp_tspl, d);
      os << std::setw(16) << (r ? std::string(to_string(r->positivity.status)) : "-");
    }
    os << "\n";
  }
  return os.str();
}

// One row per result, comma separated.
inline std::string render_csv(const std::vector<CalibrationResult>& results) {
  std::ostringstream os;
  os << "dataset,kernels,r2_train,r2_test,positivity_ratio,positivity_status,beta0,beta1,beta2,params\n";
  for (const auto& r : results) {
    os << r.dataset << ',' << to_string(r.choice) << ',' << detail::r2_text(r.train_r2) << ','
       << detail::r2_text(r.test_r2) << ',' << (r.positivity_ratio ? format_double(*r.positivity_ratio) : "") << ','
       << to_string(r.positivity.status) << ',' << format_double(r.fit.beta[0]) << ','
       << format_double(r.fit.beta[1]) << ',' << format_double(r.fit.beta[2]) << ',';
    for (std::size_t i = 0; i < r.params.size(); ++i)
      os << (i ? ";" : "") << r.param_names[i] << '=' << format_double(r.params[i]);
    os << '\n';
  }
  return os.str();
}

}  // namespace pdv
