#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdv/history.hpp"
#include "pdv/kernel.hpp"
#include "pdv/model.hpp"
#include "pdv/numeric_text.hpp"
#include "pdv/quadrature.hpp"
#include "pdv/stats.hpp"

namespace pdv {

enum class AssumptionStatus { pass_analytic, pass_numeric, fail, not_applicable };

inline std::string_view to_string(AssumptionStatus s) {
  switch (s) {
    case AssumptionStatus::pass_analytic: return "PASS_ANALYTIC";
    case AssumptionStatus::pass_numeric: return "PASS_NUMERIC";
    case AssumptionStatus::fail: return "FAIL";
    case AssumptionStatus::not_applicable: return "NOT_APPLICABLE";
  }
  return "?";
}

inline AssumptionStatus parse_status(std::string_view s) {
  for (auto v : {AssumptionStatus::pass_analytic, AssumptionStatus::pass_numeric, AssumptionStatus::fail,
                 AssumptionStatus::not_applicable})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown assumption status '" + std::string(s) + "'");
}

// One row of the report. The meaning of `margin` depends on the assumption:
//   I.1  sup_t of the integral          I.2  1 - value at the smallest eps
//   I.3  sup |sigma_s| on the history   I.4  sup_t of the integral at (alpha1, alpha2)
//   I.5  Hoelder exponent gamma         I.6  inf_t g2(t) (or its lower bound)
//   II.1 sum of the four integrals      II.2 -sup h'
//   II.3 closed-form ratio - 1, or min (dK2/dt - 2h'K2)/K2 on the grid
//   II.4 g2(0)
struct AssumptionEntry {
  std::string id;
  AssumptionStatus status = AssumptionStatus::not_applicable;
  double margin = std::numeric_limits<double>::quiet_NaN();
  std::string witness;
  std::string note;
  bool boundary = false;

  bool passed() const noexcept {
    return status == AssumptionStatus::pass_analytic || status == AssumptionStatus::pass_numeric;
  }
  bool failed() const noexcept { return status == AssumptionStatus::fail; }
};

enum class Guarantee { neither, existence, existence_and_positivity };

inline std::string_view to_string(Guarantee g) {
  switch (g) {
    case Guarantee::neither: return "NEITHER";
    case Guarantee::existence: return "EXISTENCE";
    case Guarantee::existence_and_positivity: return "EXISTENCE+POSITIVITY";
  }
  return "?";
}

struct CheckOptions {
  int t_grid = 1000;       // points on [0, T] for sup/inf searches
  int scan_t_grid = 101;   // t points of the (s, t) scan for II.3
  int scan_lag_grid = 200; // lag points of the (s, t) scan for II.3
  double boundary_tol = 1e-12;
};

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

// Breakpoints near s = t where TSPL-like kernels are steep.
inline std::vector<double> diagonal_cuts(const KernelSpec& k, double t) {
  const double scale = k.family() == KernelFamily::tspl ? k.delta() : 1e-3;
  std::vector<double> cuts;
  for (double m = 1.0; m <= 1e4; m *= 10.0) cuts.push_back(t - m * scale);
  return cuts;
}

inline double lower_limit(const KernelSpec& k, double history_length) {
  double lo = -history_length;
  if (k.finite_support()) lo = std::max(lo, -k.cutoff());
  return lo;
}

inline std::vector<double> time_grid(double horizon, int n) {
  if (horizon <= 0.0) return {0.0};
  return linspace(0.0, horizon, std::max(n, 2));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// (I.1) and (I.4): integrability of K1^2 + K2 over [-Delta, t] and of
// K1^{2 alpha1} + K2^{alpha2} over [0, t].

struct IntegrabilityResult {
  AssumptionEntry i1;
  AssumptionEntry i4;
  double alpha1 = std::numeric_limits<double>::quiet_NaN();
  double alpha2 = std::numeric_limits<double>::quiet_NaN();
};

// Candidate exponents for (I.4), largest first.
inline constexpr double kExponentLadder[] = {16.0, 8.0, 4.0, 2.0, 1.5, 1.25, 1.1};

inline IntegrabilityResult check_integrability(const KernelSpec& k1, const KernelSpec& k2, double horizon,
                                               int grid = 1000, double history_length = kInf) {
  if (horizon < 0.0) throw std::invalid_argument("horizon must be >= 0");
  IntegrabilityResult r;
  r.i1.id = "I.1";
  r.i4.id = "I.4";
  const auto ts = detail::time_grid(horizon, grid);

  double sup = 0.0;
  double arg = 0.0;
  for (double t : ts) {
    const double v = integral(k1, 2.0, -history_length, t, t) + integral(k2, 1.0, -history_length, t, t);
    if (!(v <= sup)) {
      sup = v;
      arg = t;
    }
    if (!std::isfinite(v)) break;
  }
  r.i1.margin = sup;
  r.i1.witness = "t=" + detail::fmt(arg);
  if (std::isfinite(sup)) {
    r.i1.status = AssumptionStatus::pass_analytic;
    r.i1.note = "closed-form kernel integrals over the t-grid";
  } else {
    r.i1.status = AssumptionStatus::fail;
    r.i1.note = "integral diverges";
  }

  // All registered families are bounded on compacts of {s <= t} (delta > 0 for
  // TSPL), so every exponent keeps the integrals over [0, t] finite.
  auto sup_power = [&](const KernelSpec& k, double p) {
    double s = 0.0;
    for (double t : detail::time_grid(horizon, std::min(grid, 50))) s = std::max(s, integral(k, p, 0.0, t, t));
    return s;
  };
  for (double a : kExponentLadder) {
    if (std::isfinite(sup_power(k1, 2.0 * a))) {
      r.alpha1 = a;
      break;
    }
  }
  for (double a : kExponentLadder) {
    if (std::isfinite(sup_power(k2, a))) {
      r.alpha2 = a;
      break;
    }
  }
  if (std::isnan(r.alpha1) || std::isnan(r.alpha2)) {
    r.i4.status = AssumptionStatus::fail;
    r.i4.witness = std::isnan(r.alpha1) ? "K1 power ladder exhausted" : "K2 power ladder exhausted";
    return r;
  }
  r.i4.margin = sup_power(k1, 2.0 * r.alpha1) + sup_power(k2, r.alpha2);
  r.i4.status = AssumptionStatus::pass_analytic;
  r.i4.witness = "alpha1=" + detail::fmt(r.alpha1) + " alpha2=" + detail::fmt(r.alpha2);
  r.i4.note = "kernels bounded on compacts; largest exponents on the ladder selected";
  return r;
}

// ---------------------------------------------------------------------------
// (I.2): small-time mass of K1^2 + K2 just below the diagonal.

inline constexpr double kSmallTimeEps[] = {1e-2, 1e-3, 1e-4, 1e-5, 1e-6};

inline AssumptionEntry check_small_time(const KernelSpec& k1, const KernelSpec& k2, double horizon, int grid = 50,
                                        const AssumptionEntry* i4 = nullptr) {
  if (horizon < 0.0) throw std::invalid_argument("horizon must be >= 0");
  AssumptionEntry e;
  e.id = "I.2";
  const auto ts = detail::time_grid(horizon, grid);
  std::vector<double> values;
  double smallest = kInf;
  for (double eps : kSmallTimeEps) {
    // Drop eps below the floating resolution at the horizon.
    if ((horizon + eps) - horizon <= 0.0) break;
    double sup = 0.0;
    for (double t : ts) {
      const double te = t + eps;
      sup = std::max(sup, integral(k1, 2.0, t, te, te) + integral(k2, 1.0, t, te, te));
    }
    values.push_back(sup);
    smallest = eps;
  }
  if (values.empty()) {
    e.status = AssumptionStatus::not_applicable;
    e.note = "no usable eps above machine resolution";
    return e;
  }
  const double last = values.back();
  bool monotone = true;
  for (std::size_t i = 1; i < values.size(); ++i) monotone = monotone && values[i] <= values[i - 1] * (1 + 1e-12);
  e.margin = 1.0 - last;
  e.witness = "eps=" + detail::fmt(smallest) + " value=" + detail::fmt(last);
  e.status = last < 1.0 ? AssumptionStatus::pass_numeric : AssumptionStatus::fail;
  e.note = "smallest eps used " + detail::fmt(smallest);
  if (!monotone) e.note += "; WARNING non-monotone eps sequence (inconclusive)";
  if (i4 && i4->passed()) e.note += "; implied by I.4";
  return e;
}

// ---------------------------------------------------------------------------
// (I.3): bounded initial volatility.

inline AssumptionEntry check_history(const HistorySegment& h, const Betas& b) {
  AssumptionEntry e;
  e.id = "I.3";
  if (h.empty()) {
    e.status = AssumptionStatus::not_applicable;
    e.note = "no initial segment (Delta = 0)";
    return e;
  }
  double sup = 0.0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h.r2()[j] < 0.0) {
      e.status = AssumptionStatus::fail;
      e.witness = "s=" + detail::fmt(h.times()[j]) + " r2=" + detail::fmt(h.r2()[j]);
      e.note = "negative r2 in the history";
      return e;
    }
    const double sig = h.sigma(j, b);
    if (!std::isfinite(sig)) {
      e.status = AssumptionStatus::fail;
      e.witness = "s=" + detail::fmt(h.times()[j]);
      e.note = "non-finite history volatility";
      return e;
    }
    if (std::abs(sig) >= sup) {
      sup = std::abs(sig);
      e.witness = "s=" + detail::fmt(h.times()[j]);
    }
  }
  e.margin = sup;
  e.status = AssumptionStatus::pass_numeric;
  return e;
}

// ---------------------------------------------------------------------------
// (I.5): Hoelder regularity of t -> K(., t).

// sqrt(\int (K1(s,t') - K1(s,t))^2 ds) + \int |K2(s,t') - K2(s,t)| ds over s in [-Delta, t].
inline double holder_lhs(const KernelSpec& k1, const KernelSpec& k2, double t, double t2,
                         double history_length = kInf) {
  if (t2 < t) throw std::invalid_argument("holder_lhs needs t <= t'");
  if (t2 == t) return 0.0;
  const double lo1 = detail::lower_limit(k1, history_length);
  double sq = 0.0;
  if (lo1 < t) {
    sq = integrate(
             [&](double s) {
               const double d = evaluate(k1, s, t2) - evaluate(k1, s, t);
               return d * d;
             },
             lo1, t, detail::diagonal_cuts(k1, t), QuadratureOptions{1e-14, 1e-9, 10})
             .value;
  }
  // Every registered family decays in t, so |K2(s,t') - K2(s,t)| = K2(s,t) - K2(s,t').
  const double l1 = integral(k2, 1.0, -history_length, t, t) - integral(k2, 1.0, -history_length, t, t2);
  return std::sqrt(std::max(sq, 0.0)) + std::abs(l1);
}

struct HolderResult {
  AssumptionEntry entry;
  double gamma = std::numeric_limits<double>::quiet_NaN();  // exponent used downstream
  double fitted_gamma = std::numeric_limits<double>::quiet_NaN();
  double fit_r2 = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> gaps;
  std::vector<double> lhs;  // sup over sampled t for each gap
  double fit_window = 0.0;  // largest gap entering the fit
};

inline HolderResult check_holder(const KernelSpec& k1, const KernelSpec& k2, double horizon,
                                 double history_length = kInf) {
  if (!(horizon > 0.0)) throw std::invalid_argument("Hoelder check needs T > 0");
  HolderResult r;
  r.entry.id = "I.5";
  for (double gap : logspace(1e-4, 1e-1, 13)) {
    if (gap > horizon) break;
    double sup = 0.0;
    for (double t : linspace(0.0, horizon - gap, 6)) sup = std::max(sup, holder_lhs(k1, k2, t, t + gap, history_length));
    r.gaps.push_back(gap);
    r.lhs.push_back(sup);
  }
  // Kernels with an inner scale (TSPL delta) bend the log-log curve once the gap
  // exceeds that scale; the exponent is a small-gap property, so large gaps are
  // dropped until the fit is straight or only one decade remains.
  std::size_t used = r.gaps.size();
  if (r.gaps.size() >= 3 && std::all_of(r.lhs.begin(), r.lhs.end(), [](double v) { return v > 0; })) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < r.gaps.size(); ++i) {
      lx.push_back(std::log(r.gaps[i]));
      ly.push_back(std::log(r.lhs[i]));
    }
    for (; used >= 5; --used) {
      const auto fit = fit_line(std::span(lx).first(used), std::span(ly).first(used));
      r.fitted_gamma = fit.slope;
      r.fit_r2 = fit.r2;
      if (fit.r2 >= 0.99) break;
    }
    used = std::max<std::size_t>(used, 5);
  }
  r.fit_window = used < r.gaps.size() ? r.gaps[used - 1] : (r.gaps.empty() ? 0.0 : r.gaps.back());
  const std::string fit_text = "fitted gamma=" + detail::fmt(r.fitted_gamma) + " R2=" + detail::fmt(r.fit_r2) +
                               " gaps<=" + detail::fmt(r.fit_window);
  if (k1.family() == KernelFamily::exponential && k2.family() == KernelFamily::exponential) {
    r.gamma = 0.5;
    r.entry.status = AssumptionStatus::pass_analytic;
    r.entry.witness = "exponential kernels are Lipschitz in t";
    r.entry.note = fit_text;
  } else if (r.fit_r2 >= 0.99 && r.fitted_gamma > 0.0) {
    r.gamma = r.fitted_gamma;
    r.entry.status = AssumptionStatus::pass_numeric;
    r.entry.witness = "gaps " + detail::fmt(r.gaps.front()) + ".." + detail::fmt(r.fit_window);
    r.entry.note = fit_text;
  } else {
    r.entry.status = AssumptionStatus::fail;
    r.entry.witness = fit_text;
    r.entry.note = "log-log fit not conclusive";
  }
  r.entry.margin = r.gamma;
  return r;
}

// ---------------------------------------------------------------------------
// (II.1)-(II.3): conditions for the positive lower bound.

struct PositivityScan {
  double min_margin = kInf;  // min over the grid of (dK2/dt - 2 h'(t) K2) / K2
  double s_at_min = 0.0;
  double t_at_min = 0.0;
};

// Grid scan of the (II.3) inequality, normalised by K2 > 0, with golden-section
// refinement in the lag around the grid minimum.
inline PositivityScan positivity_scan(const SeparableForm& sep, const KernelSpec& k2, double horizon,
                                      double history_length = kInf, int n_t = 101, int n_lag = 200) {
  PositivityScan out;
  auto value = [&](double u, double t) {
    const double s = t - u;
    const double k = evaluate(k2, s, t);
    if (!(k > 0.0)) return kInf;
    return (time_derivative(k2, s, t) - 2.0 * sep.dh(t) * k) / k;
  };
  const double support = std::min(history_length, k2.finite_support() ? k2.cutoff() : kInf);
  for (double t : detail::time_grid(horizon, n_t)) {
    const double max_lag = std::isfinite(support) ? t + support : 1e4;
    std::vector<double> lags{0.0};
    const double lo = std::min(1e-8, max_lag / 2);
    for (double u : logspace(lo, max_lag, n_lag - 1)) lags.push_back(u);
    std::size_t best = 0;
    double best_v = kInf;
    for (std::size_t i = 0; i < lags.size(); ++i) {
      const double v = value(lags[i], t);
      if (v < best_v) {
        best_v = v;
        best = i;
      }
    }
    double a = lags[best == 0 ? 0 : best - 1];
    double b = lags[std::min(best + 1, lags.size() - 1)];
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double best_u = lags[best];
    for (int it = 0; it < 60 && b - a > 1e-14 * (1 + b); ++it) {
      const double c = b - g * (b - a);
      const double d = a + g * (b - a);
      if (value(c, t) < value(d, t))
        b = d;
      else
        a = c;
    }
    for (double u : {a, b, 0.5 * (a + b)}) {
      const double v = value(u, t);
      if (v < best_v) {
        best_v = v;
        best_u = u;
      }
    }
    if (best_v < out.min_margin) {
      out.min_margin = best_v;
      out.t_at_min = t;
      out.s_at_min = t - best_u;
    }
  }
  return out;
}

struct PositivityResult {
  AssumptionEntry ii1;
  AssumptionEntry ii2;
  AssumptionEntry ii3;
  // 2 lambda1 / lambda2 (exp/exp) or 2 lambda delta / alpha (exp/tspl) when registered.
  std::optional<double> ratio;
};

// Closed-form (II.3) criteria; nullopt when the pair has no registered formula.
inline std::optional<double> positivity_ratio(const KernelSpec& k1, const KernelSpec& k2) {
  const auto sep = separable_decomposition(k1);
  if (!sep || sep->kind != SeparableForm::Kind::exponential) return std::nullopt;
  if (k2.family() == KernelFamily::exponential) return 2.0 * sep->rate / k2.lambda();
  if (k2.family() == KernelFamily::tspl) return 2.0 * sep->rate * k2.delta() / k2.alpha();
  return std::nullopt;
}

inline AssumptionEntry check_derivative_integrability(const KernelSpec& k1, const KernelSpec& k2, double horizon,
                                                      double history_length) {
  AssumptionEntry e;
  e.id = "II.1";
  if (horizon <= 0.0) {
    e.status = AssumptionStatus::pass_analytic;
    e.margin = 0.0;
    e.note = "empty horizon";
    return e;
  }
  auto inner1 = [&](double v) { return std::sqrt(derivative_integral(k1, 2.0, -history_length, v, v)); };
  auto inner2 = [&](double v) { return derivative_integral(k2, 1.0, -history_length, v, v); };
  QuadratureOptions outer;
  outer.rel_tol = 1e-8;
  outer.max_depth = 8;
  const double a = integrate([&](double u) { return std::pow(evaluate(k1, u, u), 2); }, 0.0, horizon, {}, outer).value;
  const double b = integrate(inner1, 0.0, horizon, {}, outer).value;
  const double c = integrate([&](double u) { return evaluate(k2, u, u); }, 0.0, horizon, {}, outer).value;
  const double d = integrate(inner2, 0.0, horizon, {}, outer).value;
  e.margin = a + b + c + d;
  e.witness = "terms " + detail::fmt(a) + ", " + detail::fmt(b) + ", " + detail::fmt(c) + ", " + detail::fmt(d);
  e.status = std::isfinite(e.margin) ? AssumptionStatus::pass_numeric : AssumptionStatus::fail;
  e.note = "analytic t-derivatives, checked on [0, T]";
  return e;
}

inline PositivityResult check_positivity_conditions(const KernelSpec& k1, const KernelSpec& k2, double horizon,
                                                    double history_length = kInf, const CheckOptions& opt = {}) {
  PositivityResult r;
  r.ii1 = check_derivative_integrability(k1, k2, horizon, history_length);

  r.ii2.id = "II.2";
  r.ii3.id = "II.3";
  const auto sep = separable_decomposition(k1);
  if (!sep) {
    r.ii2.status = AssumptionStatus::fail;
    r.ii2.witness = "K1 family " + std::string(to_string(k1.family())) + " is not separable";
    r.ii3.status = AssumptionStatus::not_applicable;
    r.ii3.note = "h undefined without II.2";
    return r;
  }
  double sup_dh = -kInf;
  for (double t : detail::time_grid(horizon, opt.t_grid)) sup_dh = std::max(sup_dh, sep->dh(t));
  r.ii2.margin = -sup_dh;
  r.ii2.status = sup_dh <= 0.0 ? AssumptionStatus::pass_analytic : AssumptionStatus::fail;
  r.ii2.witness = sep->kind == SeparableForm::Kind::exponential ? "h(t) = -lambda t" : "h(t) = -a log(t + Delta)";

  r.ratio = positivity_ratio(k1, k2);
  if (r.ratio) {
    const double margin = *r.ratio - 1.0;
    r.ii3.margin = margin;
    r.ii3.boundary = std::abs(margin) < opt.boundary_tol;
    r.ii3.status = (margin >= 0.0 || r.ii3.boundary) ? AssumptionStatus::pass_analytic : AssumptionStatus::fail;
    r.ii3.witness = (k2.family() == KernelFamily::exponential ? "2*lambda1/lambda2=" : "2*lambda*delta/alpha=") +
                    detail::fmt(*r.ratio);
    r.ii3.note = "closed-form criterion";
    return r;
  }
  const auto scan = positivity_scan(*sep, k2, horizon, history_length, opt.scan_t_grid, opt.scan_lag_grid);
  r.ii3.margin = scan.min_margin;
  r.ii3.boundary = std::abs(scan.min_margin) < opt.boundary_tol;
  r.ii3.status = (scan.min_margin >= 0.0 || r.ii3.boundary) ? AssumptionStatus::pass_numeric : AssumptionStatus::fail;
  r.ii3.witness = "s=" + detail::fmt(scan.s_at_min) + " t=" + detail::fmt(scan.t_at_min);
  r.ii3.note = "grid scan of (dK2/dt - 2h'K2)/K2";
  return r;
}

// ---------------------------------------------------------------------------
// (I.6) and (II.4): positivity of g2.

struct G2Result {
  AssumptionEntry i6;
  AssumptionEntry ii4;
  double inf_g2 = 0.0;
  double t_at_inf = 0.0;
  double g2_at_zero = 0.0;
};

// `k1` and `ii3_holds` enable the bound inf g2 >= exp(2 (h(T) - h(0))) g2(0).
inline G2Result check_g2_positive(const KernelSpec& k2, const HistorySegment& h, const Betas& b, double horizon,
                                  const KernelSpec* k1 = nullptr, bool ii3_holds = false, int grid = 1000) {
  G2Result r;
  r.i6.id = "I.6";
  r.ii4.id = "II.4";
  if (h.empty()) {
    r.i6.status = r.ii4.status = AssumptionStatus::fail;
    r.i6.margin = r.ii4.margin = 0.0;
    r.i6.witness = r.ii4.witness = "t=0";
    r.i6.note = "no history: g2 vanishes identically, I.6 cannot hold";
    r.ii4.note = "no history: g2(0) = 0";
    return r;
  }
  auto g2 = [&](double t) { return history_g2(k2, h, b, t); };
  r.g2_at_zero = g2(0.0);
  const auto ts = detail::time_grid(horizon, grid);
  std::size_t arg = 0;
  double inf = kInf;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double v = g2(ts[i]);
    if (v < inf) {
      inf = v;
      arg = i;
    }
  }
  // Golden-section refinement in the neighbouring cells.
  if (ts.size() > 1) {
    double a = ts[arg == 0 ? 0 : arg - 1];
    double c = ts[std::min(arg + 1, ts.size() - 1)];
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 40; ++it) {
      const double x1 = c - g * (c - a);
      const double x2 = a + g * (c - a);
      if (g2(x1) < g2(x2))
        c = x2;
      else
        a = x1;
    }
    const double v = g2(0.5 * (a + c));
    if (v < inf) {
      inf = v;
      r.t_at_inf = 0.5 * (a + c);
    } else {
      r.t_at_inf = ts[arg];
    }
  }
  r.inf_g2 = inf;

  r.ii4.margin = r.g2_at_zero;
  r.ii4.witness = "g2(0)=" + detail::fmt(r.g2_at_zero);
  r.ii4.status = r.g2_at_zero > 0.0 ? AssumptionStatus::pass_numeric : AssumptionStatus::fail;
  if (r.g2_at_zero <= 0.0) r.ii4.note = "history volatility vanishes on the support of K2(., 0)";

  std::optional<SeparableForm> sep;
  if (k1) sep = separable_decomposition(*k1);
  if (sep && ii3_holds && r.g2_at_zero > 0.0) {
    const double bound = std::exp(2.0 * (sep->h(horizon) - sep->h(0.0))) * r.g2_at_zero;
    r.i6.status = AssumptionStatus::pass_analytic;
    r.i6.margin = bound;
    r.i6.witness = "exp(2(h(T)-h(0))) g2(0)=" + detail::fmt(bound);
    r.i6.note = "implied by II.2-II.4; grid inf " + detail::fmt(inf);
    return r;
  }
  r.i6.margin = inf;
  r.i6.witness = "t=" + detail::fmt(r.t_at_inf);
  r.i6.status = inf > 0.0 ? AssumptionStatus::pass_numeric : AssumptionStatus::fail;
  if (inf <= 0.0) r.i6.note = "g2 vanishes: I.6 fails";
  return r;
}

// ---------------------------------------------------------------------------

struct AssumptionReport {
  std::vector<AssumptionEntry> entries;  // I.1 .. I.6, II.1 .. II.4
  Guarantee verdict = Guarantee::neither;
  double alpha1 = std::numeric_limits<double>::quiet_NaN();
  double alpha2 = std::numeric_limits<double>::quiet_NaN();
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double holder_bound = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> positivity_ratio;

  const AssumptionEntry& entry(std::string_view id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    throw std::out_of_range("no assumption entry " + std::string(id));
  }
};

// Upper end of the Hoelder exponents granted by the existence result.
inline double holder_exponent_bound(double gamma, double alpha1, double alpha2) {
  const double a1 = alpha1 / (alpha1 - 1.0);
  const double a2 = alpha2 / (alpha2 - 1.0);
  return std::min({gamma, 1.0 / (2.0 * a1), 1.0 / a2});
}

inline AssumptionReport full_report(const ModelParams& p, const HistorySegment& h, double horizon,
                                    const CheckOptions& opt = {}) {
  p.validate();
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  AssumptionReport rep;
  auto guard = [](const char* id, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& ex) {
      AssumptionEntry e;
      e.id = id;
      e.status = AssumptionStatus::fail;
      e.witness = "error";
      e.note = ex.what();
      return e;
    }
  };

  IntegrabilityResult integ;
  try {
    integ = check_integrability(p.k1, p.k2, horizon, opt.t_grid, p.history_length);
  } catch (const std::exception& ex) {
    integ.i1 = {"I.1", AssumptionStatus::fail, {}, "error", ex.what()};
    integ.i4 = {"I.4", AssumptionStatus::fail, {}, "error", ex.what()};
  }
  const auto i2 = guard("I.2", [&] { return check_small_time(p.k1, p.k2, horizon, 50, &integ.i4); });
  const auto i3 = guard("I.3", [&] { return check_history(h, p.betas); });
  HolderResult holder;
  try {
    holder = check_holder(p.k1, p.k2, horizon, p.history_length);
  } catch (const std::exception& ex) {
    holder.entry = {"I.5", AssumptionStatus::fail, {}, "error", ex.what()};
  }
  PositivityResult pos;
  try {
    pos = check_positivity_conditions(p.k1, p.k2, horizon, p.history_length, opt);
  } catch (const std::exception& ex) {
    pos.ii1 = {"II.1", AssumptionStatus::fail, {}, "error", ex.what()};
    pos.ii2 = {"II.2", AssumptionStatus::fail, {}, "error", ex.what()};
    pos.ii3 = {"II.3", AssumptionStatus::fail, {}, "error", ex.what()};
  }
  G2Result g2;
  try {
    g2 = check_g2_positive(p.k2, h, p.betas, horizon, &p.k1, pos.ii2.passed() && pos.ii3.passed(), opt.t_grid);
  } catch (const std::exception& ex) {
    g2.i6 = {"I.6", AssumptionStatus::fail, {}, "error", ex.what()};
    g2.ii4 = {"II.4", AssumptionStatus::fail, {}, "error", ex.what()};
  }

  rep.entries = {integ.i1, i2, i3, integ.i4, holder.entry, g2.i6, pos.ii1, pos.ii2, pos.ii3, g2.ii4};
  rep.alpha1 = integ.alpha1;
  rep.alpha2 = integ.alpha2;
  rep.gamma = holder.gamma;
  rep.positivity_ratio = pos.ratio;
  if (!std::isnan(rep.gamma) && !std::isnan(rep.alpha1) && !std::isnan(rep.alpha2))
    rep.holder_bound = holder_exponent_bound(rep.gamma, rep.alpha1, rep.alpha2);

  auto ok = [&](std::string_view id) {
    const auto& e = rep.entry(id);
    return e.passed() || (id == "I.3" && e.status == AssumptionStatus::not_applicable);
  };
  const bool base = ok("I.1") && ok("I.2") && ok("I.3") && ok("I.4") && ok("I.5");
  const bool existence = base && ok("I.6");
  const bool positivity = base && ok("II.1") && ok("II.2") && ok("II.3") && ok("II.4");
  rep.verdict = positivity ? Guarantee::existence_and_positivity
                           : (existence ? Guarantee::existence : Guarantee::neither);
  return rep;
}

inline std::string render_text(const AssumptionReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "id" << std::setw(16) << "status" << std::setw(24) << "margin"
     << "witness / note\n";
  for (const auto& e : rep.entries) {
    os << std::setw(6) << e.id << std::setw(16) << to_string(e.status) << std::setw(24)
       << (std::isnan(e.margin) ? std::string("-") : format_double(e.margin)) << e.witness;
    if (e.boundary) os << " [boundary]";
    if (!e.note.empty()) os << " | " << e.note;
    os << "\n";
  }
  os << "verdict: " << to_string(rep.verdict) << "\n";
  os << "exponents: alpha1=" << format_double(rep.alpha1) << " alpha2=" << format_double(rep.alpha2)
     << " gamma=" << format_double(rep.gamma) << " holder_exponent_bound=" << format_double(rep.holder_bound)
     << "\n";
  return os.str();
}

inline std::string render_key_values(const AssumptionReport& rep) {
  std::ostringstream os;
  for (const auto& e : rep.entries) {
    os << e.id << ".status=" << to_string(e.status) << "\n";
    os << e.id << ".margin=" << format_double(e.margin) << "\n";
    os << e.id << ".boundary=" << (e.boundary ? "true" : "false") << "\n";
    os << e.id << ".witness=" << e.witness << "\n";
  }
  os << "verdict=" << to_string(rep.verdict) << "\n";
  os << "alpha1=" << format_double(rep.alpha1) << "\n";
  os << "alpha2=" << format_double(rep.alpha2) << "\n";
  os << "gamma=" << format_double(rep.gamma) << "\n";
  os << "holder_exponent_bound=" << format_double(rep.holder_bound) << "\n";
  if (rep.positivity_ratio) os << "positivity_ratio=" << format_double(*rep.positivity_ratio) << "\n";
  return os.str();
}

}  // namespace pdv
