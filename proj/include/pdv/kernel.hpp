#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdv/numeric_text.hpp"
#include "pdv/quadrature.hpp"

namespace pdv {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kBusinessDaysPerYear = 252.0;

// Kernel families available for K1 (returns) and K2 (squared returns).
enum class KernelFamily { exponential, tspl, convex_combo_exp, shifted_power };

inline std::string_view to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::exponential: return "exp";
    case KernelFamily::tspl: return "tspl";
    case KernelFamily::convex_combo_exp: return "combo";
    case KernelFamily::shifted_power: return "shifted_power";
  }
  return "?";
}

inline KernelFamily parse_family(std::string_view s) {
  if (s == "exp" || s == "exponential") return KernelFamily::exponential;
  if (s == "tspl") return KernelFamily::tspl;
  if (s == "combo" || s == "convex_combo_exp") return KernelFamily::convex_combo_exp;
  if (s == "shifted_power") return KernelFamily::shifted_power;
  throw std::invalid_argument("unknown kernel family '" + std::string(s) + "'");
}

namespace detail {

// \int_{x_lo}^{x_hi} x^{-q} dx for 0 < x_lo <= x_hi (x_hi may be +inf).
inline double power_integral(double x_lo, double x_hi, double q) {
  if (x_hi <= x_lo) return 0.0;
  if (std::isinf(x_hi)) return q > 1.0 ? std::pow(x_lo, 1.0 - q) / (q - 1.0) : kInf;
  const double log_ratio = std::log(x_hi / x_lo);
  const double e = 1.0 - q;
  if (e == 0.0) return log_ratio;
  return std::pow(x_lo, e) * std::expm1(e * log_ratio) / e;
}

// \int_{u_lo}^{u_hi} e^{-c u} du for c > 0 and u_lo <= u_hi (u_hi may be +inf).
inline double exp_integral(double c, double u_lo, double u_hi) {
  if (u_hi <= u_lo) return 0.0;
  const double head = std::exp(-c * u_lo) / c;
  if (std::isinf(u_hi)) return head;
  return -head * std::expm1(-c * (u_hi - u_lo));
}

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be finite and > 0");
}

}  // namespace detail

// Z such that \int_0^cutoff Z/(u+delta)^alpha du = 1.
inline double normalization_constant(double alpha, double delta, double cutoff) {
  detail::require_positive(alpha, "alpha");
  detail::require_positive(delta, "delta");
  if (!(cutoff > 0.0)) throw std::invalid_argument("TSPL support cutoff must be > 0");
  if (std::isinf(cutoff)) {
    if (alpha <= 1.0) throw std::invalid_argument("TSPL with infinite support requires alpha > 1");
    return (alpha - 1.0) * std::pow(delta, alpha - 1.0);
  }
  return 1.0 / detail::power_integral(delta, cutoff + delta, alpha);
}

// Immutable parametric kernel K(s,t) on {s <= t}. The support cutoff is the
// history lower limit: K(s,t) = 0 for s < -cutoff.
class KernelSpec {
 public:
  static KernelSpec exponential(double lambda, double cutoff = kInf) {
    detail::require_positive(lambda, "lambda");
    check_cutoff(cutoff);
    return KernelSpec(KernelFamily::exponential, {lambda, 0.0, 0.0}, 0.0, cutoff);
  }

  static KernelSpec tspl(double alpha, double delta, double cutoff = kInf) {
    const double z = normalization_constant(alpha, delta, cutoff);
    return KernelSpec(KernelFamily::tspl, {alpha, delta, 0.0}, z, cutoff);
  }

  static KernelSpec convex_combo(double theta, double lambda_a, double lambda_b, double cutoff = kInf) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [0,1]");
    detail::require_positive(lambda_a, "lambda_a");
    detail::require_positive(lambda_b, "lambda_b");
    check_cutoff(cutoff);
    return KernelSpec(KernelFamily::convex_combo_exp, {theta, lambda_a, lambda_b}, 0.0, cutoff);
  }

  static KernelSpec shifted_power(double a, double cutoff) {
    detail::require_positive(a, "a");
    if (!(cutoff > 0.0) || std::isinf(cutoff))
      throw std::invalid_argument("shifted power kernel needs a finite cutoff > 0");
    return KernelSpec(KernelFamily::shifted_power, {a, 0.0, 0.0}, 0.0, cutoff);
  }

  KernelFamily family() const noexcept { return family_; }
  double cutoff() const noexcept { return cutoff_; }
  bool finite_support() const noexcept { return std::isfinite(cutoff_); }

  double lambda() const { return get(KernelFamily::exponential, 0); }
  double alpha() const { return get(KernelFamily::tspl, 0); }
  double delta() const { return get(KernelFamily::tspl, 1); }
  double z() const {
    get(KernelFamily::tspl, 0);
    return z_;
  }
  double theta() const { return get(KernelFamily::convex_combo_exp, 0); }
  double lambda_a() const { return get(KernelFamily::convex_combo_exp, 1); }
  double lambda_b() const { return get(KernelFamily::convex_combo_exp, 2); }
  double exponent() const { return get(KernelFamily::shifted_power, 0); }

  // True when K(s,t) depends on t - s only.
  bool is_convolution() const noexcept { return family_ != KernelFamily::shifted_power; }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;

 private:
  KernelSpec(KernelFamily f, std::array<double, 3> p, double z, double cutoff)
      : family_(f), p_(p), z_(z), cutoff_(cutoff) {}

  static void check_cutoff(double cutoff) {
    if (!(cutoff > 0.0)) throw std::invalid_argument("support cutoff must be > 0");
  }

  double get(KernelFamily f, int i) const {
    if (family_ != f)
      throw std::logic_error("parameter not defined for kernel family " + std::string(to_string(family_)));
    return p_[static_cast<std::size_t>(i)];
  }

  KernelFamily family_;
  std::array<double, 3> p_;
  double z_;
  double cutoff_;
};

namespace detail {

inline void check_args(double s, double t) {
  if (!std::isfinite(s) || !std::isfinite(t)) throw std::invalid_argument("kernel arguments must be finite");
  if (s > t) throw std::domain_error("kernel evaluated with s > t");
}

inline bool outside_support(const KernelSpec& k, double s) { return k.finite_support() && s < -k.cutoff(); }

}  // namespace detail

inline double evaluate(const KernelSpec& k, double s, double t) {
  detail::check_args(s, t);
  if (detail::outside_support(k, s)) return 0.0;
  const double u = t - s;
  switch (k.family()) {
    case KernelFamily::exponential: return k.lambda() * std::exp(-k.lambda() * u);
    case KernelFamily::tspl: return k.z() * std::pow(u + k.delta(), -k.alpha());
    case KernelFamily::convex_combo_exp:
      return k.theta() * k.lambda_a() * std::exp(-k.lambda_a() * u) +
             (1.0 - k.theta()) * k.lambda_b() * std::exp(-k.lambda_b() * u);
    case KernelFamily::shifted_power: {
      const double den = t + k.cutoff();
      if (den == 0.0) return 1.0;
      return std::pow((s + k.cutoff()) / den, k.exponent());
    }
  }
  return 0.0;
}

// Convolution kernels as a function of the lag u = t - s >= 0 (zero beyond the cutoff).
inline double evaluate_lag(const KernelSpec& k, double u) {
  if (!k.is_convolution()) throw std::invalid_argument("shifted power kernel is not a function of the lag");
  return evaluate(k, -u, 0.0);
}

// Analytic \partial_t K(s,t).
inline double time_derivative(const KernelSpec& k, double s, double t) {
  detail::check_args(s, t);
  if (detail::outside_support(k, s)) return 0.0;
  const double u = t - s;
  switch (k.family()) {
    case KernelFamily::exponential: return -k.lambda() * evaluate(k, s, t);
    case KernelFamily::tspl: return -k.alpha() * evaluate(k, s, t) / (u + k.delta());
    case KernelFamily::convex_combo_exp: {
      const double la = k.lambda_a();
      const double lb = k.lambda_b();
      return -k.theta() * la * la * std::exp(-la * u) - (1.0 - k.theta()) * lb * lb * std::exp(-lb * u);
    }
    case KernelFamily::shifted_power:
      return -k.exponent() * evaluate(k, s, t) / (t + k.cutoff());
  }
  return 0.0;
}

// K(s,t) = f(s) e^{h(t)} with h non-increasing.
struct SeparableForm {
  enum class Kind { exponential, shifted_power };
  Kind kind;
  double rate;    // lambda, or the shifted power exponent a
  double cutoff;  // support cutoff (history length)

  double f(double s) const {
    if (std::isfinite(cutoff) && s < -cutoff) return 0.0;
    return kind == Kind::exponential ? rate * std::exp(rate * s) : std::pow(s + cutoff, rate);
  }
  double h(double t) const { return kind == Kind::exponential ? -rate * t : -rate * std::log(t + cutoff); }
  double dh(double t) const { return kind == Kind::exponential ? -rate : -rate / (t + cutoff); }
};

inline std::optional<SeparableForm> separable_decomposition(const KernelSpec& k) {
  switch (k.family()) {
    case KernelFamily::exponential:
      return SeparableForm{SeparableForm::Kind::exponential, k.lambda(), k.cutoff()};
    case KernelFamily::shifted_power:
      return SeparableForm{SeparableForm::Kind::shifted_power, k.exponent(), k.cutoff()};
    case KernelFamily::convex_combo_exp:
      // Degenerate combinations collapse to a single exponential.
      if (k.theta() == 1.0 || k.lambda_a() == k.lambda_b())
        return SeparableForm{SeparableForm::Kind::exponential, k.lambda_a(), k.cutoff()};
      if (k.theta() == 0.0) return SeparableForm{SeparableForm::Kind::exponential, k.lambda_b(), k.cutoff()};
      return std::nullopt;
    case KernelFamily::tspl: return std::nullopt;
  }
  return std::nullopt;
}

// Numerical route for \int_lower^upper K(s,t)^power ds (lower may be -inf).
inline QuadratureResult integral_quadrature(const KernelSpec& k, double power, double lower, double upper,
                                            double t, const QuadratureOptions& opt = {}) {
  if (!(power > 0.0)) throw std::invalid_argument("kernel power must be > 0");
  if (lower > upper || upper > t) throw std::invalid_argument("integral bounds must satisfy lower <= upper <= t");
  if (k.finite_support()) lower = std::max(lower, -k.cutoff());
  if (!(lower < upper)) return {};
  // TSPL is steep near the diagonal when delta is small: split geometrically towards s = t.
  std::vector<double> cuts;
  const double scale = k.family() == KernelFamily::tspl ? k.delta() : 1e-3;
  for (double m = 1.0; m <= 1e4; m *= 10.0) cuts.push_back(t - m * scale);
  return integrate([&](double s) { return std::pow(evaluate(k, s, t), power); }, lower, upper, cuts, opt);
}

// \int_lower^upper K(s,t)^power ds, closed form where the family admits one.
inline double integral(const KernelSpec& k, double power, double lower, double upper, double t) {
  if (!(power > 0.0)) throw std::invalid_argument("kernel power must be > 0");
  if (std::isnan(lower) || !std::isfinite(upper) || !std::isfinite(t))
    throw std::invalid_argument("integral bounds must be finite (lower may be -inf)");
  if (lower > upper || upper > t) throw std::invalid_argument("integral bounds must satisfy lower <= upper <= t");
  if (k.finite_support()) lower = std::max(lower, -k.cutoff());
  if (!(lower < upper)) return 0.0;
  const double u_lo = t - upper;
  const double u_hi = t - lower;
  switch (k.family()) {
    case KernelFamily::exponential: {
      const double l = k.lambda();
      return std::pow(l, power) * detail::exp_integral(power * l, u_lo, u_hi);
    }
    case KernelFamily::tspl:
      return std::pow(k.z(), power) * detail::power_integral(u_lo + k.delta(), u_hi + k.delta(), power * k.alpha());
    case KernelFamily::convex_combo_exp: {
      const double wa = k.theta() * k.lambda_a();
      const double wb = (1.0 - k.theta()) * k.lambda_b();
      const double la = k.lambda_a();
      const double lb = k.lambda_b();
      if (power == 1.0) return wa * detail::exp_integral(la, u_lo, u_hi) + wb * detail::exp_integral(lb, u_lo, u_hi);
      if (power == 2.0) {
        return wa * wa * detail::exp_integral(2 * la, u_lo, u_hi) +
               2.0 * wa * wb * detail::exp_integral(la + lb, u_lo, u_hi) +
               wb * wb * detail::exp_integral(2 * lb, u_lo, u_hi);
      }
      return integral_quadrature(k, power, lower, upper, t).value;
    }
    case KernelFamily::shifted_power: {
      const double ap = k.exponent() * power;
      const double d = k.cutoff();
      const double den = t + d;
      if (den == 0.0) return 0.0;
      // ((upper+d)^{ap+1} - (lower+d)^{ap+1}) / ((ap+1) den^{ap}), written to avoid overflow.
      const double hi = (upper + d) / den;
      const double lo = (lower + d) / den;
      return den * (std::pow(hi, ap + 1.0) - std::pow(lo, ap + 1.0)) / (ap + 1.0);
    }
  }
  return 0.0;
}

// \int_lower^upper |\partial_t K(s,t)|^power ds. Except for the combination kernel,
// |\partial_t K| is a multiple of a power of K and reuses the closed forms above.
inline double derivative_integral(const KernelSpec& k, double power, double lower, double upper, double t) {
  if (!(power > 0.0)) throw std::invalid_argument("derivative power must be > 0");
  switch (k.family()) {
    case KernelFamily::exponential: return std::pow(k.lambda(), power) * integral(k, power, lower, upper, t);
    case KernelFamily::tspl: {
      const double a = k.alpha();
      const double c = a * std::pow(k.z(), -1.0 / a);
      return std::pow(c, power) * integral(k, power * (a + 1.0) / a, lower, upper, t);
    }
    case KernelFamily::shifted_power: {
      const double den = t + k.cutoff();
      if (den == 0.0) return 0.0;
      return std::pow(k.exponent() / den, power) * integral(k, power, lower, upper, t);
    }
    case KernelFamily::convex_combo_exp: {
      if (k.finite_support()) lower = std::max(lower, -k.cutoff());
      if (!(lower < upper)) return 0.0;
      std::vector<double> cuts;
      for (double m = 1.0; m <= 1e4; m *= 10.0) cuts.push_back(t - m * 1e-3);
      return integrate([&](double s) { return std::pow(std::abs(time_derivative(k, s, t)), power); }, lower, upper,
                       cuts)
          .value;
    }
  }
  return 0.0;
}

// Flat key-value form: family=tspl, alpha=1.2, delta=0.01, cutoff=inf. Z is never stored.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const KernelSpec& k) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("family", std::string(to_string(k.family())));
  switch (k.family()) {
    case KernelFamily::exponential: kv.emplace_back("lambda", format_double(k.lambda())); break;
    case KernelFamily::tspl:
      kv.emplace_back("alpha", format_double(k.alpha()));
      kv.emplace_back("delta", format_double(k.delta()));
      break;
    case KernelFamily::convex_combo_exp:
      kv.emplace_back("theta", format_double(k.theta()));
      kv.emplace_back("lambda_a", format_double(k.lambda_a()));
      kv.emplace_back("lambda_b", format_double(k.lambda_b()));
      break;
    case KernelFamily::shifted_power: kv.emplace_back("a", format_double(k.exponent())); break;
  }
  kv.emplace_back("cutoff", format_double(k.cutoff()));
  return kv;
}

inline KernelSpec kernel_from_key_values(const std::map<std::string, std::string>& kv) {
  auto need = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("kernel block is missing '") + key + "'");
    return parse_double(it->second, key);
  };
  auto it = kv.find("family");
  if (it == kv.end()) throw std::invalid_argument("kernel block is missing 'family'");
  const KernelFamily family = parse_family(it->second);
  const double cutoff = kv.count("cutoff") ? need("cutoff") : kInf;
  switch (family) {
    case KernelFamily::exponential: return KernelSpec::exponential(need("lambda"), cutoff);
    case KernelFamily::tspl: return KernelSpec::tspl(need("alpha"), need("delta"), cutoff);
    case KernelFamily::convex_combo_exp:
      return KernelSpec::convex_combo(need("theta"), need("lambda_a"), need("lambda_b"), cutoff);
    case KernelFamily::shifted_power: return KernelSpec::shifted_power(need("a"), cutoff);
  }
  throw std::invalid_argument("unreachable kernel family");
}

inline std::string to_text(const KernelSpec& k) {
  std::string out;
  for (const auto& [key, value] : to_key_values(k)) out += key + "=" + value + "\n";
  return out;
}

}  // namespace pdv
