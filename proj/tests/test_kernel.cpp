#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pdv/exp_sum.hpp"
#include "pdv/kernel.hpp"
#include "support/kernel_invariants.hpp"

using namespace pdv;

TEST(KernelEvaluate, DiagonalValues) {
  EXPECT_DOUBLE_EQ(evaluate(KernelSpec::exponential(1.0), 0.5, 0.5), 1.0);
  // alpha=2, delta=0.1 normalizes to Z=0.1 on infinite support, so K(t,t) = 0.1 / 0.1^2.
  const auto tspl = KernelSpec::tspl(2.0, 0.1);
  EXPECT_NEAR(tspl.z(), 0.1, 1e-15);
  EXPECT_NEAR(evaluate(tspl, 0.3, 0.3), 10.0, 1e-12);
  EXPECT_DOUBLE_EQ(evaluate(KernelSpec::shifted_power(1.0, 1.0), 0.0, 1.0), 0.5);
}

TEST(KernelEvaluate, ConvexComboIsWeightedSum) {
  const auto k = KernelSpec::convex_combo(0.25, 2.0, 8.0);
  const double u = 0.1;
  EXPECT_NEAR(evaluate(k, -u, 0.0), 0.25 * 2 * std::exp(-0.2) + 0.75 * 8 * std::exp(-0.8), 1e-14);
}

TEST(KernelEvaluate, RejectsBadArguments) {
  const auto k = KernelSpec::exponential(1.0);
  EXPECT_THROW(evaluate(k, 1.0, 0.5), std::domain_error);
  EXPECT_THROW(evaluate(k, std::nan(""), 0.5), std::invalid_argument);
  EXPECT_THROW(evaluate(k, 0.0, kInf), std::invalid_argument);
}

TEST(KernelEvaluate, ShiftedPowerVanishesBeforeCutoff) {
  const auto k = KernelSpec::shifted_power(2.0, 1.0);
  EXPECT_EQ(evaluate(k, -1.5, 0.0), 0.0);
  EXPECT_EQ(time_derivative(k, -1.5, 0.0), 0.0);
}

TEST(KernelSpecConstruction, ValidatesParameters) {
  EXPECT_THROW(KernelSpec::exponential(0.0), std::invalid_argument);
  EXPECT_THROW(KernelSpec::tspl(1.0, 0.1), std::invalid_argument);  // alpha <= 1 needs finite support
  EXPECT_NO_THROW(KernelSpec::tspl(0.5, 0.1, 1.0));
  EXPECT_THROW(KernelSpec::convex_combo(1.5, 1.0, 2.0), std::invalid_argument);
  EXPECT_THROW(KernelSpec::shifted_power(1.0, kInf), std::invalid_argument);
  EXPECT_THROW(KernelSpec::exponential(1.0).alpha(), std::logic_error);
}

TEST(NormalizationConstant, ClosedForms) {
  EXPECT_NEAR(normalization_constant(2.0, 0.1, kInf), 0.1, 1e-15);
  EXPECT_NEAR(normalization_constant(2.0, 1.0, kInf), 1.0, 1e-15);
  // Antiderivative 2 sqrt(u + delta) on [0, 1].
  const double expected = 1.0 / (2.0 * (std::sqrt(1.1) - std::sqrt(0.1)));
  EXPECT_NEAR(normalization_constant(0.5, 0.1, 1.0), expected, 1e-13);
  EXPECT_NEAR(expected, 0.682518, 1e-6);
  // alpha = 1 with finite support: 1 / log((cutoff + delta) / delta).
  EXPECT_NEAR(normalization_constant(1.0, 0.5, 2.0), 1.0 / std::log(5.0), 1e-14);
  EXPECT_THROW(normalization_constant(0.9, 0.1, kInf), std::invalid_argument);
}

TEST(TimeDerivative, AnalyticExamples) {
  EXPECT_NEAR(time_derivative(KernelSpec::exponential(2.0), 0.4, 0.4), -4.0, 1e-14);
  EXPECT_NEAR(time_derivative(KernelSpec::tspl(2.0, 1.0), 0.0, 0.0), -2.0, 1e-14);
  EXPECT_NEAR(time_derivative(KernelSpec::shifted_power(1.0, 1.0), 0.0, 0.0), -1.0, 1e-14);
}

TEST(Separable, ExponentialFactorization) {
  const auto k = KernelSpec::exponential(3.0);
  const auto sep = separable_decomposition(k);
  ASSERT_TRUE(sep.has_value());
  EXPECT_NEAR(sep->f(0.2), 3.0 * std::exp(0.6), 1e-13);
  EXPECT_NEAR(sep->h(0.7), -2.1, 1e-15);
  EXPECT_NEAR(sep->f(0.2) * std::exp(sep->h(0.7)), 3.0 * std::exp(-1.5), 1e-13);
}

TEST(Separable, ShiftedPowerAndNonSeparable) {
  const auto sep = separable_decomposition(KernelSpec::shifted_power(2.0, 5.0));
  ASSERT_TRUE(sep.has_value());
  EXPECT_NEAR(sep->h(1.0), -2.0 * std::log(6.0), 1e-14);
  EXPECT_FALSE(separable_decomposition(KernelSpec::convex_combo(0.5, 1.0, 2.0)).has_value());
  EXPECT_FALSE(separable_decomposition(KernelSpec::tspl(1.5, 0.1)).has_value());
  EXPECT_TRUE(separable_decomposition(KernelSpec::convex_combo(1.0, 1.0, 2.0)).has_value());
}

TEST(Separable, GridConsistencyAndMonotoneH) {
  const KernelSpec specs[] = {KernelSpec::exponential(2.5), KernelSpec::exponential(0.7, 3.0),
                              KernelSpec::shifted_power(1.7, 2.0), KernelSpec::shifted_power(0.4, 0.5)};
  for (const auto& k : specs) {
    const auto sep = separable_decomposition(k);
    ASSERT_TRUE(sep.has_value());
    const double lo = k.finite_support() ? -k.cutoff() : -3.0;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double s = lo + (2.0 - lo) * i / 99.0;
      for (int j = 0; j < 100; ++j) {
        const double t = std::max(s, 2.0 * j / 99.0);
        worst = std::max(worst, std::abs(evaluate(k, s, t) - sep->f(s) * std::exp(sep->h(t))));
      }
    }
    EXPECT_LE(worst, 1e-12);
    for (int j = 0; j < 100; ++j) EXPECT_LE(sep->dh(0.02 * j), 0.0);
  }
}

TEST(KernelIntegral, ClosedFormExamples) {
  EXPECT_NEAR(integral(KernelSpec::exponential(1.0), 2.0, -kInf, 0.7, 0.7), 0.5, 1e-15);
  EXPECT_NEAR(integral(KernelSpec::tspl(2.0, 1.0), 1.0, -kInf, 0.0, 0.0), 1.0, 1e-15);
  EXPECT_EQ(integral(KernelSpec::tspl(1.3, 0.05), 1.0, 0.2, 0.2, 0.5), 0.0);
  EXPECT_THROW(integral(KernelSpec::exponential(1.0), 1.0, 0.5, 0.2, 1.0), std::invalid_argument);
  EXPECT_THROW(integral(KernelSpec::exponential(1.0), 1.0, 0.0, 1.2, 1.0), std::invalid_argument);
}

TEST(KernelIntegral, DivergentTailIsInfinite) {
  // pow * alpha = 0.9 < 1 over an infinite range.
  const auto k = KernelSpec::tspl(1.8, 0.1);
  EXPECT_TRUE(std::isinf(integral(k, 0.5, -kInf, 0.0, 0.0)));
}

TEST(KernelIntegral, ComboPowerTwoMatchesQuadrature) {
  const auto k = KernelSpec::convex_combo(0.3, 1.5, 40.0);
  const double cf = integral(k, 2.0, -kInf, 0.0, 0.0);
  const double qd = integral_quadrature(k, 2.0, -kInf, 0.0, 0.0).value;
  EXPECT_NEAR(cf / qd, 1.0, 1e-10);
}

TEST(KernelInvariants, HoldOnRandomDraws) {
  const auto st = pdv::testing::check_kernel_invariants(200, 7);
  EXPECT_LE(st.worst_normalization, 1e-8);
  EXPECT_LE(st.worst_derivative, 1e-5);
  EXPECT_LE(st.worst_quadrature, 1e-9);
  EXPECT_EQ(st.monotonicity_violations, 0);
}

TEST(KernelSerialization, RoundTripsAndOmitsZ) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 40; ++i) {
    const auto k = pdv::testing::random_kernel(rng, i);
    std::map<std::string, std::string> kv;
    for (const auto& [key, value] : to_key_values(k)) kv[key] = value;
    EXPECT_EQ(kv.count("z"), 0u);
    EXPECT_EQ(kernel_from_key_values(kv), k);
  }
  EXPECT_EQ(to_text(KernelSpec::tspl(1.2, 0.01)), "family=tspl\nalpha=1.2\ndelta=0.01\ncutoff=inf\n");
}

TEST(KernelSerialization, RejectsIncompleteBlocks) {
  EXPECT_THROW(kernel_from_key_values({{"family", "tspl"}, {"alpha", "1.2"}}), std::invalid_argument);
  EXPECT_THROW(kernel_from_key_values({{"family", "gauss"}}), std::invalid_argument);
}

TEST(ExponentialSum, ExactFactorsReproduceKernel) {
  const auto k = KernelSpec::convex_combo(0.4, 3.0, 30.0);
  const auto f = exponential_factors(k);
  ASSERT_TRUE(f.has_value());
  for (double u : {0.0, 0.01, 0.3, 2.0}) EXPECT_NEAR((*f)(u), evaluate_lag(k, u), 1e-13);
  EXPECT_FALSE(exponential_factors(KernelSpec::tspl(1.5, 0.1)).has_value());
}

TEST(ExponentialSum, TsplApproximationImprovesWithTerms) {
  const auto k = KernelSpec::tspl(1.5, 0.05);
  const auto two = approximate_by_exponentials(k, 2);
  const auto eight = approximate_by_exponentials(k, 8);
  EXPECT_LT(eight.fit_residual, two.fit_residual);
  EXPECT_LT(eight.fit_residual, 0.1);
  for (double c : eight.coeffs) EXPECT_GT(c, 0.0);
  EXPECT_THROW(approximate_by_exponentials(k, 9), std::invalid_argument);
}

TEST(Kernel, DerivativeIntegralMatchesQuadrature) {
  const std::vector<KernelSpec> kernels{KernelSpec::exponential(7.0), KernelSpec::tspl(1.3, 0.02),
                                        KernelSpec::tspl(0.7, 0.1, 3.0), KernelSpec::convex_combo(0.4, 2.0, 30.0),
                                        KernelSpec::shifted_power(1.5, 2.0)};
  for (const auto& k : kernels) {
    for (double p : {1.0, 2.0}) {
      const double t = 0.4;
      const double lo = -1.5;
      const double closed = derivative_integral(k, p, lo, t, t);
      const double quad =
          integrate([&](double s) { return std::pow(std::abs(time_derivative(k, s, t)), p); }, lo, t,
                    {t - 1e-3, t - 1e-2, t - 1e-1})
              .value;
      EXPECT_NEAR(closed, quad, 1e-8 * std::max(1.0, quad)) << to_text(k) << " p=" << p;
    }
  }
}
