#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "pdv/assumptions.hpp"

using namespace pdv;

namespace {

ModelParams make_params(KernelSpec k1, KernelSpec k2, Betas b = {0.02, -0.05, 0.6}) {
  ModelParams p{b, std::move(k1), std::move(k2)};
  return p;
}

// Closed-form left side of the Hoelder condition for two exponential kernels
// with infinite history; independent of t.
double exp_holder_lhs(double l1, double l2, double gap) {
  return std::sqrt(l1 / 2.0) * (1.0 - std::exp(-l1 * gap)) + (1.0 - std::exp(-l2 * gap));
}

}  // namespace

TEST(Integrability, ExponentialPairMatchesClosedForm) {
  const auto r = check_integrability(KernelSpec::exponential(10), KernelSpec::exponential(25), 1.0);
  EXPECT_EQ(r.i1.status, AssumptionStatus::pass_analytic);
  // lambda1/2 from K1^2 plus unit mass of K2 (t-independent for infinite history).
  EXPECT_NEAR(r.i1.margin, 10.0 / 2.0 + 1.0, 1e-12);
  EXPECT_EQ(r.i4.status, AssumptionStatus::pass_analytic);
  EXPECT_EQ(r.alpha1, 16.0);
  EXPECT_EQ(r.alpha2, 16.0);
}

TEST(Integrability, TsplKernelPasses) {
  const auto r = check_integrability(KernelSpec::exponential(10), KernelSpec::tspl(1.2, 0.01), 1.0);
  EXPECT_TRUE(r.i1.passed());
  EXPECT_TRUE(std::isfinite(r.i1.margin));
  EXPECT_TRUE(r.i4.passed());
}

TEST(Integrability, ZeroHorizonUsesSinglePoint) {
  const auto r = check_integrability(KernelSpec::exponential(4), KernelSpec::exponential(3), 0.0);
  EXPECT_EQ(r.i1.witness, "t=0");
  EXPECT_NEAR(r.i1.margin, 2.0 + 1.0, 1e-12);
}

TEST(Integrability, HeavyTailWithCutoffPasses) {
  // alpha < 1 is only admissible with a finite cutoff, which keeps the mass finite.
  const auto r = check_integrability(KernelSpec::exponential(1), KernelSpec::tspl(0.8, 0.1, 5.0), 1.0, 100);
  EXPECT_TRUE(r.i1.passed());
  // K2 mass over lags [0, T + cutoff] with Z normalised on [0, cutoff]; maximal at t = T.
  const double a = 0.8, d = 0.1, c = 5.0;
  const double z = (1 - a) / (std::pow(c + d, 1 - a) - std::pow(d, 1 - a));
  const double mass = z * (std::pow(1.0 + c + d, 1 - a) - std::pow(d, 1 - a)) / (1 - a);
  EXPECT_NEAR(r.i1.margin, 0.5 + mass, 1e-12);
  EXPECT_EQ(r.i1.witness, "t=1");
}

TEST(SmallTime, ExponentialValueMatchesClosedForm) {
  const double lam = 10.0;
  const auto e = check_small_time(KernelSpec::exponential(lam), KernelSpec::exponential(lam), 1.0);
  EXPECT_EQ(e.status, AssumptionStatus::pass_numeric);
  const double eps = 1e-6;
  const double expected = lam * (1 - std::exp(-2 * lam * eps)) / 2 + (1 - std::exp(-lam * eps));
  EXPECT_NEAR(1.0 - e.margin, expected, 1e-12);
  EXPECT_NE(e.witness.find("eps=1e-06"), std::string::npos);
}

TEST(SmallTime, TsplPasses) {
  const auto e = check_small_time(KernelSpec::exponential(10), KernelSpec::tspl(1.2, 0.01), 1.0);
  EXPECT_TRUE(e.passed());
  EXPECT_LT(1.0 - e.margin, 1e-2);
}

TEST(SmallTime, ImpliedByI4) {
  for (double a : {1.1, 1.5, 2.5}) {
    const auto k1 = KernelSpec::exponential(3.0);
    const auto k2 = KernelSpec::tspl(a, 0.05);
    const auto r = check_integrability(k1, k2, 1.0, 200);
    const auto e = check_small_time(k1, k2, 1.0, 50, &r.i4);
    ASSERT_TRUE(r.i4.passed());
    EXPECT_TRUE(e.passed());
    EXPECT_NE(e.note.find("implied by I.4"), std::string::npos);
  }
}

TEST(History, ConstantHistorySup) {
  const auto e = check_history(HistorySegment::constant(0.0, 0.04, kInf), {0.04, -0.1, 0.6});
  EXPECT_EQ(e.status, AssumptionStatus::pass_numeric);
  EXPECT_NEAR(e.margin, 0.16, 1e-15);
}

TEST(History, EmptyIsNotApplicable) {
  EXPECT_EQ(check_history(HistorySegment{}, {0.1, 0, 0}).status, AssumptionStatus::not_applicable);
}

TEST(History, NegativeR2Fails) {
  const HistorySegment h(-1.0, {-0.5, 0.0}, {0, 0}, {0.04, -1.0});
  const auto e = check_history(h, {0.1, 0, 1});
  EXPECT_EQ(e.status, AssumptionStatus::fail);
  EXPECT_EQ(e.witness, "s=0 r2=-1");
}

TEST(Holder, ZeroGapGivesZero) {
  EXPECT_EQ(holder_lhs(KernelSpec::exponential(10), KernelSpec::exponential(10), 0.3, 0.3), 0.0);
}

TEST(Holder, LeftSideMatchesClosedForm) {
  for (double gap : {1e-4, 1e-2, 0.1})
    EXPECT_NEAR(holder_lhs(KernelSpec::exponential(10), KernelSpec::exponential(25), 0.2, 0.2 + gap),
                exp_holder_lhs(10, 25, gap), 1e-9 * exp_holder_lhs(10, 25, gap));
}

TEST(Holder, ExponentialFitAgreesWithOracleRegression) {
  const auto r = check_holder(KernelSpec::exponential(10), KernelSpec::exponential(10), 1.0);
  EXPECT_EQ(r.entry.status, AssumptionStatus::pass_analytic);
  EXPECT_EQ(r.gamma, 0.5);
  std::vector<double> lx, ly;
  for (double gap : logspace(1e-4, 1e-1, 13)) {
    lx.push_back(std::log(gap));
    ly.push_back(std::log(exp_holder_lhs(10, 10, gap)));
  }
  EXPECT_NEAR(r.fitted_gamma, fit_line(lx, ly).slope, 1e-6);
}

TEST(Holder, TsplFitIsPositiveAndClean) {
  const auto r = check_holder(KernelSpec::tspl(1.2, 0.01), KernelSpec::tspl(1.2, 0.01), 1.0);
  EXPECT_EQ(r.entry.status, AssumptionStatus::pass_numeric);
  EXPECT_GT(r.gamma, 0.0);
  EXPECT_GE(r.fit_r2, 0.99);
  // Below delta the kernel is smooth, so the small-gap exponent approaches 1;
  // the curved large-gap end is excluded from the fit.
  EXPECT_GT(r.gamma, 0.75);
  EXPECT_LE(r.gamma, 1.0);
  EXPECT_LT(r.fit_window, 0.1);
}

TEST(G2, ConstantHistoryExponential) {
  const double l2 = 15.0;
  const Betas b{0.02, -0.05, 0.6};
  const auto h = HistorySegment::constant(0.0, 0.09, kInf);  // sigma = 0.2
  const auto r = check_g2_positive(KernelSpec::exponential(l2), h, b, 1.0);
  EXPECT_NEAR(r.g2_at_zero, 0.04, 1e-14);
  EXPECT_NEAR(r.inf_g2, 0.04 * std::exp(-l2), 1e-14);
  EXPECT_NEAR(r.t_at_inf, 1.0, 1e-12);
  EXPECT_EQ(r.i6.status, AssumptionStatus::pass_numeric);
  EXPECT_EQ(r.ii4.status, AssumptionStatus::pass_numeric);
  for (double t : {0.0, 0.3, 0.9}) EXPECT_NEAR(history_g2(KernelSpec::exponential(l2), h, b, t), 0.04 * std::exp(-l2 * t), 1e-15);
}

TEST(G2, LemmaShortcutBoundsGridInfimum) {
  const Betas b{0.02, -0.05, 0.6};
  const auto h = HistorySegment::constant(0.0, 0.09, kInf);
  const auto k1 = KernelSpec::exponential(10.0);
  const auto r = check_g2_positive(KernelSpec::exponential(15.0), h, b, 1.0, &k1, true);
  EXPECT_EQ(r.i6.status, AssumptionStatus::pass_analytic);
  EXPECT_NEAR(r.i6.margin, 0.04 * std::exp(-20.0), 1e-18);
  EXPECT_LE(r.i6.margin, r.inf_g2);
}

TEST(G2, ZeroVolatilityHistoryFails) {
  const auto r = check_g2_positive(KernelSpec::exponential(5), HistorySegment::constant(0, 0, 2.0), {0, 0, 1}, 1.0);
  EXPECT_EQ(r.i6.status, AssumptionStatus::fail);
  EXPECT_EQ(r.ii4.status, AssumptionStatus::fail);
  EXPECT_FALSE(r.i6.witness.empty());
}

TEST(G2, NoHistoryFailsCitingI6) {
  const auto r = check_g2_positive(KernelSpec::exponential(5), HistorySegment{}, {0.1, 0, 1}, 1.0);
  EXPECT_EQ(r.i6.status, AssumptionStatus::fail);
  EXPECT_NE(r.i6.note.find("I.6"), std::string::npos);
}

TEST(Positivity, ExpExpBoundaryCase) {
  const auto r = check_positivity_conditions(KernelSpec::exponential(1), KernelSpec::exponential(2), 1.0);
  EXPECT_EQ(r.ii2.status, AssumptionStatus::pass_analytic);
  EXPECT_EQ(r.ii3.status, AssumptionStatus::pass_analytic);
  EXPECT_EQ(r.ii3.margin, 0.0);
  EXPECT_TRUE(r.ii3.boundary);
  EXPECT_TRUE(r.ii1.passed());
}

TEST(Positivity, ExpTsplRatios) {
  const auto pass = check_positivity_conditions(KernelSpec::exponential(2), KernelSpec::tspl(1.0, 1.0, 10.0), 1.0);
  EXPECT_NEAR(*pass.ratio, 4.0, 1e-15);
  EXPECT_EQ(pass.ii3.status, AssumptionStatus::pass_analytic);
  EXPECT_NEAR(pass.ii3.margin, 3.0, 1e-15);

  const auto fail = check_positivity_conditions(KernelSpec::exponential(1), KernelSpec::tspl(1.5, 0.1), 1.0);
  EXPECT_NEAR(*fail.ratio, 0.2 / 1.5, 1e-15);
  EXPECT_EQ(fail.ii3.status, AssumptionStatus::fail);
  EXPECT_FALSE(fail.ii3.witness.empty());
}

TEST(Positivity, TsplK1FailsSeparability) {
  const auto r = check_positivity_conditions(KernelSpec::tspl(1.2, 0.01), KernelSpec::exponential(2), 1.0);
  EXPECT_EQ(r.ii2.status, AssumptionStatus::fail);
  EXPECT_FALSE(r.ii2.witness.empty());
  EXPECT_EQ(r.ii3.status, AssumptionStatus::not_applicable);
}

TEST(Positivity, ShiftedPowerUsesNumericScan) {
  // h' = -a/(t+D); dK2/dt = -lambda K2, so the margin is 2a/(t+D) - lambda, smallest at t = T.
  const double a = 1.5, D = 2.0, lam = 0.5, T = 1.0;
  const auto r = check_positivity_conditions(KernelSpec::shifted_power(a, D), KernelSpec::exponential(lam), T, D);
  EXPECT_EQ(r.ii3.status, AssumptionStatus::pass_numeric);
  EXPECT_NEAR(r.ii3.margin, 2 * a / (T + D) - lam, 1e-12);
}

TEST(Positivity, NumericScanAgreesWithExpExpCriterion) {
  const auto lams = logspace(0.1, 50.0, 20);
  for (double l1 : lams) {
    for (double l2 : lams) {
      const auto sep = *separable_decomposition(KernelSpec::exponential(l1));
      const auto scan = positivity_scan(sep, KernelSpec::exponential(l2), 1.0, kInf, 11, 40);
      const bool closed = 2 * l1 >= l2;
      if (std::abs(2 * l1 - l2) <= 1e-6 * l2) continue;
      EXPECT_EQ(scan.min_margin >= 0.0, closed) << l1 << " " << l2;
      EXPECT_NEAR(scan.min_margin, 2 * l1 - l2, 1e-9 * (l1 + l2));
    }
  }
}

TEST(Positivity, ExpTsplMinimumOnDiagonal) {
  const auto sep = *separable_decomposition(KernelSpec::exponential(3.0));
  for (double delta : {0.05, 0.3, 1.0}) {
    const auto scan = positivity_scan(sep, KernelSpec::tspl(1.4, delta), 1.0);
    EXPECT_NEAR(scan.t_at_min - scan.s_at_min, 0.0, 1e-6);
    EXPECT_NEAR(scan.min_margin, 2 * 3.0 - 1.4 / delta, 1e-6 * (1 + 1.4 / delta));
  }
}

TEST(Positivity, IncreasingDeltaNeverFlipsToFail) {
  for (double lam : {0.5, 2.0, 10.0}) {
    bool seen_pass = false;
    for (double delta : logspace(1e-3, 10.0, 40)) {
      const auto r = check_positivity_conditions(KernelSpec::exponential(lam), KernelSpec::tspl(1.3, delta), 1.0);
      if (seen_pass) EXPECT_TRUE(r.ii3.passed());
      seen_pass = seen_pass || r.ii3.passed();
    }
    EXPECT_TRUE(seen_pass);
  }
}

TEST(FullReport, ExpExpGivesPositivity) {
  const auto p = make_params(KernelSpec::exponential(10), KernelSpec::exponential(15));
  const auto rep = full_report(p, HistorySegment::constant(0.0, 0.09, kInf), 1.0);
  EXPECT_EQ(rep.verdict, Guarantee::existence_and_positivity);
  ASSERT_EQ(rep.entries.size(), 10u);
  EXPECT_EQ(rep.entries.front().id, "I.1");
  EXPECT_EQ(rep.entries.back().id, "II.4");
  EXPECT_NEAR(rep.holder_bound, std::min(0.5, 1.0 / (2.0 * 16.0 / 15.0)), 1e-15);
}

TEST(FullReport, ExpTsplGivesPositivity) {
  const auto p = make_params(KernelSpec::exponential(50), KernelSpec::tspl(1.25, 0.05));
  const auto rep = full_report(p, HistorySegment::constant(0.0, 0.09, kInf), 1.0);
  EXPECT_EQ(rep.verdict, Guarantee::existence_and_positivity);
  EXPECT_NEAR(*rep.positivity_ratio, 4.0, 1e-12);
}

TEST(FullReport, TsplK1AtMostExistence) {
  const auto p = make_params(KernelSpec::tspl(1.2, 0.01), KernelSpec::exponential(15));
  const auto rep = full_report(p, HistorySegment::constant(0.0, 0.09, kInf), 1.0);
  EXPECT_EQ(rep.verdict, Guarantee::existence);
  EXPECT_EQ(rep.entry("II.2").status, AssumptionStatus::fail);
}

TEST(FullReport, NoHistoryIsNeither) {
  auto p = make_params(KernelSpec::exponential(10), KernelSpec::exponential(15));
  p.history_length = 0.0;
  const auto rep = full_report(p, HistorySegment{}, 1.0);
  EXPECT_EQ(rep.verdict, Guarantee::neither);
  for (const auto& e : rep.entries)
    if (e.failed()) EXPECT_FALSE(e.witness.empty()) << e.id;
}

TEST(FullReport, KeyValueRendering) {
  const auto p = make_params(KernelSpec::exponential(2), KernelSpec::tspl(1.0, 1.0, 10.0));
  const auto rep = full_report(p, HistorySegment::constant(0.0, 0.09, 10.0), 1.0);
  const auto kv = render_key_values(rep);
  EXPECT_NE(kv.find("II.3.status=PASS_ANALYTIC\n"), std::string::npos);
  EXPECT_NE(kv.find("II.3.margin=3\n"), std::string::npos);
  EXPECT_NE(render_text(rep).find("verdict: "), std::string::npos);
}
