#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "pdv/calibration.hpp"
#include "pdv/synthetic.hpp"

using namespace pdv;

namespace {

struct Design {
  std::vector<double> r1, s2, y;
};

Design random_design(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 0.6);
  Design d;
  for (std::size_t i = 0; i < n; ++i) {
    d.r1.push_back(z(rng));
    d.s2.push_back(u(rng));
    d.y.push_back(0.0);
  }
  return d;
}

// Independent oracle: cyclic coordinate descent on the box-constrained quadratic.
std::array<double, 3> coordinate_descent(const Design& d, const BetaBounds& b, double kappa) {
  const double n = static_cast<double>(d.y.size());
  double a[3][3] = {}, rhs[3] = {};
  for (std::size_t i = 0; i < d.y.size(); ++i) {
    const double x[3] = {1.0, d.r1[i], d.s2[i]};
    for (int p = 0; p < 3; ++p) {
      rhs[p] += x[p] * d.y[i] / n;
      for (int q = 0; q < 3; ++q) a[p][q] += x[p] * x[q] / n;
    }
  }
  for (int p = 0; p < 3; ++p) a[p][p] += kappa;
  std::array<double, 3> beta{};
  for (int p = 0; p < 3; ++p) beta[p] = std::clamp(0.0, b.lower[p], b.upper[p]);
  for (int sweep = 0; sweep < 200000; ++sweep)
    for (int p = 0; p < 3; ++p) {
      double r = rhs[p];
      for (int q = 0; q < 3; ++q)
        if (q != p) r -= a[p][q] * beta[q];
      beta[p] = std::clamp(r / a[p][p], b.lower[p], b.upper[p]);
    }
  return beta;
}

SyntheticMarket small_market(std::uint64_t seed, std::size_t days, double noise, KernelSpec k1, KernelSpec k2) {
  SyntheticSpec s;
  s.k1 = k1;
  s.k2 = k2;
  s.n_days = days;
  s.burn_in = 200;
  s.noise_rel = noise;
  s.seed = seed;
  return synthesize_market(s);
}

}  // namespace

TEST(NelderMead, MinimisesRosenbrock) {
  auto f = [](const std::vector<double>& x) {
    return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
  };
  NelderMeadOptions opt;
  opt.max_evaluations = 5000;
  const auto r = nelder_mead(f, {-1.2, 1.0}, opt);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0, 1e-6);
  EXPECT_LE(r.evaluations, opt.max_evaluations + 10);
}

TEST(NelderMead, InfiniteValuesActAsBarrier) {
  auto f = [](const std::vector<double>& x) { return x[0] < 0.5 ? kInf : (x[0] - 1.0) * (x[0] - 1.0); };
  const auto r = nelder_mead(f, {2.0});
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
}

TEST(FitBetas, RecoversExactLinearTarget) {
  std::mt19937_64 rng(1);
  auto d = random_design(200, rng);
  for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = 0.04 - 0.1 * d.r1[i] + 0.6 * d.s2[i];
  const auto f = fit_betas(d.r1, d.s2, d.y);
  EXPECT_NEAR(f.beta[0], 0.04, 1e-10);
  EXPECT_NEAR(f.beta[1], -0.1, 1e-10);
  EXPECT_NEAR(f.beta[2], 0.6, 1e-10);
  EXPECT_FALSE(f.any_active());
  EXPECT_FALSE(f.rank_deficient);
}

TEST(FitBetas, LargeRidgeShrinksToZero) {
  std::mt19937_64 rng(2);
  auto d = random_design(100, rng);
  std::normal_distribution<double> z(0.0, 1.0);
  for (double& v : d.y) v = z(rng);
  BetaBounds free_box;
  free_box.lower = {-kInf, -kInf, -kInf};
  free_box.upper = {kInf, kInf, kInf};
  const auto f = fit_betas(d.r1, d.s2, d.y, free_box, 1e12);
  for (double b : f.beta) EXPECT_LT(std::abs(b), 1e-10);
}

TEST(FitBetas, ClampsNegativeBeta2) {
  std::mt19937_64 rng(3);
  auto d = random_design(100, rng);
  for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = 0.5 - 0.4 * d.s2[i];
  const auto f = fit_betas(d.r1, d.s2, d.y);
  EXPECT_EQ(f.beta[2], 0.0);
  EXPECT_TRUE(f.at_lower[2]);
  EXPECT_TRUE(f.any_active());
}

TEST(FitBetas, MatchesCoordinateDescentAndSatisfiesKkt) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    auto d = random_design(60, rng);
    const double b0 = u(rng), b1 = 2.0 * u(rng), b2 = u(rng);
    for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = b0 + b1 * d.r1[i] + b2 * d.s2[i] + 0.1 * z(rng);
    BetaBounds box;
    box.upper[0] = 0.8;
    box.lower[1] = -0.5;
    const double kappa = trial % 2 ? 1e-3 : 0.0;
    const auto f = fit_betas(d.r1, d.s2, d.y, box, kappa);
    const auto oracle = coordinate_descent(d, box, kappa);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(f.beta[j], oracle[j], 1e-8) << "trial " << trial;

    // Gradient of the objective at the solution.
    const double n = static_cast<double>(d.y.size());
    double g[3] = {2.0 * kappa * f.beta[0], 2.0 * kappa * f.beta[1], 2.0 * kappa * f.beta[2]};
    for (std::size_t i = 0; i < d.y.size(); ++i) {
      const double x[3] = {1.0, d.r1[i], d.s2[i]};
      const double e = f.beta[0] + f.beta[1] * x[1] + f.beta[2] * x[2] - d.y[i];
      for (int j = 0; j < 3; ++j) g[j] += 2.0 * e * x[j] / n;
    }
    for (int j = 0; j < 3; ++j) {
      if (f.at_lower[j]) EXPECT_GE(g[j], -1e-8);
      else if (f.at_upper[j]) EXPECT_LE(g[j], 1e-8);
      else EXPECT_NEAR(g[j], 0.0, 1e-8);
    }
  }
}

TEST(FitBetas, RankDeficientDesignIsFlagged) {
  const std::vector<double> zero(10, 0.0), y(10, 0.3);
  const auto f = fit_betas(zero, zero, y);
  EXPECT_TRUE(f.rank_deficient);
  EXPECT_NEAR(f.beta[0], 0.3, 1e-14);
  EXPECT_NEAR(f.objective, 0.0, 1e-28);
}

TEST(FitBetas, ScaleEquivariance) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  auto d = random_design(80, rng);
  for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = 0.1 - 0.05 * d.r1[i] + 0.5 * d.s2[i] + 0.02 * z(rng);
  BetaBounds open;
  open.upper[1] = kInf;
  const auto a = fit_betas(d.r1, d.s2, d.y, open);
  auto y3 = d.y;
  for (double& v : y3) v *= 3.0;
  const auto b = fit_betas(d.r1, d.s2, y3, open);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(b.beta[j], 3.0 * a.beta[j], 1e-12);
  const auto ra = r_squared(d.y, predict(a.betas(), d.r1, d.s2));
  const auto rb = r_squared(y3, predict(b.betas(), d.r1, d.s2));
  EXPECT_NEAR(ra.value, rb.value, 1e-12);
}

TEST(FitBetas, TrainMseNonDecreasingInKappa) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  auto d = random_design(80, rng);
  for (std::size_t i = 0; i < d.y.size(); ++i) d.y[i] = 0.1 - 0.3 * d.r1[i] + 0.5 * d.s2[i] + 0.05 * z(rng);
  double prev = 0.0;
  for (double kappa : {0.0, 1e-6, 1e-4, 1e-2, 1.0, 100.0}) {
    const auto f = fit_betas(d.r1, d.s2, d.y, {}, kappa);
    EXPECT_GE(f.mse, prev - 1e-15) << kappa;
    prev = f.mse;
  }
}

TEST(FitBetas, RejectsBadInput) {
  const std::vector<double> two(2, 1.0);
  EXPECT_THROW(fit_betas(two, two, two), std::invalid_argument);
  const std::vector<double> x(5, 1.0);
  EXPECT_THROW(fit_betas(x, x, x, {}, -1.0), std::invalid_argument);
  BetaBounds empty;
  empty.lower[1] = 2.0;
  EXPECT_THROW(fit_betas(x, x, x, empty), std::invalid_argument);
}

TEST(RSquared, ConstantTargetIsUndefined) {
  const std::vector<double> y(5, 0.2), f(5, 0.2);
  const auto r = r_squared(y, f);
  EXPECT_FALSE(r.defined);
  EXPECT_EQ(r.value, 0.0);
  const std::vector<double> y2{1, 2, 3}, f2{1, 2, 4};
  EXPECT_NEAR(r_squared(y2, f2).value, 0.5, 1e-15);
}

TEST(KernelChoice, ParametersRoundTrip) {
  EXPECT_EQ(parse_kernel_choice("exp_tspl"), KernelChoice::exp_tspl);
  EXPECT_EQ(parse_kernel_choice("combo/combo"), KernelChoice::combo_combo);
  EXPECT_THROW(parse_kernel_choice("exp"), std::invalid_argument);
  const std::vector<double> p{0.3, 5.0, 40.0, 0.7, 2.0, 20.0};
  const auto u = to_search_space(KernelChoice::combo_combo, p);
  const auto back = to_natural_space(KernelChoice::combo_combo, u);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(back[i], p[i], 1e-13);
  EXPECT_THROW(make_kernels(KernelChoice::exp_tspl, std::vector<double>{10.0, 0.9, 0.1}), std::invalid_argument);
}

TEST(KernelChoice, MultistartPointsAreSeeded) {
  const auto a = multistart_points(KernelChoice::exp_tspl, 8, 7);
  const auto b = multistart_points(KernelChoice::exp_tspl, 8, 7);
  const auto c = multistart_points(KernelChoice::exp_tspl, 8, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& p : a) EXPECT_NO_THROW(make_kernels(KernelChoice::exp_tspl, to_natural_space(KernelChoice::exp_tspl, p)));
}

TEST(Objective, DomainViolationIsInfinite) {
  const auto m = small_market(1, 300, 0.0, KernelSpec::exponential(20), KernelSpec::exponential(10));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  EXPECT_EQ(objective(std::vector<double>{-1.0, 10.0}, m.dataset(), spec), kInf);
  EXPECT_EQ(objective(std::vector<double>{0.0, 10.0}, m.dataset(), spec), kInf);
  EXPECT_TRUE(std::isfinite(objective(std::vector<double>{20.0, 10.0}, m.dataset(), spec)));
}

TEST(Objective, ConstantProxyAndFeaturesGiveZero) {
  DatedSeries prices, proxy;
  for (int i = 0; i < 20; ++i) {
    const auto d = shift_days(parse_date("2020-01-01"), i);
    prices.dates.push_back(d);
    prices.values.push_back(100.0);
    proxy.dates.push_back(d);
    proxy.values.push_back(0.25);
  }
  const auto ds = make_dataset(prices, proxy, prices.dates[15]);
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  spec.ridge = 0.0;
  EXPECT_NEAR(objective(std::vector<double>{5.0, 5.0}, ds, spec), 0.0, 1e-30);
}

TEST(Objective, TruthBeatsPerturbations) {
  const auto m = small_market(2, 1500, 0.01, KernelSpec::exponential(30), KernelSpec::exponential(8));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  const CalibrationProblem problem(m.dataset(), spec);
  const double at_truth = problem.objective(std::vector<double>{30.0, 8.0});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> sign(0, 1);
  int wins = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const double s1 = sign(rng) ? 1.1 : 0.9, s2 = sign(rng) ? 1.1 : 0.9;
    wins += at_truth <= problem.objective(std::vector<double>{30.0 * s1, 8.0 * s2});
  }
  EXPECT_GE(wins, 38);
}

TEST(Calibrate, RecoversNoiselessExponentialKernels) {
  const auto m = small_market(3, 1500, 0.0, KernelSpec::exponential(30), KernelSpec::exponential(8));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  const auto r = calibrate(m.dataset(), spec, 11, "synthetic");
  EXPECT_GE(r.train_r2.value, 0.999);
  EXPECT_NEAR(r.params[0], 30.0, 1.5);
  EXPECT_NEAR(r.params[1], 8.0, 0.4);
  EXPECT_NEAR(r.fit.beta[0], 0.04, 1e-3);
  EXPECT_GE(r.test_r2.value, 0.999);
  ASSERT_TRUE(r.positivity_ratio.has_value());
  EXPECT_NEAR(*r.positivity_ratio, 7.5, 0.5);
  EXPECT_EQ(r.positivity.status, AssumptionStatus::pass_analytic);
}

TEST(Calibrate, ExpTsplRatioDiagnostic) {
  const auto m = small_market(4, 2000, 0.0, KernelSpec::exponential(50), KernelSpec::tspl(1.25, 0.05));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_tspl;
  const auto r = calibrate(m.dataset(), spec, 5);
  EXPECT_GE(r.train_r2.value, 0.999);
  ASSERT_TRUE(r.positivity_ratio.has_value());
  EXPECT_NEAR(*r.positivity_ratio, 4.0, 0.2);
  EXPECT_TRUE(r.positivity.passed());
}

TEST(Calibrate, ConstantProxyFlagsUndefinedR2) {
  auto m = small_market(5, 300, 0.0, KernelSpec::exponential(20), KernelSpec::exponential(10));
  for (double& v : m.proxy.values) v = 0.2;
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  spec.multistarts = 2;
  const auto r = calibrate(m.dataset(), spec, 1);
  EXPECT_FALSE(r.train_r2.defined);
  EXPECT_FALSE(r.test_r2.defined);
  EXPECT_EQ(r.train_r2.value, 0.0);
  std::ostringstream os;
  write_result(os, r);
  EXPECT_NE(os.str().find("r2_train=undefined"), std::string::npos);
}

TEST(Calibrate, DeterministicAcrossThreadCounts) {
  const auto m = small_market(6, 600, 0.01, KernelSpec::exponential(20), KernelSpec::exponential(10));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  spec.multistarts = 4;
  spec.threads = 1;
  const auto a = calibrate(m.dataset(), spec, 9);
  spec.threads = 3;
  const auto b = calibrate(m.dataset(), spec, 9);
  std::ostringstream sa, sb;
  write_result(sa, a);
  write_result(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Calibrate, TestRowsNeverEnterTheObjective) {
  const auto m = small_market(7, 800, 0.01, KernelSpec::exponential(20), KernelSpec::exponential(10));
  auto tampered = m;
  for (std::size_t i = 0; i < tampered.proxy.size(); ++i)
    if (!(tampered.proxy.dates[i] < m.split_date)) tampered.proxy.values[i] *= 5.0;
  for (std::size_t i = 0; i < tampered.prices.size(); ++i)
    if (!(tampered.prices.dates[i] < m.split_date)) tampered.prices.values[i] *= 1.0 + 0.01 * static_cast<double>(i % 7);

  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  spec.multistarts = 3;
  const CalibrationProblem clean(m.dataset(), spec), dirty(tampered.dataset(), spec);
  for (const auto& d : clean.return_dates()) EXPECT_LT(d, m.split_date);
  EXPECT_EQ(clean.train_size(), dirty.train_size());
  const std::vector<double> p{15.0, 12.0};
  EXPECT_EQ(clean.objective(p), dirty.objective(p));

  const auto a = calibrate(m.dataset(), spec, 2);
  const auto b = calibrate(tampered.dataset(), spec, 2);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.fit.beta, b.fit.beta);
  EXPECT_EQ(a.train_r2.value, b.train_r2.value);
  EXPECT_NE(a.test_r2.value, b.test_r2.value);
}

TEST(Calibrate, NeedsTrainRows) {
  const auto m = small_market(8, 100, 0.0, KernelSpec::exponential(20), KernelSpec::exponential(10));
  auto ds = m.dataset();
  ds.split_date = ds.returns.dates.front();
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_exp;
  EXPECT_THROW(calibrate(ds, spec, 0), std::invalid_argument);
}

TEST(Report, TableShapes) {
  CalibrationResult r;
  r.choice = KernelChoice::exp_exp;
  r.dataset = "SPX";
  r.param_names = parameter_names(r.choice);
  r.params = {10.0, 12.0};
  r.train_r2 = {0.81234, true};
  r.test_r2 = {0.7, true};
  r.positivity_ratio = 2.0 * 10.0 / 12.0;
  const auto one = render_table({r});
  EXPECT_NE(one.find("81.23%"), std::string::npos);
  std::size_t rows = 0;
  std::istringstream is(one);
  for (std::string line; std::getline(is, line);)
    if (line.rfind("exp/exp", 0) == 0) ++rows;
  EXPECT_EQ(rows, 1u);

  std::vector<CalibrationResult> all;
  for (auto c : kAllKernelChoices) {
    auto x = r;
    x.choice = c;
    x.param_names = parameter_names(c);
    x.params.assign(parameter_count(c), 1.5);
    x.positivity_ratio = c == KernelChoice::exp_tspl ? std::optional<double>(4.0) : std::nullopt;
    all.push_back(x);
  }
  const auto grid = render_table(all);
  for (auto c : kAllKernelChoices) EXPECT_NE(grid.find(std::string(to_string(c))), std::string::npos);
  EXPECT_NE(grid.find("SPX train"), std::string::npos);
  EXPECT_NE(grid.find("SPX test"), std::string::npos);
  EXPECT_NE(grid.find("2*lambda*delta/alpha"), std::string::npos);
  EXPECT_NE(grid.find("4.00"), std::string::npos);
  const auto csv = render_csv(all);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("SPX,exp/tspl,0.81234,0.7,4,"), std::string::npos);
}

TEST(Report, ResultRoundTrip) {
  const auto m = small_market(9, 400, 0.01, KernelSpec::exponential(20), KernelSpec::tspl(1.3, 0.05));
  CalibrationSpec spec;
  spec.choice = KernelChoice::exp_tspl;
  spec.multistarts = 1;
  spec.optimizer.max_evaluations = 60;
  const auto r = calibrate(m.dataset(), spec, 3, "synthetic");
  std::ostringstream os;
  write_result(os, r);
  std::istringstream is(os.str());
  const auto back = read_result(is);
  EXPECT_EQ(back.params, r.params);
  EXPECT_EQ(back.fit.beta, r.fit.beta);
  EXPECT_EQ(back.train_r2.value, r.train_r2.value);
  EXPECT_EQ(back.positivity_ratio, r.positivity_ratio);
  EXPECT_EQ(render_table({back}), render_table({r}));
}
