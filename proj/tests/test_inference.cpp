#include <gtest/gtest.h>

#include <cmath>

#include "oneshot_dpd/inference.hpp"
#include "oneshot_dpd/montecarlo.hpp"
#include "test_support.hpp"

using namespace oneshot_dpd;

TEST(ConfidenceIntervals, OracleValues) {
  const ConfidenceInterval asy = ci_asymptotic(0.5, 0.1, 0.1);
  EXPECT_NEAR(asy.lower, 0.5 - 0.16448536269514727, 1e-14);
  EXPECT_NEAR(asy.upper, 0.5 + 0.16448536269514727, 1e-14);
  EXPECT_DOUBLE_EQ(asy.level, 0.9);

  const ConfidenceInterval lg = ci_logit_reliability(0.5, 0.1, 0.1);
  EXPECT_NEAR(lg.lower, 0.34120218756598393, 1e-13);
  EXPECT_NEAR(lg.upper, 0.65879781243401607, 1e-13);

  const ConfidenceInterval ar = ci_arsech_reliability(0.5, 0.1, 0.1);
  EXPECT_NEAR(ar.lower, 0.35462022321376148, 1e-13);
  EXPECT_NEAR(ar.upper, 0.67927394463769675, 1e-13);

  const ConfidenceInterval lm = ci_log_mean(100.0, 30.0, 0.1);
  EXPECT_NEAR(lm.lower, 61.051275796299717, 1e-11);
  EXPECT_NEAR(lm.upper, 163.79674084724196, 1e-11);
}

TEST(ConfidenceIntervals, TransformedIntervalsStayInRange) {
  for (double r : {1e-6, 0.01, 0.3, 0.9, 0.999999}) {
    for (double se : {0.0, 0.01, 0.2, 5.0}) {
      const ConfidenceInterval lg = ci_logit_reliability(r, se, 0.05);
      const ConfidenceInterval ar = ci_arsech_reliability(r, se, 0.05);
      for (const auto& ci : {lg, ar}) {
        EXPECT_GE(ci.lower, 0.0);
        EXPECT_LE(ci.upper, 1.0);
        EXPECT_LE(ci.lower, r * (1.0 + 1e-12));
        EXPECT_GE(ci.upper, r * (1.0 - 1e-12));
      }
    }
  }
  for (double se : {0.0, 1.0, 1e3}) {
    const ConfidenceInterval lm = ci_log_mean(50.0, se, 0.05);
    EXPECT_GE(lm.lower, 0.0);
    EXPECT_NEAR(lm.lower * lm.upper, 2500.0, 1e-9 * 2500.0);
  }
}

TEST(ConfidenceIntervals, BoundaryEstimatesAreDegenerate) {
  for (double r : {0.0, 1.0}) {
    const ConfidenceInterval lg = ci_logit_reliability(r, 0.1, 0.1);
    EXPECT_TRUE(lg.degenerate);
    EXPECT_EQ(lg.lower, r);
    EXPECT_EQ(lg.upper, r);
    EXPECT_TRUE(ci_arsech_reliability(r, 0.1, 0.1).degenerate);
  }
}

TEST(ConfidenceIntervals, DomainErrors) {
  EXPECT_THROW(ci_asymptotic(0.5, -0.1, 0.1), std::domain_error);
  EXPECT_THROW(ci_asymptotic(0.5, 0.1, 0.0), std::domain_error);
  EXPECT_THROW(ci_asymptotic(0.5, 0.1, 1.0), std::domain_error);
  EXPECT_THROW(ci_logit_reliability(1.2, 0.1, 0.1), std::domain_error);
  EXPECT_THROW(ci_log_mean(0.0, 0.1, 0.1), std::domain_error);
  EXPECT_THROW(ci_log_mean(1.0, std::nan(""), 0.1), std::domain_error);
}

TEST(ConfidenceIntervals, WidthGrowsWithLevel) {
  double prev = 0.0;
  for (double alpha : {0.2, 0.1, 0.05, 0.01}) {
    const double w = ci_logit_reliability(0.7, 0.05, alpha).width();
    EXPECT_GT(w, prev);
    prev = w;
  }
}

TEST(WaldSpec, Validation) {
  Matrix a(2, 4);
  a(0, 1) = 1.0;
  a(1, 1) = 2.0;
  EXPECT_THROW(WaldSpec(a, Vector{0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(WaldSpec(Matrix(1, 4), Vector{0.0}), std::invalid_argument);
  Matrix ok(1, 4);
  ok(0, 0) = 1.0;
  EXPECT_THROW(WaldSpec(ok, Vector{0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(WaldSpec(Matrix(5, 4), Vector(5, 0.0)), std::invalid_argument);
  const WaldSpec spec(ok, Vector{2.0});
  EXPECT_EQ(spec.rank(), 1);
  EXPECT_EQ(spec.residual(ParamVector{5.0, 0.0, 0.0, 0.0})[0], 3.0);
}

TEST(WaldSpec, StressFactorLayout) {
  const WaldSpec s = stress_factor_spec(2, 2);
  EXPECT_EQ(s.rank(), 2);
  EXPECT_EQ(s.a()(0, 2), 1.0);
  EXPECT_EQ(s.a()(1, 5), 1.0);
  double sum = 0.0;
  for (double v : s.a().data()) sum += v;
  EXPECT_EQ(sum, 2.0);
  EXPECT_THROW(stress_factor_spec(2, 0), std::out_of_range);
  EXPECT_THROW(stress_factor_spec(2, 3), std::out_of_range);
  EXPECT_THROW(coefficient_spec(4, 4, 0.0), std::out_of_range);
}

namespace {

FitResult fitted(std::uint64_t stream, double beta) {
  const Scenario sc = preset_scenario(ReliabilityLevel::moderate, 100);
  Rng rng = make_stream(4242, stream);
  const Dataset data = generate(sc.design, nullptr, rng);
  FitConfig cfg;
  cfg.beta = beta;
  return fit(data, cfg);
}

}  // namespace

TEST(WaldTest, SingleCoefficientIsSquaredZ) {
  const FitResult fr = fitted(0, 0.3);
  const WaldResult w = wald_type_test(fr, coefficient_spec(4, 0, 6.0));
  const double z = (fr.theta_hat[0] - 6.0) / std::sqrt(fr.covariance(0, 0));
  EXPECT_NEAR(w.statistic, z * z, 1e-10 * std::max(1.0, z * z));
  EXPECT_EQ(w.dof, 1);
  EXPECT_NEAR(w.p_value, chisq_sf(z * z, 1), 1e-12);
  EXPECT_EQ(w.reject_at.at(0.05), z * z > chisq_quantile(0.05, 1));
}

TEST(WaldTest, InvariantToRowScaling) {
  const FitResult fr = fitted(1, 0.4);
  const WaldSpec base = stress_factor_spec(1, 1);
  Matrix scaled = base.a();
  for (std::size_t j = 0; j < scaled.cols(); ++j) {
    scaled(0, j) *= 3.0;
    scaled(1, j) *= -0.25;
  }
  const WaldResult w1 = wald_type_test(fr, base);
  const WaldResult w2 = wald_type_test(fr, WaldSpec(scaled, Vector{0.0, 0.0}));
  EXPECT_NEAR(w1.statistic, w2.statistic, 1e-9 * w1.statistic);
  EXPECT_EQ(w1.dof, 2);
}

TEST(WaldTest, ZeroAtNullValue) {
  const FitResult fr = fitted(2, 0.0);
  const WaldResult w = wald_type_test(fr, coefficient_spec(4, 2, fr.theta_hat[2]));
  EXPECT_EQ(w.statistic, 0.0);
  EXPECT_EQ(w.p_value, 1.0);
}

TEST(WaldTest, ClassicalEquivalenceAtBetaZero) {
  const Scenario sc = preset_scenario(ReliabilityLevel::moderate, 100);
  for (std::uint64_t r = 0; r < 5; ++r) {
    Rng rng = make_stream(31337, r);
    const Dataset data = generate(sc.design, nullptr, rng);
    const FitResult fr = fit(data, FitConfig{});
    for (const WaldSpec& spec : {coefficient_spec(4, 0, 6.0), stress_factor_spec(1, 1)}) {
      const double ours = wald_type_test(fr, spec).statistic;
      const double classical = classical_wald_test(fr.theta_hat, data, spec).statistic;
      EXPECT_NEAR(ours, classical, 1e-6 * std::max(1.0, classical)) << r;
    }
  }
}

TEST(WaldTest, StressFactorsAreSignificantOnLargeSamples) {
  const FitResult fr = fitted(3, 0.2);
  const WaldResult w = stress_factor_test(fr, 1);
  EXPECT_LT(w.p_value, 1e-6);
  EXPECT_TRUE(w.reject_at.at(0.01));
}
