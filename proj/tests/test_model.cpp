#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "oneshot_dpd/model.hpp"
#include "test_support.hpp"

using namespace oneshot_dpd;

namespace {

const ParamVector kModerate{6.0, -0.1, -0.6, 0.02};
const ParamVector kLow{5.8, -0.1, -0.6, 0.02};
const ParamVector kElectro{4.78801, -0.04305, 0.80430, -0.01833};
const ParamVector kElectric{6.91992, -0.03979, -0.03734, -1.84593, 0.01003, 0.01354};
constexpr std::array<double, 2> kX15{1.0, 15.0};
constexpr std::array<double, 2> kX25{1.0, 25.0};

}  // namespace

TEST(TestGroup, ValidatesFields) {
  EXPECT_NO_THROW(TestGroup(10.0, 10, 0.0, {35.0}));
  EXPECT_NO_THROW(TestGroup(10.0, 10, 10.0, {35.0}));
  EXPECT_THROW(TestGroup(0.0, 10, 1.0, {35.0}), std::invalid_argument);
  EXPECT_THROW(TestGroup(10.0, 0, 0.0, {35.0}), std::invalid_argument);
  EXPECT_THROW(TestGroup(10.0, 10, 11.0, {35.0}), std::invalid_argument);
  EXPECT_THROW(TestGroup(10.0, 10, -1.0, {35.0}), std::invalid_argument);
  const TestGroup g(20.0, 10, 3.0, {35.0});
  EXPECT_NEAR(g.log_tau(), std::log(20.0), 1e-12);
  EXPECT_EQ(g.x()[0], 1.0);
  EXPECT_EQ(g.x()[1], 35.0);
}

TEST(Dataset, RejectsMixedFactorCounts) {
  std::vector<TestGroup> groups{TestGroup(10.0, 10, 1.0, {35.0}), TestGroup(10.0, 10, 1.0, {35.0, 2.0})};
  EXPECT_THROW(Dataset{groups}, std::invalid_argument);
  EXPECT_THROW(Dataset{std::vector<TestGroup>{}}, std::invalid_argument);
}

TEST(ParamVector, Layout) {
  const std::vector<double> a{1.0, 2.0}, b{3.0, 4.0};
  const ParamVector p(a, b);
  EXPECT_EQ(p.dim(), 4u);
  EXPECT_EQ(p.num_factors(), 1u);
  EXPECT_EQ(p.a(1), 2.0);
  EXPECT_EQ(p.b(0), 3.0);
  EXPECT_EQ(p[3], 4.0);
  EXPECT_THROW(ParamVector({1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST(Link, KnownValues) {
  const LinkValues lv = link(kModerate, kX15);
  EXPECT_NEAR(lv.mu, 4.5, 1e-14);
  EXPECT_NEAR(lv.sigma, 0.74081822068171787, 1e-14);
  const LinkValues zero = link(ParamVector{0.0, 0.0, 0.0, 0.0}, kX25);
  EXPECT_EQ(zero.mu, 0.0);
  EXPECT_EQ(zero.sigma, 1.0);
  const LinkValues e = link(kElectro, kX25);
  EXPECT_NEAR(e.mu, 3.71176, 1e-12);
  EXPECT_NEAR(e.sigma, 1.4134732877152507, 1e-12);
}

TEST(Link, DomainErrors) {
  const std::array<double, 3> too_long{1.0, 2.0, 3.0};
  EXPECT_THROW(link(kModerate, too_long), std::domain_error);
  const std::array<double, 2> no_intercept{2.0, 15.0};
  EXPECT_THROW(link(kModerate, no_intercept), std::domain_error);
  const ParamVector huge{0.0, 0.0, 800.0, 0.0};
  EXPECT_THROW(link(huge, kX15), std::domain_error);
}

TEST(Probabilities, TrueTargets) {
  EXPECT_NEAR(reliability(kLow, kX15, 60.0), 0.6093425118728616, 1e-13);
  EXPECT_NEAR(reliability(kModerate, kX15, 60.0), 0.70800900133562142, 1e-13);
  EXPECT_NEAR(reliability(ParamVector{6.2, -0.1, -0.6, 0.02}, kX15, 60.0), 0.79319271388090679, 1e-13);
  EXPECT_NEAR(failure_probability(kModerate, kX15, 60.0), 0.2920, 5e-4);
  EXPECT_NEAR(failure_probability(kLow, kX15, 60.0), 0.3907, 5e-4);
  EXPECT_NEAR(mean_lifetime(kLow, kX15), 96.970403951733619, 1e-10);
  EXPECT_NEAR(mean_lifetime(kModerate, kX15), 118.43991884655327, 1e-10);
}

TEST(Probabilities, FittedExamples) {
  EXPECT_NEAR(reliability(kElectro, kX25, 10.0), 0.84060779281351056, 1e-13);
  EXPECT_NEAR(reliability(kElectro, kX25, 10.0), 0.84059, 1e-4);
  const std::array<double, 3> x{1.0, 25.0, 35.0};
  EXPECT_NEAR(reliability(kElectric, x, 60.0), 0.94606179426334786, 1e-13);
  EXPECT_NEAR(reliability(kElectric, x, 60.0), 0.94600, 1e-4);
  EXPECT_NEAR(mean_lifetime(kElectro, kX25), 111.13140917564366, 1e-9);
  EXPECT_NEAR(mean_lifetime(kElectric, x), 106.84328766002786, 1e-9);
  EXPECT_NEAR(mean_lifetime(ParamVector{0.0, 0.0, 0.0, 0.0}, kX25), std::exp(0.5), 1e-15);
}

TEST(Probabilities, MedianAndComplement) {
  const LinkValues lv = link(kModerate, kX15);
  EXPECT_NEAR(failure_probability(kModerate, kX15, std::exp(lv.mu)), 0.5, 1e-15);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.5, 500.0);
  for (int i = 0; i < 200; ++i) {
    const double tau = u(rng);
    EXPECT_EQ(failure_probability(kModerate, kX15, tau) + reliability(kModerate, kX15, tau), 1.0);
  }
}

TEST(Probabilities, MonotoneInTime) {
  double prev = 0.0;
  for (double tau = 1.0; tau < 2000.0; tau *= 1.1) {
    const double f = failure_probability(kModerate, kX15, tau);
    EXPECT_GT(f, prev);
    prev = f;
  }
}

TEST(Hazard, ClosedFormsAndShape) {
  const ParamVector std_lognormal{0.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(hazard(std_lognormal, kX15, 1.0), 0.79788456080286536, 1e-14);
  EXPECT_NEAR(hazard(std_lognormal, kX15, 2.0), 0.64264029201484681, 1e-13);
  for (double t : {0.3, 1.0, 7.0, 40.0}) {
    EXPECT_NEAR(hazard(kModerate, kX15, t), lifetime_pdf(kModerate, kX15, t) / reliability(kModerate, kX15, t),
                1e-12 * hazard(kModerate, kX15, t));
  }
  // rises then falls
  std::vector<double> h;
  for (double t = 0.1; t <= 50.0; t += 0.1) h.push_back(hazard(std_lognormal, kX15, t));
  std::size_t peak = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[peak]) peak = i;
  EXPECT_GT(peak, 0u);
  EXPECT_LT(peak, h.size() - 1);
  for (std::size_t i = 1; i <= peak; ++i) EXPECT_GE(h[i], h[i - 1]);
  for (std::size_t i = peak + 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1]);
}

TEST(Delta, ChainRuleSign) {
  const ParamVector unit{0.0, 0.0, 0.0, 0.0};
  const std::array<double, 2> x{1.0, 0.0};
  const DeltaPair d = delta_vector(unit, x, 0.0);
  EXPECT_NEAR(d.mu_part, -std_normal_pdf(0.0), 1e-15);
  EXPECT_EQ(d.log_sigma_part, 0.0);
  // doubling sigma at fixed z halves the first component
  const ParamVector wide{0.0, 0.0, std::log(2.0), 0.0};
  const DeltaPair d2 = delta_vector(wide, x, 0.0);
  EXPECT_NEAR(d2.mu_part, 0.5 * d.mu_part, 1e-15);
}

TEST(Delta, MatchesFiniteDifferencesAtUnitScale) {
  const ParamVector unit{0.0, 0.0, 0.0, 0.0};
  const std::array<double, 2> x{1.0, 0.0};
  const DeltaPair d = delta_vector(unit, x, 1.0);
  auto f = [&](const ParamVector& th) { return failure_probability(th, x, std::exp(1.0)); };
  const Vector g = testkit::central_gradient(f, unit);
  EXPECT_NEAR(d.mu_part, g[0], 1e-6);
  EXPECT_NEAR(d.log_sigma_part, g[2], 1e-6);
}

TEST(FullGradient, LayoutAndFiniteDifferences) {
  const ParamVector one_factor{0.3, 0.0};
  const std::array<double, 1> x1{1.0};
  const DeltaPair d = delta_vector(one_factor, x1, 0.7);
  const Vector g1 = full_gradient_F(one_factor, x1, 0.7);
  EXPECT_EQ(g1[0], d.mu_part);
  EXPECT_EQ(g1[1], d.log_sigma_part);

  const LinkValues lv = link(kModerate, kX15);
  const Vector at_median = full_gradient_F(kModerate, kX15, lv.mu);
  EXPECT_EQ(at_median[2], 0.0);
  EXPECT_EQ(at_median[3], 0.0);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const ParamVector th{4.0 + u(rng), -0.05 + 0.02 * u(rng), -0.3 + 0.3 * u(rng), 0.01 * u(rng)};
    const std::array<double, 2> x{1.0, 30.0 + 10.0 * u(rng)};
    const LinkValues l = link(th, x);
    const double w = l.mu + 1.5 * l.sigma * u(rng);
    const Vector g = full_gradient_F(th, x, w);
    auto f = [&](const ParamVector& t) { return failure_probability(t, x, std::exp(w)); };
    const Vector fd = testkit::central_gradient(f, th, 1e-6);
    EXPECT_LT(testkit::relative_error(g, fd), 1e-5) << i;
  }
}
