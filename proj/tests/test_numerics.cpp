#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oneshot_dpd/numerics.hpp"

using namespace oneshot_dpd;

// Reference values come from tests/oracles/derive.py (mpmath, 40 digits).

TEST(NormalPdf, KnownValues) {
  EXPECT_NEAR(std_normal_pdf(0.0), 0.39894228040143268, 1e-16);
  EXPECT_NEAR(std_normal_pdf(1.0), 0.24197072451914335, 1e-16);
  EXPECT_DOUBLE_EQ(std_normal_pdf(1.7), std_normal_pdf(-1.7));
}

TEST(NormalPdf, RejectsNonFinite) {
  EXPECT_THROW(std_normal_pdf(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
  EXPECT_THROW(std_normal_pdf(std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST(NormalCdf, KnownValues) {
  EXPECT_EQ(std_normal_cdf(0.0), 0.5);
  EXPECT_NEAR(std_normal_cdf(3.0), 0.99865010196836991, 1e-15);
  EXPECT_NEAR(std_normal_cdf(-0.54764), 0.29196955902803587, 1e-15);
  // deep lower tail keeps relative accuracy
  EXPECT_NEAR(std_normal_cdf(-8.0) / 6.2209605742717841e-16, 1.0, 1e-12);
  EXPECT_THROW(std_normal_cdf(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
}

TEST(NormalCdf, SymmetryAndMonotonicity) {
  double prev = 0.0;
  for (double z = -8.0; z <= 8.0; z += 0.01) {
    EXPECT_NEAR(std_normal_cdf(z) + std_normal_cdf(-z), 1.0, 1e-14) << z;
    EXPECT_GE(std_normal_cdf(z), prev);
    prev = std_normal_cdf(z);
  }
}

TEST(NormalQuantile, KnownValues) {
  EXPECT_EQ(std_normal_quantile(0.5), 0.0);
  EXPECT_NEAR(std_normal_quantile(0.95), 1.6448536269514727, 1e-14);
  EXPECT_NEAR(std_normal_quantile(0.975), 1.9599639845400542, 1e-14);
  EXPECT_NEAR(std_normal_quantile(1e-10), -6.3613409024040562, 1e-12);
}

TEST(NormalQuantile, InvertsCdf) {
  // in the upper tail p = cdf(z) carries an absolute rounding error of one
  // ulp of 1, which the inverse amplifies by 1 / pdf(z)
  for (double z = -6.0; z <= 6.0; z += 0.05) {
    const double p = std_normal_cdf(z);
    const double tol = 1e-9 + 4.0 * std::numeric_limits<double>::epsilon() * std::max(p, 1e-300) / std_normal_pdf(z);
    EXPECT_NEAR(std_normal_quantile(p), z, tol) << z;
  }
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.7, 0.99, 1 - 1e-9}) {
    EXPECT_NEAR(std_normal_cdf(std_normal_quantile(p)), p, 1e-12 * std::max(1.0, p / 1e-3)) << p;
  }
}

TEST(NormalQuantile, DomainErrors) {
  EXPECT_THROW(std_normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(std_normal_quantile(1.0), std::domain_error);
  EXPECT_THROW(std_normal_quantile(-0.1), std::domain_error);
}

TEST(ChiSquare, QuantileKnownValues) {
  EXPECT_NEAR(chisq_quantile(0.05, 2), 5.991464547107982, 1e-10);
  EXPECT_NEAR(chisq_quantile(0.05, 1), 3.841458820694126, 1e-10);
  EXPECT_NEAR(chisq_quantile(0.01, 5), 15.08627246938899, 1e-9);
  EXPECT_LT(chisq_quantile(1.0 - 1e-12, 3), 1e-3);
}

TEST(ChiSquare, SurvivalKnownValues) {
  EXPECT_EQ(chisq_sf(0.0, 4), 1.0);
  EXPECT_NEAR(chisq_sf(5.9915, 2), 0.05, 1e-4);
  EXPECT_NEAR(chisq_sf(3.8415, 1), 0.05, 1e-4);
  EXPECT_NEAR(chisq_sf(7.5, 3), 0.057558451972636407, 1e-13);
  EXPECT_NEAR(chisq_sf(40.0, 6) / 4.5551495055892128e-7, 1.0, 1e-10);
  // closed form for two degrees of freedom
  for (double x : {0.1, 1.0, 4.0, 12.0}) EXPECT_NEAR(chisq_sf(x, 2), std::exp(-x / 2.0), 1e-14);
}

TEST(ChiSquare, QuantileRoundTrip) {
  for (double alpha : {0.01, 0.05, 0.1}) {
    for (int r = 1; r <= 6; ++r) EXPECT_NEAR(chisq_sf(chisq_quantile(alpha, r), r), alpha, 1e-8);
  }
}

TEST(ChiSquare, DomainErrors) {
  EXPECT_THROW(chisq_sf(-1.0, 2), std::domain_error);
  EXPECT_THROW(chisq_sf(1.0, 0), std::domain_error);
  EXPECT_THROW(chisq_quantile(0.0, 2), std::domain_error);
  EXPECT_THROW(chisq_quantile(0.05, 0), std::domain_error);
}

TEST(Matrix, Basics) {
  Matrix m(2, 3);
  m(0, 1) = 2.0;
  m(1, 2) = -1.0;
  const Matrix t = m.transpose();
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t(1, 0), 2.0);
  const Matrix p = m * t;
  EXPECT_EQ(p(0, 0), 4.0);
  EXPECT_EQ(p(1, 1), 1.0);
  const Vector v = m * Vector{1.0, 1.0, 1.0};
  EXPECT_EQ(v[0], 2.0);
  EXPECT_EQ(v[1], -1.0);
}

TEST(Spd, IdentityAndDiagonal) {
  const Matrix id = Matrix::identity(3);
  const Vector b{1.0, -2.0, 3.0};
  const SpdSolution s = solve_spd(id, b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s.x[i], b[i]);
  EXPECT_FALSE(s.near_singular);
  const SpdSolution d = solve_spd(Matrix::diagonal(Vector{2.0, 4.0}), Vector{2.0, 4.0});
  EXPECT_NEAR(d.x[0], 1.0, 1e-15);
  EXPECT_NEAR(d.x[1], 1.0, 1e-15);
}

TEST(Spd, RandomInverseAndInvolution) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Matrix a(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) a(i, j) = n(rng);
    Matrix m = a * a.transpose();
    for (std::size_t i = 0; i < 4; ++i) m(i, i) += 0.5;
    const SpdInverse inv = invert_spd(m);
    EXPECT_FALSE(inv.near_singular);
    EXPECT_LT((m * inv.inverse).max_abs_diff(Matrix::identity(4)), 1e-8);
    const SpdInverse back = invert_spd(inv.inverse);
    EXPECT_LT(back.inverse.max_abs_diff(m), 1e-8 * (1.0 + m.max_abs_diff(Matrix(4, 4))));
  }
}

TEST(Spd, SingularFallsBackToPseudoInverse) {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(0, 1) = 1.0;
  m(1, 0) = 1.0;
  m(1, 1) = 1.0;
  const SpdInverse inv = invert_spd(m);
  EXPECT_TRUE(inv.near_singular);
  // Moore-Penrose inverse of [[1,1],[1,1]] is 0.25 everywhere
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(inv.inverse(i, j), 0.25, 1e-12);
}

TEST(Spd, RejectsAsymmetric) {
  Matrix m = Matrix::identity(2);
  m(0, 1) = 0.5;
  EXPECT_THROW(invert_spd(m), std::domain_error);
  EXPECT_THROW(solve_spd(m, Vector{1.0, 1.0}), std::domain_error);
}

TEST(SymmetricEigen, ReconstructsMatrix) {
  Matrix m(3, 3);
  const double vals[3][3] = {{4, 1, 0.5}, {1, 3, -0.2}, {0.5, -0.2, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m(i, j) = vals[i][j];
  const SymmetricEigen e = symmetric_eigen(m);
  Matrix r(3, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r(i, j) += e.values[k] * e.vectors(i, k) * e.vectors(j, k);
  }
  EXPECT_LT(r.max_abs_diff(m), 1e-12);
}
