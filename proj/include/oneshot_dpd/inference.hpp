#pragma once

// Confidence intervals for coefficients, reliability and mean lifetime, and
// Wald-type tests of linear hypotheses A theta = c.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "oneshot_dpd/estimation.hpp"
#include "oneshot_dpd/numerics.hpp"

namespace oneshot_dpd {

enum class CiMethod { asymptotic, logit, arsech, log };

inline std::string_view to_string(CiMethod m) {
  switch (m) {
    case CiMethod::asymptotic: return "asy";
    case CiMethod::logit: return "logit";
    case CiMethod::arsech: return "arsech";
    case CiMethod::log: return "log";
  }
  return "?";
}

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.0;
  CiMethod method = CiMethod::asymptotic;
  // point interval returned for a boundary estimate
  bool degenerate = false;

  double width() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

namespace detail {

inline double two_sided_z(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("alpha must lie in (0, 1)");
  return std_normal_quantile(1.0 - alpha / 2.0);
}

inline void require_se(double se) {
  if (!(se >= 0.0) || !std::isfinite(se)) throw std::domain_error("standard error must be finite and >= 0");
}

}  // namespace detail

/// estimate -/+ z_{1-alpha/2} se, untruncated.
inline ConfidenceInterval ci_asymptotic(double estimate, double se, double alpha) {
  detail::require_se(se);
  const double z = detail::two_sided_z(alpha);
  return {estimate - z * se, estimate + z * se, 1.0 - alpha, CiMethod::asymptotic, false};
}

inline ConfidenceInterval ci_logit_reliability(double r_hat, double se_r, double alpha) {
  detail::require_se(se_r);
  const double z = detail::two_sided_z(alpha);
  if (!(r_hat >= 0.0 && r_hat <= 1.0)) throw std::domain_error("reliability estimate must lie in [0, 1]");
  if (r_hat == 0.0 || r_hat == 1.0) return {r_hat, r_hat, 1.0 - alpha, CiMethod::logit, true};
  const double s = std::exp(z * se_r / (r_hat * (1.0 - r_hat)));
  return {r_hat / (r_hat + (1.0 - r_hat) * s), r_hat / (r_hat + (1.0 - r_hat) / s), 1.0 - alpha,
          CiMethod::logit, false};
}

/// Interval built on f = arsech(R) and mapped back through sech.
inline ConfidenceInterval ci_arsech_reliability(double r_hat, double se_r, double alpha) {
  detail::require_se(se_r);
  const double z = detail::two_sided_z(alpha);
  if (!(r_hat >= 0.0 && r_hat <= 1.0)) throw std::domain_error("reliability estimate must lie in [0, 1]");
  if (r_hat == 0.0 || r_hat == 1.0) return {r_hat, r_hat, 1.0 - alpha, CiMethod::arsech, true};
  const double root = std::sqrt(1.0 - r_hat * r_hat);
  const double f_hat = std::log((1.0 + root) / r_hat);
  const double se_f = se_r / (r_hat * root);
  const double upper_f = f_hat + z * se_f;
  // sech is even, so a negative lower end would fold back below r_hat
  const double lower_f = std::max(0.0, f_hat - z * se_f);
  auto sech = [](double u) { return 2.0 / (std::exp(-u) + std::exp(u)); };
  return {sech(upper_f), sech(lower_f), 1.0 - alpha, CiMethod::arsech, false};
}

inline ConfidenceInterval ci_log_mean(double t_hat, double se_t, double alpha) {
  detail::require_se(se_t);
  const double z = detail::two_sided_z(alpha);
  if (!(t_hat > 0.0)) throw std::domain_error("mean lifetime estimate must be positive");
  const double m = std::exp(z * se_t / t_hat);
  return {t_hat / m, t_hat * m, 1.0 - alpha, CiMethod::log, false};
}

// ============================================================================
// Wald-type tests
// ============================================================================

/// Linear hypothesis m(theta) = A theta - c = 0 with r = rows(A).
class WaldSpec {
 public:
  WaldSpec(Matrix a, Vector c) : a_(std::move(a)), c_(std::move(c)) {
    if (a_.rows() == 0 || a_.rows() != c_.size()) {
      throw std::invalid_argument("WaldSpec: A must have one row per entry of c");
    }
    if (a_.rows() > a_.cols()) throw std::invalid_argument("WaldSpec: more constraints than parameters");
    // full row rank: A A^T must be nonsingular
    const SymmetricEigen eig = symmetric_eigen(a_ * a_.transpose());
    double max_abs = 0.0;
    double min_abs = std::numeric_limits<double>::infinity();
    for (double v : eig.values) {
      max_abs = std::max(max_abs, std::abs(v));
      min_abs = std::min(min_abs, std::abs(v));
    }
    if (!(max_abs > 0.0) || min_abs <= 1e-10 * max_abs) {
      throw std::invalid_argument("WaldSpec: constraint matrix A is rank deficient");
    }
  }

  const Matrix& a() const { return a_; }
  const Vector& c() const { return c_; }
  int rank() const { return static_cast<int>(a_.rows()); }

  /// A theta - c
  Vector residual(const ParamVector& theta) const {
    if (theta.dim() != a_.cols()) throw std::domain_error("WaldSpec: parameter dimension mismatch");
    Vector m = a_ * theta.flat();
    for (std::size_t k = 0; k < m.size(); ++k) m[k] -= c_[k];
    return m;
  }

 private:
  Matrix a_;
  Vector c_;
};

struct WaldResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::map<double, bool> reject_at;
};

class SingularConstraintCovariance : public std::runtime_error {
 public:
  SingularConstraintCovariance() : std::runtime_error("constraint covariance singular") {}
};

namespace detail {

// m^T (A V A^T)^-1 m
inline double wald_quadratic(const Matrix& a, std::span<const double> m, const Matrix& v) {
  const Matrix middle = a * v * a.transpose();
  Matrix sym = middle;
  for (std::size_t i = 0; i < sym.rows(); ++i)
    for (std::size_t j = i + 1; j < sym.cols(); ++j) {
      const double avg = 0.5 * (sym(i, j) + sym(j, i));
      sym(i, j) = avg;
      sym(j, i) = avg;
    }
  for (double e : sym.data()) {
    if (!std::isfinite(e)) throw SingularConstraintCovariance();
  }
  Matrix l;
  if (!cholesky(sym, l)) throw SingularConstraintCovariance();
  const Vector y = cholesky_solve(l, m);
  return std::max(0.0, dot(m, y));
}

inline WaldResult wald_result(double statistic, int dof) {
  WaldResult r;
  r.statistic = statistic;
  r.dof = dof;
  r.p_value = chisq_sf(statistic, dof);
  for (double level : {0.01, 0.05, 0.10}) r.reject_at[level] = statistic > chisq_quantile(level, dof);
  return r;
}

}  // namespace detail

/// W_K = K m^T (M^T Sigma M)^-1 m with Sigma = K * fit.covariance and
/// M = A^T, compared with chi^2_r.
inline WaldResult wald_type_test(const FitResult& fit, const WaldSpec& spec) {
  const Vector m = spec.residual(fit.theta_hat);
  const double k_total = static_cast<double>(fit.total_devices);
  Matrix sigma = fit.covariance;
  sigma *= k_total;
  const double w = k_total * detail::wald_quadratic(spec.a(), m, sigma);
  return detail::wald_result(w, spec.rank());
}

/// The classical Wald statistic m^T (A I_obs^-1 A^T)^-1 m computed from the
/// observed Fisher information, independent of the sandwich machinery.
inline WaldResult classical_wald_test(const ParamVector& theta_hat, const Dataset& data, const WaldSpec& spec) {
  const SpdInverse v = invert_spd(observed_fisher_information(theta_hat, data));
  const Vector m = spec.residual(theta_hat);
  return detail::wald_result(detail::wald_quadratic(spec.a(), m, v.inverse), spec.rank());
}

/// A selecting (a_j, b_j), c = 0: does stress factor j affect the lifetime?
inline WaldSpec stress_factor_spec(std::size_t num_factors, std::size_t j) {
  if (j < 1 || j > num_factors) throw std::out_of_range("stress factor index must lie in [1, J]");
  Matrix a(2, 2 * (num_factors + 1));
  a(0, j) = 1.0;
  a(1, num_factors + 1 + j) = 1.0;
  return WaldSpec(std::move(a), Vector{0.0, 0.0});
}

inline WaldResult stress_factor_test(const FitResult& fit, std::size_t j) {
  return wald_type_test(fit, stress_factor_spec(fit.theta_hat.num_factors(), j));
}

/// H0: theta_k = value (r = 1).
inline WaldSpec coefficient_spec(std::size_t dim, std::size_t k, double value) {
  if (k >= dim) throw std::out_of_range("coefficient index out of range");
  Matrix a(1, dim);
  a(0, k) = 1.0;
  return WaldSpec(std::move(a), Vector{value});
}

}  // namespace oneshot_dpd
