#pragma once

// Weighted Kullback-Leibler and density power divergence objectives between
// empirical failure fractions and model failure probabilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "oneshot_dpd/model.hpp"
#include "oneshot_dpd/numerics.hpp"

namespace oneshot_dpd {

/// Floor applied to F and R before they enter negative powers.
inline constexpr double kProbabilityClamp = 1e-12;

/// Empirical and model probability pairs for one test group.
struct ProbPair {
  double p_fail;    // n / K
  double p_surv;    // 1 - n / K
  double pi_fail;   // F
  double pi_surv;   // R
};

/// Model failure and survival probabilities. R comes from the upper tail
/// rather than 1 - F so that it keeps relative accuracy when F is near 1.
struct CellProbabilities {
  double F;
  double R;
};

inline CellProbabilities cell_probabilities(const ParamVector& theta, const TestGroup& g) {
  const double z = standardized(theta, g.x(), g.log_tau());
  return {std_normal_cdf(z), std_normal_sf(z)};
}

inline ProbPair prob_pair(const ParamVector& theta, const TestGroup& g) {
  const CellProbabilities cp = cell_probabilities(theta, g);
  const double p = g.failure_fraction();
  return {p, 1.0 - p, cp.F, cp.R};
}

namespace detail {

inline double clamp_prob(double v) {
  return std::clamp(v, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

inline void require_beta(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw std::domain_error("tuning parameter beta must be finite and >= 0");
  }
}

inline void require_params_match(const ParamVector& theta, const Dataset& data) {
  if (theta.num_factors() != data.num_factors()) {
    throw std::domain_error("parameter vector does not match the dataset's stress factors");
  }
}

// c log(q) with the 0 log 0 = 0 convention.
inline double xlogy(double c, double q) {
  if (c == 0.0) return 0.0;
  return c * std::log(q);
}

// F^(beta-1) + R^(beta-1) on clamped probabilities.
inline double power_weight(double F, double R, double beta) {
  const double f = clamp_prob(F);
  const double r = clamp_prob(R);
  return std::pow(f, beta - 1.0) + std::pow(r, beta - 1.0);
}

}  // namespace detail

/// -sum_i [n_i log F_i + (K_i - n_i) log R_i]. Returns +infinity when a
/// probability underflows to zero against a nonzero count.
inline double neg_log_likelihood(const ParamVector& theta, const Dataset& data) {
  detail::require_params_match(theta, data);
  double total = 0.0;
  for (const auto& g : data.groups()) {
    const CellProbabilities cp = cell_probabilities(theta, g);
    const double n = g.failures();
    const double s = static_cast<double>(g.devices()) - n;
    if ((n > 0.0 && cp.F <= 0.0) || (s > 0.0 && cp.R <= 0.0)) {
      return std::numeric_limits<double>::infinity();
    }
    total -= detail::xlogy(n, cp.F) + detail::xlogy(s, cp.R);
  }
  return total;
}

/// sum_i (K_i / K) d_KL(p_hat_i, pi_i(theta)).
inline double kl_objective(const ParamVector& theta, const Dataset& data) {
  detail::require_params_match(theta, data);
  const double k_total = static_cast<double>(data.total_devices());
  double total = 0.0;
  for (const auto& g : data.groups()) {
    const ProbPair pp = prob_pair(theta, g);
    if ((pp.p_fail > 0.0 && pp.pi_fail <= 0.0) || (pp.p_surv > 0.0 && pp.pi_surv <= 0.0)) {
      return std::numeric_limits<double>::infinity();
    }
    double d = 0.0;
    if (pp.p_fail > 0.0) d += pp.p_fail * std::log(pp.p_fail / pp.pi_fail);
    if (pp.p_surv > 0.0) d += pp.p_surv * std::log(pp.p_surv / pp.pi_surv);
    total += static_cast<double>(g.devices()) / k_total * d;
  }
  return total;
}

/// The theta-free part of kl_objective: sum_i (K_i/K)(p log p + q log q).
inline double kl_constant(const Dataset& data) {
  const double k_total = static_cast<double>(data.total_devices());
  double c = 0.0;
  for (const auto& g : data.groups()) {
    const double p = g.failure_fraction();
    c += static_cast<double>(g.devices()) / k_total * (detail::xlogy(p, p) + detail::xlogy(1.0 - p, 1.0 - p));
  }
  return c;
}

/// Weighted DPD objective sum_i (K_i/K) d*_beta(p_hat_i, pi_i(theta)).
/// beta = 0 gives the negative log-likelihood divided by K, which differs
/// from kl_objective only by kl_constant.
inline double dpd_objective(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta, data);
  const double k_total = static_cast<double>(data.total_devices());
  if (beta == 0.0) return neg_log_likelihood(theta, data) / k_total;

  const double ratio = (beta + 1.0) / beta;
  double total = 0.0;
  for (const auto& g : data.groups()) {
    const CellProbabilities cp = cell_probabilities(theta, g);
    const double p = g.failure_fraction();
    const double F = detail::clamp_prob(cp.F);
    const double R = detail::clamp_prob(cp.R);
    const double fb = std::pow(F, beta);
    const double rb = std::pow(R, beta);
    const double d = (fb * F + rb * R) - ratio * (p * fb + (1.0 - p) * rb);
    total += static_cast<double>(g.devices()) / k_total * d;
  }
  return total;
}

/// Exact gradient of dpd_objective:
///   (beta + 1)/K * sum_i (K_i F_i - n_i)(F_i^(beta-1) + R_i^(beta-1)) dF_i/dtheta.
inline Vector dpd_gradient(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta, data);
  const double k_total = static_cast<double>(data.total_devices());
  const std::size_t p = data.num_factors() + 1;
  Vector grad(2 * p, 0.0);
  for (const auto& g : data.groups()) {
    const LinkValues lv = link(theta, g.x());
    const double z = (g.log_tau() - lv.mu) / lv.sigma;
    const double F = std_normal_cdf(z);
    const double R = std_normal_sf(z);
    const double pdf = std_normal_pdf(z);
    const double resid = static_cast<double>(g.devices()) * F - g.failures();
    const double w = (beta + 1.0) / k_total * resid * detail::power_weight(F, R, beta);
    const double d_mu = -pdf / lv.sigma;
    const double d_ls = -z * pdf;
    const auto x = g.x();
    for (std::size_t j = 0; j < p; ++j) {
      grad[j] += w * d_mu * x[j];
      grad[p + j] += w * d_ls * x[j];
    }
  }
  return grad;
}

/// Left-hand side of the estimating equations,
///   sum_i delta_i (K_i F_i - n_i)(F_i^(beta-1) + R_i^(beta-1)) x_i,
/// assembled from delta_vector. Equals K/(beta+1) times dpd_gradient.
inline Vector estimating_equations(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta, data);
  Vector total(data.param_dim(), 0.0);
  for (const auto& g : data.groups()) {
    const Vector dF = full_gradient_F(theta, g.x(), g.log_tau());
    const CellProbabilities cp = cell_probabilities(theta, g);
    const double factor = (static_cast<double>(g.devices()) * cp.F - g.failures()) *
                          detail::power_weight(cp.F, cp.R, beta);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += factor * dF[k];
  }
  return total;
}

/// Exact Hessian of dpd_objective. With c_i the scalar multiplying dF_i in
/// dpd_gradient, this is sum_i [dc_i/dF * dF dF^T + c_i d2F], where the
/// second derivative of F = Phi(z) follows from dz/da = -x/sigma and
/// dz/db = -z x.
inline Matrix dpd_hessian(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta, data);
  const double k_total = static_cast<double>(data.total_devices());
  const std::size_t p = data.num_factors() + 1;
  Matrix h(2 * p, 2 * p);
  Vector grad_z(2 * p);
  for (const auto& g : data.groups()) {
    const LinkValues lv = link(theta, g.x());
    const double z = (g.log_tau() - lv.mu) / lv.sigma;
    const double F = std_normal_cdf(z);
    const double R = std_normal_sf(z);
    const double pdf = std_normal_pdf(z);
    const double Kc = static_cast<double>(g.devices());
    const double resid = Kc * F - g.failures();
    const double f = detail::clamp_prob(F);
    const double r = detail::clamp_prob(R);
    const double weight = std::pow(f, beta - 1.0) + std::pow(r, beta - 1.0);
    const double weight_deriv = (beta - 1.0) * (std::pow(f, beta - 2.0) - std::pow(r, beta - 2.0));
    const double scale = (beta + 1.0) / k_total;
    const double c = scale * resid * weight;
    const double dc_dF = scale * (Kc * weight + resid * weight_deriv);

    const auto x = g.x();
    for (std::size_t j = 0; j < p; ++j) {
      grad_z[j] = -x[j] / lv.sigma;
      grad_z[p + j] = -z * x[j];
    }
    // dF dF^T = pdf^2 grad_z grad_z^T; d2F = -z pdf grad_z grad_z^T + pdf d2z
    h.add_outer(grad_z, grad_z, dc_dF * pdf * pdf - c * z * pdf);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const double xx = x[i] * x[j];
        h(i, p + j) += c * pdf * xx / lv.sigma;
        h(p + j, i) += c * pdf * xx / lv.sigma;
        h(p + i, p + j) += c * pdf * z * xx;
      }
  }
  return h;
}

}  // namespace oneshot_dpd
