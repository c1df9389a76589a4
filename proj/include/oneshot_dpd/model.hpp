#pragma once

// Lognormal one-shot device model: test groups, log-linear links and the
// per-group failure probability with its parameter gradient.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "oneshot_dpd/numerics.hpp"

namespace oneshot_dpd {

/// One row of a constant-stress test: K devices inspected at time tau under
/// stress covariates x (x[0] is the intercept 1), n of them found failed.
///
/// The failure count is a double so exact model probabilities can be fed in
/// as fractional counts; values read from files are always integers.
class TestGroup {
 public:
  TestGroup(double tau, std::int64_t devices, double failures, std::vector<double> stresses)
      : tau_(tau), devices_(devices), failures_(failures) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw std::invalid_argument("TestGroup: inspection time must be positive and finite");
    }
    if (devices <= 0) throw std::invalid_argument("TestGroup: device count must be positive");
    if (!(failures >= 0.0) || failures > static_cast<double>(devices)) {
      throw std::invalid_argument("TestGroup: failures must lie in [0, K]");
    }
    for (double s : stresses) {
      if (!std::isfinite(s)) throw std::invalid_argument("TestGroup: non-finite covariate");
    }
    log_tau_ = std::log(tau);
    x_.reserve(stresses.size() + 1);
    x_.push_back(1.0);
    x_.insert(x_.end(), stresses.begin(), stresses.end());
  }

  double tau() const { return tau_; }
  double log_tau() const { return log_tau_; }
  std::int64_t devices() const { return devices_; }
  double failures() const { return failures_; }
  /// Covariates including the leading intercept.
  std::span<const double> x() const { return x_; }
  std::size_t num_factors() const { return x_.size() - 1; }
  double failure_fraction() const { return failures_ / static_cast<double>(devices_); }

 private:
  double tau_;
  double log_tau_;
  std::int64_t devices_;
  double failures_;
  std::vector<double> x_;
};

/// Immutable collection of test groups sharing one covariate layout.
class Dataset {
 public:
  explicit Dataset(std::vector<TestGroup> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) throw std::invalid_argument("Dataset: no test groups");
    num_factors_ = groups_.front().num_factors();
    for (const auto& g : groups_) {
      if (g.num_factors() != num_factors_) {
        throw std::invalid_argument("Dataset: groups disagree on the number of stress factors");
      }
      total_devices_ += g.devices();
    }
  }

  std::span<const TestGroup> groups() const { return groups_; }
  const TestGroup& operator[](std::size_t i) const { return groups_[i]; }
  std::size_t size() const { return groups_.size(); }
  std::size_t num_factors() const { return num_factors_; }
  std::size_t param_dim() const { return 2 * (num_factors_ + 1); }
  std::int64_t total_devices() const { return total_devices_; }

 private:
  std::vector<TestGroup> groups_;
  std::size_t num_factors_ = 0;
  std::int64_t total_devices_ = 0;
};

/// theta = (a_0..a_J, b_0..b_J): location coefficients a and log-scale
/// coefficients b, stored flat in that order.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::size_t num_factors) : values_(2 * (num_factors + 1), 0.0) {}

  ParamVector(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
      throw std::invalid_argument("ParamVector: a and b must be non-empty and of equal length");
    }
    values_.assign(a.begin(), a.end());
    values_.insert(values_.end(), b.begin(), b.end());
    check_finite();
  }

  ParamVector(std::initializer_list<double> flat) : values_(flat) { check_shape(); }

  static ParamVector from_flat(std::span<const double> flat) {
    ParamVector p;
    p.values_.assign(flat.begin(), flat.end());
    p.check_shape();
    return p;
  }

  std::size_t num_factors() const { return values_.size() / 2 - 1; }
  std::size_t dim() const { return values_.size(); }

  double a(std::size_t j) const { return values_[j]; }
  double b(std::size_t j) const { return values_[num_factors() + 1 + j]; }
  double& a(std::size_t j) { return values_[j]; }
  double& b(std::size_t j) { return values_[num_factors() + 1 + j]; }

  std::span<const double> a_block() const { return {values_.data(), num_factors() + 1}; }
  std::span<const double> b_block() const {
    return {values_.data() + num_factors() + 1, num_factors() + 1};
  }

  double operator[](std::size_t k) const { return values_[k]; }
  double& operator[](std::size_t k) { return values_[k]; }

  std::span<const double> flat() const { return values_; }
  const Vector& values() const { return values_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  void check_shape() const {
    if (values_.size() < 2 || values_.size() % 2 != 0) {
      throw std::invalid_argument("ParamVector: flat length must be 2(J+1)");
    }
    check_finite();
  }
  void check_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) throw std::invalid_argument("ParamVector: non-finite entry");
    }
  }

  Vector values_;
};

struct LinkValues {
  double mu;
  double sigma;
};

/// mu = a^T x, sigma = exp(b^T x).
inline LinkValues link(const ParamVector& theta, std::span<const double> x) {
  if (x.size() != theta.num_factors() + 1) {
    throw std::domain_error("link: covariate length does not match the parameter vector");
  }
  if (x[0] != 1.0) throw std::domain_error("link: covariate vector must start with the intercept 1");
  double mu = 0.0;
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    mu += theta.a(j) * x[j];
    eta += theta.b(j) * x[j];
  }
  const double sigma = std::exp(eta);
  if (!std::isfinite(mu) || !std::isfinite(sigma) || sigma == 0.0) {
    throw std::domain_error("link: scale exp(b^T x) overflowed or underflowed");
  }
  return {mu, sigma};
}

/// Standardized log inspection time z = (W - mu) / sigma.
inline double standardized(const ParamVector& theta, std::span<const double> x, double log_time) {
  const LinkValues lv = link(theta, x);
  return (log_time - lv.mu) / lv.sigma;
}

inline double failure_probability(const ParamVector& theta, std::span<const double> x, double tau) {
  if (!(tau > 0.0)) throw std::domain_error("failure_probability: time must be positive");
  return std_normal_cdf(standardized(theta, x, std::log(tau)));
}

/// 1 - F, so that F + R == 1 holds exactly in floating point.
inline double reliability(const ParamVector& theta, std::span<const double> x, double tau) {
  return 1.0 - failure_probability(theta, x, tau);
}

inline double mean_lifetime(const ParamVector& theta, std::span<const double> x) {
  const LinkValues lv = link(theta, x);
  const double e = std::exp(lv.mu + 0.5 * lv.sigma * lv.sigma);
  if (!std::isfinite(e)) throw std::domain_error("mean_lifetime: overflow");
  return e;
}

/// Lognormal lifetime density f(t).
inline double lifetime_pdf(const ParamVector& theta, std::span<const double> x, double t) {
  if (!(t > 0.0)) throw std::domain_error("lifetime_pdf: time must be positive");
  const LinkValues lv = link(theta, x);
  return std_normal_pdf((std::log(t) - lv.mu) / lv.sigma) / (lv.sigma * t);
}

/// f(t) / R(t). The reliability is taken from the upper normal tail so the
/// ratio stays meaningful well past the median.
inline double hazard(const ParamVector& theta, std::span<const double> x, double t) {
  if (!(t > 0.0)) throw std::domain_error("hazard: time must be positive");
  const LinkValues lv = link(theta, x);
  const double z = (std::log(t) - lv.mu) / lv.sigma;
  const double surv = std_normal_sf(z);
  if (surv <= 0.0) throw std::domain_error("hazard: reliability underflows at this time");
  return std_normal_pdf(z) / (lv.sigma * t) / surv;
}

/// Derivatives of F = Phi((W - mu)/sigma) with respect to the linear
/// predictors mu and log sigma. The full gradient is (mu_part * x, log_sigma_part * x).
struct DeltaPair {
  double mu_part;         // -phi(z) / sigma
  double log_sigma_part;  // -z phi(z)
};

inline DeltaPair delta_vector(const ParamVector& theta, std::span<const double> x, double log_time) {
  const LinkValues lv = link(theta, x);
  const double z = (log_time - lv.mu) / lv.sigma;
  const double pdf = std_normal_pdf(z);
  return {-pdf / lv.sigma, -z * pdf};
}

inline Vector expand_delta(const DeltaPair& d, std::span<const double> x) {
  const std::size_t p = x.size();
  Vector g(2 * p);
  for (std::size_t j = 0; j < p; ++j) {
    g[j] = d.mu_part * x[j];
    g[p + j] = d.log_sigma_part * x[j];
  }
  return g;
}

/// dF(W; x, theta) / dtheta, laid out as (a-block, b-block).
inline Vector full_gradient_F(const ParamVector& theta, std::span<const double> x, double log_time) {
  return expand_delta(delta_vector(theta, x, log_time), x);
}

}  // namespace oneshot_dpd
