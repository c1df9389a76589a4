#pragma once

// Weighted minimum DPD fitting, the J/K sandwich covariance and delta-method
// standard errors for reliability and mean lifetime.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <random>
#include <stdexcept>
#include <variant>
#include <vector>

#include "oneshot_dpd/model.hpp"
#include "oneshot_dpd/numerics.hpp"
#include "oneshot_dpd/objectives.hpp"
#include "oneshot_dpd/random.hpp"

namespace oneshot_dpd {

// ============================================================================
// Sandwich pieces
// ============================================================================

namespace detail {

// sum_i (K_i/K) scalar_i(F_i, R_i) dF_i dF_i^T
template <typename ScalarFn>
Matrix weighted_gradient_outer(const ParamVector& theta, const Dataset& data, ScalarFn&& scalar) {
  require_params_match(theta, data);
  const double k_total = static_cast<double>(data.total_devices());
  Matrix m(data.param_dim(), data.param_dim());
  for (const auto& g : data.groups()) {
    const Vector dF = full_gradient_F(theta, g.x(), g.log_tau());
    const CellProbabilities cp = cell_probabilities(theta, g);
    const double w = static_cast<double>(g.devices()) / k_total * scalar(cp.F, cp.R);
    m.add_outer(dF, dF, w);
  }
  return m;
}

}  // namespace detail

/// J_beta = sum_i (K_i/K) Delta_i (F^(beta-1) + R^(beta-1)) x_i x_i^T.
inline Matrix j_beta_matrix(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  return detail::weighted_gradient_outer(theta, data, [beta](double F, double R) {
    return detail::power_weight(F, R, beta);
  });
}

/// K_beta = sum_i (K_i/K) Delta_i F R (F^(beta-1) + R^(beta-1))^2 x_i x_i^T.
inline Matrix k_beta_matrix(const ParamVector& theta, const Dataset& data, double beta) {
  detail::require_beta(beta);
  return detail::weighted_gradient_outer(theta, data, [beta](double F, double R) {
    const double w = detail::power_weight(F, R, beta);
    return detail::clamp_prob(F) * detail::clamp_prob(R) * w * w;
  });
}

/// Observed Fisher information of the likelihood,
///   sum_i K_i (1/F_i + 1/R_i) dF_i dF_i^T,
/// built directly rather than from J_0 so the two can be compared.
inline Matrix observed_fisher_information(const ParamVector& theta, const Dataset& data) {
  detail::require_params_match(theta, data);
  const std::size_t dim = data.param_dim();
  Matrix info(dim, dim);
  for (const auto& g : data.groups()) {
    const LinkValues lv = link(theta, g.x());
    const double z = (g.log_tau() - lv.mu) / lv.sigma;
    const double F = std::max(std_normal_cdf(z), kProbabilityClamp);
    const double R = std::max(std_normal_sf(z), kProbabilityClamp);
    const double pdf = std_normal_pdf(z);
    const auto x = g.x();
    Vector dF(dim);
    const std::size_t p = x.size();
    for (std::size_t j = 0; j < p; ++j) {
      dF[j] = -pdf / lv.sigma * x[j];
      dF[p + j] = -z * pdf * x[j];
    }
    info.add_outer(dF, dF, static_cast<double>(g.devices()) / (F * R));
  }
  return info;
}

struct SandwichCovariance {
  Matrix sigma;  // J^-1 K J^-1
  bool near_singular = false;
};

/// Sigma_beta = J_beta^-1 K_beta J_beta^-1, the asymptotic covariance of
/// sqrt(K) (theta_hat - theta).
inline SandwichCovariance sigma_beta(const ParamVector& theta, const Dataset& data, double beta) {
  const SpdInverse j_inv = invert_spd(j_beta_matrix(theta, data, beta));
  Matrix s = j_inv.inverse * k_beta_matrix(theta, data, beta) * j_inv.inverse;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i + 1; j < s.cols(); ++j) {
      const double avg = 0.5 * (s(i, j) + s(j, i));
      s(i, j) = avg;
      s(j, i) = avg;
    }
  return {std::move(s), j_inv.near_singular};
}

// ============================================================================
// Fitting
// ============================================================================

struct FitConfig {
  double beta = 0.0;
  int max_iter = 200;
  double grad_tol = 1e-8;
  int n_starts = 5;
  std::uint64_t seed = 20220915;
  // >1 runs the starts on separate threads
  int threads = 1;
};

struct FitResult {
  ParamVector theta_hat;
  double beta = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  Matrix covariance;  // Sigma_beta / K
  bool converged = false;
  bool near_singular = false;
  int iterations = 0;
  int winning_start = 0;
  std::int64_t total_devices = 0;
};

/// Thrown when the data cannot identify the parameters at all.
class NonIdentifiableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Probit-regression seed: regress W_i on (x_i, z_i) with
/// z_i = Phi^-1((n_i + 0.5)/(K_i + 1)); the z coefficient is a common scale.
inline ParamVector probit_initializer(const Dataset& data) {
  const std::size_t p = data.num_factors() + 1;
  Matrix xtx(p + 1, p + 1);
  Vector xty(p + 1, 0.0);
  Vector row(p + 1);
  for (const auto& g : data.groups()) {
    const double pt = (g.failures() + 0.5) / (static_cast<double>(g.devices()) + 1.0);
    const auto x = g.x();
    std::copy(x.begin(), x.end(), row.begin());
    row[p] = std_normal_quantile(pt);
    xtx.add_outer(row, row, 1.0);
    for (std::size_t k = 0; k <= p; ++k) xty[k] += row[k] * g.log_tau();
  }
  // light ridge keeps the system solvable with fewer groups than unknowns
  double max_diag = 0.0;
  for (std::size_t k = 0; k <= p; ++k) max_diag = std::max(max_diag, xtx(k, k));
  for (std::size_t k = 0; k <= p; ++k) xtx(k, k) += 1e-10 * max_diag;
  const Vector coef = solve_spd(xtx, xty).x;

  double scale = coef[p];
  ParamVector theta(data.num_factors());
  if (!(scale > 1e-3) || !std::isfinite(scale)) {
    // the probit slope has the wrong sign or vanished; refit a with unit scale
    scale = 1.0;
    Matrix xx(p, p);
    Vector xy(p, 0.0);
    for (const auto& g : data.groups()) {
      const double pt = (g.failures() + 0.5) / (static_cast<double>(g.devices()) + 1.0);
      xx.add_outer(g.x(), g.x(), 1.0);
      const double target = g.log_tau() - std_normal_quantile(pt);
      for (std::size_t k = 0; k < p; ++k) xy[k] += g.x()[k] * target;
    }
    double md = 0.0;
    for (std::size_t k = 0; k < p; ++k) md = std::max(md, xx(k, k));
    for (std::size_t k = 0; k < p; ++k) xx(k, k) += 1e-10 * md;
    const Vector a = solve_spd(xx, xy).x;
    for (std::size_t k = 0; k < p; ++k) theta.a(k) = a[k];
  } else {
    for (std::size_t k = 0; k < p; ++k) theta.a(k) = coef[k];
  }
  theta.b(0) = std::log(scale);
  return theta;
}

namespace detail {

struct StartOutcome {
  ParamVector theta;
  double objective = std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  int start_index = 0;
};

inline double safe_objective(const ParamVector& theta, const Dataset& data, double beta) {
  try {
    const double v = dpd_objective(theta, data, beta);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const std::domain_error&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline ParamVector step_along(const ParamVector& theta, std::span<const double> dir, double t) {
  Vector next(theta.flat().begin(), theta.flat().end());
  for (std::size_t k = 0; k < next.size(); ++k) next[k] += t * dir[k];
  for (double v : next) {
    if (!std::isfinite(v)) return theta;
  }
  return ParamVector::from_flat(next);
}

// Newton iterations with Armijo backtracking. The exact Hessian is used when
// it is positive definite; otherwise the Gauss-Newton matrix (beta+1) J_beta,
// and steepest descent if neither yields a descent direction.
inline StartOutcome minimize_from(ParamVector theta, const Dataset& data, const FitConfig& cfg,
                                  int start_index) {
  StartOutcome out;
  out.start_index = start_index;
  double f = safe_objective(theta, data, cfg.beta);
  if (!std::isfinite(f)) {
    out.theta = theta;
    return out;
  }
  Vector grad = dpd_gradient(theta, data, cfg.beta);
  double gnorm = norm2(grad);
  int iter = 0;
  for (; iter < cfg.max_iter && gnorm > cfg.grad_tol; ++iter) {
    std::vector<Vector> directions;
    {
      const Matrix h = dpd_hessian(theta, data, cfg.beta);
      if (h.is_symmetric(1e-8)) {
        Matrix hs = h;
        for (std::size_t i = 0; i < hs.rows(); ++i)
          for (std::size_t j = i + 1; j < hs.cols(); ++j) hs(j, i) = hs(i, j);
        Matrix l;
        if (cholesky(hs, l)) {
          Vector d = cholesky_solve(l, grad);
          for (double& v : d) v = -v;
          directions.push_back(std::move(d));
        }
      }
    }
    {
      Matrix gn = j_beta_matrix(theta, data, cfg.beta);
      gn *= (cfg.beta + 1.0);
      Vector d = solve_spd(gn, grad).x;
      for (double& v : d) v = -v;
      directions.push_back(std::move(d));
    }
    {
      Vector d = grad;
      for (double& v : d) v = -v / std::max(1.0, gnorm);
      directions.push_back(std::move(d));
    }

    bool moved = false;
    for (const Vector& dir : directions) {
      const double slope = dot(grad, dir);
      bool finite = true;
      for (double v : dir) finite = finite && std::isfinite(v);
      if (!finite || !(slope < 0.0)) continue;
      // cap very long steps so a flat direction cannot throw the iterate far away
      double t = std::min(1.0, 5.0 / std::max(norm2(dir), 1e-300));
      for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
        const ParamVector cand = step_along(theta, dir, t);
        const double fc = safe_objective(cand, data, cfg.beta);
        if (fc < f + 1e-4 * t * slope || (fc < f && halving > 40)) {
          theta = cand;
          f = fc;
          moved = true;
          break;
        }
      }
      if (moved) break;
    }
    if (!moved && !directions.empty()) {
      // Near the optimum the decrease falls below the rounding noise of f and
      // Armijo cannot tell candidates apart. Take the full step if f stays
      // within that noise and the gradient norm at least halves.
      const ParamVector cand = step_along(theta, directions.front(), 1.0);
      const double fc = safe_objective(cand, data, cfg.beta);
      const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
      if (std::isfinite(fc) && fc <= f + noise) {
        Vector gc = dpd_gradient(cand, data, cfg.beta);
        if (norm2(gc) < 0.5 * gnorm) {
          theta = cand;
          f = std::min(f, fc);
          moved = true;
        }
      }
    }
    if (!moved) break;
    grad = dpd_gradient(theta, data, cfg.beta);
    gnorm = norm2(grad);
  }
  out.theta = theta;
  out.objective = f;
  out.grad_norm = gnorm;
  out.iterations = iter;
  out.converged = gnorm <= cfg.grad_tol;
  return out;
}

// Winner: converged first, then lowest objective, then lowest gradient norm,
// then lowest start index.
inline bool better_start(const StartOutcome& a, const StartOutcome& b) {
  if (a.converged != b.converged) return a.converged;
  if (a.objective != b.objective) return a.objective < b.objective;
  if (a.grad_norm != b.grad_norm) return a.grad_norm < b.grad_norm;
  return a.start_index < b.start_index;
}

}  // namespace detail

inline void require_identifiable(const Dataset& data) {
  bool all_zero = true;
  bool all_full = true;
  for (const auto& g : data.groups()) {
    all_zero = all_zero && g.failures() == 0.0;
    all_full = all_full && g.failures() == static_cast<double>(g.devices());
  }
  if (all_zero || all_full) {
    throw NonIdentifiableError("non-identifiable: degenerate outcome (all groups have n = 0 or all have n = K)");
  }
}

/// Weighted minimum DPD estimate with its sandwich covariance.
inline FitResult fit(const Dataset& data, const FitConfig& cfg) {
  detail::require_beta(cfg.beta);
  if (!(cfg.grad_tol > 0.0)) throw std::invalid_argument("fit: grad_tol must be positive");
  if (cfg.n_starts < 1) throw std::invalid_argument("fit: n_starts must be >= 1");
  if (cfg.max_iter < 1) throw std::invalid_argument("fit: max_iter must be >= 1");
  require_identifiable(data);

  const ParamVector seed_theta = probit_initializer(data);
  std::vector<ParamVector> starts{seed_theta};
  for (int s = 1; s < cfg.n_starts; ++s) {
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(seed_theta.flat().begin(), seed_theta.flat().end());
    for (double& c : v) c += 0.25 * (1.0 + std::abs(c)) * gauss(rng);
    starts.push_back(ParamVector::from_flat(v));
  }

  std::vector<detail::StartOutcome> outcomes(starts.size());
  if (cfg.threads > 1 && starts.size() > 1) {
    std::vector<std::future<detail::StartOutcome>> futures;
    for (std::size_t s = 0; s < starts.size(); ++s) {
      futures.push_back(std::async(std::launch::async, [&, s] {
        return detail::minimize_from(starts[s], data, cfg, static_cast<int>(s));
      }));
    }
    for (std::size_t s = 0; s < starts.size(); ++s) outcomes[s] = futures[s].get();
  } else {
    for (std::size_t s = 0; s < starts.size(); ++s) {
      outcomes[s] = detail::minimize_from(starts[s], data, cfg, static_cast<int>(s));
    }
  }
  const auto best = std::min_element(outcomes.begin(), outcomes.end(), detail::better_start);

  FitResult result;
  result.theta_hat = best->theta;
  result.beta = cfg.beta;
  result.objective = best->objective;
  result.grad_norm = best->grad_norm;
  result.converged = best->converged;
  result.iterations = best->iterations;
  result.winning_start = best->start_index;
  result.total_devices = data.total_devices();
  try {
    SandwichCovariance sc = sigma_beta(result.theta_hat, data, cfg.beta);
    sc.sigma *= 1.0 / static_cast<double>(data.total_devices());
    result.covariance = std::move(sc.sigma);
    result.near_singular = sc.near_singular;
  } catch (const std::domain_error&) {
    result.covariance = Matrix(data.param_dim(), data.param_dim(), std::numeric_limits<double>::quiet_NaN());
    result.near_singular = true;
  }
  return result;
}

// ============================================================================
// Delta method
// ============================================================================

/// Reliability R(t0) at covariates x0 (x0 includes the leading 1).
struct ReliabilityTarget {
  Vector x0;
  double t0;
};

/// Mean lifetime at covariates x0 (x0 includes the leading 1).
struct MeanLifetimeTarget {
  Vector x0;
};

using LifetimeTarget = std::variant<ReliabilityTarget, MeanLifetimeTarget>;

inline double target_value(const ParamVector& theta, const LifetimeTarget& target) {
  if (const auto* r = std::get_if<ReliabilityTarget>(&target)) return reliability(theta, r->x0, r->t0);
  return mean_lifetime(theta, std::get<MeanLifetimeTarget>(target).x0);
}

/// Analytic gradient of the target with respect to theta.
inline Vector target_gradient(const ParamVector& theta, const LifetimeTarget& target) {
  if (const auto* r = std::get_if<ReliabilityTarget>(&target)) {
    if (!(r->t0 > 0.0)) throw std::domain_error("reliability target: time must be positive");
    Vector g = full_gradient_F(theta, r->x0, std::log(r->t0));
    for (double& v : g) v = -v;
    return g;
  }
  const auto& x0 = std::get<MeanLifetimeTarget>(target).x0;
  const LinkValues lv = link(theta, x0);
  const double e = mean_lifetime(theta, x0);
  const std::size_t p = x0.size();
  Vector g(2 * p);
  for (std::size_t j = 0; j < p; ++j) {
    g[j] = e * x0[j];
    g[p + j] = e * lv.sigma * lv.sigma * x0[j];
  }
  return g;
}

struct StandardError {
  double value = 0.0;
  bool clipped = false;  // quadratic form came out negative and was set to 0
};

/// sqrt(P^T V P) with P the target gradient at theta_hat and V the fit's
/// covariance.
inline StandardError delta_method_se(const FitResult& fit, const LifetimeTarget& target) {
  const Vector p = target_gradient(fit.theta_hat, target);
  if (fit.covariance.rows() != p.size()) {
    throw std::domain_error("delta_method_se: covariance does not match the parameter dimension");
  }
  const double q = quadratic_form(fit.covariance, p);
  if (!(q >= 0.0)) return {0.0, true};
  return {std::sqrt(q), false};
}

}  // namespace oneshot_dpd
