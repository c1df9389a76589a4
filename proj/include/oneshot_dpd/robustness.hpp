#pragma once

// Influence functions of the weighted minimum DPD estimator and the
// second-order influence function of the Wald-type test functional.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "oneshot_dpd/estimation.hpp"
#include "oneshot_dpd/inference.hpp"
#include "oneshot_dpd/model.hpp"
#include "oneshot_dpd/numerics.hpp"

namespace oneshot_dpd {

/// Contamination query at theta0. `outcomes[k]` is the binary status
/// (1 = failed at inspection) of the contaminating observation placed in
/// group `groups[k]`.
struct IFQuery {
  ParamVector theta0;
  const Dataset* data = nullptr;
  std::optional<std::size_t> group;  // nullopt: every group
  std::vector<int> outcomes;         // one entry, or one per group
  double beta = 0.0;
};

struct InfluenceVector {
  Vector value;
  bool near_singular = false;
};

namespace detail {

// F^(beta-1) + R^(beta-1) from both normal tails, only floored at the
// smallest normal double so that unbounded weights stay visible.
inline double tail_power_weight(double z, double beta) {
  constexpr double tiny = std::numeric_limits<double>::min();
  const double F = std::max(std_normal_cdf(z), tiny);
  const double R = std::max(std_normal_sf(z), tiny);
  return std::pow(F, beta - 1.0) + std::pow(R, beta - 1.0);
}

inline void require_outcome(int y) {
  if (y != 0 && y != 1) throw std::invalid_argument("contaminating outcome must be 0 or 1");
}

// (K_i/K) dF_i (F^(beta-1)+R^(beta-1)) (y - F_i), dF_i the true gradient of F_i
inline Vector influence_term(const ParamVector& theta0, const Dataset& data, std::size_t i, double y,
                             double beta) {
  const TestGroup& g = data[i];
  const double z = standardized(theta0, g.x(), g.log_tau());
  const double F = std_normal_cdf(z);
  Vector term = full_gradient_F(theta0, g.x(), g.log_tau());
  const double scale = static_cast<double>(g.devices()) / static_cast<double>(data.total_devices()) *
                       tail_power_weight(z, beta) * (y - F);
  for (double& v : term) v *= scale;
  return term;
}

inline InfluenceVector apply_j_inverse(const ParamVector& theta0, const Dataset& data, double beta,
                                       const Vector& rhs) {
  const SpdInverse j_inv = invert_spd(j_beta_matrix(theta0, data, beta));
  return {j_inv.inverse * rhs, j_inv.near_singular};
}

}  // namespace detail

/// IF of the estimator for one contaminating observation in group i0:
///   J_beta^-1 (K_i0/K) dF_i0 (F^(beta-1) + R^(beta-1)) (y - F_i0).
/// Written with the negated gradient -dF this becomes the familiar
/// (F - y) form; J_beta is the same under either sign.
inline InfluenceVector if_single(const ParamVector& theta0, const Dataset& data, std::size_t group, int outcome,
                                 double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta0, data);
  detail::require_outcome(outcome);
  if (group >= data.size()) throw std::out_of_range("if_single: group index out of range");
  return detail::apply_j_inverse(theta0, data, beta,
                                 detail::influence_term(theta0, data, group, outcome, beta));
}

/// IF with one contaminating observation in every group, outcome y_i each.
inline InfluenceVector if_all(const ParamVector& theta0, const Dataset& data, std::span<const int> outcomes,
                              double beta) {
  detail::require_beta(beta);
  detail::require_params_match(theta0, data);
  if (outcomes.size() != data.size()) throw std::invalid_argument("if_all: need one outcome per group");
  Vector total(data.param_dim(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::require_outcome(outcomes[i]);
    const Vector term = detail::influence_term(theta0, data, i, outcomes[i], beta);
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += term[k];
  }
  return detail::apply_j_inverse(theta0, data, beta, total);
}

inline InfluenceVector influence(const IFQuery& q) {
  if (q.data == nullptr) throw std::invalid_argument("IFQuery: dataset missing");
  if (q.group) {
    if (q.outcomes.size() != 1) throw std::invalid_argument("IFQuery: single-group query needs one outcome");
    return if_single(q.theta0, *q.data, *q.group, q.outcomes.front(), q.beta);
  }
  return if_all(q.theta0, *q.data, q.outcomes, q.beta);
}

// ============================================================================
// IF factor curves for a single stress factor
// ============================================================================

struct HFactors {
  double h1;
  double h2;
};

/// h1 = phi(z)/sigma [Phi(z)^(beta-1) + (1-Phi(z))^(beta-1)] x and
/// h2 = z phi(z) [...] x, z = (omega - mu)/sigma, for theta = (a0, a1, b0, b1).
inline HFactors h_factors(double omega, double x, const ParamVector& theta, double beta) {
  detail::require_beta(beta);
  if (theta.num_factors() != 1) throw std::invalid_argument("h_factors: theta must have one stress factor");
  const double xv[2] = {1.0, x};
  const LinkValues lv = link(theta, xv);
  const double z = (omega - lv.mu) / lv.sigma;
  const double common = std_normal_pdf(z) * detail::tail_power_weight(z, beta) * x;
  return {common / lv.sigma, z * common};
}

/// The two curve families: vary omega at mu = sigma = x = 1, or vary x at
/// omega = 1 with theta = (0, -1, 0, +1) or (0, -1, 0, -1).
enum class InfluencePreset { vary_omega, vary_x_positive_b1, vary_x_negative_b1 };

inline std::string_view to_string(InfluencePreset p) {
  switch (p) {
    case InfluencePreset::vary_omega: return "fig1-omega";
    case InfluencePreset::vary_x_positive_b1: return "fig1-x-pos";
    case InfluencePreset::vary_x_negative_b1: return "fig1-x-neg";
  }
  return "?";
}

inline ParamVector preset_theta(InfluencePreset p) {
  switch (p) {
    case InfluencePreset::vary_omega: return ParamVector{1.0, 0.0, 0.0, 0.0};
    case InfluencePreset::vary_x_positive_b1: return ParamVector{0.0, -1.0, 0.0, 1.0};
    case InfluencePreset::vary_x_negative_b1: return ParamVector{0.0, -1.0, 0.0, -1.0};
  }
  throw std::invalid_argument("unknown preset");
}

struct HCurvePoint {
  double abscissa;  // omega or x
  double beta;
  double h1;
  double h2;
};

/// Evaluate a preset on `grid` for every beta. Rows are ordered beta-major.
inline std::vector<HCurvePoint> h_curve(InfluencePreset preset, std::span<const double> grid,
                                        std::span<const double> betas) {
  const ParamVector theta = preset_theta(preset);
  std::vector<HCurvePoint> rows;
  rows.reserve(grid.size() * betas.size());
  for (double beta : betas) {
    for (double v : grid) {
      const HFactors h = preset == InfluencePreset::vary_omega ? h_factors(v, 1.0, theta, beta)
                                                               : h_factors(1.0, v, theta, beta);
      rows.push_back({v, beta, h.h1, h.h2});
    }
  }
  return rows;
}

struct HMaxima {
  double max_abs_h1;
  double max_abs_h2;
  double argmax_h1;
  double argmax_h2;
};

/// Maxima of |h1|, |h2| over omega in [mu - w sigma, mu + w sigma] on a grid
/// anchored at mu with spacing `step` (in sigma units), so wider windows
/// contain every point of narrower ones.
inline HMaxima h_window_maxima(const ParamVector& theta, double x, double beta, double half_width,
                               double step = 1e-3) {
  if (!(half_width > 0.0) || !(step > 0.0)) throw std::invalid_argument("h_window_maxima: invalid window");
  const double xv[2] = {1.0, x};
  const LinkValues lv = link(theta, xv);
  const long n = static_cast<long>(std::floor(half_width / step + 1e-9));
  HMaxima m{0.0, 0.0, lv.mu, lv.mu};
  for (long k = -n; k <= n; ++k) {
    const double omega = lv.mu + static_cast<double>(k) * step * lv.sigma;
    const HFactors h = h_factors(omega, x, theta, beta);
    if (std::abs(h.h1) > m.max_abs_h1) {
      m.max_abs_h1 = std::abs(h.h1);
      m.argmax_h1 = omega;
    }
    if (std::abs(h.h2) > m.max_abs_h2) {
      m.max_abs_h2 = std::abs(h.h2);
      m.argmax_h2 = omega;
    }
  }
  return m;
}

// ============================================================================
// Wald-type test functional
// ============================================================================

/// Second-order IF of the Wald-type functional,
///   2 (A theta0 - c)^T (A Sigma_beta(theta0) A^T)^-1 (A theta0 - c) * IF^T IF.
/// The first-order IF of the test functional vanishes identically, and this
/// one vanishes whenever theta0 lies on the null set.
inline double if2_wald(std::span<const double> influence, const ParamVector& theta0, const Dataset& data,
                       double beta, const WaldSpec& spec) {
  if (influence.size() != theta0.dim()) throw std::invalid_argument("if2_wald: influence dimension mismatch");
  const Vector m = spec.residual(theta0);
  const SandwichCovariance sc = sigma_beta(theta0, data, beta);
  const double q = detail::wald_quadratic(spec.a(), m, sc.sigma);
  return 2.0 * q * dot(influence, influence);
}

inline double if2_wald(const IFQuery& query, const WaldSpec& spec) {
  const InfluenceVector iv = influence(query);
  return if2_wald(iv.value, query.theta0, *query.data, query.beta, spec);
}

}  // namespace oneshot_dpd
