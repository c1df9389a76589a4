#pragma once

// Simulation of constant-stress one-shot device tests, estimator and test
// studies over many replications, and MaxAE-based tuning of beta.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "oneshot_dpd/estimation.hpp"
#include "oneshot_dpd/inference.hpp"
#include "oneshot_dpd/model.hpp"
#include "oneshot_dpd/parallel.hpp"
#include "oneshot_dpd/random.hpp"

namespace oneshot_dpd {

/// Cross product of stress levels and inspection times, K devices per cell.
/// Cells are numbered stress-major: cell = stress_index * n_times + time_index.
struct Design {
  std::vector<Vector> stress_levels;  // stresses without the intercept
  Vector inspection_times;
  std::int64_t devices_per_cell = 0;
  ParamVector theta0;

  std::size_t num_cells() const { return stress_levels.size() * inspection_times.size(); }

  void validate() const {
    if (stress_levels.empty() || inspection_times.empty()) throw std::invalid_argument("Design: empty design");
    if (devices_per_cell <= 0) throw std::invalid_argument("Design: devices per cell must be positive");
    for (const auto& s : stress_levels) {
      if (s.size() != theta0.num_factors()) {
        throw std::invalid_argument("Design: stress level length does not match theta0");
      }
    }
    for (double t : inspection_times) {
      if (!(t > 0.0)) throw std::invalid_argument("Design: inspection times must be positive");
    }
  }

  /// Covariates of a cell, intercept included.
  Vector covariates(std::size_t cell) const {
    const Vector& s = stress_levels.at(cell / inspection_times.size());
    Vector x{1.0};
    x.insert(x.end(), s.begin(), s.end());
    return x;
  }
  const Vector& stresses(std::size_t cell) const { return stress_levels.at(cell / inspection_times.size()); }
  double time(std::size_t cell) const { return inspection_times.at(cell % inspection_times.size()); }
};

/// Cells whose outcomes are drawn from theta_tilde instead of theta0.
struct Contamination {
  std::vector<std::size_t> cells;
  ParamVector theta_tilde;

  bool empty() const { return cells.empty(); }
};

enum class ReliabilityLevel { low, moderate, high };

struct Scenario {
  std::string name;
  Design design;
  Vector x0;         // normal operating covariates, intercept included
  double t0 = 60.0;  // evaluation time for reliability
  std::optional<Contamination> contamination;
};

/// Simulation presets: stresses {30, 40, 50}, theta0 = (a0, -0.1, -0.6, 0.02)
/// with a0 = 5.8 / 6.0 / 6.2 and matching inspection schedules.
inline Scenario preset_scenario(ReliabilityLevel level, std::int64_t devices_per_cell) {
  Scenario s;
  double a0 = 6.0;
  switch (level) {
    case ReliabilityLevel::low:
      s.name = "low";
      a0 = 5.8;
      s.design.inspection_times = {5, 10, 15, 20};
      break;
    case ReliabilityLevel::moderate:
      s.name = "moderate";
      a0 = 6.0;
      s.design.inspection_times = {8, 16, 24, 36};
      break;
    case ReliabilityLevel::high:
      s.name = "high";
      a0 = 6.2;
      s.design.inspection_times = {12, 24, 36, 48};
      break;
  }
  s.design.stress_levels = {{30.0}, {40.0}, {50.0}};
  s.design.devices_per_cell = devices_per_cell;
  s.design.theta0 = ParamVector{a0, -0.1, -0.6, 0.02};
  s.x0 = {1.0, 15.0};
  s.t0 = 60.0;
  return s;
}

inline ReliabilityLevel parse_reliability_level(const std::string& name) {
  if (name == "low") return ReliabilityLevel::low;
  if (name == "moderate") return ReliabilityLevel::moderate;
  if (name == "high") return ReliabilityLevel::high;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

/// Default contamination: b0 set to zero in the last cell (highest stress
/// level, latest inspection time).
inline Contamination default_contamination(const Design& design) {
  ParamVector tilde = design.theta0;
  tilde.b(0) = 0.0;
  return {{design.num_cells() - 1}, tilde};
}

inline const ParamVector& cell_theta(const Design& design, const Contamination* cont, std::size_t cell) {
  if (cont != nullptr && std::find(cont->cells.begin(), cont->cells.end(), cell) != cont->cells.end()) {
    return cont->theta_tilde;
  }
  return design.theta0;
}

inline void validate_contamination(const Design& design, const Contamination* cont) {
  if (cont == nullptr) return;
  for (std::size_t c : cont->cells) {
    if (c >= design.num_cells()) throw std::invalid_argument("Contamination: cell index outside the design");
  }
  if (!cont->empty() && cont->theta_tilde.num_factors() != design.theta0.num_factors()) {
    throw std::invalid_argument("Contamination: theta_tilde dimension mismatch");
  }
}

/// One simulated test: n ~ Binomial(K, F(tau; x, theta_cell)) per cell.
inline Dataset generate(const Design& design, const Contamination* cont, Rng& rng) {
  design.validate();
  validate_contamination(design, cont);
  std::vector<TestGroup> groups;
  groups.reserve(design.num_cells());
  for (std::size_t c = 0; c < design.num_cells(); ++c) {
    const double F = failure_probability(cell_theta(design, cont, c), design.covariates(c), design.time(c));
    std::binomial_distribution<std::int64_t> draw(design.devices_per_cell, F);
    groups.emplace_back(design.time(c), design.devices_per_cell, static_cast<double>(draw(rng)),
                        design.stresses(c));
  }
  return Dataset(std::move(groups));
}

/// Same experiment simulated device by device: draw each lognormal lifetime
/// and count those not exceeding the inspection time.
inline Dataset generate_by_lifetimes(const Design& design, const Contamination* cont, Rng& rng) {
  design.validate();
  validate_contamination(design, cont);
  std::vector<TestGroup> groups;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < design.num_cells(); ++c) {
    const LinkValues lv = link(cell_theta(design, cont, c), design.covariates(c));
    const double log_tau = std::log(design.time(c));
    std::int64_t n = 0;
    for (std::int64_t k = 0; k < design.devices_per_cell; ++k) {
      if (lv.mu + lv.sigma * gauss(rng) <= log_tau) ++n;
    }
    groups.emplace_back(design.time(c), design.devices_per_cell, static_cast<double>(n), design.stresses(c));
  }
  return Dataset(std::move(groups));
}

/// Noise-free data: n = K F exactly (fractional counts).
inline Dataset expected_dataset(const Design& design, const ParamVector& theta) {
  std::vector<TestGroup> groups;
  for (std::size_t c = 0; c < design.num_cells(); ++c) {
    const double F = failure_probability(theta, design.covariates(c), design.time(c));
    groups.emplace_back(design.time(c), design.devices_per_cell,
                        static_cast<double>(design.devices_per_cell) * F, design.stresses(c));
  }
  return Dataset(std::move(groups));
}

// ============================================================================
// SMAE
// ============================================================================

/// (1/S) sum |(estimate - truth) / truth|.
inline double smae(std::span<const double> estimates, double truth) {
  if (truth == 0.0 || !std::isfinite(truth)) throw std::domain_error("smae: true value must be finite and nonzero");
  if (estimates.empty()) return 0.0;
  double s = 0.0;
  for (double e : estimates) s += std::abs((e - truth) / truth);
  return s / static_cast<double>(estimates.size());
}

/// Componentwise SMAE of parameter vectors.
inline Vector smae_components(std::span<const ParamVector> estimates, const ParamVector& truth) {
  Vector out(truth.dim(), 0.0);
  Vector column(estimates.size());
  for (std::size_t k = 0; k < truth.dim(); ++k) {
    for (std::size_t s = 0; s < estimates.size(); ++s) column[s] = estimates[s][k];
    out[k] = smae(column, truth[k]);
  }
  return out;
}

/// SMAE of theta as a whole: mean of the componentwise values.
inline double smae_vector(std::span<const ParamVector> estimates, const ParamVector& truth) {
  const Vector c = smae_components(estimates, truth);
  double s = 0.0;
  for (double v : c) s += v;
  return s / static_cast<double>(c.size());
}

// ============================================================================
// Estimator study
// ============================================================================

struct IntervalSummary {
  double coverage = 0.0;
  double average_width = 0.0;
};

struct EstimatorSummary {
  double beta = 0.0;
  std::size_t used = 0;
  std::size_t failures = 0;
  Vector smae_by_param;
  double smae_theta = 0.0;
  double smae_R = 0.0;
  double smae_E = 0.0;
  std::map<std::string, IntervalSummary> reliability_ci;  // asy, logit, arsech
  std::map<std::string, IntervalSummary> mean_ci;         // asy, log
  // hard invariants of the transformed intervals, counted over replications
  std::size_t bound_violations = 0;
  // mean componentwise |theta_hat - theta0| / |theta0| per replication, NaN
  // where the fit failed; supports paired comparisons across betas
  Vector replication_theta_error;
};

struct EstimatorStudyReport {
  std::string scenario;
  bool contaminated = false;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  std::int64_t devices_per_cell = 0;
  double ci_level = 0.90;
  double true_R = 0.0;
  double true_E = 0.0;
  ParamVector theta0;
  std::vector<EstimatorSummary> per_beta;
  bool degraded = false;
};

struct StudyOptions {
  int threads = 1;
  int n_starts = 5;
  int max_iter = 200;
  double grad_tol = 1e-8;
  double ci_alpha = 0.10;
};

namespace detail {

struct ReplicationFit {
  bool ok = false;
  ParamVector theta;
  double r_hat = 0.0;
  double e_hat = 0.0;
  double se_r = 0.0;
  double se_e = 0.0;
};

inline ReplicationFit fit_replication(const Dataset& data, double beta, std::uint64_t seed,
                                      const StudyOptions& opt, const Scenario& sc) {
  ReplicationFit rf;
  try {
    FitConfig cfg;
    cfg.beta = beta;
    cfg.seed = seed;
    cfg.n_starts = opt.n_starts;
    cfg.max_iter = opt.max_iter;
    cfg.grad_tol = opt.grad_tol;
    const FitResult fr = fit(data, cfg);
    if (!fr.converged) return rf;
    const ReliabilityTarget rt{sc.x0, sc.t0};
    const MeanLifetimeTarget et{sc.x0};
    rf.theta = fr.theta_hat;
    rf.r_hat = reliability(fr.theta_hat, sc.x0, sc.t0);
    rf.e_hat = mean_lifetime(fr.theta_hat, sc.x0);
    rf.se_r = delta_method_se(fr, rt).value;
    rf.se_e = delta_method_se(fr, et).value;
    rf.ok = std::isfinite(rf.se_r) && std::isfinite(rf.se_e) && std::isfinite(rf.e_hat);
  } catch (const std::exception&) {
    rf.ok = false;
  }
  return rf;
}

}  // namespace detail

/// Fits every replication at every beta. Replication r draws its data from
/// stream (seed, r), so all betas see identical datasets.
inline EstimatorStudyReport run_estimator_study(const Scenario& sc, std::span<const double> betas, std::size_t S,
                                                std::uint64_t seed, const StudyOptions& opt = {}) {
  sc.design.validate();
  const Contamination* cont = sc.contamination && !sc.contamination->empty() ? &*sc.contamination : nullptr;
  validate_contamination(sc.design, cont);
  for (double b : betas) detail::require_beta(b);

  EstimatorStudyReport rep;
  rep.scenario = sc.name;
  rep.contaminated = cont != nullptr;
  rep.replications = S;
  rep.seed = seed;
  rep.devices_per_cell = sc.design.devices_per_cell;
  rep.ci_level = 1.0 - opt.ci_alpha;
  rep.theta0 = sc.design.theta0;
  rep.true_R = reliability(sc.design.theta0, sc.x0, sc.t0);
  rep.true_E = mean_lifetime(sc.design.theta0, sc.x0);

  std::vector<std::vector<detail::ReplicationFit>> fits(S, std::vector<detail::ReplicationFit>(betas.size()));
  parallel_for(S, opt.threads, [&](std::size_t r) {
    Rng rng = make_stream(seed, r);
    const Dataset data = generate(sc.design, cont, rng);
    for (std::size_t b = 0; b < betas.size(); ++b) {
      fits[r][b] = detail::fit_replication(data, betas[b], derive_seed(seed ^ 0xF17F17ULL, r), opt, sc);
    }
  });

  std::size_t total_failures = 0;
  for (std::size_t b = 0; b < betas.size(); ++b) {
    EstimatorSummary sum;
    sum.beta = betas[b];
    std::vector<ParamVector> thetas;
    Vector r_hats;
    Vector e_hats;
    std::map<std::string, IntervalSummary> rel{{"asy", {}}, {"logit", {}}, {"arsech", {}}};
    std::map<std::string, IntervalSummary> mean{{"asy", {}}, {"log", {}}};
    for (std::size_t r = 0; r < S; ++r) {
      const auto& f = fits[r][b];
      if (!f.ok) {
        ++sum.failures;
        sum.replication_theta_error.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      sum.replication_theta_error.push_back(smae_vector(std::span(&f.theta, 1), sc.design.theta0));
      thetas.push_back(f.theta);
      r_hats.push_back(f.r_hat);
      e_hats.push_back(f.e_hat);
      const ConfidenceInterval ra = ci_asymptotic(f.r_hat, f.se_r, opt.ci_alpha);
      const ConfidenceInterval rl = ci_logit_reliability(f.r_hat, f.se_r, opt.ci_alpha);
      const ConfidenceInterval rs = ci_arsech_reliability(f.r_hat, f.se_r, opt.ci_alpha);
      const ConfidenceInterval ea = ci_asymptotic(f.e_hat, f.se_e, opt.ci_alpha);
      const ConfidenceInterval el = ci_log_mean(f.e_hat, f.se_e, opt.ci_alpha);
      auto tally = [](IntervalSummary& s, const ConfidenceInterval& ci, double truth) {
        s.coverage += ci.contains(truth) ? 1.0 : 0.0;
        s.average_width += ci.width();
      };
      tally(rel["asy"], ra, rep.true_R);
      tally(rel["logit"], rl, rep.true_R);
      tally(rel["arsech"], rs, rep.true_R);
      tally(mean["asy"], ea, rep.true_E);
      tally(mean["log"], el, rep.true_E);
      auto inside_unit = [](const ConfidenceInterval& ci) {
        return ci.lower >= 0.0 && ci.upper <= 1.0;
      };
      if (!inside_unit(rl) || !inside_unit(rs) || !(el.lower > 0.0)) ++sum.bound_violations;
    }
    sum.used = thetas.size();
    total_failures += sum.failures;
    if (sum.used > 0) {
      sum.smae_by_param = smae_components(thetas, sc.design.theta0);
      sum.smae_theta = smae_vector(thetas, sc.design.theta0);
      sum.smae_R = smae(r_hats, rep.true_R);
      sum.smae_E = smae(e_hats, rep.true_E);
      const double n = static_cast<double>(sum.used);
      for (auto& [k, v] : rel) {
        v.coverage /= n;
        v.average_width /= n;
      }
      for (auto& [k, v] : mean) {
        v.coverage /= n;
        v.average_width /= n;
      }
    } else {
      sum.smae_by_param.assign(sc.design.theta0.dim(), 0.0);
    }
    sum.reliability_ci = std::move(rel);
    sum.mean_ci = std::move(mean);
    rep.per_beta.push_back(std::move(sum));
  }
  const double attempts = static_cast<double>(S * betas.size());
  rep.degraded = attempts > 0.0 && static_cast<double>(total_failures) / attempts > 0.02;
  return rep;
}

// ============================================================================
// Wald-type test study
// ============================================================================

struct TestStudyConfig {
  std::vector<double> betas{0.0, 0.2, 0.4, 0.6};
  std::vector<std::int64_t> devices_per_cell{50, 100, 150, 200};
  std::size_t replications = 500;
  std::uint64_t seed = 1;
  double null_a0 = 6.0;
  double alt_a0 = 5.0;
  double contaminated_a0 = 5.6;
  std::optional<std::vector<std::size_t>> contaminated_cells;  // default: the last cell
  double alpha = 0.05;
  bool include_contaminated = true;
};

struct RejectionRates {
  double beta = 0.0;
  std::int64_t devices_per_cell = 0;
  double level = 0.0;
  double power = 0.0;
  double level_contaminated = 0.0;
  double power_contaminated = 0.0;
  std::size_t failures = 0;
};

struct TestStudyReport {
  std::string scenario;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double null_a0 = 6.0;
  double alt_a0 = 5.0;
  double contaminated_a0 = 5.6;
  std::vector<RejectionRates> rates;  // K-major, then beta
  bool degraded = false;
};

/// Empirical level (data generated at a0 = null_a0) and power (a0 = alt_a0)
/// of the Wald-type test of H0: a0 = null_a0, as a function of K per cell.
/// Contaminated runs replace a0 by contaminated_a0 in the listed cells.
inline TestStudyReport run_test_study(const Scenario& base, const TestStudyConfig& cfg,
                                      const StudyOptions& opt = {}) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw std::invalid_argument("test study: alpha must lie in (0, 1)");
  for (double b : cfg.betas) detail::require_beta(b);
  TestStudyReport rep;
  rep.scenario = base.name;
  rep.replications = cfg.replications;
  rep.seed = cfg.seed;
  rep.alpha = cfg.alpha;
  rep.null_a0 = cfg.null_a0;
  rep.alt_a0 = cfg.alt_a0;
  rep.contaminated_a0 = cfg.contaminated_a0;
  if (cfg.replications == 0) return rep;

  const double critical = chisq_quantile(cfg.alpha, 1);
  const std::size_t nb = cfg.betas.size();
  std::size_t total_failures = 0;
  std::size_t attempts = 0;

  for (std::size_t ki = 0; ki < cfg.devices_per_cell.size(); ++ki) {
    // kinds: 0 null/pure, 1 alt/pure, 2 null/contaminated, 3 alt/contaminated
    const int kinds = cfg.include_contaminated ? 4 : 2;
    std::vector<std::vector<int>> outcome(static_cast<std::size_t>(kinds) * cfg.replications,
                                          std::vector<int>(nb, -1));
    parallel_for(outcome.size(), opt.threads, [&](std::size_t job) {
      const int kind = static_cast<int>(job / cfg.replications);
      const std::size_t r = job % cfg.replications;
      Design d = base.design;
      d.devices_per_cell = cfg.devices_per_cell[ki];
      d.theta0.a(0) = (kind == 0 || kind == 2) ? cfg.null_a0 : cfg.alt_a0;
      Contamination cont;
      const Contamination* cp = nullptr;
      if (kind >= 2) {
        cont.cells = cfg.contaminated_cells ? *cfg.contaminated_cells
                                            : std::vector<std::size_t>{d.num_cells() - 1};
        cont.theta_tilde = d.theta0;
        cont.theta_tilde.a(0) = cfg.contaminated_a0;
        cp = &cont;
      }
      Rng rng = make_stream(derive_seed(cfg.seed, ki * 16 + static_cast<std::uint64_t>(kind)), r);
      const Dataset data = generate(d, cp, rng);
      const WaldSpec spec = coefficient_spec(d.theta0.dim(), 0, cfg.null_a0);
      for (std::size_t b = 0; b < nb; ++b) {
        try {
          FitConfig fc;
          fc.beta = cfg.betas[b];
          fc.seed = derive_seed(cfg.seed, job);
          fc.n_starts = opt.n_starts;
          fc.max_iter = opt.max_iter;
          fc.grad_tol = opt.grad_tol;
          const FitResult fr = fit(data, fc);
          if (!fr.converged) continue;
          const WaldResult w = wald_type_test(fr, spec);
          outcome[job][b] = w.statistic > critical ? 1 : 0;
        } catch (const std::exception&) {
        }
      }
    });
    for (std::size_t b = 0; b < nb; ++b) {
      RejectionRates rr;
      rr.beta = cfg.betas[b];
      rr.devices_per_cell = cfg.devices_per_cell[ki];
      double* slots[4] = {&rr.level, &rr.power, &rr.level_contaminated, &rr.power_contaminated};
      for (int kind = 0; kind < kinds; ++kind) {
        std::size_t used = 0;
        std::size_t rejected = 0;
        for (std::size_t r = 0; r < cfg.replications; ++r) {
          const int o = outcome[static_cast<std::size_t>(kind) * cfg.replications + r][b];
          ++attempts;
          if (o < 0) {
            ++rr.failures;
            continue;
          }
          ++used;
          rejected += static_cast<std::size_t>(o);
        }
        *slots[kind] = used > 0 ? static_cast<double>(rejected) / static_cast<double>(used) : 0.0;
      }
      total_failures += rr.failures;
      rep.rates.push_back(rr);
    }
  }
  rep.degraded = attempts > 0 && static_cast<double>(total_failures) / static_cast<double>(attempts) > 0.02;
  return rep;
}

// ============================================================================
// Tuning parameter selection
// ============================================================================

struct TuneRow {
  double beta = 0.0;
  double max_abs_error = 0.0;
  double rmse = 0.0;
  bool converged = false;
  bool ok = false;
};

struct TuneResult {
  double beta_star = 0.0;
  std::vector<TuneRow> rows;
};

/// Fit at each beta and pick the one minimizing the largest absolute gap
/// between fitted and observed failure fractions; ties go to the smaller beta.
inline TuneResult tune_beta(const Dataset& data, std::span<const double> beta_grid, const FitConfig& base = {}) {
  if (beta_grid.empty()) throw std::invalid_argument("tune_beta: empty beta grid");
  std::set<double> grid(beta_grid.begin(), beta_grid.end());
  TuneResult out;
  bool any = false;
  for (double beta : grid) {
    detail::require_beta(beta);
    TuneRow row;
    row.beta = beta;
    try {
      FitConfig cfg = base;
      cfg.beta = beta;
      const FitResult fr = fit(data, cfg);
      row.converged = fr.converged;
      double max_err = 0.0;
      double sq = 0.0;
      for (const auto& g : data.groups()) {
        const double err = failure_probability(fr.theta_hat, g.x(), g.tau()) - g.failure_fraction();
        max_err = std::max(max_err, std::abs(err));
        sq += err * err;
      }
      row.max_abs_error = max_err;
      row.rmse = std::sqrt(sq / static_cast<double>(data.size()));
      row.ok = true;
    } catch (const NonIdentifiableError&) {
      throw;
    } catch (const std::exception&) {
      row.ok = false;
    }
    out.rows.push_back(row);
    any = any || row.ok;
  }
  if (!any) throw std::runtime_error("tune_beta: every fit failed");
  const TuneRow* best = nullptr;
  for (const auto& row : out.rows) {
    if (!row.ok) continue;
    if (best == nullptr || row.max_abs_error < best->max_abs_error) best = &row;
  }
  out.beta_star = best->beta;
  return out;
}

}  // namespace oneshot_dpd
