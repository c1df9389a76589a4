#pragma once

// Command-line front end: fit, report, test, simulate, influence, tune.
// Exit codes: 0 success, 1 data or usage error, 2 non-convergence (fit,
// report, test) or a degraded simulation.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oneshot_dpd/oneshot_dpd.hpp"
#include "oneshot_dpd/parallel.hpp"

namespace oneshot_dpd::cli {

using nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kDataError = 1, kNotConverged = 2 };

// ============================================================================
// JSON encoding
// ============================================================================

inline std::vector<std::string> param_names(std::size_t num_factors) {
  std::vector<std::string> names;
  for (char block : {'a', 'b'}) {
    for (std::size_t j = 0; j <= num_factors; ++j) names.push_back(block + std::to_string(j));
  }
  return names;
}

inline ordered_json to_json(const ParamVector& theta) {
  ordered_json j = ordered_json::object();
  const auto names = param_names(theta.num_factors());
  for (std::size_t k = 0; k < theta.dim(); ++k) j[names[k]] = theta[k];
  return j;
}

inline ordered_json to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vector standard_errors(const FitResult& f) {
  Vector se(f.theta_hat.dim());
  for (std::size_t k = 0; k < se.size(); ++k) se[k] = std::sqrt(std::max(0.0, f.covariance(k, k)));
  return se;
}

inline ordered_json to_json(const FitResult& f) {
  const auto names = param_names(f.theta_hat.num_factors());
  const Vector se = standard_errors(f);
  ordered_json j;
  j["beta"] = f.beta;
  j["theta_hat"] = to_json(f.theta_hat);
  ordered_json sej = ordered_json::object();
  for (std::size_t k = 0; k < se.size(); ++k) sej[names[k]] = se[k];
  j["standard_errors"] = sej;
  j["objective"] = f.objective;
  j["grad_norm"] = f.grad_norm;
  j["converged"] = f.converged;
  j["near_singular"] = f.near_singular;
  j["iterations"] = f.iterations;
  j["winning_start"] = f.winning_start;
  j["total_devices"] = f.total_devices;
  j["covariance"] = to_json(f.covariance);
  return j;
}

inline ordered_json to_json(const ConfidenceInterval& ci) {
  ordered_json j;
  j["method"] = std::string(to_string(ci.method));
  j["level"] = ci.level;
  j["lower"] = ci.lower;
  j["upper"] = ci.upper;
  j["degenerate"] = ci.degenerate;
  return j;
}

inline ordered_json to_json(const WaldResult& w) {
  ordered_json j;
  j["statistic"] = w.statistic;
  j["dof"] = w.dof;
  j["p_value"] = w.p_value;
  ordered_json rej = ordered_json::object();
  for (const auto& [level, flag] : w.reject_at) {
    std::ostringstream key;
    key << level;
    rej[key.str()] = flag;
  }
  j["reject_at"] = rej;
  return j;
}

inline ordered_json to_json(const EstimatorStudyReport& rep) {
  ordered_json j;
  j["study"] = "estimator";
  j["scenario"] = rep.scenario;
  j["contaminated"] = rep.contaminated;
  j["S"] = rep.replications;
  j["seed"] = rep.seed;
  j["K_per_cell"] = rep.devices_per_cell;
  j["ci_level"] = rep.ci_level;
  j["theta0"] = to_json(rep.theta0);
  j["true_R"] = rep.true_R;
  j["true_E"] = rep.true_E;
  j["degraded"] = rep.degraded;
  const auto names = param_names(rep.theta0.num_factors());
  ordered_json rows = ordered_json::array();
  for (const auto& s : rep.per_beta) {
    ordered_json r;
    r["beta"] = s.beta;
    r["used"] = s.used;
    r["failures"] = s.failures;
    ordered_json by = ordered_json::object();
    for (std::size_t k = 0; k < s.smae_by_param.size(); ++k) by[names[k]] = s.smae_by_param[k];
    r["smae_by_param"] = by;
    r["smae_theta"] = s.smae_theta;
    r["smae_R"] = s.smae_R;
    r["smae_E"] = s.smae_E;
    for (const auto& [title, table] : {std::pair{"reliability_ci", &s.reliability_ci}, std::pair{"mean_ci", &s.mean_ci}}) {
      ordered_json cis = ordered_json::object();
      for (const auto& [method, summary] : *table) {
        cis[method] = {{"coverage", summary.coverage}, {"average_width", summary.average_width}};
      }
      r[title] = cis;
    }
    r["bound_violations"] = s.bound_violations;
    rows.push_back(std::move(r));
  }
  j["per_beta"] = rows;
  return j;
}

inline ordered_json to_json(const TestStudyReport& rep) {
  ordered_json j;
  j["study"] = "test";
  j["scenario"] = rep.scenario;
  j["S"] = rep.replications;
  j["seed"] = rep.seed;
  j["alpha"] = rep.alpha;
  j["null_a0"] = rep.null_a0;
  j["alt_a0"] = rep.alt_a0;
  j["contaminated_a0"] = rep.contaminated_a0;
  j["degraded"] = rep.degraded;
  ordered_json rows = ordered_json::array();
  for (const auto& r : rep.rates) {
    rows.push_back({{"K_per_cell", r.devices_per_cell},
                    {"beta", r.beta},
                    {"level", r.level},
                    {"power", r.power},
                    {"level_contaminated", r.level_contaminated},
                    {"power_contaminated", r.power_contaminated},
                    {"failures", r.failures}});
  }
  j["rates"] = rows;
  return j;
}

inline ordered_json to_json(const TuneResult& t) {
  ordered_json j;
  j["beta_star"] = t.beta_star;
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) {
    ordered_json row = {{"beta", r.beta}, {"ok", r.ok}, {"converged", r.converged}};
    if (r.ok) {
      row["max_abs_error"] = r.max_abs_error;
      row["rmse"] = r.rmse;
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = rows;
  return j;
}

// ============================================================================
// Manifest and output
// ============================================================================

struct Manifest {
  std::string command;
  std::vector<std::string> inputs;
  ordered_json config = ordered_json::object();
  std::optional<std::uint64_t> seed;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  ordered_json to_json() const {
    ordered_json j;
    j["command"] = command;
    j["inputs"] = inputs;
    j["config"] = config;
    if (seed) {
      j["seed"] = *seed;
    } else {
      j["seed"] = nullptr;
    }
    j["tool_version"] = kToolVersion;
    j["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return j;
  }
};

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open for writing");
  f << text;
}

inline void emit_json(const std::string& path, ordered_json body, const Manifest& manifest, std::ostream& out) {
  ordered_json doc;
  doc["manifest"] = manifest.to_json();
  for (auto& [k, v] : body.items()) doc[k] = std::move(v);
  emit(path, doc.dump(2) + "\n", out);
}

// ============================================================================
// Shared option groups
// ============================================================================

struct FitOptions {
  double beta = 0.0;
  int n_starts = 5;
  int max_iter = 200;
  double grad_tol = 1e-8;
  std::uint64_t seed = 20220915;
  int threads = 0;

  void attach(CLI::App& app) {
    app.add_option("--beta", beta, "DPD tuning parameter (0 = maximum likelihood)")->check(CLI::NonNegativeNumber);
    app.add_option("--starts", n_starts, "number of optimizer starts")->check(CLI::PositiveNumber);
    app.add_option("--max-iter", max_iter, "iterations per start")->check(CLI::PositiveNumber);
    app.add_option("--grad-tol", grad_tol, "gradient norm tolerance")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "seed for start perturbations");
    app.add_option("--threads", threads, "worker cap (default: ONESHOT_DPD_THREADS, then all cores)");
  }

  FitConfig config() const {
    FitConfig c;
    c.beta = beta;
    c.n_starts = n_starts;
    c.max_iter = max_iter;
    c.grad_tol = grad_tol;
    c.seed = seed;
    c.threads = resolve_threads(threads);
    return c;
  }

  ordered_json echo() const {
    return {{"beta", beta}, {"starts", n_starts}, {"max_iter", max_iter}, {"grad_tol", grad_tol}, {"seed", seed}};
  }
};

/// "a1=0" style coefficient constraint.
inline std::pair<std::size_t, double> parse_coef_constraint(const std::string& text, std::size_t num_factors) {
  static const std::regex re(R"(^\s*([ab])(\d+)\s*=\s*(.+)$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) throw ParseError("constraint '" + text + "': expected form like a0=6");
  const std::size_t j = std::stoul(m[2]);
  if (j > num_factors) throw ParseError("constraint '" + text + "': coefficient index out of range");
  double v = 0.0;
  if (!detail::parse_double(m[3].str(), v)) throw ParseError("constraint '" + text + "': bad value");
  const std::size_t k = (m[1] == "a" ? 0 : num_factors + 1) + j;
  return {k, v};
}

// ============================================================================
// Subcommands
// ============================================================================

struct FitCommand {
  std::string csv;
  std::string output;
  FitOptions opts;

  int run(std::ostream& out) const {
    Manifest man{"fit", {csv}, opts.echo(), opts.seed};
    const Dataset data = read_dataset_csv(csv);
    const FitResult f = fit(data, opts.config());
    emit_json(output, {{"fit", to_json(f)}}, man, out);
    return f.converged ? kOk : kNotConverged;
  }
};

struct ReportCommand {
  std::string csv;
  std::string output;
  FitOptions opts;
  std::vector<double> x0;  // stresses without intercept
  double t0 = 0.0;
  double alpha = 0.05;

  int run(std::ostream& out) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParseError("--alpha must lie in (0, 1)");
    if (!(t0 > 0.0)) throw ParseError("--t0 must be positive");
    ordered_json cfg = opts.echo();
    cfg["x0"] = x0;
    cfg["t0"] = t0;
    cfg["alpha"] = alpha;
    Manifest man{"report", {csv}, cfg, opts.seed};
    const Dataset data = read_dataset_csv(csv);
    if (x0.size() != data.num_factors()) {
      throw ParseError("--x0 needs " + std::to_string(data.num_factors()) + " stress value(s)");
    }
    Vector x{1.0};
    x.insert(x.end(), x0.begin(), x0.end());
    const FitResult f = fit(data, opts.config());

    ordered_json coefs = ordered_json::array();
    const auto names = param_names(data.num_factors());
    const Vector se = standard_errors(f);
    for (std::size_t k = 0; k < se.size(); ++k) {
      coefs.push_back({{"name", names[k]},
                       {"estimate", f.theta_hat[k]},
                       {"se", se[k]},
                       {"ci", to_json(ci_asymptotic(f.theta_hat[k], se[k], alpha))}});
    }
    const ReliabilityTarget rt{x, t0};
    const MeanLifetimeTarget et{x};
    const double r_hat = target_value(f.theta_hat, rt);
    const double e_hat = target_value(f.theta_hat, et);
    const StandardError se_r = delta_method_se(f, rt);
    const StandardError se_e = delta_method_se(f, et);

    ordered_json tests = ordered_json::array();
    for (std::size_t j = 1; j <= data.num_factors(); ++j) {
      ordered_json t = {{"factor", j}};
      try {
        t["result"] = to_json(stress_factor_test(f, j));
      } catch (const std::exception& e) {
        t["error"] = e.what();
      }
      tests.push_back(std::move(t));
    }
    ordered_json body;
    body["fit"] = to_json(f);
    body["coefficients"] = coefs;
    body["reliability"] = {{"x0", x0},
                           {"t0", t0},
                           {"estimate", r_hat},
                           {"se", se_r.value},
                           {"ci", to_json(ci_logit_reliability(r_hat, se_r.value, alpha))},
                           {"intervals",
                            {{"asymptotic", to_json(ci_asymptotic(r_hat, se_r.value, alpha))},
                             {"logit", to_json(ci_logit_reliability(r_hat, se_r.value, alpha))},
                             {"arsech", to_json(ci_arsech_reliability(r_hat, se_r.value, alpha))}}}};
    body["mean_lifetime"] = {{"x0", x0},
                             {"estimate", e_hat},
                             {"se", se_e.value},
                             {"ci", to_json(ci_log_mean(e_hat, se_e.value, alpha))},
                             {"intervals",
                              {{"asymptotic", to_json(ci_asymptotic(e_hat, se_e.value, alpha))},
                               {"log", to_json(ci_log_mean(e_hat, se_e.value, alpha))}}}};
    body["stress_factor_tests"] = tests;
    emit_json(output, body, man, out);
    return f.converged ? kOk : kNotConverged;
  }
};

struct TestCommand {
  std::string csv;
  std::string output;
  FitOptions opts;
  std::vector<std::size_t> factors;
  std::vector<std::string> constraints;
  bool classical = false;

  int run(std::ostream& out) const {
    ordered_json cfg = opts.echo();
    cfg["factors"] = factors;
    cfg["constraints"] = constraints;
    cfg["classical"] = classical;
    Manifest man{"test", {csv}, cfg, opts.seed};
    const Dataset data = read_dataset_csv(csv);
    if (classical && opts.beta != 0.0) throw ParseError("--classical requires --beta 0");
    const FitResult f = fit(data, opts.config());

    std::vector<std::pair<std::string, WaldSpec>> specs;
    for (std::size_t j : factors) {
      if (j < 1 || j > data.num_factors()) throw ParseError("--factor " + std::to_string(j) + " out of range");
      specs.emplace_back("factor " + std::to_string(j), stress_factor_spec(data.num_factors(), j));
    }
    if (!constraints.empty()) {
      Matrix a(constraints.size(), data.param_dim(), 0.0);
      Vector c(constraints.size());
      for (std::size_t r = 0; r < constraints.size(); ++r) {
        const auto [k, v] = parse_coef_constraint(constraints[r], data.num_factors());
        a(r, k) = 1.0;
        c[r] = v;
      }
      std::string label;
      for (const auto& s : constraints) label += (label.empty() ? "" : ", ") + s;
      try {
        specs.emplace_back(label, WaldSpec(std::move(a), std::move(c)));
      } catch (const std::invalid_argument& e) {
        throw ParseError(e.what());
      }
    }
    if (specs.empty()) {
      for (std::size_t j = 1; j <= data.num_factors(); ++j) {
        specs.emplace_back("factor " + std::to_string(j), stress_factor_spec(data.num_factors(), j));
      }
    }
    ordered_json tests = ordered_json::array();
    for (const auto& [label, spec] : specs) {
      ordered_json t = {{"hypothesis", label}};
      try {
        t["result"] = to_json(classical ? classical_wald_test(f.theta_hat, data, spec) : wald_type_test(f, spec));
      } catch (const std::exception& e) {
        t["error"] = e.what();
      }
      tests.push_back(std::move(t));
    }
    emit_json(output, {{"fit", to_json(f)}, {"tests", tests}}, man, out);
    return f.converged ? kOk : kNotConverged;
  }
};

struct TuneCommand {
  std::string csv;
  std::string output;
  FitOptions opts;
  std::vector<double> betas{0.0, 0.2, 0.4, 0.6};

  int run(std::ostream& out) const {
    ordered_json cfg = opts.echo();
    cfg.erase("beta");
    cfg["betas"] = betas;
    Manifest man{"tune", {csv}, cfg, opts.seed};
    const Dataset data = read_dataset_csv(csv);
    const TuneResult t = tune_beta(data, betas, opts.config());
    emit_json(output, {{"tune", to_json(t)}}, man, out);
    return kOk;
  }
};

struct InfluenceCommand {
  std::string preset;
  std::vector<double> theta;  // custom a0, a1, b0, b1
  std::string vary = "omega";
  double fixed = 1.0;
  std::optional<double> from;
  std::optional<double> to;
  double step = 0.05;
  std::vector<double> betas{0.0, 0.2, 0.4, 0.6, 0.8};
  std::string output;

  int run(std::ostream& out) const {
    ParamVector th{0.0, 0.0, 0.0, 0.0};
    bool vary_omega = true;
    if (!preset.empty()) {
      if (!theta.empty()) throw ParseError("use either --preset or --theta");
      InfluencePreset p{};
      if (preset == "fig1-omega") {
        p = InfluencePreset::vary_omega;
      } else if (preset == "fig1-x-pos") {
        p = InfluencePreset::vary_x_positive_b1;
      } else if (preset == "fig1-x-neg") {
        p = InfluencePreset::vary_x_negative_b1;
      } else {
        throw ParseError("unknown preset '" + preset + "'");
      }
      th = preset_theta(p);
      vary_omega = p == InfluencePreset::vary_omega;
    } else {
      if (theta.size() != 4) throw ParseError("--theta needs four values a0,a1,b0,b1");
      th = ParamVector{theta[0], theta[1], theta[2], theta[3]};
      if (vary != "omega" && vary != "x") throw ParseError("--vary must be omega or x");
      vary_omega = vary == "omega";
    }
    const double fixed_value = preset.empty() ? fixed : 1.0;
    double lo = 0.0;
    double hi = 0.0;
    if (vary_omega) {
      const double xv[2] = {1.0, fixed_value};
      const LinkValues lv = link(th, xv);
      lo = from.value_or(lv.mu - 5.0 * lv.sigma);
      hi = to.value_or(lv.mu + 5.0 * lv.sigma);
    } else {
      lo = from.value_or(-3.0);
      hi = to.value_or(3.0);
    }
    if (!(step > 0.0) || !(hi >= lo)) throw ParseError("invalid grid");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    ordered_json cfg = {{"preset", preset}, {"theta", th.values()}, {"vary", vary_omega ? "omega" : "x"},
                        {"fixed", fixed_value}, {"from", lo}, {"to", hi}, {"step", step}, {"betas", betas}};
    Manifest man{"influence", {}, cfg, std::nullopt};

    std::ostringstream csv;
    csv << std::setprecision(17) << "omega_or_x,beta,h1,h2\n";
    for (double beta : betas) {
      for (std::size_t k = 0; k <= n; ++k) {
        const double v = lo + static_cast<double>(k) * step;
        const HFactors h = vary_omega ? h_factors(v, fixed_value, th, beta) : h_factors(fixed_value, v, th, beta);
        csv << v << ',' << beta << ',' << h.h1 << ',' << h.h2 << '\n';
      }
    }
    emit(output, csv.str(), out);
    (void)man;
    return kOk;
  }
};

// ----------------------------------------------------------------------------
// simulate
// ----------------------------------------------------------------------------

struct SimulationPlan {
  std::string study = "estimator";
  Scenario scenario;
  std::size_t S = 1000;
  std::vector<double> betas{0.0, 0.2, 0.4, 0.6};
  std::uint64_t seed = 20220915;
  StudyOptions options;
  TestStudyConfig test;
};

inline ParamVector apply_overrides(ParamVector theta, const KeyValueConfig& cfg, const std::string& section) {
  const auto names = param_names(theta.num_factors());
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (cfg.has(section, names[k])) theta[k] = cfg.get_double(section, names[k], theta[k]);
  }
  return theta;
}

inline std::vector<std::size_t> to_cells(const std::vector<double>& v, std::size_t num_cells, const std::string& key) {
  std::vector<std::size_t> cells;
  for (double d : v) {
    if (d < 0.0 || d != std::floor(d) || d >= static_cast<double>(num_cells)) {
      throw ParseError(key + ": cell indices must be integers in [0, " + std::to_string(num_cells) + ")");
    }
    cells.push_back(static_cast<std::size_t>(d));
  }
  return cells;
}

/// Builds a simulation plan from the sectioned configuration format described
/// in the README.
inline SimulationPlan plan_from_config(const KeyValueConfig& cfg) {
  for (const auto& s : cfg.sections()) {
    if (s != "" && s != "custom" && s != "contamination" && s != "test") {
      throw ParseError("unknown section [" + s + "]");
    }
  }
  cfg.require_known("", {"scenario", "study", "S", "K_per_cell", "betas", "seed", "n_starts", "max_iter", "grad_tol",
                         "ci_level", "threads"});
  SimulationPlan plan;
  const std::string scenario = cfg.get("", "scenario", "moderate");
  const std::int64_t k = cfg.get_int("", "K_per_cell", 100);
  if (k <= 0) throw ParseError("K_per_cell must be positive");
  if (scenario == "custom") {
    if (!cfg.has_section("custom")) throw ParseError("scenario = custom needs a [custom] section");
    cfg.require_known("custom", {"theta0", "stress_levels", "inspection_times", "x0", "t0"});
    const Vector t = cfg.get_doubles("custom", "theta0", {});
    if (t.size() < 2 || t.size() % 2 != 0) throw ParseError("[custom] theta0 needs 2(J+1) values");
    const std::size_t j = t.size() / 2 - 1;
    plan.scenario.name = "custom";
    plan.scenario.design.theta0 = ParamVector(std::span(t).first(j + 1), std::span(t).subspan(j + 1));
    plan.scenario.design.stress_levels = cfg.get_double_groups("custom", "stress_levels");
    plan.scenario.design.inspection_times = cfg.get_doubles("custom", "inspection_times", {});
    plan.scenario.design.devices_per_cell = k;
    const Vector x0 = cfg.get_doubles("custom", "x0", {});
    if (x0.size() != j) throw ParseError("[custom] x0 needs " + std::to_string(j) + " stress value(s)");
    plan.scenario.x0 = {1.0};
    plan.scenario.x0.insert(plan.scenario.x0.end(), x0.begin(), x0.end());
    plan.scenario.t0 = cfg.get_double("custom", "t0", 60.0);
    try {
      plan.scenario.design.validate();
    } catch (const std::invalid_argument& e) {
      throw ParseError(std::string("[custom] ") + e.what());
    }
  } else {
    try {
      plan.scenario = preset_scenario(parse_reliability_level(scenario), k);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what());
    }
  }
  plan.study = cfg.get("", "study", "estimator");
  if (plan.study != "estimator" && plan.study != "test") throw ParseError("study must be estimator or test");
  const std::int64_t s = cfg.get_int("", "S", 1000);
  if (s < 0) throw ParseError("S must be nonnegative");
  plan.S = static_cast<std::size_t>(s);
  plan.betas = cfg.get_doubles("", "betas", plan.betas);
  for (double b : plan.betas) {
    if (!(b >= 0.0)) throw ParseError("betas must be nonnegative");
  }
  plan.seed = static_cast<std::uint64_t>(cfg.get_int("", "seed", 20220915));
  plan.options.n_starts = static_cast<int>(cfg.get_int("", "n_starts", 5));
  plan.options.max_iter = static_cast<int>(cfg.get_int("", "max_iter", 200));
  plan.options.grad_tol = cfg.get_double("", "grad_tol", 1e-8);
  plan.options.threads = static_cast<int>(cfg.get_int("", "threads", 0));
  const double level = cfg.get_double("", "ci_level", 0.90);
  if (!(level > 0.0 && level < 1.0)) throw ParseError("ci_level must lie in (0, 1)");
  plan.options.ci_alpha = 1.0 - level;
  if (plan.options.n_starts < 1 || plan.options.max_iter < 1 || !(plan.options.grad_tol > 0.0)) {
    throw ParseError("n_starts, max_iter and grad_tol must be positive");
  }

  const std::size_t num_cells = plan.scenario.design.num_cells();
  if (cfg.has_section("contamination")) {
    std::set<std::string> allowed{"cells", "enabled"};
    for (const auto& n : param_names(plan.scenario.design.theta0.num_factors())) allowed.insert(n);
    cfg.require_known("contamination", allowed);
    if (cfg.get_bool("contamination", "enabled", true)) {
      Contamination c = default_contamination(plan.scenario.design);
      c.theta_tilde = plan.scenario.design.theta0;
      const bool any_override = std::any_of(allowed.begin(), allowed.end(), [&](const std::string& key) {
        return key != "cells" && key != "enabled" && cfg.has("contamination", key);
      });
      if (any_override) {
        c.theta_tilde = apply_overrides(c.theta_tilde, cfg, "contamination");
      } else {
        c.theta_tilde.b(0) = 0.0;
      }
      if (cfg.has("contamination", "cells")) {
        c.cells = to_cells(cfg.get_doubles("contamination", "cells", {}), num_cells, "[contamination] cells");
      }
      plan.scenario.contamination = c;
    }
  }

  if (cfg.has_section("test")) {
    cfg.require_known("test", {"K_values", "null_a0", "alt_a0", "contaminated_a0", "alpha", "contaminated",
                               "contaminated_cells"});
  }
  TestStudyConfig& t = plan.test;
  t.betas = plan.betas;
  t.replications = plan.S;
  t.seed = plan.seed;
  t.devices_per_cell.clear();
  for (double v : cfg.get_doubles("test", "K_values", {50, 100, 150, 200})) {
    if (!(v > 0.0) || v != std::floor(v)) throw ParseError("[test] K_values must be positive integers");
    t.devices_per_cell.push_back(static_cast<std::int64_t>(v));
  }
  t.null_a0 = cfg.get_double("test", "null_a0", 6.0);
  t.alt_a0 = cfg.get_double("test", "alt_a0", 5.0);
  t.contaminated_a0 = cfg.get_double("test", "contaminated_a0", 5.6);
  t.alpha = cfg.get_double("test", "alpha", 0.05);
  if (!(t.alpha > 0.0 && t.alpha < 1.0)) throw ParseError("[test] alpha must lie in (0, 1)");
  t.include_contaminated = cfg.get_bool("test", "contaminated", true);
  if (cfg.has("test", "contaminated_cells")) {
    t.contaminated_cells =
        to_cells(cfg.get_doubles("test", "contaminated_cells", {}), num_cells, "[test] contaminated_cells");
  }
  return plan;
}

inline std::string estimator_curves_csv(const EstimatorStudyReport& rep) {
  std::ostringstream csv;
  csv << std::setprecision(17) << "beta,metric,value\n";
  const auto names = param_names(rep.theta0.num_factors());
  for (const auto& s : rep.per_beta) {
    auto row = [&](const std::string& metric, double v) { csv << s.beta << ',' << metric << ',' << v << '\n'; };
    for (std::size_t k = 0; k < s.smae_by_param.size(); ++k) row("smae_" + names[k], s.smae_by_param[k]);
    row("smae_theta", s.smae_theta);
    row("smae_R", s.smae_R);
    row("smae_E", s.smae_E);
    for (const auto& [m, v] : s.reliability_ci) {
      row("cp_R_" + m, v.coverage);
      row("aw_R_" + m, v.average_width);
    }
    for (const auto& [m, v] : s.mean_ci) {
      row("cp_E_" + m, v.coverage);
      row("aw_E_" + m, v.average_width);
    }
  }
  return csv.str();
}

inline std::string test_curves_csv(const TestStudyReport& rep) {
  std::ostringstream csv;
  csv << std::setprecision(17) << "beta,metric,value\n";
  for (const auto& r : rep.rates) {
    const std::string k = "_K" + std::to_string(r.devices_per_cell);
    csv << r.beta << ",level" << k << ',' << r.level << '\n';
    csv << r.beta << ",power" << k << ',' << r.power << '\n';
    csv << r.beta << ",level_contaminated" << k << ',' << r.level_contaminated << '\n';
    csv << r.beta << ",power_contaminated" << k << ',' << r.power_contaminated << '\n';
  }
  return csv.str();
}

struct SimulateCommand {
  std::string config_path;
  std::string output;
  std::string curves;
  int threads = 0;

  int run(std::ostream& out) const {
    const KeyValueConfig cfg = KeyValueConfig::read(config_path);
    SimulationPlan plan = plan_from_config(cfg);
    if (threads > 0) plan.options.threads = threads;
    plan.options.threads = resolve_threads(plan.options.threads);

    ordered_json echo = ordered_json::object();
    for (const auto& [section, kv] : cfg.values()) {
      ordered_json sec = ordered_json::object();
      for (const auto& [k, v] : kv) sec[k] = v;
      echo[section.empty() ? "global" : section] = sec;
    }
    Manifest man{"simulate", {config_path}, echo, plan.seed};

    bool degraded = false;
    ordered_json body;
    std::string curves_csv;
    if (plan.study == "estimator") {
      const EstimatorStudyReport rep = run_estimator_study(plan.scenario, plan.betas, plan.S, plan.seed, plan.options);
      degraded = rep.degraded;
      body["report"] = to_json(rep);
      curves_csv = estimator_curves_csv(rep);
    } else {
      const TestStudyReport rep = run_test_study(plan.scenario, plan.test, plan.options);
      degraded = rep.degraded;
      body["report"] = to_json(rep);
      curves_csv = test_curves_csv(rep);
    }
    emit_json(output, body, man, out);
    if (!curves.empty()) emit(curves, curves_csv, out);
    return degraded ? kNotConverged : kOk;
  }
};

// ============================================================================
// Entry point
// ============================================================================

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust minimum density power divergence estimation for one-shot device tests", "oneshot_dpd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  FitCommand fit_cmd;
  auto* fit_app = app.add_subcommand("fit", "fit the lognormal model to a dataset CSV");
  fit_app->add_option("csv", fit_cmd.csv, "dataset CSV")->required();
  fit_app->add_option("-o,--output", fit_cmd.output, "JSON output path (default stdout)");
  fit_cmd.opts.attach(*fit_app);

  ReportCommand rep_cmd;
  auto* rep_app = app.add_subcommand("report", "fit plus intervals and stress-factor tests");
  rep_app->add_option("csv", rep_cmd.csv, "dataset CSV")->required();
  rep_app->add_option("-o,--output", rep_cmd.output, "JSON output path (default stdout)");
  rep_app->add_option("--x0", rep_cmd.x0, "normal operating stresses, comma separated")->required()->delimiter(',');
  rep_app->add_option("--t0", rep_cmd.t0, "mission time for reliability")->required();
  rep_app->add_option("--alpha", rep_cmd.alpha, "1 - confidence level");
  rep_cmd.opts.attach(*rep_app);

  TestCommand test_cmd;
  auto* test_app = app.add_subcommand("test", "Wald-type tests of linear hypotheses");
  test_app->add_option("csv", test_cmd.csv, "dataset CSV")->required();
  test_app->add_option("-o,--output", test_cmd.output, "JSON output path (default stdout)");
  test_app->add_option("--factor", test_cmd.factors, "test a_j = b_j = 0 for stress factor j (repeatable)");
  test_app->add_option("--coef", test_cmd.constraints, "joint constraint like a0=6 (repeatable)");
  test_app->add_flag("--classical", test_cmd.classical, "use the observed Fisher information (beta = 0 only)");
  test_cmd.opts.attach(*test_app);

  SimulateCommand sim_cmd;
  auto* sim_app = app.add_subcommand("simulate", "Monte Carlo study from a configuration file");
  sim_app->add_option("config", sim_cmd.config_path, "configuration file")->required();
  sim_app->add_option("-o,--output", sim_cmd.output, "JSON output path (default stdout)");
  sim_app->add_option("--curves", sim_cmd.curves, "plot-ready CSV output path");
  sim_app->add_option("--threads", sim_cmd.threads, "worker cap (default: ONESHOT_DPD_THREADS, then all cores)");

  InfluenceCommand inf_cmd;
  auto* inf_app = app.add_subcommand("influence", "influence-function factor curves as CSV");
  inf_app->add_option("--preset", inf_cmd.preset, "fig1-omega | fig1-x-pos | fig1-x-neg");
  inf_app->add_option("--theta", inf_cmd.theta, "custom a0,a1,b0,b1")->delimiter(',');
  inf_app->add_option("--vary", inf_cmd.vary, "omega or x (custom mode)");
  inf_app->add_option("--fixed", inf_cmd.fixed, "value of the variable held fixed (custom mode)");
  inf_app->add_option("--from", inf_cmd.from, "grid start");
  inf_app->add_option("--to", inf_cmd.to, "grid end");
  inf_app->add_option("--step", inf_cmd.step, "grid spacing");
  inf_app->add_option("--betas", inf_cmd.betas, "tuning parameters")->delimiter(',');
  inf_app->add_option("-o,--output", inf_cmd.output, "CSV output path (default stdout)");

  TuneCommand tune_cmd;
  auto* tune_app = app.add_subcommand("tune", "choose beta by minimum MaxAE");
  tune_app->add_option("csv", tune_cmd.csv, "dataset CSV")->required();
  tune_app->add_option("-o,--output", tune_cmd.output, "JSON output path (default stdout)");
  tune_app->add_option("--betas", tune_cmd.betas, "beta grid")->delimiter(',');
  tune_cmd.opts.attach(*tune_app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }

  try {
    if (*fit_app) return fit_cmd.run(out);
    if (*rep_app) return rep_cmd.run(out);
    if (*test_app) return test_cmd.run(out);
    if (*sim_app) return sim_cmd.run(out);
    if (*inf_app) return inf_cmd.run(out);
    if (*tune_app) return tune_cmd.run(out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kDataError;
}

}  // namespace oneshot_dpd::cli
