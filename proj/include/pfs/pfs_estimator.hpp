#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/dynasty.hpp"
#include "pfs/error.hpp"
#include "pfs/glm.hpp"
#include "pfs/special.hpp"

namespace pfs::estimate {

using dynasty::PersonYear;

/// Gamma distribution in shape-scale form: mean = alpha * beta,
/// variance = alpha * beta^2.
struct GammaParams {
  double alpha = 1;
  double beta = 1;
};

inline GammaParams gamma_from_moments(double mean, double variance) {
  if (!(mean > 0) || !(variance > 0) || !std::isfinite(mean) || !std::isfinite(variance))
    throw Error(ErrorKind::domain, "gamma moments need a positive finite mean and variance");
  return {mean * mean / variance, variance / mean};
}

/// Pr(W >= threshold) for W ~ Gamma(alpha, beta).
inline double gamma_survival(double threshold, GammaParams p, const special::IncompleteGammaOptions& opt = {}) {
  if (!(p.alpha > 0) || !(p.beta > 0)) throw Error(ErrorKind::domain, "gamma parameters must be positive");
  if (!(threshold >= 0)) throw Error(ErrorKind::domain, "survival threshold must be nonnegative");
  return special::gamma_q(p.alpha, threshold / p.beta, opt);
}

inline double variance_floor(double mean) { return std::max(1e-6, 1e-8 * mean * mean); }

// ---------------------------------------------------------------------------
// regression inputs

/// Regressors of the mean and variance equations. References: male, White,
/// high-school education, not married, not employed, not disabled.
inline std::vector<glm::Covariate> default_covariates() {
  return {{"rp_age", false, ""},      {"rp_age_sq_k", false, ""}, {"rp_nonwhite", false, ""},
          {"rp_married", false, ""},  {"rp_female", false, ""},   {"rp_education", true, "hs"},
          {"rp_employed", false, ""}, {"rp_disabled", false, ""}, {"family_size", false, ""},
          {"child_ratio", false, ""}, {"rp_changed", false, ""},  {"ln_income_pc", false, ""},
          {"snap", false, ""}};
}

struct EstimatorConfig {
  std::vector<glm::Covariate> covariates = default_covariates();
  std::vector<std::string> fixed_effects = {"state", "year"};
  int lag_degree = 2;
  bool weighted = true;
  int first_year = 1979;  // earlier waves only supply lagged values
  bool standard_errors = false;
  glm::FitOptions fit;
};

inline double ln_income(const std::optional<double>& income_pc) {
  if (!income_pc) return std::numeric_limits<double>::quiet_NaN();
  return std::log(std::max(*income_pc, 1.0));
}

/// Column store over the panel. Missing attributes are NaN / empty.
inline glm::Frame make_frame(const std::vector<PersonYear>& panel) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  glm::Frame f;
  const std::size_t n = panel.size();
  auto& num = f.numeric;
  for (const char* c : {"food_exp_pc_month", "adjusted_weight", "rp_age", "rp_age_sq_k", "rp_nonwhite", "rp_married",
                        "rp_female", "rp_employed", "rp_disabled", "family_size", "child_ratio", "rp_changed",
                        "ln_income_pc", "snap", "age", "age_sq_k", "tfp_cost_pc_real"})
    num[c].reserve(n);
  auto& cat = f.categorical;
  for (const char* c : {"state", "rp_education", "education", "sex", "race"}) cat[c].reserve(n);
  auto flag = [&](const std::optional<bool>& b) { return b ? (*b ? 1.0 : 0.0) : nan; };
  for (const auto& p : panel) {
    const auto& r = p.rec;
    f.person.push_back(r.person_id);
    f.year.push_back(r.year);
    num["food_exp_pc_month"].push_back(r.food_exp_pc_month);
    num["adjusted_weight"].push_back(p.adjusted_weight);
    const double age = r.rp_age ? *r.rp_age : nan;
    num["rp_age"].push_back(age);
    num["rp_age_sq_k"].push_back(age * age / 1000.0);
    num["rp_nonwhite"].push_back(flag(r.rp_nonwhite));
    num["rp_married"].push_back(flag(r.rp_married));
    num["rp_female"].push_back(flag(r.rp_female));
    num["rp_employed"].push_back(flag(r.rp_employed));
    num["rp_disabled"].push_back(flag(r.rp_disabled));
    num["family_size"].push_back(r.family_size);
    num["child_ratio"].push_back(r.child_ratio);
    num["rp_changed"].push_back(p.rp_changed ? 1.0 : 0.0);
    num["ln_income_pc"].push_back(ln_income(r.income_pc));
    num["snap"].push_back(r.snap_status ? 1.0 : 0.0);
    const double own_age = r.age ? *r.age : nan;
    num["age"].push_back(own_age);
    num["age_sq_k"].push_back(own_age * own_age / 1000.0);
    num["tfp_cost_pc_real"].push_back(r.tfp_cost_pc_real.value_or(nan));
    cat["state"].push_back(r.state);
    cat["rp_education"].push_back(r.rp_education ? ingest::to_string(*r.rp_education) : "");
    cat["education"].push_back(r.education ? ingest::to_string(*r.education) : "");
    cat["sex"].push_back(r.sex);
    cat["race"].push_back(ingest::to_string(r.race));
  }
  return f;
}

inline glm::DesignSpec mean_spec(const EstimatorConfig& cfg) {
  glm::DesignSpec s;
  s.response = "food_exp_pc_month";
  s.lag_degree = cfg.lag_degree;
  s.covariates = cfg.covariates;
  s.fixed_effects = cfg.fixed_effects;
  s.weight_column = cfg.weighted ? "adjusted_weight" : "";
  return s;
}

inline glm::DesignSpec variance_spec(const EstimatorConfig& cfg) {
  auto s = mean_spec(cfg);
  s.response = "resid_sq";
  s.lag_source = "food_exp_pc_month";
  return s;
}

// ---------------------------------------------------------------------------
// moments

struct MomentRow {
  std::size_t index = 0;  // position in the panel
  double mean = 0;
  double variance = 0;
  double residual = 0;
  bool floored = false;
};

struct MomentsResult {
  glm::FittedModel mean_model;
  glm::FittedModel variance_model;
  std::vector<std::string> columns;  // design column order before rank reduction
  std::vector<MomentRow> rows;
  std::size_t no_lag = 0;
  std::size_t missing_covariates = 0;
  std::size_t before_first_year = 0;
  std::size_t floored = 0;
  glm::Vector mean_se;      // clustered by person, aligned with mean_model.names
  glm::Vector variance_se;  // aligned with variance_model.names
};

namespace detail {

[[noreturn]] inline void not_converged(const char* which, const glm::FittedModel& m) {
  throw Error(ErrorKind::numeric, std::string(which) + " equation did not converge after " +
                                      std::to_string(m.iterations) + " iterations (deviance " +
                                      std::to_string(m.deviance) + ", max |score| " +
                                      std::to_string(m.max_abs_score) + ")");
}

}  // namespace detail

/// Step 1: Poisson quasi-MLE of expenditure on the lag polynomial, covariates
/// and fixed effects. Step 2: the same regressors on squared residuals.
inline MomentsResult estimate_moments(const std::vector<PersonYear>& panel, const EstimatorConfig& cfg,
                                      const WaveCalendar& cal) {
  glm::Frame f = make_frame(panel);
  // Rows before the first estimation year stay in the frame as lag sources
  // but carry no response.
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  MomentsResult out;
  std::vector<double> response = f.numeric.at("food_exp_pc_month");
  for (std::size_t i = 0; i < f.rows(); ++i)
    if (f.year[i] < cfg.first_year) {
      response[i] = nan;
      ++out.before_first_year;
    }
  f.numeric["response"] = response;
  auto spec = mean_spec(cfg);
  spec.response = "response";
  spec.lag_source = "food_exp_pc_month";

  auto d1 = glm::build_design(f, spec, cal);
  out.columns = d1.columns;
  out.no_lag = d1.no_lag.size();
  out.missing_covariates = d1.missing.size() - out.before_first_year;
  out.mean_model = glm::fit_poisson_qmle(d1.X, d1.y, d1.w, d1.columns, cfg.fit);
  if (!out.mean_model.converged) detail::not_converged("mean", out.mean_model);
  const glm::Vector mu = glm::predict(out.mean_model, d1.X, d1.columns);

  glm::Vector resid_sq(mu.size());
  for (Eigen::Index r = 0; r < mu.size(); ++r) {
    const double u = d1.y(r) - mu(r);
    resid_sq(r) = u * u;
  }
  out.variance_model = glm::fit_poisson_qmle(d1.X, resid_sq, d1.w, d1.columns, cfg.fit);
  if (!out.variance_model.converged) detail::not_converged("variance", out.variance_model);
  const glm::Vector var = glm::predict(out.variance_model, d1.X, d1.columns);
  if (cfg.standard_errors) {
    std::vector<std::string> clusters;
    clusters.reserve(d1.kept.size());
    for (auto i : d1.kept) clusters.push_back(f.person[i]);
    out.mean_se = glm::robust_se(out.mean_model, d1.X, d1.columns, d1.y, d1.w, clusters);
    out.variance_se = glm::robust_se(out.variance_model, d1.X, d1.columns, resid_sq, d1.w, clusters);
  }

  out.rows.reserve(d1.kept.size());
  for (std::size_t r = 0; r < d1.kept.size(); ++r) {
    const auto k = static_cast<Eigen::Index>(r);
    MomentRow m;
    m.index = d1.kept[r];
    m.mean = mu(k);
    m.residual = d1.y(k) - mu(k);
    const double floor = variance_floor(m.mean);
    m.variance = var(k);
    if (!(m.variance >= floor)) {
      m.variance = floor;
      m.floored = true;
      ++out.floored;
    }
    out.rows.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PFS

struct PfsRow {
  std::string person_id;
  int year = 0;
  std::string household_id;
  double pfs = 0;
  double mean = 0;
  double variance = 0;
  double tfp_cost = 0;
  double nme = 0;
  double adjusted_weight = 0;
};

/// PFS = Pr(W >= TFP cost) under the gamma law matched to the moments.
inline std::vector<PfsRow> compute_pfs(const std::vector<PersonYear>& panel, const std::vector<MomentRow>& moments,
                                       const special::IncompleteGammaOptions& opt = {}) {
  std::vector<std::string> unmatched;
  for (const auto& m : moments)
    if (!panel.at(m.index).rec.tfp_cost_pc_real)
      unmatched.push_back(panel[m.index].rec.person_id + "/" + std::to_string(panel[m.index].rec.year));
  if (!unmatched.empty()) {
    std::string msg = "no TFP cost for " + std::to_string(unmatched.size()) + " person-years:";
    for (std::size_t i = 0; i < unmatched.size() && i < 20; ++i) msg += " " + unmatched[i];
    throw Error(ErrorKind::join, msg);
  }
  std::vector<PfsRow> out;
  out.reserve(moments.size());
  for (const auto& m : moments) {
    const auto& p = panel[m.index];
    PfsRow row;
    row.person_id = p.rec.person_id;
    row.year = p.rec.year;
    row.household_id = p.rec.household_id;
    row.mean = m.mean;
    row.variance = m.variance;
    row.tfp_cost = *p.rec.tfp_cost_pc_real;
    row.pfs = gamma_survival(row.tfp_cost, gamma_from_moments(m.mean, m.variance), opt);
    row.nme = p.rec.food_exp_pc_month / row.tfp_cost;
    row.adjusted_weight = p.adjusted_weight;
    out.push_back(std::move(row));
  }
  return out;
}

inline const std::vector<std::string>& pfs_columns() {
  static const std::vector<std::string> cols = {"person_id", "year", "household_id", "pfs",           "mean",
                                                "variance",  "tfp_cost", "nme",        "adjusted_weight"};
  return cols;
}

inline csv::Table pfs_table(const std::vector<PfsRow>& rows) {
  csv::Table t{pfs_columns(), {}};
  t.rows.reserve(rows.size());
  for (const auto& r : rows)
    t.rows.push_back({r.person_id, std::to_string(r.year), r.household_id, csv::format(r.pfs), csv::format(r.mean),
                      csv::format(r.variance), csv::format(r.tfp_cost), csv::format(r.nme),
                      csv::format(r.adjusted_weight)});
  return t;
}

inline std::vector<PfsRow> pfs_from_table(const csv::Table& t) {
  std::vector<std::size_t> c;
  for (const auto& name : pfs_columns()) c.push_back(t.require(name, "PFS CSV"));
  std::vector<PfsRow> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PfsRow row;
    row.person_id = t.rows[r][c[0]];
    row.year = static_cast<int>(csv::require_int(t, r, c[1]));
    row.household_id = t.rows[r][c[2]];
    row.pfs = csv::require_double(t, r, c[3]);
    row.mean = csv::require_double(t, r, c[4]);
    row.variance = csv::require_double(t, r, c[5]);
    row.tfp_cost = csv::require_double(t, r, c[6]);
    row.nme = csv::require_double(t, r, c[7]);
    row.adjusted_weight = csv::require_double(t, r, c[8]);
    out.push_back(std::move(row));
  }
  return out;
}

inline nlohmann::ordered_json moments_json(const MomentsResult& m, const EstimatorConfig& cfg) {
  nlohmann::ordered_json j;
  j["mean_spec"] = glm::to_json(mean_spec(cfg));
  j["variance_spec"] = glm::to_json(variance_spec(cfg));
  j["design_columns"] = m.columns;
  j["mean_model"] = glm::to_json(m.mean_model);
  j["variance_model"] = glm::to_json(m.variance_model);
  j["gamma_parameterization"] = "shape-scale: alpha = mean^2/variance, beta = variance/mean";
  j["variance_floor"] = "max(1e-6, 1e-8 * mean^2)";
  j["rows_with_moments"] = m.rows.size();
  j["rows_without_lag"] = m.no_lag;
  j["rows_missing_covariates"] = m.missing_covariates;
  j["rows_before_first_year"] = m.before_first_year;
  j["variances_floored"] = m.floored;
  return j;
}

}  // namespace pfs::estimate
