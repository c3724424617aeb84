#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfs/csv.hpp"
#include "pfs/error.hpp"
#include "pfs/glm.hpp"
#include "pfs/weighted_stats.hpp"

namespace pfs::threshold {

enum class Provenance { anchored, model_predicted, percentile_5, percentile_20 };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::anchored: return "anchored";
    case Provenance::model_predicted: return "model_predicted";
    case Provenance::percentile_5: return "percentile_5";
    case Provenance::percentile_20: return "percentile_20";
  }
  return "";
}

enum class Mode { anchored, snap_model, p5, p20 };

inline std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "anchored") return Mode::anchored;
  if (s == "snap-model" || s == "snap_model") return Mode::snap_model;
  if (s == "p5") return Mode::p5;
  if (s == "p20") return Mode::p20;
  return std::nullopt;
}

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::anchored: return "anchored";
    case Mode::snap_model: return "snap-model";
    case Mode::p5: return "p5";
    case Mode::p20: return "p20";
  }
  return "";
}

struct CutoffEntry {
  int year = 0;
  double cutoff = 0;
  Provenance provenance = Provenance::anchored;
  double achieved_prevalence = 0;
  std::optional<double> target;
  bool clamped = false;
};

using CutoffSeries = std::map<int, CutoffEntry>;

/// Weighted quantile of PFS at the target prevalence (midpoint convention).
/// Classifying pfs < cutoff then selects the lowest-PFS mass not exceeding
/// the target.
inline double calibrate_cutoff(std::span<const double> pfs, std::span<const double> w, double target) {
  if (pfs.empty()) throw Error(ErrorKind::domain, "cannot calibrate a cutoff without observations");
  if (!(target >= 0 && target <= 1)) throw Error(ErrorKind::domain, "target prevalence outside [0, 1]");
  return stats::weighted_quantile(pfs, w, target);
}

inline double weighted_prevalence(std::span<const double> pfs, std::span<const double> w, double cutoff) {
  double in = 0, total = 0;
  for (std::size_t i = 0; i < pfs.size(); ++i) {
    total += w[i];
    if (pfs[i] < cutoff) in += w[i];
  }
  return total > 0 ? in / total : 0.0;
}

struct Bounds {
  double p5 = 0;
  double p20 = 0;
};

inline Bounds percentile_bounds(std::span<const double> pfs, std::span<const double> w) {
  return {calibrate_cutoff(pfs, w, 0.05), calibrate_cutoff(pfs, w, 0.20)};
}

// ---------------------------------------------------------------------------
// macro series and targets

struct MacroRow {
  double snap_rate = 0;
  double unemployment = 0;
  double gdp_pc_growth = 0;
  double ln_disp_income_pc = 0;
  double poverty_rate = 0;

  double get(const std::string& name) const {
    if (name == "snap_rate") return snap_rate;
    if (name == "unemployment") return unemployment;
    if (name == "gdp_pc_growth") return gdp_pc_growth;
    if (name == "ln_disp_income_pc") return ln_disp_income_pc;
    if (name == "poverty_rate") return poverty_rate;
    throw Error(ErrorKind::schema, "unknown macro indicator '" + name + "'");
  }
};

inline const std::array<const char*, 5> kMacroColumns = {"snap_rate", "unemployment", "gdp_pc_growth",
                                                        "ln_disp_income_pc", "poverty_rate"};

struct MacroSeries {
  std::map<int, MacroRow> by_year;

  static MacroSeries from_table(const csv::Table& t) {
    MacroSeries m;
    auto cy = t.require("year", "macro CSV");
    std::array<std::size_t, 5> c{};
    for (std::size_t k = 0; k < kMacroColumns.size(); ++k) c[k] = t.require(kMacroColumns[k], "macro CSV");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      MacroRow row;
      row.snap_rate = csv::require_double(t, r, c[0]);
      row.unemployment = csv::require_double(t, r, c[1]);
      row.gdp_pc_growth = csv::require_double(t, r, c[2]);
      row.ln_disp_income_pc = csv::require_double(t, r, c[3]);
      row.poverty_rate = csv::require_double(t, r, c[4]);
      m.by_year[static_cast<int>(csv::require_int(t, r, cy))] = row;
    }
    m.validate();
    return m;
  }

  static MacroSeries from_csv(const std::filesystem::path& p) { return from_table(csv::read(p)); }

  void validate() const {
    int prev = 0;
    for (const auto& [y, r] : by_year) {
      if (r.snap_rate < 0 || r.snap_rate > 100)
        throw Error(ErrorKind::data, "SNAP rate outside [0, 100] in " + std::to_string(y));
      if (prev && y != prev + 1) throw Error(ErrorKind::data, "macro years are not contiguous after " + std::to_string(prev));
      prev = y;
    }
  }

  const MacroRow& at(int year) const {
    auto it = by_year.find(year);
    if (it == by_year.end()) throw Error(ErrorKind::range, "no macro data for " + std::to_string(year));
    return it->second;
  }

  csv::Table to_table() const {
    csv::Table t{{"year", "snap_rate", "unemployment", "gdp_pc_growth", "ln_disp_income_pc", "poverty_rate"}, {}};
    for (const auto& [y, r] : by_year)
      t.rows.push_back({std::to_string(y), csv::format(r.snap_rate), csv::format(r.unemployment),
                        csv::format(r.gdp_pc_growth), csv::format(r.ln_disp_income_pc), csv::format(r.poverty_rate)});
    return t;
  }
};

using Targets = std::map<int, double>;

inline Targets targets_from_table(const csv::Table& t) {
  auto cy = t.require("year", "targets CSV"), cp = t.require("prevalence", "targets CSV");
  Targets out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    double p = csv::require_double(t, r, cp);
    if (p < 0 || p > 1) throw Error(ErrorKind::data, "target prevalence outside [0, 1]");
    out[static_cast<int>(csv::require_int(t, r, cy))] = p;
  }
  return out;
}

inline Targets targets_from_csv(const std::filesystem::path& p) { return targets_from_table(csv::read(p)); }

// ---------------------------------------------------------------------------
// threshold regression

/// Regressor sets of the five threshold-regression columns.
enum class Variant { ln_income = 1, snap = 2, unemployment = 3, gdp_growth = 4, all = 5 };

inline std::vector<std::string> variant_regressors(Variant v) {
  switch (v) {
    case Variant::ln_income: return {"ln_disp_income_pc"};
    case Variant::snap: return {"snap_rate"};
    case Variant::unemployment: return {"unemployment"};
    case Variant::gdp_growth: return {"gdp_pc_growth"};
    case Variant::all: return {"ln_disp_income_pc", "snap_rate", "unemployment", "gdp_pc_growth"};
  }
  return {};
}

inline constexpr std::array<Variant, 5> kVariants = {Variant::ln_income, Variant::snap, Variant::unemployment,
                                                     Variant::gdp_growth, Variant::all};

struct ThresholdModel {
  Variant variant = Variant::snap;
  std::vector<std::string> regressors;
  glm::FittedModel fit;
  std::vector<int> years;
};

inline ThresholdModel fit_threshold_model(const std::map<int, double>& cutoffs, const MacroSeries& macro,
                                          Variant variant) {
  if (cutoffs.size() < 3) throw Error(ErrorKind::domain, "threshold regression needs at least three anchored years");
  ThresholdModel m;
  m.variant = variant;
  m.regressors = variant_regressors(variant);
  const auto n = static_cast<Eigen::Index>(cutoffs.size());
  const auto p = static_cast<Eigen::Index>(m.regressors.size() + 1);
  glm::Matrix X(n, p);
  glm::Vector y(n);
  Eigen::Index r = 0;
  for (const auto& [year, c] : cutoffs) {
    const auto& row = macro.at(year);
    X(r, 0) = 1.0;
    for (std::size_t k = 0; k < m.regressors.size(); ++k)
      X(r, static_cast<Eigen::Index>(k + 1)) = row.get(m.regressors[k]);
    y(r) = c;
    m.years.push_back(year);
    ++r;
  }
  std::vector<std::string> names = {"intercept"};
  names.insert(names.end(), m.regressors.begin(), m.regressors.end());
  m.fit = glm::fit_ols(X, y, glm::Vector::Ones(n), names);
  return m;
}

struct Prediction {
  double raw = 0;
  double value = 0;
  bool clamped = false;
};

inline Prediction predict_cutoff(const ThresholdModel& m, const MacroRow& row) {
  Prediction p;
  p.raw = m.fit.coef("intercept").value_or(0.0);
  for (const auto& r : m.regressors) p.raw += m.fit.coef(r).value_or(0.0) * row.get(r);
  p.value = std::clamp(p.raw, 0.001, 0.999);
  p.clamped = p.value != p.raw;
  return p;
}

/// Model-predicted cutoffs for `years`; clamp events are appended to `log`.
inline std::vector<CutoffEntry> predict_cutoffs(const ThresholdModel& m, const MacroSeries& macro,
                                                const std::vector<int>& years,
                                                std::vector<std::string>* log = nullptr) {
  std::vector<CutoffEntry> out;
  for (int y : years) {
    auto p = predict_cutoff(m, macro.at(y));
    if (p.clamped && log)
      log->push_back("cutoff for " + std::to_string(y) + " clamped from " + csv::format(p.raw) + " to " +
                     csv::format(p.value));
    CutoffEntry e;
    e.year = y;
    e.cutoff = p.value;
    e.provenance = Provenance::model_predicted;
    e.clamped = p.clamped;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// calibration over a PFS series

struct YearSample {
  std::vector<double> pfs;
  std::vector<double> weight;
};

using ByYear = std::map<int, YearSample>;

struct CalibrationResult {
  CutoffSeries cutoffs;
  std::optional<ThresholdModel> model;
  std::vector<std::string> log;
};

/// Builds the cutoff series for every year in `samples`.
///
/// anchored:   years with a target are matched to it; the remaining years
///             use the SNAP-rate model fit to the anchored cutoffs.
/// snap_model: every year uses the SNAP-rate model.
/// p5, p20:    fixed weighted percentiles per year.
inline CalibrationResult calibrate(const ByYear& samples, Mode mode, const std::optional<Targets>& targets,
                                   const std::optional<MacroSeries>& macro, Variant variant = Variant::snap) {
  CalibrationResult out;
  if (mode == Mode::p5 || mode == Mode::p20) {
    const double level = mode == Mode::p5 ? 0.05 : 0.20;
    for (const auto& [y, s] : samples) {
      CutoffEntry e;
      e.year = y;
      e.cutoff = calibrate_cutoff(s.pfs, s.weight, level);
      e.provenance = mode == Mode::p5 ? Provenance::percentile_5 : Provenance::percentile_20;
      e.achieved_prevalence = weighted_prevalence(s.pfs, s.weight, e.cutoff);
      e.target = level;
      out.cutoffs[y] = e;
    }
    return out;
  }
  if (!targets) throw Error(ErrorKind::config, std::string(to_string(mode)) + " thresholds need a targets CSV");
  if (mode == Mode::snap_model && !macro)
    throw Error(ErrorKind::config, "snap-model thresholds need a macro CSV");

  std::map<int, double> anchored;
  std::vector<int> rest;
  for (const auto& [y, s] : samples) {
    auto it = targets->find(y);
    if (it == targets->end()) {
      rest.push_back(y);
      continue;
    }
    CutoffEntry e;
    e.year = y;
    e.cutoff = calibrate_cutoff(s.pfs, s.weight, it->second);
    e.provenance = Provenance::anchored;
    e.target = it->second;
    e.achieved_prevalence = weighted_prevalence(s.pfs, s.weight, e.cutoff);
    anchored[y] = e.cutoff;
    out.cutoffs[y] = e;
  }
  if (mode == Mode::snap_model) {
    rest.clear();
    for (const auto& [y, s] : samples) rest.push_back(y);
  }
  if (!rest.empty() || (macro && anchored.size() >= 3)) {
    if (!macro) {
      std::string years;
      for (int y : rest) years += " " + std::to_string(y);
      throw Error(ErrorKind::range, "no target prevalence and no macro CSV for years" + years);
    }
    out.model = fit_threshold_model(anchored, *macro, variant);
    for (auto e : predict_cutoffs(*out.model, *macro, rest, &out.log)) {
      const auto& s = samples.at(e.year);
      e.achieved_prevalence = weighted_prevalence(s.pfs, s.weight, e.cutoff);
      if (auto it = targets->find(e.year); it != targets->end()) e.target = it->second;
      out.cutoffs[e.year] = e;
    }
  }
  return out;
}

/// insecure iff pfs < cutoff(year).
inline bool classify(double pfs, int year, const CutoffSeries& cutoffs) {
  auto it = cutoffs.find(year);
  if (it == cutoffs.end()) throw Error(ErrorKind::range, "no PFS cutoff for " + std::to_string(year));
  return pfs < it->second.cutoff;
}

inline csv::Table cutoff_table(const CutoffSeries& s) {
  csv::Table t{{"year", "cutoff", "provenance", "target", "achieved_prevalence", "clamped"}, {}};
  for (const auto& [y, e] : s)
    t.rows.push_back({std::to_string(y), csv::format(e.cutoff), to_string(e.provenance), csv::format(e.target),
                      csv::format(e.achieved_prevalence), e.clamped ? "1" : "0"});
  return t;
}

inline CutoffSeries cutoffs_from_table(const csv::Table& t) {
  auto cy = t.require("year", "cutoffs CSV"), cc = t.require("cutoff", "cutoffs CSV");
  auto cp = t.require("provenance", "cutoffs CSV"), ct = t.require("target", "cutoffs CSV");
  auto ca = t.require("achieved_prevalence", "cutoffs CSV"), cl = t.require("clamped", "cutoffs CSV");
  CutoffSeries s;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    CutoffEntry e;
    e.year = static_cast<int>(csv::require_int(t, r, cy));
    e.cutoff = csv::require_double(t, r, cc);
    const auto& prov = t.rows[r][cp];
    if (prov == "anchored") e.provenance = Provenance::anchored;
    else if (prov == "model_predicted") e.provenance = Provenance::model_predicted;
    else if (prov == "percentile_5") e.provenance = Provenance::percentile_5;
    else if (prov == "percentile_20") e.provenance = Provenance::percentile_20;
    else throw Error(ErrorKind::data, "unknown cutoff provenance '" + prov + "'");
    e.target = csv::parse_double(t.rows[r][ct]);
    e.achieved_prevalence = csv::require_double(t, r, ca);
    e.clamped = t.rows[r][cl] == "1";
    s[e.year] = e;
  }
  return s;
}

inline nlohmann::ordered_json to_json(const ThresholdModel& m) {
  nlohmann::ordered_json j;
  j["variant"] = static_cast<int>(m.variant);
  j["regressors"] = m.regressors;
  j["years"] = m.years;
  j["model"] = glm::to_json(m.fit);
  return j;
}

/// Five threshold regressions side by side: one row per coefficient plus
/// R-squared and observation count.
inline csv::Table variant_table(const std::map<int, double>& anchored, const MacroSeries& macro) {
  std::vector<ThresholdModel> models;
  for (auto v : kVariants) models.push_back(fit_threshold_model(anchored, macro, v));
  csv::Table t{{"term", "(1)", "(2)", "(3)", "(4)", "(5)"}, {}};
  for (const char* term : {"ln_disp_income_pc", "snap_rate", "unemployment", "gdp_pc_growth", "intercept"}) {
    std::vector<std::string> row = {term};
    for (const auto& m : models) row.push_back(csv::format(m.fit.coef(term)));
    t.rows.push_back(std::move(row));
  }
  std::vector<std::string> n = {"n_obs"}, r2 = {"r_squared"};
  for (const auto& m : models) {
    n.push_back(std::to_string(m.fit.n_obs));
    r2.push_back(csv::format(m.fit.r_squared));
  }
  t.rows.push_back(std::move(n));
  t.rows.push_back(std::move(r2));
  return t;
}

/// Pairwise Pearson correlations of the cutoff and the macro indicators over
/// the anchored years, lower triangle.
inline csv::Table correlation_table(const std::map<int, double>& anchored, const MacroSeries& macro) {
  const std::vector<std::string> names = {"cutoff",       "ln_disp_income_pc", "snap_rate",
                                          "poverty_rate", "unemployment",      "gdp_pc_growth"};
  std::vector<std::vector<double>> cols(names.size());
  for (const auto& [y, c] : anchored) {
    const auto& row = macro.at(y);
    cols[0].push_back(c);
    for (std::size_t k = 1; k < names.size(); ++k) cols[k].push_back(row.get(names[k]));
  }
  csv::Table t{{"variable"}, {}};
  t.header.insert(t.header.end(), names.begin(), names.end());
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::string> row = {names[i]};
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (j > i) row.push_back("");
      else if (j == i) row.push_back("1");
      else row.push_back(csv::format(stats::pearson(cols[i], cols[j])));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace pfs::threshold
