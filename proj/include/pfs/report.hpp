#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pfs/csv.hpp"
#include "pfs/dynamics.hpp"
#include "pfs/dynasty.hpp"
#include "pfs/glm.hpp"
#include "pfs/panel_ingest.hpp"
#include "pfs/pfs_estimator.hpp"
#include "pfs/svg.hpp"
#include "pfs/threshold.hpp"
#include "pfs/weighted_stats.hpp"

// Report tables and figure data built from in-memory stage results.
namespace pfs::report {

/// One person-year with an estimated PFS and its classification.
struct Obs {
  dynasty::PersonYear py;
  double pfs = 0;
  double mean = 0;
  double nme = 0;
  bool insecure = false;
};

inline double weight(const Obs& o) { return o.py.adjusted_weight; }

/// Joins PFS rows and classifications onto the panel rows they came from.
inline std::vector<Obs> join(const std::vector<dynasty::PersonYear>& panel, const std::vector<estimate::PfsRow>& pfs,
                             const threshold::CutoffSeries& cutoffs) {
  std::map<std::pair<std::string, int>, const dynasty::PersonYear*> index;
  for (const auto& p : panel) index[{p.rec.person_id, p.rec.year}] = &p;
  std::vector<Obs> out;
  out.reserve(pfs.size());
  for (const auto& r : pfs) {
    auto it = index.find({r.person_id, r.year});
    if (it == index.end())
      throw Error(ErrorKind::join, "PFS row " + r.person_id + "/" + std::to_string(r.year) + " has no panel row");
    Obs o;
    o.py = *it->second;
    o.pfs = r.pfs;
    o.mean = r.mean;
    o.nme = r.nme;
    o.insecure = threshold::classify(r.pfs, r.year, cutoffs);
    out.push_back(std::move(o));
  }
  return out;
}

namespace detail {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double flag(const std::optional<bool>& b) { return b ? (*b ? 1.0 : 0.0) : kNaN; }

struct Moments {
  double mean = kNaN;
  double sd = kNaN;
  std::size_t n = 0;
};

inline Moments moments(const std::vector<double>& v, const std::vector<double>& w) {
  std::vector<double> x, ww;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isnan(v[i])) {
      x.push_back(v[i]);
      ww.push_back(w[i]);
    }
  Moments m;
  m.n = x.size();
  if (x.empty()) return m;
  m.mean = stats::weighted_mean(x, ww);
  m.sd = stats::weighted_sd(x, ww);
  return m;
}

inline const std::vector<std::string>& education_levels() {
  static const std::vector<std::string> l = {"less_hs", "hs", "some_college", "college"};
  return l;
}

inline std::string edu(const std::optional<ingest::Education>& e) { return e ? ingest::to_string(*e) : ""; }

}  // namespace detail

// ---------------------------------------------------------------------------
// descriptive statistics

/// Individual-level rows are unweighted; person-year rows use adjusted
/// weights. `share` rows carry no SD.
inline csv::Table table1(const std::vector<Obs>& obs) {
  csv::Table t{{"level", "variable", "statistic", "value", "sd", "n"}, {}};
  auto add = [&](const char* level, const std::string& var, const char* stat, detail::Moments m, bool with_sd) {
    t.rows.push_back({level, var, stat, csv::format(m.mean), with_sd ? csv::format(m.sd) : "", std::to_string(m.n)});
  };

  struct Person {
    std::string sex;
    std::set<int> years;
    bool ever_insecure = false;
    int snap_waves = 0;
  };
  std::map<std::string, Person> persons;
  int first = std::numeric_limits<int>::max();
  for (const auto& o : obs) {
    auto& p = persons[o.py.rec.person_id];
    p.sex = o.py.rec.sex;
    p.years.insert(o.py.rec.year);
    p.ever_insecure = p.ever_insecure || o.insecure;
    if (o.py.rec.snap_status) ++p.snap_waves;
    first = std::min(first, o.py.rec.year);
  }
  std::vector<double> female, in_first, waves, ever, ever_snap, snap_waves, unit;
  for (const auto& [id, p] : persons) {
    female.push_back(p.sex.empty() ? detail::kNaN : (p.sex == "female" ? 1.0 : 0.0));
    in_first.push_back(p.years.count(first) ? 1.0 : 0.0);
    waves.push_back(static_cast<double>(p.years.size()));
    ever.push_back(p.ever_insecure ? 1.0 : 0.0);
    ever_snap.push_back(p.snap_waves > 0 ? 1.0 : 0.0);
    snap_waves.push_back(p.snap_waves);
    unit.push_back(1.0);
  }
  t.rows.push_back({"individual", "individuals", "count", std::to_string(persons.size()), "", std::to_string(persons.size())});
  add("individual", "female", "share", detail::moments(female, unit), false);
  add("individual", "surveyed_in_first_year", "share", detail::moments(in_first, unit), false);
  add("individual", "waves_observed", "mean", detail::moments(waves, unit), true);
  add("individual", "ever_food_insecure", "share", detail::moments(ever, unit), false);
  add("individual", "ever_snap", "share", detail::moments(ever_snap, unit), false);
  add("individual", "snap_waves", "mean", detail::moments(snap_waves, unit), true);

  std::vector<double> w;
  for (const auto& o : obs) w.push_back(weight(o));
  auto column = [&](auto f) {
    std::vector<double> v;
    v.reserve(obs.size());
    for (const auto& o : obs) v.push_back(f(o));
    return v;
  };
  const char* py = "person_year";
  add(py, "rp_age", "mean", detail::moments(column([](const Obs& o) { return o.py.rec.rp_age ? double(*o.py.rec.rp_age) : detail::kNaN; }), w), true);
  add(py, "rp_female", "share", detail::moments(column([](const Obs& o) { return detail::flag(o.py.rec.rp_female); }), w), false);
  add(py, "rp_nonwhite", "share", detail::moments(column([](const Obs& o) { return detail::flag(o.py.rec.rp_nonwhite); }), w), false);
  add(py, "rp_married", "share", detail::moments(column([](const Obs& o) { return detail::flag(o.py.rec.rp_married); }), w), false);
  for (const auto& level : detail::education_levels())
    add(py, "rp_education=" + level, "share", detail::moments(column([&](const Obs& o) {
          return o.py.rec.rp_education ? (detail::edu(o.py.rec.rp_education) == level ? 1.0 : 0.0) : detail::kNaN;
        }), w), false);
  add(py, "rp_employed", "share", detail::moments(column([](const Obs& o) { return detail::flag(o.py.rec.rp_employed); }), w), false);
  add(py, "rp_disabled", "share", detail::moments(column([](const Obs& o) { return detail::flag(o.py.rec.rp_disabled); }), w), false);
  add(py, "family_size", "mean", detail::moments(column([](const Obs& o) { return double(o.py.rec.family_size); }), w), true);
  add(py, "child_ratio", "mean", detail::moments(column([](const Obs& o) { return o.py.rec.child_ratio; }), w), true);
  for (auto r : {ingest::Region::northeast, ingest::Region::mid_atlantic, ingest::Region::south, ingest::Region::midwest,
                 ingest::Region::west})
    add(py, std::string("region=") + ingest::to_string(r), "share",
        detail::moments(column([&](const Obs& o) { return o.py.rec.region == r ? 1.0 : 0.0; }), w), false);
  add(py, "snap", "share", detail::moments(column([](const Obs& o) { return o.py.rec.snap_status ? 1.0 : 0.0; }), w), false);
  add(py, "income_pc_thousands", "mean", detail::moments(column([](const Obs& o) {
        return o.py.rec.income_pc ? *o.py.rec.income_pc / 1000.0 : detail::kNaN;
      }), w), true);
  add(py, "food_exp_pc_month", "mean", detail::moments(column([](const Obs& o) { return o.py.rec.food_exp_pc_month; }), w), true);
  add(py, "snap_benefit_month_recipients", "mean", detail::moments(column([](const Obs& o) {
        return o.py.rec.snap_status && o.py.rec.snap_benefit_month ? *o.py.rec.snap_benefit_month : detail::kNaN;
      }), w), true);
  add(py, "pfs", "mean", detail::moments(column([](const Obs& o) { return o.pfs; }), w), true);
  add(py, "food_insecure_pfs", "share", detail::moments(column([](const Obs& o) { return o.insecure ? 1.0 : 0.0; }), w), false);
  add(py, "nme_below_one", "share", detail::moments(column([](const Obs& o) { return o.nme < 1 ? 1.0 : 0.0; }), w), false);
  t.rows.push_back({py, "person_years", "count", std::to_string(obs.size()), "", std::to_string(obs.size())});
  return t;
}

// ---------------------------------------------------------------------------
// PFS against FSSS

inline bool in_fsss_wave(int year) {
  return std::find(ingest::kFsssWaves.begin(), ingest::kFsssWaves.end(), year) != ingest::kFsssWaves.end();
}

/// Person-years in FSSS waves with a known FSSS status.
inline std::vector<const Obs*> fsss_sample(const std::vector<Obs>& obs) {
  std::vector<const Obs*> out;
  for (const auto& o : obs)
    if (in_fsss_wave(o.py.rec.year) && o.py.rec.fsss_insecure) out.push_back(&o);
  return out;
}

/// Rows are the four status combinations plus n and the match rate; columns
/// are years and the pooled total.
inline csv::Table crosstab_table(const std::vector<dynamics::CrosstabRow>& rows) {
  csv::Table t{{"category"}, {}};
  for (const auto& r : rows) t.header.push_back(r.label);
  auto line = [&](const char* name, auto get) {
    std::vector<std::string> cells = {name};
    for (const auto& r : rows) cells.push_back(get(r));
    t.rows.push_back(std::move(cells));
  };
  line("pfs_secure_fsss_secure", [](const auto& r) { return csv::format(r.secure_both); });
  line("pfs_insecure_fsss_insecure", [](const auto& r) { return csv::format(r.insecure_both); });
  line("pfs_insecure_fsss_secure", [](const auto& r) { return csv::format(r.pfs_insecure_fsss_secure); });
  line("pfs_secure_fsss_insecure", [](const auto& r) { return csv::format(r.pfs_secure_fsss_insecure); });
  line("match_rate", [](const auto& r) { return csv::format(r.match_rate()); });
  line("n", [](const auto& r) { return std::to_string(r.n); });
  return t;
}

inline csv::Table table3(const std::vector<Obs>& obs) {
  std::vector<dynamics::PairedStatus> pairs;
  for (const Obs* o : fsss_sample(obs))
    pairs.push_back({o->py.rec.year, o->insecure, *o->py.rec.fsss_insecure, weight(*o)});
  return crosstab_table(dynamics::crosstab_pfs_fsss(pairs));
}

/// FSSS statuses re-assigned by raw-score rank so that each year's FSSS
/// prevalence equals the PFS prevalence of the same person-years.
inline csv::Table table_b4(const std::vector<Obs>& obs) {
  std::map<int, std::vector<const Obs*>> by_year;
  for (const Obs* o : fsss_sample(obs))
    if (o->py.rec.fsss_raw) by_year[o->py.rec.year].push_back(o);
  std::vector<dynamics::PairedStatus> pairs;
  for (const auto& [y, list] : by_year) {
    std::vector<dynamics::RankedScore> scores;
    double total = 0, insecure = 0;
    for (const Obs* o : list) {
      scores.push_back({o->py.rec.person_id, *o->py.rec.fsss_raw, o->pfs, weight(*o)});
      total += weight(*o);
      if (o->insecure) insecure += weight(*o);
    }
    const auto flags = dynamics::reclassify_fsss_by_rank(scores, total > 0 ? insecure / total : 0.0);
    for (std::size_t i = 0; i < list.size(); ++i) pairs.push_back({y, list[i]->insecure, flags[i], weight(*list[i])});
  }
  return crosstab_table(dynamics::crosstab_pfs_fsss(pairs));
}

/// Category (1) both secure, (2) FSSS-only insecure, (3) PFS-only insecure,
/// (4) both insecure.
inline std::string agreement_category(bool pfs_insecure, bool fsss_insecure) {
  if (!pfs_insecure && !fsss_insecure) return "(1)";
  if (!pfs_insecure) return "(2)";
  if (!fsss_insecure) return "(3)";
  return "(4)";
}

inline csv::Table table4(const std::vector<Obs>& obs) {
  const std::vector<std::string> order = {"(1)", "(2)", "(3)", "(4)"};
  std::vector<std::string> cells;
  std::vector<double> w;
  std::vector<std::pair<std::string, std::vector<double>>> attrs = {
      {"female", {}},        {"rp_age", {}},         {"rp_nonwhite", {}}, {"rp_married", {}},
      {"rp_disabled", {}},   {"rp_less_hs", {}},     {"family_size", {}}, {"ln_income_pc", {}},
      {"food_exp_pc_month", {}}, {"pfs", {}},        {"fsss_raw", {}}};
  for (const Obs* o : fsss_sample(obs)) {
    const auto& r = o->py.rec;
    cells.push_back(agreement_category(o->insecure, *r.fsss_insecure));
    w.push_back(weight(*o));
    attrs[0].second.push_back(r.sex.empty() ? detail::kNaN : (r.sex == "female" ? 1.0 : 0.0));
    attrs[1].second.push_back(r.rp_age ? double(*r.rp_age) : detail::kNaN);
    attrs[2].second.push_back(detail::flag(r.rp_nonwhite));
    attrs[3].second.push_back(detail::flag(r.rp_married));
    attrs[4].second.push_back(detail::flag(r.rp_disabled));
    attrs[5].second.push_back(r.rp_education ? (*r.rp_education == ingest::Education::less_hs ? 1.0 : 0.0) : detail::kNaN);
    attrs[6].second.push_back(r.family_size);
    attrs[7].second.push_back(estimate::ln_income(r.income_pc));
    attrs[8].second.push_back(r.food_exp_pc_month);
    attrs[9].second.push_back(o->pfs);
    attrs[10].second.push_back(r.fsss_raw ? double(*r.fsss_raw) : detail::kNaN);
  }
  const auto summary = dynamics::weighted_summary(cells, w, attrs, order);
  double total = 0;
  for (double v : w) total += v;

  csv::Table t{{"panel", "variable", "statistic"}, {}};
  t.header.insert(t.header.end(), order.begin(), order.end());
  auto row = [&](const char* panel, const std::string& var, const char* stat, auto get) {
    std::vector<std::string> r = {panel, var, stat};
    for (const auto& s : summary) r.push_back(get(s));
    t.rows.push_back(std::move(r));
  };
  row("a", "n", "count", [](const auto& s) { return std::to_string(s.n); });
  row("a", "share", "weighted", [&](const auto& s) { return csv::format(total > 0 ? s.weight / total : 0.0); });
  row("b", "n", "count", [](const auto& s) { return std::to_string(s.n); });
  for (const auto& [name, values] : attrs) {
    const bool continuous = name == "rp_age" || name == "family_size" || name == "ln_income_pc" ||
                            name == "food_exp_pc_month" || name == "pfs" || name == "fsss_raw";
    row("b", name, "mean", [&, n = name](const auto& s) { return csv::format(s.mean.at(n)); });
    if (continuous) row("b", name, "sd", [&, n = name](const auto& s) { return csv::format(s.sd.at(n)); });
  }
  return t;
}

/// Unweighted Spearman and Kendall correlations of PFS with the raw FSSS
/// score per FSSS wave and pooled.
inline csv::Table rank_correlation_table(const std::vector<Obs>& obs) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& o : obs) {
    if (!in_fsss_wave(o.py.rec.year) || !o.py.rec.fsss_raw) continue;
    for (const std::string& key : {std::to_string(o.py.rec.year), std::string("total")}) {
      groups[key].first.push_back(o.pfs);
      groups[key].second.push_back(static_cast<double>(*o.py.rec.fsss_raw));
    }
  }
  csv::Table t{{"sample", "n", "spearman", "kendall_tau_b", "weighting", "note"}, {}};
  for (const auto& [key, xy] : groups) {
    auto s = dynamics::spearman(xy.first, xy.second);
    auto k = dynamics::kendall_tau_b(xy.first, xy.second);
    std::string note = s.value ? k.reason : s.reason;
    t.rows.push_back({key, std::to_string(xy.first.size()), csv::format(s.value), csv::format(k.value), "unweighted",
                      note});
  }
  return t;
}

// ---------------------------------------------------------------------------
// dynamics tables

inline csv::Table table5(const std::vector<std::pair<std::string, dynamics::TransitionRow>>& rows) {
  csv::Table t{{"category", "group", "n_pairs", "insecure_both", "insecure_first_only", "insecure_second_only",
                "secure_both"},
               {}};
  for (const auto& [cat, r] : rows)
    t.rows.push_back({cat, r.group, std::to_string(r.n_pairs), csv::format(r.insecure_both),
                      csv::format(r.insecure_first_only), csv::format(r.insecure_second_only),
                      csv::format(r.secure_both)});
  return t;
}

/// Chronic shares pivoted to one column per window.
inline csv::Table table6(const std::vector<std::pair<std::string, dynamics::ChronicRow>>& rows) {
  std::vector<std::string> windows;
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
  for (const auto& [cat, r] : rows) {
    if (std::find(windows.begin(), windows.end(), r.window) == windows.end()) windows.push_back(r.window);
    std::pair<std::string, std::string> k{cat, r.group};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    cells[k][r.window] = r.share;
  }
  csv::Table t{{"category", "group"}, {}};
  t.header.insert(t.header.end(), windows.begin(), windows.end());
  for (const auto& k : keys) {
    std::vector<std::string> r = {k.first, k.second};
    for (const auto& win : windows) {
      auto it = cells[k].find(win);
      r.push_back(it == cells[k].end() ? "" : csv::format(it->second));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// association regressions

struct AssociationColumn {
  glm::FittedModel fit;
  glm::Vector se;
  bool individual_controls = false;
  bool individual_fe = false;
};

/// PFS regressed by weighted OLS on household covariates with state and year
/// effects. Columns 2 and 4 add the individual's own age and education;
/// columns 3 and 4 demean within person, which absorbs the intercept and any
/// person-constant regressor.
inline std::vector<AssociationColumn> association_models(const std::vector<Obs>& obs, const WaveCalendar& cal) {
  std::vector<dynasty::PersonYear> rows;
  std::vector<double> pfs;
  rows.reserve(obs.size());
  for (const auto& o : obs) {
    rows.push_back(o.py);
    pfs.push_back(o.pfs);
  }
  glm::Frame f = estimate::make_frame(rows);
  f.numeric["pfs"] = pfs;
  std::vector<AssociationColumn> out;
  for (int c = 0; c < 4; ++c) {
    AssociationColumn col;
    col.individual_controls = c == 1 || c == 3;
    col.individual_fe = c >= 2;
    glm::DesignSpec spec;
    spec.response = "pfs";
    spec.lag_degree = 0;
    spec.covariates = estimate::default_covariates();
    if (col.individual_controls) {
      spec.covariates.push_back({"age", false, ""});
      spec.covariates.push_back({"age_sq_k", false, ""});
      spec.covariates.push_back({"education", true, "hs"});
    }
    spec.fixed_effects = {"state", "year"};
    spec.weight_column = "adjusted_weight";
    auto d = glm::build_design(f, spec, cal);
    glm::Matrix X = d.X;
    glm::Vector y = d.y;
    std::vector<std::string> persons;
    persons.reserve(d.kept.size());
    for (auto i : d.kept) persons.push_back(f.person[i]);
    if (col.individual_fe) {
      X = glm::within_transform(X, persons, d.w);
      glm::Matrix ym(y.size(), 1);
      ym.col(0) = y;
      y = glm::within_transform(ym, persons, d.w).col(0);
    }
    col.fit = glm::fit_ols(X, y, d.w, d.columns);
    col.se = glm::robust_se(col.fit, X, d.columns, y, d.w, persons);
    out.push_back(std::move(col));
  }
  return out;
}

inline bool is_fixed_effect(const std::string& term) {
  return term.rfind("fe_", 0) == 0;
}

inline csv::Table table_b2(const std::vector<AssociationColumn>& cols) {
  std::vector<std::string> terms;
  auto note = [&](const std::string& n) {
    if (!is_fixed_effect(n) && std::find(terms.begin(), terms.end(), n) == terms.end()) terms.push_back(n);
  };
  for (const auto& c : cols) {
    for (const auto& n : c.fit.names) note(n);
    for (const auto& n : c.fit.dropped) note(n);
  }
  csv::Table t{{"term", "statistic", "(1)", "(2)", "(3)", "(4)"}, {}};
  for (const auto& term : terms) {
    std::vector<std::string> coef = {term, "coef"}, se = {term, "se"};
    for (const auto& c : cols) {
      auto it = std::find(c.fit.names.begin(), c.fit.names.end(), term);
      if (it == c.fit.names.end()) {
        coef.push_back("");
        se.push_back("");
        continue;
      }
      const auto k = static_cast<Eigen::Index>(it - c.fit.names.begin());
      coef.push_back(csv::format(c.fit.beta(k)));
      se.push_back(csv::format(c.se(k)));
    }
    t.rows.push_back(std::move(coef));
    t.rows.push_back(std::move(se));
  }
  auto meta = [&](const char* name, auto get) {
    std::vector<std::string> r = {name, ""};
    for (const auto& c : cols) r.push_back(get(c));
    t.rows.push_back(std::move(r));
  };
  meta("state_fe", [](const auto&) { return std::string("yes"); });
  meta("year_fe", [](const auto&) { return std::string("yes"); });
  meta("individual_controls", [](const auto& c) { return std::string(c.individual_controls ? "yes" : "no"); });
  meta("individual_fe", [](const auto& c) { return std::string(c.individual_fe ? "yes" : "no"); });
  meta("dropped", [](const auto& c) {
    std::string s;
    for (const auto& n : c.fit.dropped) {
      if (is_fixed_effect(n)) continue;
      if (!s.empty()) s += ";";
      s += n;
    }
    return s;
  });
  meta("n_obs", [](const auto& c) { return std::to_string(c.fit.n_obs); });
  meta("r_squared", [](const auto& c) { return csv::format(c.fit.r_squared); });
  return t;
}

// ---------------------------------------------------------------------------
// figure data

inline csv::Table pfs_distribution(const std::vector<Obs>& obs) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_year;
  for (const auto& o : obs) {
    by_year[o.py.rec.year].first.push_back(o.pfs);
    by_year[o.py.rec.year].second.push_back(weight(o));
  }
  csv::Table t{{"year", "mean", "p5", "p20", "n"}, {}};
  for (const auto& [y, vw] : by_year)
    t.rows.push_back({std::to_string(y), csv::format(stats::weighted_mean(vw.first, vw.second)),
                      csv::format(stats::weighted_quantile(vw.first, vw.second, 0.05)),
                      csv::format(stats::weighted_quantile(vw.first, vw.second, 0.20)),
                      std::to_string(vw.first.size())});
  return t;
}

inline csv::Table prevalence_series(const std::vector<Obs>& obs, const threshold::CutoffSeries& cutoffs) {
  std::map<int, std::pair<double, double>> acc;
  for (const auto& o : obs) {
    auto& a = acc[o.py.rec.year];
    a.second += weight(o);
    if (o.insecure) a.first += weight(o);
  }
  csv::Table t{{"year", "prevalence", "cutoff", "provenance"}, {}};
  for (const auto& [y, a] : acc) {
    const auto& c = cutoffs.at(y);
    t.rows.push_back({std::to_string(y), csv::format(a.second > 0 ? a.first / a.second : 0.0), csv::format(c.cutoff),
                      threshold::to_string(c.provenance)});
  }
  return t;
}

/// Box statistics of person-average PFS by education, race and sex. Each
/// person carries the mean of their adjusted weights and their last observed
/// attributes.
inline std::vector<dynamics::GroupBox> pfs_boxes(const std::vector<Obs>& obs) {
  struct Acc {
    double pfs = 0, w = 0;
    int n = 0;
    std::string label;
  };
  std::map<std::string, Acc> persons;
  for (const auto& o : obs) {
    auto& a = persons[o.py.rec.person_id];
    a.pfs += o.pfs;
    a.w += weight(o);
    ++a.n;
    const auto& r = o.py.rec;
    if (r.education && r.race != ingest::Race::missing && !r.sex.empty())
      a.label = detail::edu(r.education) + "/" + ingest::to_string(r.race) + "/" + r.sex;
  }
  std::vector<double> values, weights;
  std::vector<std::string> labels;
  for (const auto& [id, a] : persons) {
    if (a.label.empty()) continue;
    values.push_back(a.pfs / a.n);
    weights.push_back(a.w / a.n);
    labels.push_back(a.label);
  }
  std::vector<std::string> order;
  for (const auto& e : detail::education_levels())
    for (const char* race : {"white", "nonwhite"})
      for (const char* sex : {"female", "male"}) order.push_back(e + "/" + race + "/" + sex);
  return dynamics::box_by_group(values, weights, labels, order);
}

inline csv::Table box_table(const std::vector<dynamics::GroupBox>& boxes) {
  csv::Table t{{"group", "n", "q1", "median", "q3", "lower", "upper", "mean", "outliers"}, {}};
  for (const auto& g : boxes)
    t.rows.push_back({g.group, std::to_string(g.box.n), csv::format(g.box.q1), csv::format(g.box.median),
                      csv::format(g.box.q3), csv::format(g.box.lower_whisker), csv::format(g.box.upper_whisker),
                      csv::format(g.box.mean), std::to_string(g.box.outliers)});
  return t;
}

inline csv::Table newly_still_shares(const std::vector<dynamics::NewlyStillRow>& rows) {
  csv::Table t{{"year", "still", "newly", "prior_unknown"}, {}};
  for (const auto& r : rows) {
    if (!(r.known_weight > 0)) continue;
    t.rows.push_back({std::to_string(r.year), csv::format(r.still / r.known_weight),
                      csv::format(r.newly / r.known_weight), csv::format(r.prior_unknown / r.known_weight)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// SVG from figure tables

namespace detail {

inline std::vector<double> numbers(const csv::Table& t, const std::string& column) {
  const auto c = t.require(column);
  std::vector<double> out;
  for (const auto& r : t.rows) out.push_back(csv::parse_double(r[c]).value_or(kNaN));
  return out;
}

inline std::vector<std::string> strings(const csv::Table& t, const std::string& column) {
  const auto c = t.require(column);
  std::vector<std::string> out;
  for (const auto& r : t.rows) out.push_back(r[c]);
  return out;
}

}  // namespace detail

inline std::string figure1(const csv::Table& dist) {
  const auto x = detail::numbers(dist, "year");
  return svg::line_chart("PFS by year: mean, 20th and 5th percentiles", "year", "PFS",
                         {{"mean", x, detail::numbers(dist, "mean")},
                          {"p20", x, detail::numbers(dist, "p20")},
                          {"p5", x, detail::numbers(dist, "p5")}},
                         std::pair{0.0, 1.0});
}

inline std::string figure3(const csv::Table& prevalence) {
  return svg::line_chart("Food insecurity prevalence by PFS", "year", "share insecure",
                         {{"prevalence", detail::numbers(prevalence, "year"), detail::numbers(prevalence, "prevalence")}});
}

inline std::string figure4(const std::vector<dynamics::GroupBox>& boxes) {
  std::vector<std::pair<std::string, stats::BoxStats>> g;
  for (const auto& b : boxes) g.emplace_back(b.group, b.box);
  return svg::box_plot("Person-average PFS by education, race and sex", "PFS", g);
}

inline std::string figure5(const csv::Table& lengths) {
  std::vector<std::string> cats = detail::strings(lengths, "length");
  return svg::bar_chart("Distribution of spell lengths", "spell length (waves)", "weighted share", cats,
                        detail::numbers(lengths, "share_weighted"));
}

inline std::string figure6(const csv::Table& shares) {
  return svg::stacked_bars("Insecure persons by prior status", "year", "share of known persons",
                           detail::strings(shares, "year"),
                           {{"still", detail::numbers(shares, "still")},
                            {"newly", detail::numbers(shares, "newly")},
                            {"prior_unknown", detail::numbers(shares, "prior_unknown")}});
}

inline std::string figure_a2(const csv::Table& composition) {
  const auto x = detail::numbers(composition, "year");
  std::vector<svg::Series> s = {{"female RP", x, detail::numbers(composition, "female_share")},
                                {"non-White RP", x, detail::numbers(composition, "nonwhite_share")}};
  if (composition.find("reference_female_share")) {
    s.push_back({"female RP (reference)", x, detail::numbers(composition, "reference_female_share")});
    s.push_back({"non-White RP (reference)", x, detail::numbers(composition, "reference_nonwhite_share")});
  }
  return svg::line_chart("Sample composition", "year", "weighted share", s, std::pair{0.0, 1.0});
}

}  // namespace pfs::report
