#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/error.hpp"
#include "pfs/panel_ingest.hpp"
#include "pfs/pfs_estimator.hpp"
#include "pfs/random.hpp"
#include "pfs/threshold.hpp"

namespace pfs::synth {

using Coefficients = std::map<std::string, double>;

/// Mean-equation coefficients on the estimator's design columns.
inline Coefficients default_beta() {
  return {{"intercept", 4.45},
          {"lag", 0.0012},
          {"lag^2", -4.0e-7},
          {"rp_age", 0.010},
          {"rp_age_sq_k", -0.080},
          {"rp_nonwhite", -0.050},
          {"rp_married", -0.100},
          {"rp_female", -0.100},
          {"rp_education=less_hs", -0.050},
          {"rp_education=some_college", 0.040},
          {"rp_education=college", 0.080},
          {"rp_employed", 0.030},
          {"rp_disabled", -0.030},
          {"family_size", -0.080},
          {"child_ratio", -0.150},
          {"rp_changed", 0.050},
          {"ln_income_pc", 0.100},
          {"snap", 0.050}};
}

/// Log gamma-shape coefficients. The variance equation is 2 * beta - delta,
/// so log(alpha) = delta . x.
inline Coefficients default_delta() {
  return {{"intercept", 1.20},      {"ln_income_pc", 0.05},         {"rp_female", -0.10},
          {"rp_nonwhite", -0.15},   {"snap", -0.10},                {"rp_education=less_hs", -0.10},
          {"rp_education=college", 0.10}};
}

struct DGPConfig {
  std::size_t n_persons = 2000;  // persons in the original households of the first wave
  WaveCalendar calendar = WaveCalendar::psid_default();
  Coefficients beta = default_beta();
  Coefficients delta = default_delta();
  double state_effect = 0.05;  // amplitude of state fixed effects
  double year_effect = 0.03;   // amplitude of year fixed effects

  double spouse_share = 0.6;
  double mean_children = 1.1;
  double attrition_rate = 0.012;  // per year
  double split_off_rate = 0.25;   // per year, children aged 18 or more
  double marry_rate = 0.5;
  double join_nonsample_rp_rate = 0.25;
  double nonsample_rp_exit_rate = 0.05;
  double divorce_rate = 0.01;
  double birth_rate = 0.08;

  std::size_t latino_households = 30;
  int latino_entry = 1990;
  std::size_t immigrant_households = 15;
  int immigrant_entry = 2017;
  double outside_share = 0.02;  // dynasties living in AK / HI

  double ln_income_mean = 9.75;
  double ln_income_perm_sd = 0.40;
  double ln_income_trans_sd = 0.30;
  double tfp_base = 175;  // Jan-2019 dollars per person and month
  double no_lag_value = 300;
  double mean_cap = 5000;
  double messy_rate = 0.004;          // benefit answers that cannot be converted
  double missing_month_rate = 0.02;   // before 1998 only
  std::uint64_t seed = 20240601;

  void validate() const {
    calendar.validate();
    if (n_persons == 0) throw Error(ErrorKind::config, "n_persons must be positive");
    auto prob = [](double p, const char* name) {
      if (!(p >= 0 && p <= 1)) throw Error(ErrorKind::config, std::string(name) + " must lie in [0, 1]");
    };
    prob(spouse_share, "spouse_share");
    prob(attrition_rate, "attrition_rate");
    prob(split_off_rate, "split_off_rate");
    prob(marry_rate, "marry_rate");
    prob(join_nonsample_rp_rate, "join_nonsample_rp_rate");
    prob(nonsample_rp_exit_rate, "nonsample_rp_exit_rate");
    prob(divorce_rate, "divorce_rate");
    prob(birth_rate, "birth_rate");
    prob(outside_share, "outside_share");
    prob(messy_rate, "messy_rate");
    prob(missing_month_rate, "missing_month_rate");
    if (mean_children < 0) throw Error(ErrorKind::config, "mean_children must be nonnegative");
    if (!(tfp_base > 0) || !(no_lag_value > 0) || !(mean_cap > 0))
      throw Error(ErrorKind::config, "tfp_base, no_lag_value and mean_cap must be positive");
    if (!beta.count("intercept") || !delta.count("intercept"))
      throw Error(ErrorKind::config, "beta and delta need an intercept");
  }
};

inline nlohmann::ordered_json to_json(const DGPConfig& c) {
  nlohmann::ordered_json j;
  j["n_persons"] = c.n_persons;
  j["calendar"] = {{"waves", c.calendar.waves}, {"gap_years", c.calendar.gap_years}};
  j["beta"] = c.beta;
  j["delta"] = c.delta;
  j["state_effect"] = c.state_effect;
  j["year_effect"] = c.year_effect;
  j["spouse_share"] = c.spouse_share;
  j["mean_children"] = c.mean_children;
  j["attrition_rate"] = c.attrition_rate;
  j["split_off_rate"] = c.split_off_rate;
  j["marry_rate"] = c.marry_rate;
  j["join_nonsample_rp_rate"] = c.join_nonsample_rp_rate;
  j["nonsample_rp_exit_rate"] = c.nonsample_rp_exit_rate;
  j["divorce_rate"] = c.divorce_rate;
  j["birth_rate"] = c.birth_rate;
  j["latino_households"] = c.latino_households;
  j["latino_entry"] = c.latino_entry;
  j["immigrant_households"] = c.immigrant_households;
  j["immigrant_entry"] = c.immigrant_entry;
  j["outside_share"] = c.outside_share;
  j["ln_income_mean"] = c.ln_income_mean;
  j["ln_income_perm_sd"] = c.ln_income_perm_sd;
  j["ln_income_trans_sd"] = c.ln_income_trans_sd;
  j["tfp_base"] = c.tfp_base;
  j["no_lag_value"] = c.no_lag_value;
  j["mean_cap"] = c.mean_cap;
  j["messy_rate"] = c.messy_rate;
  j["missing_month_rate"] = c.missing_month_rate;
  j["seed"] = c.seed;
  return j;
}

/// Reads a config; absent keys keep their defaults, unknown keys are errors.
inline DGPConfig dgp_from_json(const nlohmann::json& j) {
  DGPConfig c;
  if (!j.is_object()) throw Error(ErrorKind::config, "synth config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "n_persons") c.n_persons = v.get<std::size_t>();
      else if (k == "calendar") {
        c.calendar.waves = v.at("waves").get<std::vector<int>>();
        c.calendar.gap_years = v.value("gap_years", std::vector<int>{});
      } else if (k == "beta") {
        for (auto& [name, x] : v.items()) c.beta[name] = x.get<double>();
      } else if (k == "delta") {
        for (auto& [name, x] : v.items()) c.delta[name] = x.get<double>();
      } else if (k == "state_effect") c.state_effect = v.get<double>();
      else if (k == "year_effect") c.year_effect = v.get<double>();
      else if (k == "spouse_share") c.spouse_share = v.get<double>();
      else if (k == "mean_children") c.mean_children = v.get<double>();
      else if (k == "attrition_rate") c.attrition_rate = v.get<double>();
      else if (k == "split_off_rate") c.split_off_rate = v.get<double>();
      else if (k == "marry_rate") c.marry_rate = v.get<double>();
      else if (k == "join_nonsample_rp_rate") c.join_nonsample_rp_rate = v.get<double>();
      else if (k == "nonsample_rp_exit_rate") c.nonsample_rp_exit_rate = v.get<double>();
      else if (k == "divorce_rate") c.divorce_rate = v.get<double>();
      else if (k == "birth_rate") c.birth_rate = v.get<double>();
      else if (k == "latino_households") c.latino_households = v.get<std::size_t>();
      else if (k == "latino_entry") c.latino_entry = v.get<int>();
      else if (k == "immigrant_households") c.immigrant_households = v.get<std::size_t>();
      else if (k == "immigrant_entry") c.immigrant_entry = v.get<int>();
      else if (k == "outside_share") c.outside_share = v.get<double>();
      else if (k == "ln_income_mean") c.ln_income_mean = v.get<double>();
      else if (k == "ln_income_perm_sd") c.ln_income_perm_sd = v.get<double>();
      else if (k == "ln_income_trans_sd") c.ln_income_trans_sd = v.get<double>();
      else if (k == "tfp_base") c.tfp_base = v.get<double>();
      else if (k == "no_lag_value") c.no_lag_value = v.get<double>();
      else if (k == "mean_cap") c.mean_cap = v.get<double>();
      else if (k == "messy_rate") c.messy_rate = v.get<double>();
      else if (k == "missing_month_rate") c.missing_month_rate = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw Error(ErrorKind::config, "unknown synth config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

struct SyntheticPanel {
  csv::Table raw;
  csv::Table truth_person_years;
  csv::Table truth_roster;
  csv::Table truth_coefficients;
  ingest::CpiTable cpi;
  threshold::MacroSeries macro;
  threshold::Targets targets;
  csv::Table reference;
};

namespace detail {

inline const std::vector<std::pair<const char*, double>>& contiguous_states() {
  static const std::vector<std::pair<const char*, double>> s = {
      {"AL", 5}, {"AZ", 6}, {"AR", 3}, {"CA", 38}, {"CO", 5}, {"CT", 4}, {"DE", 1}, {"DC", 1}, {"FL", 19},
      {"GA", 10}, {"ID", 2}, {"IL", 13}, {"IN", 6}, {"IA", 3}, {"KS", 3}, {"KY", 4}, {"LA", 5}, {"ME", 1},
      {"MD", 6}, {"MA", 7}, {"MI", 10}, {"MN", 5}, {"MS", 3}, {"MO", 6}, {"MT", 1}, {"NE", 2}, {"NV", 3},
      {"NH", 1}, {"NJ", 9}, {"NM", 2}, {"NY", 19}, {"NC", 10}, {"ND", 1}, {"OH", 11}, {"OK", 4}, {"OR", 4},
      {"PA", 13}, {"RI", 1}, {"SC", 5}, {"SD", 1}, {"TN", 6}, {"TX", 27}, {"UT", 3}, {"VT", 1}, {"VA", 8},
      {"WA", 7}, {"WV", 2}, {"WI", 6}, {"WY", 1}};
  return s;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Deterministic effect in [-amp, amp] keyed by a label.
inline double keyed_effect(std::uint64_t seed, const std::string& key, double amp) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : key) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  const double u = static_cast<double>(derive_seed(seed, h) >> 11) * 0x1.0p-53;
  return amp * (2.0 * u - 1.0);
}

inline double step_prob(double annual, int years) { return 1.0 - std::pow(1.0 - annual, std::max(years, 1)); }

inline std::string pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

struct Person {
  std::string id;
  int birth = 0;
  bool female = false;
  bool nonwhite = false;
  std::string race_label;
  ingest::Education education = ingest::Education::hs;
  ingest::SampleFlag flag = ingest::SampleFlag::original_1968;
  double weight = 0;
  bool active = true;
  // Household expenditure and RP in the person's previous data wave.
  std::optional<double> last_w;
  int last_w_year = 0;
  std::string last_rp;
  bool ever_rp_or_sp = false;
  int first_year = 0, last_year = 0, rows = 0;
};

struct Household {
  int rp = -1;
  int sp = -1;
  std::vector<int> kids;
  std::string state;
  double perm = 0;
  bool employed = true;
  bool disabled = false;
  std::size_t serial = 0;
  bool active = true;
};

struct Output {
  std::vector<std::vector<std::string>> raw;
  std::vector<std::vector<std::string>> truth;
  std::vector<std::vector<std::string>> roster;
};

struct MacroPath {
  std::map<int, threshold::MacroRow> rows;
};

inline ingest::Education draw_education(Rng& rng, int birth) {
  const double shift = std::clamp((birth - 1920) / 80.0, 0.0, 1.0);
  const std::array<double, 4> w = {0.35 - 0.25 * shift, 0.35, 0.15 + 0.10 * shift, 0.15 + 0.15 * shift};
  return static_cast<ingest::Education>(rng.categorical(w));
}

inline std::string race_label(Rng& rng, bool nonwhite) {
  if (!nonwhite) return "white";
  const std::array<double, 3> w = {0.7, 0.15, 0.15};
  static const std::array<const char*, 3> labels = {"black", "asian", "other"};
  return labels[rng.categorical(w)];
}

class DynastySim {
 public:
  DynastySim(const DGPConfig& cfg, const ingest::CpiTable& cpi, const MacroPath& macro, std::size_t index,
             ingest::SampleFlag origin, int entry_year, std::size_t original_target)
      : cfg_(cfg), cpi_(cpi), macro_(macro), rng_(derive_seed(cfg.seed, index + 1)), index_(index),
        origin_(origin), entry_(entry_year) {
    found(original_target);
  }

  std::size_t original_persons() const { return original_; }

  void run(Output& out) {
    const auto& cal = cfg_.calendar;
    int prev_year = 0;
    for (int y : cal.waves) {
      if (y < entry_) continue;
      if (prev_year) events(y, y - prev_year);
      record(y, out);
      prev_year = y;
    }
    for (const auto& p : persons_) {
      if (p.rows == 0) continue;
      std::string reason = "included";
      if (p.flag == ingest::SampleFlag::nonsample) reason = "nonsample";
      else if (p.flag == ingest::SampleFlag::latino_supplement || p.flag == ingest::SampleFlag::immigrant_refresher)
        reason = "supplemental_sample";
      else if (!p.ever_rp_or_sp) reason = "never_rp_or_sp";
      out.roster.push_back({p.id, std::to_string(index_), ingest::to_string(p.flag), std::to_string(p.first_year),
                            std::to_string(p.last_year), std::to_string(p.rows), p.ever_rp_or_sp ? "1" : "0",
                            reason});
    }
  }

 private:
  int add_person(int birth, bool female, bool nonwhite, ingest::SampleFlag flag, double weight) {
    Person p;
    p.id = "P" + pad(index_, 5) + "-" + pad(persons_.size(), 2);
    p.birth = birth;
    p.female = female;
    p.nonwhite = nonwhite;
    p.race_label = race_label(rng_, nonwhite);
    p.education = draw_education(rng_, birth);
    p.flag = flag;
    p.weight = flag == ingest::SampleFlag::nonsample ? 0.0 : weight;
    persons_.push_back(p);
    return static_cast<int>(persons_.size()) - 1;
  }

  int add_household(int rp, int sp, std::string state, double perm) {
    Household h;
    h.rp = rp;
    h.sp = sp;
    h.state = std::move(state);
    h.perm = perm;
    h.serial = households_.size();
    households_.push_back(std::move(h));
    return static_cast<int>(households_.size()) - 1;
  }

  std::string draw_state() {
    if (rng_.bernoulli(cfg_.outside_share)) return rng_.bernoulli(0.5) ? "AK" : "HI";
    const auto& s = contiguous_states();
    std::vector<double> w;
    for (const auto& e : s) w.push_back(e.second);
    return s[rng_.categorical(w)].first;
  }

  bool child_flag_for(int parent) const {
    return persons_[static_cast<std::size_t>(parent)].flag != ingest::SampleFlag::nonsample;
  }

  ingest::SampleFlag descendant_flag() const {
    return origin_ == ingest::SampleFlag::original_1968 ? ingest::SampleFlag::lineal_descendant : origin_;
  }

  void found(std::size_t /*target*/) {
    const int y0 = entry_;
    const bool nonwhite = rng_.bernoulli(0.25);
    const double weight = rng_.uniform(0.6, 1.4);
    const bool married = rng_.bernoulli(cfg_.spouse_share);
    const int rp_age = static_cast<int>(rng_.uniform_int(20, 75));
    const bool rp_female = married ? rng_.bernoulli(0.1) : rng_.bernoulli(0.55);
    const int rp = add_person(y0 - rp_age, rp_female, nonwhite, origin_, weight);
    int sp = -1;
    if (married) {
      const int sp_age = std::clamp(rp_age + static_cast<int>(rng_.uniform_int(-6, 4)), 18, 90);
      sp = add_person(y0 - sp_age, !rp_female, nonwhite, origin_, weight);
    }
    const int hh = add_household(rp, sp, draw_state(), rng_.normal(0.0, cfg_.ln_income_perm_sd));
    // Poisson number of children for parents below 55.
    if (rp_age < 55) {
      const double lim = std::exp(-cfg_.mean_children);
      double prod = rng_.uniform();
      int k = 0;
      while (prod > lim && k < 6) {
        prod *= rng_.uniform();
        ++k;
      }
      for (int c = 0; c < k; ++c) {
        const int age = static_cast<int>(rng_.uniform_int(0, std::min(17, rp_age - 18)));
        const int birth = y0 - age;
        auto flag = origin_;
        if (origin_ == ingest::SampleFlag::original_1968 && birth > 1968) flag = ingest::SampleFlag::lineal_descendant;
        households_[static_cast<std::size_t>(hh)].kids.push_back(add_person(birth, rng_.bernoulli(0.5), nonwhite, flag, weight));
      }
    }
    original_ = persons_.size();
  }

  void end_person(int i) { persons_[static_cast<std::size_t>(i)].active = false; }

  void events(int y, int years) {
    const std::size_t n_households = households_.size();
    for (std::size_t h = 0; h < n_households; ++h) {
      if (!households_[h].active) continue;
      // attrition: the whole household, or the RP alone when a sample spouse remains
      if (rng_.bernoulli(step_prob(cfg_.attrition_rate, years))) {
        auto& hh = households_[h];
        if (hh.sp >= 0 && child_flag_for(hh.sp) && rng_.bernoulli(0.5)) {
          end_person(hh.rp);
          hh.rp = hh.sp;
          hh.sp = -1;
        } else {
          hh.active = false;
          end_person(hh.rp);
          if (hh.sp >= 0) end_person(hh.sp);
          for (int k : hh.kids) end_person(k);
          continue;
        }
      }
      {
        auto& hh = households_[h];
        if (!child_flag_for(hh.rp) && hh.sp >= 0 && rng_.bernoulli(step_prob(cfg_.nonsample_rp_exit_rate, years))) {
          end_person(hh.rp);
          hh.rp = hh.sp;
          hh.sp = -1;
        }
      }
      if (households_[h].sp >= 0 && rng_.bernoulli(step_prob(cfg_.divorce_rate, years))) {
        auto& hh = households_[h];
        const int sp = hh.sp;
        hh.sp = -1;
        if (child_flag_for(sp)) {
          const std::string state = hh.state;
          const double perm = hh.perm;
          add_household(sp, -1, state, perm + rng_.normal(0.0, 0.2));
        } else {
          end_person(sp);
        }
      }
      split_offs(h, y, years);
      births(h, y, years);
    }
  }

  void split_offs(std::size_t h, int y, int years) {
    std::vector<int> staying;
    const std::vector<int> kids = households_[h].kids;
    for (int k : kids) {
      auto& p = persons_[static_cast<std::size_t>(k)];
      if (!p.active || y - p.birth < 18 || !rng_.bernoulli(step_prob(cfg_.split_off_rate, years))) {
        staying.push_back(k);
        continue;
      }
      const std::string state = households_[h].state;
      const double perm = households_[h].perm * 0.5 + rng_.normal(0.0, cfg_.ln_income_perm_sd * 0.8);
      const std::string where = (state == "AK" || state == "HI" || !rng_.bernoulli(0.2)) ? state : draw_state();
      const int partner_age = std::clamp(y - p.birth + static_cast<int>(rng_.uniform_int(-3, 4)), 18, 60);
      const bool partner_nonwhite = rng_.bernoulli(0.25);
      if (rng_.bernoulli(cfg_.join_nonsample_rp_rate)) {
        const int rp = add_person(y - partner_age, !p.female, partner_nonwhite, ingest::SampleFlag::nonsample, 0);
        add_household(rp, k, where, perm);
      } else {
        int sp = -1;
        if (rng_.bernoulli(cfg_.marry_rate))
          sp = add_person(y - partner_age, !persons_[static_cast<std::size_t>(k)].female, partner_nonwhite,
                          ingest::SampleFlag::nonsample, 0);
        add_household(k, sp, where, perm);
      }
    }
    households_[h].kids = staying;
  }

  void births(std::size_t h, int y, int years) {
    auto& hh = households_[h];
    if (hh.sp < 0) return;
    const int rp_age = y - persons_[static_cast<std::size_t>(hh.rp)].birth;
    if (rp_age < 20 || rp_age > 42 || hh.kids.size() >= 6) return;
    if (!rng_.bernoulli(step_prob(cfg_.birth_rate, years))) return;
    const int parent = child_flag_for(hh.rp) ? hh.rp : hh.sp;
    if (!child_flag_for(parent)) return;
    const auto& par = persons_[static_cast<std::size_t>(parent)];
    const double weight = par.weight;
    const bool nonwhite = par.nonwhite;
    const int birth = y - static_cast<int>(rng_.uniform_int(0, std::max(0, years - 1)));
    const int child = add_person(birth, rng_.bernoulli(0.5), nonwhite, descendant_flag(), weight);
    households_[h].kids.push_back(child);
  }

  double linear(const Coefficients& c, const std::map<std::string, double>& x) const {
    double eta = 0;
    for (const auto& [name, b] : c) {
      if (name == "intercept") eta += b;
      else if (auto it = x.find(name); it != x.end()) eta += b * it->second;
    }
    return eta;
  }

  std::string employment_label(bool employed, int age) {
    if (employed) return rng_.bernoulli(0.03) ? "laid_off" : "working";
    if (age >= 62) return "retired";
    const std::array<double, 3> w = {0.4, 0.35, 0.25};
    static const std::array<const char*, 3> labels = {"unemployed", "keeping_house", "student"};
    return labels[rng_.categorical(w)];
  }

  std::string snap_raw(int y, bool snap, int family_size, std::optional<int> month) {
    switch (ingest::snap_regime(y)) {
      case ingest::SnapRegime::member_count:
        return std::to_string(snap ? rng_.uniform_int(1, family_size) : 0);
      case ingest::SnapRegime::yes_no:
        if (snap) return "yes";
        return rng_.bernoulli(0.01) ? "dk" : "no";
      case ingest::SnapRegime::monthly_flags: {
        std::string f(12, '0');
        for (auto& c : f) c = rng_.bernoulli(snap ? 0.7 : 0.03) ? '1' : '0';
        const int prior = *month == 1 ? 12 : *month - 1;
        f[static_cast<std::size_t>(prior - 1)] = snap ? '1' : '0';
        return f;
      }
    }
    return "";
  }

  ingest::Recall draw_recall() {
    const std::array<double, 4> w = {0.55, 0.10, 0.30, 0.05};
    static const std::array<ingest::Recall, 4> r = {ingest::Recall::week, ingest::Recall::two_week,
                                                    ingest::Recall::month, ingest::Recall::year};
    return r[rng_.categorical(w)];
  }

  void record(int y, Output& out) {
    const auto& cal = cfg_.calendar;
    const bool gap = cal.is_gap(y);
    const bool fsss_wave =
        std::find(ingest::kFsssWaves.begin(), ingest::kFsssWaves.end(), y) != ingest::kFsssWaves.end();
    const auto prev_wave = cal.previous(y);
    for (auto& hh : households_) {
      if (!hh.active) continue;
      auto& rp = persons_[static_cast<std::size_t>(hh.rp)];
      std::vector<int> kids;
      for (int k : hh.kids)
        if (persons_[static_cast<std::size_t>(k)].active) kids.push_back(k);
      hh.kids = kids;
      const int family_size = 1 + (hh.sp >= 0 ? 1 : 0) + static_cast<int>(kids.size());
      int n_children = 0;
      for (int k : kids)
        if (y - persons_[static_cast<std::size_t>(k)].birth < 18) ++n_children;
      const double child_ratio = static_cast<double>(n_children) / family_size;
      const int rp_age = y - rp.birth;

      if (rng_.bernoulli(0.3)) {
        const double p_emp = rp_age >= 62 ? 0.25 : 0.80 + (rp.education == ingest::Education::college ? 0.1 : 0.0);
        hh.employed = rng_.bernoulli(p_emp);
      }
      hh.disabled = hh.disabled ? rng_.bernoulli(0.8) : rng_.bernoulli(0.03 + (rp_age > 55 ? 0.04 : 0.0));

      const double edu_effect[] = {-0.35, 0.0, 0.15, 0.45};
      const double ln_inc = cfg_.ln_income_mean + edu_effect[static_cast<int>(rp.education)] +
                            (hh.employed ? 0.25 : -0.35) - 0.25 * std::log(static_cast<double>(family_size)) +
                            hh.perm + 0.01 * (y - 1998) + rng_.normal(0.0, cfg_.ln_income_trans_sd);
      const double income_real = std::exp(ln_inc) * family_size;
      const bool snap = rng_.bernoulli(logistic(-2.2 - 2.2 * (ln_inc - 9.0)));

      // anchor member for the lag and RP-change terms
      int anchor = -1;
      for (int cand : {hh.rp, hh.sp}) {
        if (cand < 0 || anchor >= 0) continue;
        const auto& p = persons_[static_cast<std::size_t>(cand)];
        if (p.flag != ingest::SampleFlag::nonsample && p.last_w) anchor = cand;
      }
      bool lag_observed = false;
      double lag = cfg_.no_lag_value;
      bool rp_changed = false;
      if (anchor >= 0) {
        const auto& a = persons_[static_cast<std::size_t>(anchor)];
        lag_observed = prev_wave && a.last_w_year == *prev_wave;
        if (lag_observed) lag = *a.last_w;
        rp_changed = a.last_rp != rp.id;
      }

      std::map<std::string, double> x = {{"lag", lag},
                                         {"lag^2", lag * lag},
                                         {"rp_age", static_cast<double>(rp_age)},
                                         {"rp_age_sq_k", rp_age * rp_age / 1000.0},
                                         {"rp_nonwhite", rp.nonwhite ? 1.0 : 0.0},
                                         {"rp_married", hh.sp >= 0 ? 1.0 : 0.0},
                                         {"rp_female", rp.female ? 1.0 : 0.0},
                                         {"rp_employed", hh.employed ? 1.0 : 0.0},
                                         {"rp_disabled", hh.disabled ? 1.0 : 0.0},
                                         {"family_size", static_cast<double>(family_size)},
                                         {"child_ratio", child_ratio},
                                         {"rp_changed", rp_changed ? 1.0 : 0.0},
                                         {"ln_income_pc", ln_inc},
                                         {"snap", snap ? 1.0 : 0.0}};
      if (rp.education != ingest::Education::hs)
        x[std::string("rp_education=") + ingest::to_string(rp.education)] = 1.0;
      const double fe = keyed_effect(cfg_.seed, "state:" + hh.state, cfg_.state_effect) +
                        keyed_effect(cfg_.seed, "year:" + std::to_string(y), cfg_.year_effect);
      const double eta_mean = linear(cfg_.beta, x) + fe;
      const double log_alpha = linear(cfg_.delta, x);
      const double mean = std::min(std::exp(eta_mean), cfg_.mean_cap);
      const double alpha = std::exp(log_alpha);
      const double variance = mean * mean / alpha;
      const double scale = variance / mean;
      const double tfp_real = cfg_.tfp_base * (family_size == 1 ? 1.2 : family_size >= 5 ? 0.9 : 1.0) *
                              (1.0 - 0.2 * child_ratio);

      std::optional<int> month = static_cast<int>(rng_.uniform_int(2, 11));
      if (y <= 1997 && rng_.bernoulli(cfg_.missing_month_rate)) month.reset();
      const double to_nominal = cpi_.index(y, month) / cpi_.index(2019, 1);

      double w = 0;
      std::vector<std::string> food(6), benefit(2);
      if (!gap) {
        w = rng_.gamma(alpha, scale);
        double total = w * family_size * to_nominal;
        double benefit_month = 0;
        if (snap) {
          benefit_month = std::min(0.45 * total, 110.0 * family_size * rng_.uniform(0.5, 1.2) * to_nominal);
          const auto recall = rng_.bernoulli(0.8) ? ingest::Recall::month : ingest::Recall::week;
          if (rng_.bernoulli(cfg_.messy_rate)) {
            benefit = {rng_.bernoulli(0.5) ? "refused" : "dk", ""};
          } else {
            benefit = {csv::format(ingest::from_monthly(benefit_month, recall)), ingest::to_string(recall)};
          }
        }
        const double rest = total - benefit_month;
        const double share_out = rng_.uniform(0.1, 0.35);
        const double share_delivered = rng_.bernoulli(0.15) ? rng_.uniform(0.02, 0.08) : 0.0;
        const double home = rest * (1.0 - share_out - share_delivered);
        const double delivered = rest * share_delivered;
        const double outside = rest * share_out;
        if (y < 1994) {
          food = {csv::format(12.0 * (home + delivered)), rng_.bernoulli(0.5) ? "year" : "", "", "",
                  csv::format(12.0 * outside), rng_.bernoulli(0.5) ? "year" : ""};
        } else {
          auto rh = draw_recall(), ro = draw_recall();
          food = {csv::format(ingest::from_monthly(home, rh)), ingest::to_string(rh), "", "",
                  csv::format(ingest::from_monthly(outside, ro)), ingest::to_string(ro)};
          if (delivered > 0) {
            auto rd = draw_recall();
            food[2] = csv::format(ingest::from_monthly(delivered, rd));
            food[3] = ingest::to_string(rd);
          }
        }
      }

      std::string fsss_raw, fsss_status;
      double true_pfs = std::numeric_limits<double>::quiet_NaN();
      if (!gap) true_pfs = estimate::gamma_survival(tfp_real, {alpha, scale});
      if (fsss_wave && !gap && !rng_.bernoulli(0.01)) {
        const auto raw = rng_.binomial(18, logistic(-4.0 + 7.0 * (1.0 - true_pfs)));
        fsss_raw = std::to_string(raw);
        fsss_status = raw >= 3 ? "insecure" : "secure";
      }

      const std::string household_id = "H" + std::to_string(y) + "-" + pad(index_, 5) + "-" + pad(hh.serial, 2);
      const std::string snap_cell = snap_raw(y, snap, family_size, month);
      const std::string employment = employment_label(hh.employed, rp_age);
      const std::string marital = hh.sp >= 0 ? "married" : (rp_age < 30 ? "never_married" : rng_.bernoulli(0.5) ? "divorced" : "widowed");

      std::vector<std::pair<int, const char*>> members = {{hh.rp, "RP"}};
      if (hh.sp >= 0) members.push_back({hh.sp, "SP"});
      for (int k : kids) members.push_back({k, "CH"});
      for (const auto& [idx, role] : members) {
        auto& p = persons_[static_cast<std::size_t>(idx)];
        const int age = y - p.birth;
        if (std::string(role) != "CH") p.ever_rp_or_sp = true;
        std::string race = p.race_label;
        if (age < 16 && rng_.bernoulli(0.7)) race.clear();
        std::string education;
        if (age >= 18) education = ingest::to_string(p.education);
        else if (age >= 16) education = "less_hs";
        out.raw.push_back({p.id,
                           std::to_string(y),
                           household_id,
                           role,
                           month ? std::to_string(*month) : "",
                           csv::format(p.weight),
                           hh.state,
                           snap_cell,
                           benefit[0],
                           benefit[1],
                           food[0],
                           food[1],
                           food[2],
                           food[3],
                           food[4],
                           food[5],
                           std::to_string(family_size),
                           std::to_string(n_children),
                           std::to_string(age),
                           p.female ? "female" : "male",
                           race,
                           education,
                           std::to_string(rp_age),
                           rp.female ? "female" : "male",
                           rp.race_label,
                           marital,
                           ingest::to_string(rp.education),
                           employment,
                           hh.disabled ? "yes" : "no",
                           csv::format(income_real * to_nominal),
                           csv::format(tfp_real * to_nominal),
                           fsss_raw,
                           fsss_status,
                           ingest::to_string(p.flag)});
        if (!gap) {
          out.truth.push_back({p.id, std::to_string(y), household_id, csv::format(mean), csv::format(variance),
                               csv::format(alpha), csv::format(scale), csv::format(true_pfs), csv::format(tfp_real),
                               csv::format(w), lag_observed ? "1" : "0"});
        }
        if (p.rows == 0) p.first_year = y;
        p.last_year = y;
        ++p.rows;
      }
      if (!gap) {
        for (const auto& [idx, role] : members) {
          auto& p = persons_[static_cast<std::size_t>(idx)];
          p.last_w = w;
          p.last_w_year = y;
          p.last_rp = rp.id;
        }
      }
    }
  }

  const DGPConfig& cfg_;
  const ingest::CpiTable& cpi_;
  const MacroPath& macro_;
  Rng rng_;
  std::size_t index_;
  ingest::SampleFlag origin_;
  int entry_;
  std::size_t original_ = 0;
  std::vector<Person> persons_;
  std::vector<Household> households_;
};

inline ingest::CpiTable make_cpi(const WaveCalendar& cal) {
  ingest::CpiTable cpi;
  const int first = std::min(cal.waves.front(), 2019) - 1;
  const int last = std::max(cal.waves.back(), 2019);
  for (int y = first; y <= last; ++y)
    for (int m = 1; m <= 12; ++m) {
      const double t = (y - 1976) + (m - 1) / 12.0;
      cpi.add(y, m, std::round(56.9 * std::exp(0.0346 * t + 0.01 * std::sin(t / 3.0)) * 1000.0) / 1000.0);
    }
  return cpi;
}

inline MacroPath make_macro(const DGPConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xACE1ULL));
  MacroPath m;
  const int first = std::min(cfg.calendar.waves.front(), 1977);
  const int last = std::max(cfg.calendar.waves.back(), 2019);
  double unemp = 6.5;
  for (int y = first; y <= last; ++y) {
    unemp = std::clamp(5.8 + 0.6 * (unemp - 5.8) + 1.6 * std::sin((y - 1975) / 4.5) * 0.5 + rng.normal(0.0, 0.6),
                       3.4, 10.5);
    threshold::MacroRow r;
    r.unemployment = unemp;
    r.gdp_pc_growth = 3.0 - 0.6 * (unemp - 5.8) + rng.normal(0.0, 0.8);
    r.ln_disp_income_pc = 10.05 + 0.017 * (y - 1977) + rng.normal(0.0, 0.01);
    r.snap_rate = std::clamp(8.0 + 0.9 * (unemp - 5.8) + 0.12 * std::max(0, y - 2000) + rng.normal(0.0, 0.4), 0.0, 100.0);
    r.poverty_rate = std::clamp(12.5 + 0.7 * (unemp - 5.8) + rng.normal(0.0, 0.4), 0.0, 100.0);
    m.rows[y] = r;
  }
  return m;
}

}  // namespace detail

inline const std::vector<std::string>& raw_columns() {
  static const std::vector<std::string> cols(ingest::kRawFields.begin(), ingest::kRawFields.end());
  return cols;
}

inline SyntheticPanel generate(const DGPConfig& cfg) {
  cfg.validate();
  SyntheticPanel out;
  out.cpi = detail::make_cpi(cfg.calendar);
  const auto macro = detail::make_macro(cfg);
  for (const auto& [y, r] : macro.rows) out.macro.by_year[y] = r;
  out.macro.validate();

  detail::Output o;
  std::size_t index = 0, persons = 0;
  const int first = cfg.calendar.waves.front();
  while (persons < cfg.n_persons) {
    detail::DynastySim sim(cfg, out.cpi, macro, index++, ingest::SampleFlag::original_1968, first, cfg.n_persons);
    persons += sim.original_persons();
    sim.run(o);
  }
  auto supplement = [&](std::size_t n, int entry, ingest::SampleFlag flag) {
    if (!cfg.calendar.contains(entry)) return;
    for (std::size_t k = 0; k < n; ++k) {
      detail::DynastySim sim(cfg, out.cpi, macro, index++, flag, entry, 0);
      sim.run(o);
    }
  };
  supplement(cfg.latino_households, cfg.latino_entry, ingest::SampleFlag::latino_supplement);
  supplement(cfg.immigrant_households, cfg.immigrant_entry, ingest::SampleFlag::immigrant_refresher);

  out.raw = {raw_columns(), std::move(o.raw)};
  out.truth_person_years = {{"person_id", "year", "household_id", "true_mean", "true_variance", "true_alpha",
                             "true_beta", "true_pfs", "tfp_cost_real", "food_exp_real", "lag_observed"},
                            std::move(o.truth)};
  out.truth_roster = {{"person_id", "dynasty", "sample_flag", "first_wave", "last_wave", "n_rows", "ever_rp_or_sp",
                       "expected_inclusion"},
                      std::move(o.roster)};

  csv::Table coef{{"term", "mean_coef", "variance_coef"}, {}};
  std::set<std::string> terms;
  for (const auto& [k, v] : cfg.beta) terms.insert(k);
  for (const auto& [k, v] : cfg.delta) terms.insert(k);
  for (const auto& t : terms) {
    const double b = cfg.beta.count(t) ? cfg.beta.at(t) : 0.0;
    const double d = cfg.delta.count(t) ? cfg.delta.at(t) : 0.0;
    coef.rows.push_back({t, csv::format(b), csv::format(2.0 * b - d)});
  }
  out.truth_coefficients = std::move(coef);

  for (const auto& [y, r] : macro.rows)
    if (y >= 1995) out.targets[y] = std::clamp(0.115 + 0.012 * (r.unemployment - 5.8), 0.05, 0.25);

  out.reference = {{"year", "female_share", "nonwhite_share"}, {}};
  for (int y : cfg.calendar.waves)
    out.reference.rows.push_back(
        {std::to_string(y), csv::format(0.25 + 0.003 * (y - 1977)), csv::format(0.17 + 0.002 * (y - 1977))});
  return out;
}

inline csv::Table targets_table(const threshold::Targets& t) {
  csv::Table out{{"year", "prevalence"}, {}};
  for (const auto& [y, p] : t) out.rows.push_back({std::to_string(y), csv::format(p)});
  return out;
}

/// Writes panel.csv, cpi.csv, macro.csv, targets.csv, reference.csv and the
/// truth_* side files into `dir`.
inline std::vector<std::filesystem::path> write(const SyntheticPanel& s, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files = {dir / "panel.csv",      dir / "cpi.csv",
                                              dir / "macro.csv",      dir / "targets.csv",
                                              dir / "reference.csv",  dir / "truth_person_years.csv",
                                              dir / "truth_roster.csv", dir / "truth_coefficients.csv"};
  csv::write(files[0], s.raw);
  csv::write(files[1], s.cpi.to_table());
  csv::write(files[2], s.macro.to_table());
  csv::write(files[3], targets_table(s.targets));
  csv::write(files[4], s.reference);
  csv::write(files[5], s.truth_person_years);
  csv::write(files[6], s.truth_roster);
  csv::write(files[7], s.truth_coefficients);
  return files;
}

}  // namespace pfs::synth
