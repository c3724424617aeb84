#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pfs/csv.hpp"
#include "pfs/error.hpp"

namespace pfs::ingest {

enum class Role { rp, sp, ch, other };
enum class SampleFlag { original_1968, lineal_descendant, nonsample, latino_supplement, immigrant_refresher };
enum class Recall { week, two_week, month, year, other, missing };
enum class Education { less_hs, hs, some_college, college };
enum class Race { white, nonwhite, missing };
enum class Region { northeast, mid_atlantic, south, midwest, west, outside };

// ---------------------------------------------------------------------------
// enum <-> text

inline std::string lower(std::string_view s) {
  std::string out = csv::trim(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline const char* to_string(Role r) {
  switch (r) {
    case Role::rp: return "RP";
    case Role::sp: return "SP";
    case Role::ch: return "CH";
    case Role::other: return "OTHER";
  }
  return "OTHER";
}

inline std::optional<Role> parse_role(std::string_view s) {
  auto v = lower(s);
  if (v == "rp") return Role::rp;
  if (v == "sp") return Role::sp;
  if (v == "ch") return Role::ch;
  if (v == "other") return Role::other;
  return std::nullopt;
}

inline const char* to_string(SampleFlag f) {
  switch (f) {
    case SampleFlag::original_1968: return "original_1968";
    case SampleFlag::lineal_descendant: return "lineal_descendant";
    case SampleFlag::nonsample: return "nonsample";
    case SampleFlag::latino_supplement: return "latino_supplement";
    case SampleFlag::immigrant_refresher: return "immigrant_refresher";
  }
  return "nonsample";
}

inline std::optional<SampleFlag> parse_sample_flag(std::string_view s) {
  auto v = lower(s);
  if (v == "original_1968") return SampleFlag::original_1968;
  if (v == "lineal_descendant") return SampleFlag::lineal_descendant;
  if (v == "nonsample") return SampleFlag::nonsample;
  if (v == "latino_supplement") return SampleFlag::latino_supplement;
  if (v == "immigrant_refresher") return SampleFlag::immigrant_refresher;
  return std::nullopt;
}

inline const char* to_string(Recall r) {
  switch (r) {
    case Recall::week: return "week";
    case Recall::two_week: return "two_week";
    case Recall::month: return "month";
    case Recall::year: return "year";
    case Recall::other: return "other";
    case Recall::missing: return "";
  }
  return "";
}

inline Recall parse_recall(std::string_view s) {
  auto v = lower(s);
  if (v.empty()) return Recall::missing;
  if (v == "week") return Recall::week;
  if (v == "two_week") return Recall::two_week;
  if (v == "month") return Recall::month;
  if (v == "year") return Recall::year;
  return Recall::other;
}

inline const char* to_string(Education e) {
  switch (e) {
    case Education::less_hs: return "less_hs";
    case Education::hs: return "hs";
    case Education::some_college: return "some_college";
    case Education::college: return "college";
  }
  return "";
}

inline std::optional<Education> parse_education(std::string_view s) {
  auto v = lower(s);
  if (v == "less_hs") return Education::less_hs;
  if (v == "hs") return Education::hs;
  if (v == "some_college") return Education::some_college;
  if (v == "college") return Education::college;
  return std::nullopt;
}

inline const char* to_string(Race r) {
  switch (r) {
    case Race::white: return "white";
    case Race::nonwhite: return "nonwhite";
    case Race::missing: return "";
  }
  return "";
}

// Only the first reported race counts; anything other than White is non-White.
inline Race race_binary(std::string_view raw) {
  auto v = lower(raw);
  if (v.empty()) return Race::missing;
  return v == "white" ? Race::white : Race::nonwhite;
}

inline const char* to_string(Region r) {
  switch (r) {
    case Region::northeast: return "northeast";
    case Region::mid_atlantic: return "mid_atlantic";
    case Region::south: return "south";
    case Region::midwest: return "midwest";
    case Region::west: return "west";
    case Region::outside: return "outside";
  }
  return "";
}

/// Region of residence for two-letter state codes. Alaska, Hawaii and the
/// territories map to `outside`; unknown codes yield nullopt.
inline std::optional<Region> region_of(std::string_view state) {
  static const std::map<std::string, Region, std::less<>> table = [] {
    std::map<std::string, Region, std::less<>> m;
    for (auto s : {"ME", "NH", "VT", "NY", "MA", "CT", "RI"}) m[s] = Region::northeast;
    for (auto s : {"PA", "NJ", "DC", "DE", "MD", "VA"}) m[s] = Region::mid_atlantic;
    for (auto s : {"NC", "SC", "GA", "TN", "WV", "FL", "AL", "AR", "MS", "LA", "TX", "KY"}) m[s] = Region::south;
    for (auto s : {"OH", "IN", "MI", "IL", "MN", "WI", "IA", "MO"}) m[s] = Region::midwest;
    for (auto s : {"KS", "NE", "ND", "SD", "OK", "AZ", "CO", "ID", "MT", "NV", "NM", "UT", "WY", "OR", "WA", "CA"})
      m[s] = Region::west;
    for (auto s : {"AK", "HI", "PR", "GU", "VI", "AS", "MP"}) m[s] = Region::outside;
    return m;
  }();
  std::string key = csv::trim(state);
  for (auto& c : key) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  auto it = table.find(key);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

inline bool is_contiguous(std::string_view state) {
  auto r = region_of(state);
  return r && *r != Region::outside;
}

// ---------------------------------------------------------------------------
// raw records

struct FoodComponent {
  std::optional<double> amount;
  Recall recall = Recall::missing;
};

/// One sample individual in one survey wave, as delivered by the input CSV.
struct RawRecord {
  std::string person_id;
  int year = 0;
  std::string household_id;
  Role role = Role::other;
  std::optional<int> interview_month;
  double individual_weight = 0;
  std::string state;
  std::string snap_raw;
  std::optional<double> snap_benefit;
  Recall benefit_recall = Recall::missing;
  FoodComponent food_home;
  FoodComponent food_delivered;
  FoodComponent food_out;
  int family_size = 1;
  int n_children = 0;
  std::optional<int> age;
  std::string sex;
  std::string race;
  std::string education;
  std::optional<int> rp_age;
  std::string rp_sex;
  std::string rp_race;
  std::string rp_marital;
  std::string rp_education;
  std::string rp_employment;
  std::string rp_disability;
  std::optional<double> income_annual;
  std::optional<double> tfp_cost_pc;
  std::optional<int> fsss_raw;
  std::optional<bool> fsss_insecure;
  SampleFlag sample_flag = SampleFlag::nonsample;
  std::size_t source_row = 0;
};

inline constexpr std::array<const char*, 34> kRawFields = {
    "person_id",      "year",          "household_id",  "role",           "interview_month",
    "individual_weight", "state",      "snap_raw",      "snap_benefit",   "benefit_recall",
    "food_home",      "food_home_recall", "food_delivered", "food_delivered_recall", "food_out",
    "food_out_recall", "family_size",  "n_children",    "age",            "sex",
    "race",           "education",     "rp_age",        "rp_sex",         "rp_race",
    "rp_marital",     "rp_education",  "rp_employment", "rp_disability",  "income_annual",
    "tfp_cost_pc",    "fsss_raw",      "fsss_status",   "sample_flag"};

inline constexpr std::array<int, 6> kFsssWaves = {1999, 2001, 2003, 2015, 2017, 2019};

/// Logical field -> CSV column. Fields not listed map to themselves.
struct Schema {
  std::map<std::string, std::string> columns;

  std::string column(const std::string& field) const {
    auto it = columns.find(field);
    return it == columns.end() ? field : it->second;
  }
};

struct Warning {
  std::size_t row = 0;
  std::string column;
  std::string value;
  std::string message;
};

struct ParseResult {
  std::vector<RawRecord> records;
  std::vector<Warning> warnings;
};

namespace detail {

inline bool is_nonresponse_token(std::string_view cell) {
  static const std::set<std::string, std::less<>> tokens = {"refused", "dk", "don't know", "dont know",
                                                           "na", "n/a", "other", "inap", "not applicable"};
  return tokens.count(lower(cell)) > 0;
}

}  // namespace detail

/// Parses the long-format panel CSV: one row per person-year.
inline ParseResult parse_panel_table(const csv::Table& t, const Schema& schema = {}) {
  std::map<std::string, std::size_t> col;
  for (const char* f : kRawFields) col[f] = t.require(schema.column(f), "panel CSV");

  ParseResult out;
  out.records.reserve(t.rows.size());
  std::set<std::pair<std::string, int>> seen;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto cell = [&](const char* f) -> const std::string& { return row[col.at(f)]; };
    auto warn = [&](const char* f, const std::string& msg) {
      out.warnings.push_back({r + 1, schema.column(f), cell(f), msg});
    };
    auto opt_double = [&](const char* f) -> std::optional<double> {
      bool bad = false;
      auto v = csv::parse_double(cell(f), &bad);
      if (bad) warn(f, "malformed number treated as missing");
      return v;
    };
    auto opt_int = [&](const char* f) -> std::optional<int> {
      bool bad = false;
      auto v = csv::parse_int(cell(f), &bad);
      if (bad) warn(f, "malformed integer treated as missing");
      return v ? std::optional<int>(static_cast<int>(*v)) : std::nullopt;
    };
    auto data_error = [&](const std::string& msg) {
      return Error(ErrorKind::data, "panel row " + std::to_string(r + 1) + ": " + msg);
    };

    RawRecord rec;
    rec.source_row = r + 1;
    rec.person_id = csv::trim(cell("person_id"));
    if (rec.person_id.empty()) throw data_error("empty person_id");
    rec.year = static_cast<int>(csv::require_int(t, r, col.at("year")));
    rec.household_id = csv::trim(cell("household_id"));
    auto role = parse_role(cell("role"));
    if (!role) throw data_error("unknown role '" + cell("role") + "'");
    rec.role = *role;
    auto flag = parse_sample_flag(cell("sample_flag"));
    if (!flag) throw data_error("unknown sample_flag '" + cell("sample_flag") + "'");
    rec.sample_flag = *flag;

    rec.interview_month = opt_int("interview_month");
    if (rec.interview_month && (*rec.interview_month < 1 || *rec.interview_month > 12)) {
      warn("interview_month", "month outside 1-12 treated as missing");
      rec.interview_month.reset();
    }

    auto weight = opt_double("individual_weight");
    rec.individual_weight = weight.value_or(0.0);
    if (rec.individual_weight < 0) throw data_error("negative individual_weight");
    if (rec.sample_flag == SampleFlag::nonsample && rec.individual_weight != 0) {
      warn("individual_weight", "nonsample individual carries zero weight");
      rec.individual_weight = 0;
    }

    rec.state = csv::trim(cell("state"));
    rec.snap_raw = csv::trim(cell("snap_raw"));

    const std::string& benefit_cell = cell("snap_benefit");
    rec.benefit_recall = parse_recall(cell("benefit_recall"));
    if (!csv::trim(benefit_cell).empty() && !csv::parse_double(benefit_cell)) {
      if (!detail::is_nonresponse_token(benefit_cell)) warn("snap_benefit", "unrecognised benefit response");
      rec.benefit_recall = Recall::other;
    } else {
      rec.snap_benefit = csv::parse_double(benefit_cell);
    }

    auto component = [&](const char* value_field, const char* recall_field) {
      FoodComponent c;
      const std::string& v = cell(value_field);
      c.recall = parse_recall(cell(recall_field));
      if (!csv::trim(v).empty() && !csv::parse_double(v)) {
        if (!detail::is_nonresponse_token(v)) warn(value_field, "unrecognised expenditure response");
        c.recall = Recall::other;
      } else {
        c.amount = csv::parse_double(v);
      }
      return c;
    };
    rec.food_home = component("food_home", "food_home_recall");
    rec.food_delivered = component("food_delivered", "food_delivered_recall");
    rec.food_out = component("food_out", "food_out_recall");

    rec.family_size = static_cast<int>(csv::require_int(t, r, col.at("family_size")));
    rec.n_children = static_cast<int>(csv::require_int(t, r, col.at("n_children")));
    if (rec.family_size < 1) throw data_error("family_size must be at least 1");
    if (rec.n_children < 0 || rec.n_children > rec.family_size)
      throw data_error("n_children must lie in [0, family_size]");

    rec.age = opt_int("age");
    rec.sex = lower(cell("sex"));
    rec.race = lower(cell("race"));
    rec.education = lower(cell("education"));
    rec.rp_age = opt_int("rp_age");
    rec.rp_sex = lower(cell("rp_sex"));
    rec.rp_race = lower(cell("rp_race"));
    rec.rp_marital = lower(cell("rp_marital"));
    rec.rp_education = lower(cell("rp_education"));
    rec.rp_employment = lower(cell("rp_employment"));
    rec.rp_disability = lower(cell("rp_disability"));
    rec.income_annual = opt_double("income_annual");
    rec.tfp_cost_pc = opt_double("tfp_cost_pc");
    if (rec.tfp_cost_pc && !(*rec.tfp_cost_pc > 0)) {
      warn("tfp_cost_pc", "nonpositive TFP cost treated as missing");
      rec.tfp_cost_pc.reset();
    }

    rec.fsss_raw = opt_int("fsss_raw");
    if (rec.fsss_raw) {
      if (*rec.fsss_raw < 0 || *rec.fsss_raw > 18) throw data_error("fsss_raw outside 0-18");
      if (std::find(kFsssWaves.begin(), kFsssWaves.end(), rec.year) == kFsssWaves.end())
        throw data_error("fsss_raw present outside the food-security module waves");
    }
    auto status = lower(cell("fsss_status"));
    if (status == "insecure") rec.fsss_insecure = true;
    else if (status == "secure") rec.fsss_insecure = false;
    else if (!status.empty()) warn("fsss_status", "unknown food security status treated as missing");

    if (!seen.emplace(rec.person_id, rec.year).second)
      throw Error(ErrorKind::integrity,
                  "duplicate (person_id, year) = (" + rec.person_id + ", " + std::to_string(rec.year) + ")");
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline ParseResult parse_panel_csv(const std::filesystem::path& path, const Schema& schema = {}) {
  return parse_panel_table(csv::read(path), schema);
}

// ---------------------------------------------------------------------------
// SNAP status, benefit amounts, food expenditure

enum class SnapRegime { member_count, yes_no, monthly_flags };

/// Member count up to 1993; yes/no in 1994-1997 and from 2009; twelve monthly
/// flags in 1999-2007.
inline SnapRegime snap_regime(int year) {
  if (year <= 1993) return SnapRegime::member_count;
  if (year >= 1998 && year <= 2008) return SnapRegime::monthly_flags;
  return SnapRegime::yes_no;
}

inline bool harmonize_snap_status(const RawRecord& raw) {
  switch (snap_regime(raw.year)) {
    case SnapRegime::member_count: {
      auto n = csv::parse_int(raw.snap_raw);
      return n && *n >= 1;
    }
    case SnapRegime::yes_no:
      return lower(raw.snap_raw) == "yes";
    case SnapRegime::monthly_flags: {
      if (!raw.interview_month)
        throw Error(ErrorKind::harmonization, "person " + raw.person_id + " year " + std::to_string(raw.year) +
                                                  ": monthly SNAP flags need an interview month");
      const std::string flags = csv::trim(raw.snap_raw);
      if (flags.size() != 12 || flags.find_first_not_of("01") != std::string::npos)
        throw Error(ErrorKind::data, "person " + raw.person_id + " year " + std::to_string(raw.year) +
                                         ": expected 12 monthly SNAP flags, got '" + raw.snap_raw + "'");
      const int prior_month = *raw.interview_month == 1 ? 12 : *raw.interview_month - 1;
      return flags[static_cast<std::size_t>(prior_month - 1)] == '1';
    }
  }
  return false;
}

inline bool is_convertible(Recall r) {
  return r == Recall::week || r == Recall::two_week || r == Recall::month || r == Recall::year;
}

/// Converts an amount reported over `recall` into a monthly flow.
inline double to_monthly(double amount, Recall recall) {
  switch (recall) {
    case Recall::week: return amount * 52.0 / 12.0;
    case Recall::two_week: return amount * 26.0 / 12.0;
    case Recall::month: return amount;
    case Recall::year: return amount / 12.0;
    default: break;
  }
  throw Error(ErrorKind::domain, "recall period has no conversion factor");
}

/// Inverse of to_monthly.
inline double from_monthly(double monthly, Recall recall) {
  switch (recall) {
    case Recall::week: return monthly * 12.0 / 52.0;
    case Recall::two_week: return monthly * 12.0 / 26.0;
    case Recall::month: return monthly;
    case Recall::year: return monthly * 12.0;
    default: break;
  }
  throw Error(ErrorKind::domain, "recall period has no conversion factor");
}

/// Monthly nominal SNAP benefit. Non-participants carry no amount; other or
/// missing recall codes fall back to the same-year monthly mean.
inline std::optional<double> harmonize_benefit(const RawRecord& raw, bool snap_status,
                                               std::optional<double> year_mean_monthly) {
  if (raw.snap_benefit && *raw.snap_benefit < 0)
    throw Error(ErrorKind::data, "person " + raw.person_id + " year " + std::to_string(raw.year) +
                                     ": negative SNAP benefit amount");
  if (!snap_status) return std::nullopt;
  if (raw.snap_benefit && is_convertible(raw.benefit_recall)) return to_monthly(*raw.snap_benefit, raw.benefit_recall);
  return year_mean_monthly;
}

/// Same-year monthly means used when a component's recall code is unusable.
struct ComponentMeans {
  std::optional<double> home;
  std::optional<double> delivered;
  std::optional<double> out;
};

/// Monthly nominal amount of one expenditure component. Before 1994 the
/// components are annual totals and a missing recall code means "year".
inline std::optional<double> component_monthly(const FoodComponent& c, int year, std::optional<double> fallback) {
  Recall recall = c.recall;
  if (recall == Recall::missing && year < 1994) recall = Recall::year;
  if (c.amount && *c.amount < 0) throw Error(ErrorKind::data, "negative food expenditure component");
  if (c.amount && is_convertible(recall)) return to_monthly(*c.amount, recall);
  if (c.recall == Recall::other || (c.amount && !is_convertible(recall))) return fallback;
  return std::nullopt;
}

/// Monthly per-capita nominal food expenditure including SNAP benefits, or
/// nullopt when every expenditure component is missing.
///
/// Before 1994 the annual at-home(+delivered) and eaten-out totals exclude
/// SNAP, so the monthly benefit is added. From 1994 participants report the
/// amount spent beyond their benefit; adding the benefit gives the same sum.
inline std::optional<double> harmonize_food_expenditure(const RawRecord& raw, std::optional<double> benefit_month,
                                                        const ComponentMeans& means = {}) {
  auto home = component_monthly(raw.food_home, raw.year, means.home);
  auto delivered = component_monthly(raw.food_delivered, raw.year, means.delivered);
  auto out = component_monthly(raw.food_out, raw.year, means.out);
  if (!home && !delivered && !out) return std::nullopt;
  double total = home.value_or(0.0) + delivered.value_or(0.0) + out.value_or(0.0);
  if (benefit_month) total += *benefit_month;
  return total / raw.family_size;
}

// ---------------------------------------------------------------------------
// price deflation

/// Monthly price index keyed by (year, month); deflates to January 2019.
class CpiTable {
 public:
  CpiTable() = default;

  void add(int year, int month, double index) {
    if (month < 1 || month > 12) throw Error(ErrorKind::data, "CPI month outside 1-12");
    if (!(index > 0)) throw Error(ErrorKind::data, "CPI index must be positive");
    monthly_[{year, month}] = index;
    annual_.clear();
  }

  static CpiTable from_table(const csv::Table& t) {
    CpiTable cpi;
    auto cy = t.require("year", "CPI CSV"), cm = t.require("month", "CPI CSV"), ci = t.require("index", "CPI CSV");
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      cpi.add(static_cast<int>(csv::require_int(t, r, cy)), static_cast<int>(csv::require_int(t, r, cm)),
              csv::require_double(t, r, ci));
    return cpi;
  }

  static CpiTable from_csv(const std::filesystem::path& path) { return from_table(csv::read(path)); }

  bool empty() const { return monthly_.empty(); }

  /// Monthly index, or the mean of the year's months when `month` is missing.
  double index(int year, std::optional<int> month) const {
    if (month) {
      auto it = monthly_.find({year, *month});
      if (it == monthly_.end())
        throw Error(ErrorKind::range, "no CPI entry for " + std::to_string(year) + "-" + std::to_string(*month));
      return it->second;
    }
    if (annual_.empty()) build_annual();
    auto it = annual_.find(year);
    if (it == annual_.end()) throw Error(ErrorKind::range, "no CPI entries for year " + std::to_string(year));
    return it->second;
  }

  double deflate(double amount, int year, std::optional<int> month) const {
    return amount * index(2019, 1) / index(year, month);
  }

  csv::Table to_table() const {
    csv::Table t{{"year", "month", "index"}, {}};
    for (const auto& [k, v] : monthly_)
      t.rows.push_back({std::to_string(k.first), std::to_string(k.second), csv::format(v)});
    return t;
  }

 private:
  void build_annual() const {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& [k, v] : monthly_) {
      acc[k.first].first += v;
      acc[k.first].second += 1;
    }
    for (const auto& [y, s] : acc) annual_[y] = s.first / s.second;
  }

  std::map<std::pair<int, int>, double> monthly_;
  mutable std::map<int, double> annual_;
};

inline double deflate(double amount, int year, std::optional<int> month, const CpiTable& cpi) {
  return cpi.deflate(amount, year, month);
}

// ---------------------------------------------------------------------------
// race / education imputation

struct ImputationCounts {
  std::size_t race_imputed = 0;
  std::size_t education_imputed = 0;
  std::size_t race_missing = 0;
  std::size_t education_missing = 0;
};

/// Fills missing race from the first wave in which the person's race was
/// collected, and missing education of children under 16 from the RP.
/// `records` must belong to one person and be sorted by year.
inline ImputationCounts impute_race_education(std::vector<RawRecord>& records) {
  ImputationCounts counts;
  std::string first_race;
  for (const auto& r : records)
    if (!r.race.empty()) {
      first_race = r.race;
      break;
    }
  for (auto& r : records) {
    if (r.race.empty() && !first_race.empty()) {
      r.race = first_race;
      ++counts.race_imputed;
    }
    if (r.education.empty() && r.age && *r.age < 16 && !r.rp_education.empty()) {
      r.education = r.rp_education;
      ++counts.education_imputed;
    }
    if (r.race.empty()) ++counts.race_missing;
    if (r.education.empty()) ++counts.education_missing;
  }
  return counts;
}

// ---------------------------------------------------------------------------
// harmonized table

struct HarmonizedRecord {
  std::string person_id;
  int year = 0;
  std::string household_id;
  Role role = Role::other;
  SampleFlag sample_flag = SampleFlag::nonsample;
  std::optional<int> interview_month;
  double individual_weight = 0;
  std::string state;
  Region region = Region::outside;
  bool snap_status = false;
  std::optional<double> snap_benefit_month;  // Jan-2019 dollars
  double food_exp_pc_month = 0;              // Jan-2019 dollars, SNAP included
  std::optional<double> income_pc;           // annual, Jan-2019 dollars
  double child_ratio = 0;
  std::optional<double> tfp_cost_pc_real;
  int family_size = 1;
  int n_children = 0;
  std::optional<int> age;
  std::string sex;
  Race race = Race::missing;
  std::optional<Education> education;
  std::optional<int> rp_age;
  std::optional<bool> rp_female;
  std::optional<bool> rp_nonwhite;
  std::optional<bool> rp_married;
  std::optional<Education> rp_education;
  std::optional<bool> rp_employed;
  std::optional<bool> rp_disabled;
  std::optional<int> fsss_raw;
  std::optional<bool> fsss_insecure;
};

struct Exclusion {
  std::string person_id;
  int year = 0;
  std::string reason;
};

struct HarmonizeResult {
  std::vector<HarmonizedRecord> records;
  std::vector<Exclusion> excluded;
  std::vector<Warning> warnings;
  ImputationCounts imputation;
};

namespace detail {

inline std::optional<bool> flag_from(std::string_view raw, std::initializer_list<std::string_view> yes) {
  if (raw.empty()) return std::nullopt;
  for (auto y : yes)
    if (raw == y) return true;
  return false;
}

struct YearMeans {
  std::map<int, std::pair<double, int>> acc;
  void add(int year, double v) {
    acc[year].first += v;
    acc[year].second += 1;
  }
  std::optional<double> get(int year) const {
    auto it = acc.find(year);
    if (it == acc.end() || it->second.second == 0) return std::nullopt;
    return it->second.first / it->second.second;
  }
};

}  // namespace detail

/// Runs imputation, SNAP/benefit/food harmonization and deflation over a
/// parsed panel. Rows without any food expenditure component are excluded
/// with a reason; every parsed row is accounted for.
inline HarmonizeResult harmonize_panel(std::vector<RawRecord> raw, const CpiTable& cpi) {
  HarmonizeResult out;

  // Imputation works per person over all of the person's waves.
  std::stable_sort(raw.begin(), raw.end(), [](const RawRecord& a, const RawRecord& b) {
    return std::tie(a.person_id, a.year) < std::tie(b.person_id, b.year);
  });
  for (std::size_t i = 0; i < raw.size();) {
    std::size_t j = i;
    while (j < raw.size() && raw[j].person_id == raw[i].person_id) ++j;
    std::vector<RawRecord> person(std::make_move_iterator(raw.begin() + i), std::make_move_iterator(raw.begin() + j));
    auto c = impute_race_education(person);
    out.imputation.race_imputed += c.race_imputed;
    out.imputation.education_imputed += c.education_imputed;
    out.imputation.race_missing += c.race_missing;
    out.imputation.education_missing += c.education_missing;
    std::move(person.begin(), person.end(), raw.begin() + i);
    i = j;
  }

  std::vector<bool> snap(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) snap[i] = harmonize_snap_status(raw[i]);

  // Fallback means are computed over distinct household-years so that
  // co-resident sample members are not counted twice.
  detail::YearMeans benefit_means, home_means, delivered_means, out_means;
  std::set<std::pair<std::string, int>> seen_households;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (!seen_households.emplace(r.household_id, r.year).second) continue;
    if (snap[i] && r.snap_benefit && is_convertible(r.benefit_recall) && *r.snap_benefit >= 0)
      benefit_means.add(r.year, to_monthly(*r.snap_benefit, r.benefit_recall));
    auto add_component = [&](const FoodComponent& c, detail::YearMeans& m) {
      Recall recall = c.recall == Recall::missing && r.year < 1994 ? Recall::year : c.recall;
      if (c.amount && is_convertible(recall) && *c.amount >= 0) m.add(r.year, to_monthly(*c.amount, recall));
    };
    add_component(r.food_home, home_means);
    add_component(r.food_delivered, delivered_means);
    add_component(r.food_out, out_means);
  }

  out.records.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    auto benefit = harmonize_benefit(r, snap[i], benefit_means.get(r.year));
    if (snap[i] && !benefit)
      out.warnings.push_back({r.source_row, "snap_benefit", "", "participant benefit unavailable; counted as zero"});
    ComponentMeans means{home_means.get(r.year), delivered_means.get(r.year), out_means.get(r.year)};
    auto food = harmonize_food_expenditure(r, benefit, means);
    if (!food) {
      out.excluded.push_back({r.person_id, r.year, "no_food_expenditure"});
      continue;
    }

    HarmonizedRecord h;
    h.person_id = r.person_id;
    h.year = r.year;
    h.household_id = r.household_id;
    h.role = r.role;
    h.sample_flag = r.sample_flag;
    h.interview_month = r.interview_month;
    h.individual_weight = r.individual_weight;
    h.state = r.state;
    h.region = region_of(r.state).value_or(Region::outside);
    h.snap_status = snap[i];
    if (benefit) h.snap_benefit_month = cpi.deflate(*benefit, r.year, r.interview_month);
    h.food_exp_pc_month = cpi.deflate(*food, r.year, r.interview_month);
    if (r.income_annual) h.income_pc = cpi.deflate(*r.income_annual, r.year, r.interview_month) / r.family_size;
    h.child_ratio = static_cast<double>(r.n_children) / r.family_size;
    if (r.tfp_cost_pc) h.tfp_cost_pc_real = cpi.deflate(*r.tfp_cost_pc, r.year, r.interview_month);
    h.family_size = r.family_size;
    h.n_children = r.n_children;
    h.age = r.age;
    h.sex = r.sex;
    h.race = race_binary(r.race);
    h.education = parse_education(r.education);
    h.rp_age = r.rp_age;
    h.rp_female = r.rp_sex.empty() ? std::nullopt : std::optional<bool>(r.rp_sex == "female");
    h.rp_nonwhite = r.rp_race.empty() ? std::nullopt : std::optional<bool>(race_binary(r.rp_race) == Race::nonwhite);
    h.rp_married = detail::flag_from(r.rp_marital, {"married"});
    h.rp_education = parse_education(r.rp_education);
    h.rp_employed = detail::flag_from(r.rp_employment, {"working", "laid_off"});
    h.rp_disabled = detail::flag_from(r.rp_disability, {"yes"});
    h.fsss_raw = r.fsss_raw;
    h.fsss_insecure = r.fsss_insecure;
    out.records.push_back(std::move(h));
  }
  return out;
}

// ---------------------------------------------------------------------------
// harmonized CSV

inline const std::vector<std::string>& harmonized_columns() {
  static const std::vector<std::string> cols = {
      "person_id",    "year",          "household_id",    "role",           "sample_flag",
      "interview_month", "individual_weight", "state",      "region",         "snap_status",
      "snap_benefit_month", "food_exp_pc_month", "income_pc", "child_ratio",  "tfp_cost_pc_real",
      "family_size",  "n_children",    "age",             "sex",            "race",
      "education",    "rp_age",        "rp_female",       "rp_nonwhite",    "rp_married",
      "rp_education", "rp_employed",   "rp_disabled",     "fsss_raw",       "fsss_status"};
  return cols;
}

namespace detail {

inline std::string opt_int_cell(const std::optional<int>& v) { return v ? std::to_string(*v) : std::string{}; }
inline std::string opt_bool_cell(const std::optional<bool>& v) { return v ? (*v ? "1" : "0") : std::string{}; }

inline std::optional<bool> parse_bool_cell(std::string_view s) {
  auto v = csv::trim(s);
  if (v.empty()) return std::nullopt;
  return v == "1";
}

}  // namespace detail

inline std::vector<std::string> harmonized_cells(const HarmonizedRecord& h) {
  using detail::opt_bool_cell;
  using detail::opt_int_cell;
  return {h.person_id,
          std::to_string(h.year),
          h.household_id,
          to_string(h.role),
          to_string(h.sample_flag),
          opt_int_cell(h.interview_month),
          csv::format(h.individual_weight),
          h.state,
          to_string(h.region),
          h.snap_status ? "1" : "0",
          csv::format(h.snap_benefit_month),
          csv::format(h.food_exp_pc_month),
          csv::format(h.income_pc),
          csv::format(h.child_ratio),
          csv::format(h.tfp_cost_pc_real),
          std::to_string(h.family_size),
          std::to_string(h.n_children),
          opt_int_cell(h.age),
          h.sex,
          to_string(h.race),
          h.education ? to_string(*h.education) : "",
          opt_int_cell(h.rp_age),
          opt_bool_cell(h.rp_female),
          opt_bool_cell(h.rp_nonwhite),
          opt_bool_cell(h.rp_married),
          h.rp_education ? to_string(*h.rp_education) : "",
          opt_bool_cell(h.rp_employed),
          opt_bool_cell(h.rp_disabled),
          opt_int_cell(h.fsss_raw),
          h.fsss_insecure ? (*h.fsss_insecure ? "insecure" : "secure") : ""};
}

inline csv::Table harmonized_table(const std::vector<HarmonizedRecord>& records) {
  csv::Table t{harmonized_columns(), {}};
  t.rows.reserve(records.size());
  for (const auto& h : records) t.rows.push_back(harmonized_cells(h));
  return t;
}

/// Reads one harmonized row back; `offset` maps harmonized column names to
/// positions in `t`.
inline HarmonizedRecord harmonized_from_row(const csv::Table& t, std::size_t r) {
  auto at = [&](const std::string& c) -> const std::string& { return t.rows[r][t.require(c, "harmonized CSV")]; };
  auto opt_i = [&](const std::string& c) -> std::optional<int> {
    auto v = csv::parse_int(at(c));
    return v ? std::optional<int>(static_cast<int>(*v)) : std::nullopt;
  };
  HarmonizedRecord h;
  h.person_id = at("person_id");
  h.year = static_cast<int>(csv::require_int(t, r, t.require("year")));
  h.household_id = at("household_id");
  h.role = parse_role(at("role")).value_or(Role::other);
  h.sample_flag = parse_sample_flag(at("sample_flag")).value_or(SampleFlag::nonsample);
  h.interview_month = opt_i("interview_month");
  h.individual_weight = csv::parse_double(at("individual_weight")).value_or(0.0);
  h.state = at("state");
  h.region = region_of(h.state).value_or(Region::outside);
  h.snap_status = at("snap_status") == "1";
  h.snap_benefit_month = csv::parse_double(at("snap_benefit_month"));
  h.food_exp_pc_month = csv::require_double(t, r, t.require("food_exp_pc_month"));
  h.income_pc = csv::parse_double(at("income_pc"));
  h.child_ratio = csv::parse_double(at("child_ratio")).value_or(0.0);
  h.tfp_cost_pc_real = csv::parse_double(at("tfp_cost_pc_real"));
  h.family_size = static_cast<int>(csv::require_int(t, r, t.require("family_size")));
  h.n_children = static_cast<int>(csv::require_int(t, r, t.require("n_children")));
  h.age = opt_i("age");
  h.sex = at("sex");
  h.race = race_binary(at("race"));
  h.education = parse_education(at("education"));
  h.rp_age = opt_i("rp_age");
  h.rp_female = detail::parse_bool_cell(at("rp_female"));
  h.rp_nonwhite = detail::parse_bool_cell(at("rp_nonwhite"));
  h.rp_married = detail::parse_bool_cell(at("rp_married"));
  h.rp_education = parse_education(at("rp_education"));
  h.rp_employed = detail::parse_bool_cell(at("rp_employed"));
  h.rp_disabled = detail::parse_bool_cell(at("rp_disabled"));
  h.fsss_raw = opt_i("fsss_raw");
  auto fs = at("fsss_status");
  if (fs == "insecure") h.fsss_insecure = true;
  else if (fs == "secure") h.fsss_insecure = false;
  return h;
}

inline void write_warnings_jsonl(const std::filesystem::path& path, const std::vector<Warning>& warnings) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::data, "cannot write " + path.string());
  for (const auto& w : warnings) {
    nlohmann::ordered_json j;
    j["row"] = w.row;
    j["column"] = w.column;
    j["value"] = w.value;
    j["message"] = w.message;
    out << j.dump() << '\n';
  }
}

}  // namespace pfs::ingest
