#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pfs/csv.hpp"
#include "pfs/error.hpp"
#include "pfs/panel_ingest.hpp"

namespace pfs::dynasty {

using ingest::HarmonizedRecord;

enum class ExclusionReason { nonsample, supplemental_sample, not_surveyed_in_window, never_rp_or_sp };

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::nonsample: return "nonsample";
    case ExclusionReason::supplemental_sample: return "supplemental_sample";
    case ExclusionReason::not_surveyed_in_window: return "not_surveyed_in_window";
    case ExclusionReason::never_rp_or_sp: return "never_rp_or_sp";
  }
  return "";
}

struct YearWindow {
  int first = 1977;
  int last = 2019;
  bool contains(int y) const { return y >= first && y <= last; }
};

struct StudySample {
  std::set<std::string> included;
  std::map<std::string, ExclusionReason> excluded;
};

/// Applies the inclusion rules in a fixed order; the first failing rule
/// determines the exclusion reason.
inline StudySample select_study_individuals(const std::vector<HarmonizedRecord>& records, YearWindow window = {}) {
  struct Facts {
    bool sample = true;
    bool supplemental = false;
    bool in_window = false;
    bool rp_or_sp = false;
  };
  std::map<std::string, Facts> persons;
  for (const auto& r : records) {
    auto& f = persons[r.person_id];
    using ingest::SampleFlag;
    if (r.sample_flag == SampleFlag::nonsample) f.sample = false;
    if (r.sample_flag == SampleFlag::latino_supplement || r.sample_flag == SampleFlag::immigrant_refresher)
      f.supplemental = true;
    if (window.contains(r.year)) {
      f.in_window = true;
      if (r.role == ingest::Role::rp || r.role == ingest::Role::sp) f.rp_or_sp = true;
    }
  }
  StudySample s;
  for (const auto& [id, f] : persons) {
    if (!f.sample) s.excluded[id] = ExclusionReason::nonsample;
    else if (f.supplemental) s.excluded[id] = ExclusionReason::supplemental_sample;
    else if (!f.in_window) s.excluded[id] = ExclusionReason::not_surveyed_in_window;
    else if (!f.rp_or_sp) s.excluded[id] = ExclusionReason::never_rp_or_sp;
    else s.included.insert(id);
  }
  return s;
}

struct GeographyResult {
  std::vector<HarmonizedRecord> kept;
  std::size_t dropped = 0;
};

/// Drops person-years outside the 48 contiguous states and DC.
inline GeographyResult apply_geography_filter(std::vector<HarmonizedRecord> records) {
  GeographyResult out;
  std::vector<std::string> bad;
  for (auto& r : records) {
    auto region = ingest::region_of(r.state);
    if (!region) {
      bad.push_back(r.person_id + "/" + std::to_string(r.year) + " '" + r.state + "'");
      continue;
    }
    if (*region == ingest::Region::outside) {
      ++out.dropped;
      continue;
    }
    out.kept.push_back(std::move(r));
  }
  if (!bad.empty()) {
    std::string msg = "unknown state code in " + std::to_string(bad.size()) + " person-years:";
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + bad[i];
    throw Error(ErrorKind::data, msg);
  }
  return out;
}

/// A study individual's observation in one wave.
struct PersonYear {
  HarmonizedRecord rec;
  double adjusted_weight = 0;
  int co_resident_count = 1;
  bool rp_changed = false;
};

/// Splits each individual weight evenly among the included study members of
/// the household-year.
inline void adjust_weights(std::vector<PersonYear>& person_years) {
  std::map<std::pair<std::string, int>, int> counts;
  for (const auto& p : person_years) ++counts[{p.rec.household_id, p.rec.year}];
  for (auto& p : person_years) {
    p.co_resident_count = counts.at({p.rec.household_id, p.rec.year});
    p.adjusted_weight = p.rec.individual_weight / p.co_resident_count;
  }
}

using RpMap = std::map<std::pair<std::string, int>, std::string>;

/// Household RP identity per (household_id, year) from role == RP records.
inline RpMap household_rps(const std::vector<HarmonizedRecord>& records) {
  RpMap m;
  for (const auto& r : records)
    if (r.role == ingest::Role::rp) m[{r.household_id, r.year}] = r.person_id;
  return m;
}

/// Flags person-years whose household RP differs from the RP of the person's
/// household in their previous observed wave. `person_years` must be sorted
/// by (person_id, year).
inline void flag_rp_changes(std::vector<PersonYear>& person_years, const RpMap& rps) {
  auto rp_of = [&](const HarmonizedRecord& r) -> std::optional<std::string> {
    auto it = rps.find({r.household_id, r.year});
    if (it == rps.end()) return std::nullopt;
    return it->second;
  };
  for (std::size_t i = 0; i < person_years.size(); ++i) {
    auto& p = person_years[i];
    p.rp_changed = false;
    if (i == 0 || person_years[i - 1].rec.person_id != p.rec.person_id) continue;
    auto now = rp_of(p.rec);
    auto before = rp_of(person_years[i - 1].rec);
    p.rp_changed = now != before;
  }
}

struct Panel {
  StudySample sample;
  std::vector<PersonYear> person_years;  // sorted by (person_id, year)
  std::size_t geography_dropped = 0;
};

/// Selection, geography filter, weight adjustment and RP-change flags.
inline Panel build_panel(const std::vector<HarmonizedRecord>& records, YearWindow window = {}) {
  Panel panel;
  panel.sample = select_study_individuals(records, window);
  const RpMap rps = household_rps(records);
  std::vector<HarmonizedRecord> chosen;
  for (const auto& r : records)
    if (window.contains(r.year) && panel.sample.included.count(r.person_id)) chosen.push_back(r);
  auto geo = apply_geography_filter(std::move(chosen));
  panel.geography_dropped = geo.dropped;
  panel.person_years.reserve(geo.kept.size());
  for (auto& r : geo.kept) panel.person_years.push_back({std::move(r), 0, 1, false});
  std::sort(panel.person_years.begin(), panel.person_years.end(), [](const PersonYear& a, const PersonYear& b) {
    return std::tie(a.rec.person_id, a.rec.year) < std::tie(b.rec.person_id, b.rec.year);
  });
  adjust_weights(panel.person_years);
  flag_rp_changes(panel.person_years, rps);
  return panel;
}

// ---------------------------------------------------------------------------
// reports

/// person_id, first_wave, last_wave, n_waves, inclusion. Waves count the
/// person's retained person-years; excluded persons show their raw span.
inline csv::Table roster_table(const Panel& panel, const std::vector<HarmonizedRecord>& records) {
  struct Span {
    int first = 0, last = 0, n = 0;
  };
  std::map<std::string, Span> raw_span, kept_span;
  auto extend = [](Span& s, int y) {
    if (s.n == 0 || y < s.first) s.first = y;
    if (s.n == 0 || y > s.last) s.last = y;
    ++s.n;
  };
  for (const auto& r : records) extend(raw_span[r.person_id], r.year);
  for (const auto& p : panel.person_years) extend(kept_span[p.rec.person_id], p.rec.year);
  csv::Table t{{"person_id", "first_wave", "last_wave", "n_waves", "inclusion"}, {}};
  for (const auto& [id, raw] : raw_span) {
    std::string inclusion = "included";
    Span s = raw;
    if (auto it = panel.sample.excluded.find(id); it != panel.sample.excluded.end()) {
      inclusion = to_string(it->second);
    } else if (auto k = kept_span.find(id); k != kept_span.end()) {
      s = k->second;
    } else {
      s = {};
    }
    t.rows.push_back({id, s.n ? std::to_string(s.first) : "", s.n ? std::to_string(s.last) : "", std::to_string(s.n),
                      inclusion});
  }
  return t;
}

struct ReferenceComposition {
  std::map<int, std::pair<double, double>> by_year;  // female_share, nonwhite_share

  static ReferenceComposition from_csv(const std::filesystem::path& path) {
    auto t = csv::read(path);
    auto cy = t.require("year", "reference composition CSV");
    auto cf = t.require("female_share", "reference composition CSV");
    auto cn = t.require("nonwhite_share", "reference composition CSV");
    ReferenceComposition ref;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      ref.by_year[static_cast<int>(csv::require_int(t, r, cy))] = {csv::require_double(t, r, cf),
                                                                   csv::require_double(t, r, cn)};
    return ref;
  }
};

struct CompositionRow {
  int year = 0;
  double female_share = 0;
  double nonwhite_share = 0;
  std::optional<double> reference_female;
  std::optional<double> reference_nonwhite;
};

/// Weighted shares of person-years whose household RP is female and
/// non-White, per year. Person-years with unknown RP attributes are left out
/// of the corresponding share.
inline std::vector<CompositionRow> representativeness_report(const std::vector<PersonYear>& person_years,
                                                             const std::optional<ReferenceComposition>& ref = {}) {
  struct Acc {
    double fw = 0, fd = 0, nw = 0, nd = 0;
  };
  std::map<int, Acc> acc;
  for (const auto& p : person_years) {
    auto& a = acc[p.rec.year];
    if (p.rec.rp_female) {
      a.fd += p.adjusted_weight;
      if (*p.rec.rp_female) a.fw += p.adjusted_weight;
    }
    if (p.rec.rp_nonwhite) {
      a.nd += p.adjusted_weight;
      if (*p.rec.rp_nonwhite) a.nw += p.adjusted_weight;
    }
  }
  std::vector<CompositionRow> rows;
  for (const auto& [year, a] : acc) {
    CompositionRow row;
    row.year = year;
    row.female_share = a.fd > 0 ? a.fw / a.fd : 0.0;
    row.nonwhite_share = a.nd > 0 ? a.nw / a.nd : 0.0;
    if (ref) {
      if (auto it = ref->by_year.find(year); it != ref->by_year.end()) {
        row.reference_female = it->second.first;
        row.reference_nonwhite = it->second.second;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

inline csv::Table composition_table(const std::vector<CompositionRow>& rows, bool with_reference) {
  csv::Table t{{"year", "female_share", "nonwhite_share"}, {}};
  if (with_reference) {
    t.header.push_back("reference_female_share");
    t.header.push_back("reference_nonwhite_share");
  }
  for (const auto& r : rows) {
    std::vector<std::string> cells = {std::to_string(r.year), csv::format(r.female_share),
                                      csv::format(r.nonwhite_share)};
    if (with_reference) {
      cells.push_back(csv::format(r.reference_female));
      cells.push_back(csv::format(r.reference_nonwhite));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// ---------------------------------------------------------------------------
// person-year CSV

inline csv::Table person_year_table(const std::vector<PersonYear>& person_years) {
  csv::Table t{ingest::harmonized_columns(), {}};
  t.header.insert(t.header.end(), {"adjusted_weight", "co_resident_count", "rp_changed"});
  for (const auto& p : person_years) {
    auto cells = ingest::harmonized_cells(p.rec);
    cells.push_back(csv::format(p.adjusted_weight));
    cells.push_back(std::to_string(p.co_resident_count));
    cells.push_back(p.rp_changed ? "1" : "0");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline std::vector<PersonYear> person_years_from_table(const csv::Table& t) {
  auto cw = t.require("adjusted_weight", "person-year CSV");
  auto cc = t.require("co_resident_count", "person-year CSV");
  auto cr = t.require("rp_changed", "person-year CSV");
  std::vector<PersonYear> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PersonYear p;
    p.rec = ingest::harmonized_from_row(t, r);
    p.adjusted_weight = csv::require_double(t, r, cw);
    p.co_resident_count = static_cast<int>(csv::require_int(t, r, cc));
    p.rp_changed = t.rows[r][cr] == "1";
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pfs::dynasty
