#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/error.hpp"
#include "pfs/weighted_stats.hpp"

namespace pfs::dynamics {

enum class Status : char { secure = 'S', insecure = 'I', unknown = 'U' };

inline std::vector<Status> parse_statuses(std::string_view s) {
  std::vector<Status> out;
  for (char c : s) {
    if (c == 'S') out.push_back(Status::secure);
    else if (c == 'I') out.push_back(Status::insecure);
    else if (c == 'U') out.push_back(Status::unknown);
    else throw Error(ErrorKind::domain, std::string("status code must be S, I or U, got '") + c + "'");
  }
  return out;
}

/// One person's statuses aligned to the calendar waves.
struct PersonSeries {
  std::string person_id;
  std::vector<Status> status;
  std::vector<double> weight;  // zero where unknown
  std::string sex;
  std::string race;
  std::string education;
};

struct Observation {
  std::string person_id;
  int year = 0;
  bool insecure = false;
  double weight = 0;
  std::string sex;
  std::string race;
  std::string education;
};

/// Aligns classified person-years to the calendar. Waves without an
/// observation, gap years included, are unknown. Group attributes come from
/// the person's last observation.
inline std::vector<PersonSeries> build_status_series(const std::vector<Observation>& obs, const WaveCalendar& cal) {
  std::map<std::string, PersonSeries> by_person;
  std::map<std::string, int> last_year;
  for (const auto& o : obs) {
    auto idx = cal.index_of(o.year);
    if (!idx) throw Error(ErrorKind::range, "status year " + std::to_string(o.year) + " is not a calendar wave");
    auto& p = by_person[o.person_id];
    if (p.status.empty()) {
      p.person_id = o.person_id;
      p.status.assign(cal.size(), Status::unknown);
      p.weight.assign(cal.size(), 0.0);
    }
    if (p.status[*idx] != Status::unknown)
      throw Error(ErrorKind::integrity, "two statuses for " + o.person_id + " in " + std::to_string(o.year));
    p.status[*idx] = o.insecure ? Status::insecure : Status::secure;
    p.weight[*idx] = o.weight;
    auto [it, fresh] = last_year.emplace(o.person_id, o.year);
    if (fresh || o.year >= it->second) {
      it->second = o.year;
      p.sex = o.sex;
      p.race = o.race;
      p.education = o.education;
    }
  }
  std::vector<PersonSeries> out;
  out.reserve(by_person.size());
  for (auto& [id, p] : by_person) out.push_back(std::move(p));
  return out;
}

// ---------------------------------------------------------------------------
// spells

struct RawSpell {
  std::size_t start = 0;   // wave index
  std::size_t length = 0;  // insecure waves
  bool left_censored = false;
  bool right_censored = false;
};

/// Maximal runs of insecure waves. A run is censored on a side when it
/// touches the end of the sequence or an unknown wave. With `bridge_gaps`, a
/// single unknown wave between two insecure waves continues the run; the
/// unknown wave adds nothing to the length.
inline std::vector<RawSpell> spells_of(const std::vector<Status>& s, bool bridge_gaps = false) {
  std::vector<RawSpell> out;
  const std::size_t n = s.size();
  std::size_t i = 0;
  while (i < n) {
    if (s[i] != Status::insecure) {
      ++i;
      continue;
    }
    RawSpell sp;
    sp.start = i;
    sp.left_censored = i == 0 || s[i - 1] == Status::unknown;
    std::size_t j = i;
    for (;;) {
      while (j < n && s[j] == Status::insecure) {
        ++sp.length;
        ++j;
      }
      if (bridge_gaps && j + 1 < n && s[j] == Status::unknown && s[j + 1] == Status::insecure) {
        ++j;
        continue;
      }
      break;
    }
    sp.right_censored = j == n || s[j] == Status::unknown;
    out.push_back(sp);
    i = j;
  }
  return out;
}

struct Spell {
  std::string person_id;
  int start_wave = 0;
  int length = 0;
  bool left_censored = false;
  bool right_censored = false;
  double weight = 0;  // person weight in the starting wave
};

inline std::vector<Spell> compute_spells(const std::vector<PersonSeries>& series, const WaveCalendar& cal,
                                         bool bridge_gaps = false) {
  std::vector<Spell> out;
  for (const auto& p : series)
    for (const auto& r : spells_of(p.status, bridge_gaps))
      out.push_back({p.person_id, cal.waves[r.start], static_cast<int>(r.length), r.left_censored, r.right_censored,
                     p.weight[r.start]});
  return out;
}

struct SpellLengthRow {
  int length = 0;
  std::size_t count = 0;
  double weight = 0;
  double share_weighted = 0;
  double share_unweighted = 0;
};

struct SpellDistribution {
  std::vector<SpellLengthRow> by_length;
  double transitory_weighted = 0;  // length <= 2 waves
  double transitory_unweighted = 0;
  double mean_length_weighted = 0;
  double mean_length_unweighted = 0;
  std::size_t spells = 0;
};

inline SpellDistribution spell_distribution(const std::vector<Spell>& spells) {
  SpellDistribution d;
  d.spells = spells.size();
  if (spells.empty()) return d;
  std::map<int, SpellLengthRow> rows;
  double total_w = 0, len_w = 0, len_u = 0, tr_w = 0, tr_u = 0;
  for (const auto& s : spells) {
    auto& r = rows[s.length];
    r.length = s.length;
    ++r.count;
    r.weight += s.weight;
    total_w += s.weight;
    len_w += s.weight * s.length;
    len_u += s.length;
    if (s.length <= 2) {
      tr_w += s.weight;
      tr_u += 1;
    }
  }
  const double n = static_cast<double>(spells.size());
  for (auto& [len, r] : rows) {
    r.share_weighted = total_w > 0 ? r.weight / total_w : 0.0;
    r.share_unweighted = r.count / n;
    d.by_length.push_back(r);
  }
  d.transitory_weighted = total_w > 0 ? tr_w / total_w : 0.0;
  d.transitory_unweighted = tr_u / n;
  d.mean_length_weighted = total_w > 0 ? len_w / total_w : 0.0;
  d.mean_length_unweighted = len_u / n;
  return d;
}

// ---------------------------------------------------------------------------
// transitions

enum class Grouping { total, period, sex, race, education };

inline Grouping parse_grouping(std::string_view s) {
  if (s == "total") return Grouping::total;
  if (s == "period") return Grouping::period;
  if (s == "sex") return Grouping::sex;
  if (s == "race") return Grouping::race;
  if (s == "education") return Grouping::education;
  throw Error(ErrorKind::domain, "unknown grouping '" + std::string(s) + "'");
}

inline const char* to_string(Grouping g) {
  switch (g) {
    case Grouping::total: return "total";
    case Grouping::period: return "period";
    case Grouping::sex: return "sex";
    case Grouping::race: return "race";
    case Grouping::education: return "education";
  }
  return "";
}

struct Period {
  int first = 0;
  int last = 0;
  std::string label() const { return std::to_string(first) + "-" + std::to_string(last); }
  bool contains(int y) const { return y >= first && y <= last; }
};

inline std::vector<Period> default_periods() { return {{1981, 1990}, {1991, 2000}, {2001, 2010}, {2011, 2019}}; }

namespace detail {

inline std::string attribute_label(const std::string& v) { return v.empty() ? "missing" : v; }

inline std::optional<std::string> group_label(const PersonSeries& p, Grouping g, int year,
                                              const std::vector<Period>& periods) {
  switch (g) {
    case Grouping::total: return std::string("total");
    case Grouping::period:
      for (const auto& per : periods)
        if (per.contains(year)) return per.label();
      return std::nullopt;
    case Grouping::sex: return attribute_label(p.sex);
    case Grouping::race: return attribute_label(p.race);
    case Grouping::education: return attribute_label(p.education);
  }
  return std::nullopt;
}

}  // namespace detail

struct TransitionRow {
  std::string group;
  std::size_t n_pairs = 0;
  double weight = 0;
  double insecure_both = 0;
  double insecure_first_only = 0;
  double insecure_second_only = 0;
  double secure_both = 0;
};

/// Weighted shares of the four status combinations over pairs of adjacent
/// calendar waves with both statuses known. Pairs carry the weight of the
/// second wave and are grouped by the second wave's year for periods.
inline std::vector<TransitionRow> transition_matrix(const std::vector<PersonSeries>& series, const WaveCalendar& cal,
                                                    Grouping grouping,
                                                    const std::vector<Period>& periods = default_periods()) {
  std::map<std::string, TransitionRow> acc;
  for (const auto& p : series) {
    for (std::size_t t = 1; t < p.status.size(); ++t) {
      const Status a = p.status[t - 1], b = p.status[t];
      if (a == Status::unknown || b == Status::unknown) continue;
      auto label = detail::group_label(p, grouping, cal.waves[t], periods);
      if (!label) continue;
      auto& r = acc[*label];
      r.group = *label;
      ++r.n_pairs;
      const double w = p.weight[t];
      r.weight += w;
      const bool ia = a == Status::insecure, ib = b == Status::insecure;
      if (ia && ib) r.insecure_both += w;
      else if (ia) r.insecure_first_only += w;
      else if (ib) r.insecure_second_only += w;
      else r.secure_both += w;
    }
  }
  std::vector<TransitionRow> out;
  if (grouping == Grouping::period) {
    for (const auto& per : periods) {
      auto it = acc.find(per.label());
      out.push_back(it == acc.end() ? TransitionRow{per.label()} : it->second);
    }
  } else {
    for (auto& [k, r] : acc) out.push_back(r);
  }
  for (auto& r : out) {
    if (r.weight > 0) {
      r.insecure_both /= r.weight;
      r.insecure_first_only /= r.weight;
      r.insecure_second_only /= r.weight;
      r.secure_both /= r.weight;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// chronic food insecurity

/// True when the window holds two adjacent calendar waves that are both
/// insecure.
inline bool chronic_in_window(const std::vector<Status>& s, const WaveCalendar& cal, Period window) {
  for (std::size_t t = 1; t < s.size(); ++t)
    if (window.contains(cal.waves[t - 1]) && window.contains(cal.waves[t]) && s[t - 1] == Status::insecure &&
        s[t] == Status::insecure)
      return true;
  return false;
}

struct ChronicRow {
  std::string window;
  std::string group;
  std::size_t persons = 0;
  double weight = 0;
  double share = 0;
};

/// Weighted share of persons observed in a window who are chronically
/// insecure there. A person's weight is the mean of their weights over the
/// known waves in the window.
inline std::vector<ChronicRow> chronic_prevalence(const std::vector<PersonSeries>& series, const WaveCalendar& cal,
                                                  const std::vector<Period>& windows, Grouping grouping) {
  std::vector<ChronicRow> out;
  for (const auto& win : windows) {
    std::map<std::string, std::pair<ChronicRow, double>> acc;
    for (const auto& p : series) {
      double wsum = 0;
      int known = 0;
      for (std::size_t t = 0; t < p.status.size(); ++t)
        if (win.contains(cal.waves[t]) && p.status[t] != Status::unknown) {
          wsum += p.weight[t];
          ++known;
        }
      if (known == 0) continue;
      auto label = detail::group_label(p, grouping == Grouping::period ? Grouping::total : grouping, 0, {});
      auto& [row, chronic_w] = acc[*label];
      row.window = win.label();
      row.group = *label;
      ++row.persons;
      const double w = wsum / known;
      row.weight += w;
      if (chronic_in_window(p.status, cal, win)) chronic_w += w;
    }
    for (auto& [k, v] : acc) {
      v.first.share = v.first.weight > 0 ? v.second / v.first.weight : 0.0;
      out.push_back(v.first);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// newly / still insecure

struct NewlyStillRow {
  int year = 0;
  double known_weight = 0;
  double insecure_weight = 0;
  double still = 0;          // insecure in the prior calendar wave
  double newly = 0;          // secure in the prior calendar wave
  double prior_unknown = 0;  // prior wave unknown or absent
};

/// Weighted mass of insecure persons per wave by prior status.
inline std::vector<NewlyStillRow> newly_still_decomposition(const std::vector<PersonSeries>& series,
                                                            const WaveCalendar& cal) {
  std::vector<NewlyStillRow> rows(cal.size());
  for (std::size_t t = 0; t < cal.size(); ++t) rows[t].year = cal.waves[t];
  for (const auto& p : series) {
    for (std::size_t t = 0; t < p.status.size(); ++t) {
      if (p.status[t] == Status::unknown) continue;
      const double w = p.weight[t];
      rows[t].known_weight += w;
      if (p.status[t] != Status::insecure) continue;
      rows[t].insecure_weight += w;
      const Status prior = t == 0 ? Status::unknown : p.status[t - 1];
      if (prior == Status::insecure) rows[t].still += w;
      else if (prior == Status::secure) rows[t].newly += w;
      else rows[t].prior_unknown += w;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// PFS versus FSSS

struct PairedStatus {
  int year = 0;
  bool pfs_insecure = false;
  bool fsss_insecure = false;
  double weight = 0;
};

struct CrosstabRow {
  std::string label;  // year or "total"
  std::size_t n = 0;
  double secure_both = 0;
  double insecure_both = 0;
  double pfs_insecure_fsss_secure = 0;
  double pfs_secure_fsss_insecure = 0;
  double match_rate() const { return secure_both + insecure_both; }
};

/// Weighted four-cell shares per year and pooled.
inline std::vector<CrosstabRow> crosstab_pfs_fsss(const std::vector<PairedStatus>& pairs) {
  if (pairs.empty()) throw Error(ErrorKind::domain, "no person-years carry both PFS and FSSS statuses");
  std::map<int, std::pair<CrosstabRow, double>> by_year;
  std::pair<CrosstabRow, double> total{{"total"}, 0.0};
  auto add = [](std::pair<CrosstabRow, double>& acc, const PairedStatus& p) {
    ++acc.first.n;
    acc.second += p.weight;
    if (!p.pfs_insecure && !p.fsss_insecure) acc.first.secure_both += p.weight;
    else if (p.pfs_insecure && p.fsss_insecure) acc.first.insecure_both += p.weight;
    else if (p.pfs_insecure) acc.first.pfs_insecure_fsss_secure += p.weight;
    else acc.first.pfs_secure_fsss_insecure += p.weight;
  };
  for (const auto& p : pairs) {
    auto& acc = by_year[p.year];
    acc.first.label = std::to_string(p.year);
    add(acc, p);
    add(total, p);
  }
  auto finish = [](std::pair<CrosstabRow, double>& acc) {
    if (acc.second > 0) {
      acc.first.secure_both /= acc.second;
      acc.first.insecure_both /= acc.second;
      acc.first.pfs_insecure_fsss_secure /= acc.second;
      acc.first.pfs_secure_fsss_insecure /= acc.second;
    }
    return acc.first;
  };
  std::vector<CrosstabRow> out;
  for (auto& [y, acc] : by_year) out.push_back(finish(acc));
  out.push_back(finish(total));
  return out;
}

struct RankedScore {
  std::string person_id;
  int fsss_raw = 0;
  double pfs = 0;
  double weight = 0;
};

/// Marks the highest raw scores insecure until their weighted share would
/// exceed the target. Equal scores are taken lower PFS first, then by
/// person_id. Returns one flag per input element.
inline std::vector<bool> reclassify_fsss_by_rank(const std::vector<RankedScore>& scores, double target) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &x = scores[a], &y = scores[b];
    if (x.fsss_raw != y.fsss_raw) return x.fsss_raw > y.fsss_raw;
    if (x.pfs != y.pfs) return x.pfs < y.pfs;
    return x.person_id < y.person_id;
  });
  double total = 0;
  for (const auto& s : scores) total += s.weight;
  const double limit = target * total;
  const double tol = 1e-12 * total;
  std::vector<bool> out(scores.size(), false);
  double cum = 0;
  for (std::size_t i : order) {
    if (cum + scores[i].weight > limit + tol) break;
    cum += scores[i].weight;
    out[i] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// rank correlations

enum class RankMethod { spearman, kendall_tau_b };

struct Correlation {
  std::optional<double> value;
  std::string reason;  // set when value is missing
};

/// Mid-ranks (1-based); ties share the average of their positions.
inline std::vector<double> midranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

namespace detail {

// Number of inversions in v, sorting it in place (merge sort).
inline std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                      std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

// Sum over runs of equal adjacent values of t(t-1)/2; `sorted` must be sorted.
inline std::uint64_t tied_pairs(const std::vector<double>& sorted) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const std::uint64_t t = j - i;
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

}  // namespace detail

/// Kendall tau-b in O(n log n) (Knight's algorithm).
inline Correlation kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) return {std::nullopt, "fewer than two pairs"};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys[i] = y[order[i]];
  }
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = detail::tied_pairs(xs);
  std::uint64_t n3 = 0;  // pairs tied in both
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
    const std::uint64_t t = j - i;
    n3 += t * (t - 1) / 2;
    i = j;
  }
  std::vector<double> buf(n);
  const std::uint64_t swaps = detail::count_inversions(ys, buf, 0, n);
  const std::uint64_t n2 = detail::tied_pairs(ys);
  if (n1 == n0 || n2 == n0) return {std::nullopt, "constant series"};
  const double numer = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                       static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  return {numer / denom, ""};
}

inline Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return {std::nullopt, "fewer than two pairs"};
  const double r = stats::pearson(midranks(x), midranks(y));
  if (std::isnan(r)) return {std::nullopt, "constant series"};
  return {r, ""};
}

inline Correlation rank_correlation(const std::vector<double>& x, const std::vector<double>& y, RankMethod m) {
  return m == RankMethod::spearman ? spearman(x, y) : kendall_tau_b(x, y);
}

// ---------------------------------------------------------------------------
// group summaries

struct GroupBox {
  std::string group;
  stats::BoxStats box;
};

/// Box statistics of `values` per group label; groups listed in `order` are
/// emitted even when empty.
inline std::vector<GroupBox> box_by_group(const std::vector<double>& values, const std::vector<double>& weights,
                                          const std::vector<std::string>& labels,
                                          const std::vector<std::string>& order = {}) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> parts;
  for (const auto& g : order) parts[g];
  for (std::size_t i = 0; i < values.size(); ++i) {
    parts[labels[i]].first.push_back(values[i]);
    parts[labels[i]].second.push_back(weights[i]);
  }
  std::vector<GroupBox> out;
  auto emit = [&](const std::string& g) {
    const auto& [v, w] = parts[g];
    out.push_back({g, stats::box_stats(v, w)});
  };
  for (const auto& g : order) emit(g);
  for (const auto& [g, vw] : parts)
    if (std::find(order.begin(), order.end(), g) == order.end()) emit(g);
  return out;
}

struct CellSummary {
  std::string cell;
  std::size_t n = 0;
  double weight = 0;
  std::map<std::string, double> mean;
  std::map<std::string, double> sd;
};

/// Weighted mean and standard deviation of each named attribute per cell.
/// NaN attribute values are skipped for that attribute only.
inline std::vector<CellSummary> weighted_summary(const std::vector<std::string>& cells, const std::vector<double>& weights,
                                                 const std::vector<std::pair<std::string, std::vector<double>>>& attrs,
                                                 const std::vector<std::string>& order) {
  std::vector<CellSummary> out;
  for (const auto& c : order) {
    CellSummary s;
    s.cell = c;
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i] == c) {
        ++s.n;
        s.weight += weights[i];
      }
    for (const auto& [name, values] : attrs) {
      std::vector<double> v, w;
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == c && !std::isnan(values[i])) {
          v.push_back(values[i]);
          w.push_back(weights[i]);
        }
      s.mean[name] = stats::weighted_mean(v, w);
      s.sd[name] = stats::weighted_sd(v, w);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pfs::dynamics
