#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "pfs/error.hpp"

namespace pfs {

/// Ordered survey years plus the subset of years without food-expenditure data.
/// Gap years remain calendar waves: they break lag and spell adjacency.
struct WaveCalendar {
  std::vector<int> waves;
  std::vector<int> gap_years;

  /// Annual 1977-1997, biennial 1999-2019, no food data in 1988-1991.
  static WaveCalendar psid_default() {
    WaveCalendar cal;
    for (int y = 1977; y <= 1997; ++y) cal.waves.push_back(y);
    for (int y = 1999; y <= 2019; y += 2) cal.waves.push_back(y);
    cal.gap_years = {1988, 1989, 1990, 1991};
    return cal;
  }

  static WaveCalendar annual(int first, int last) {
    WaveCalendar cal;
    for (int y = first; y <= last; ++y) cal.waves.push_back(y);
    return cal;
  }

  std::size_t size() const { return waves.size(); }

  bool contains(int year) const { return std::binary_search(waves.begin(), waves.end(), year); }

  bool is_gap(int year) const {
    return std::find(gap_years.begin(), gap_years.end(), year) != gap_years.end();
  }

  std::optional<std::size_t> index_of(int year) const {
    auto it = std::lower_bound(waves.begin(), waves.end(), year);
    if (it == waves.end() || *it != year) return std::nullopt;
    return static_cast<std::size_t>(it - waves.begin());
  }

  /// The calendar wave immediately before `year`, gap years included.
  std::optional<int> previous(int year) const {
    auto idx = index_of(year);
    if (!idx || *idx == 0) return std::nullopt;
    return waves[*idx - 1];
  }

  std::size_t data_wave_count() const {
    return static_cast<std::size_t>(
        std::count_if(waves.begin(), waves.end(), [&](int y) { return !is_gap(y); }));
  }

  WaveCalendar restricted(int first, int last) const {
    WaveCalendar cal;
    for (int y : waves)
      if (y >= first && y <= last) cal.waves.push_back(y);
    for (int y : gap_years)
      if (y >= first && y <= last) cal.gap_years.push_back(y);
    return cal;
  }

  void validate() const {
    if (waves.empty()) throw Error(ErrorKind::config, "calendar has no waves");
    if (!std::is_sorted(waves.begin(), waves.end()) ||
        std::adjacent_find(waves.begin(), waves.end()) != waves.end())
      throw Error(ErrorKind::config, "calendar waves must be strictly increasing");
  }
};

}  // namespace pfs
