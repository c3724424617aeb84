#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "pfs/error.hpp"

namespace pfs::stats {

inline double weighted_mean(std::span<const double> x, std::span<const double> w) {
  double sw = 0, sx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
  }
  if (!(sw > 0)) return std::numeric_limits<double>::quiet_NaN();
  return sx / sw;
}

/// Population (weight-normalised) variance.
inline double weighted_variance(std::span<const double> x, std::span<const double> w) {
  const double m = weighted_mean(x, w);
  double sw = 0, ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    ss += w[i] * (x[i] - m) * (x[i] - m);
  }
  if (!(sw > 0)) return std::numeric_limits<double>::quiet_NaN();
  return ss / sw;
}

inline double weighted_sd(std::span<const double> x, std::span<const double> w) {
  return std::sqrt(weighted_variance(x, w));
}

/// Distinct values in ascending order with their aggregated weight.
struct MassPoints {
  std::vector<double> values;
  std::vector<double> mass;
  double total = 0;
};

inline MassPoints mass_points(std::span<const double> x, std::span<const double> w) {
  if (x.size() != w.size()) throw Error(ErrorKind::domain, "values and weights differ in length");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  MassPoints mp;
  for (std::size_t i : order) {
    if (w[i] < 0 || std::isnan(w[i]) || std::isnan(x[i]))
      throw Error(ErrorKind::domain, "weighted quantile needs finite values and nonnegative weights");
    if (w[i] == 0) continue;
    if (!mp.values.empty() && mp.values.back() == x[i]) {
      mp.mass.back() += w[i];
    } else {
      mp.values.push_back(x[i]);
      mp.mass.push_back(w[i]);
    }
    mp.total += w[i];
  }
  return mp;
}

/// Weighted quantile under the midpoint convention.
///
/// When the target mass p * W coincides with the cumulative mass through some
/// distinct value v_k, the result is the midpoint of v_k and v_{k+1}; when the
/// target falls strictly inside the mass of a value, that value is returned.
/// Either way `x < q` selects exactly the values whose cumulative mass does
/// not exceed the target. p = 0 returns the minimum; p = 1 returns the next
/// representable number above the maximum.
inline double weighted_quantile(const MassPoints& mp, double p) {
  if (mp.values.empty()) throw Error(ErrorKind::domain, "weighted quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::domain, "quantile level outside [0, 1]");
  const double target = p * mp.total;
  const double tol = 1e-12 * mp.total;
  const std::size_t m = mp.values.size();
  double cum = 0;
  std::size_t k = 0;  // number of distinct values fully at or below target
  while (k < m && cum + mp.mass[k] <= target + tol) {
    cum += mp.mass[k];
    ++k;
  }
  if (k == 0) return mp.values.front();
  if (std::fabs(cum - target) <= tol) {
    if (k == m) return std::nextafter(mp.values.back(), std::numeric_limits<double>::infinity());
    return 0.5 * (mp.values[k - 1] + mp.values[k]);
  }
  return mp.values[k];
}

inline double weighted_quantile(std::span<const double> x, std::span<const double> w, double p) {
  return weighted_quantile(mass_points(x, w), p);
}

/// Box-plot summary with whiskers at the most extreme data inside
/// [q1 - 1.5 IQR, q3 + 1.5 IQR].
struct BoxStats {
  std::size_t n = 0;
  double weight = 0;
  double q1 = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double q3 = std::numeric_limits<double>::quiet_NaN();
  double lower_whisker = std::numeric_limits<double>::quiet_NaN();
  double upper_whisker = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t outliers = 0;
};

inline BoxStats box_stats(std::span<const double> x, std::span<const double> w) {
  BoxStats b;
  b.n = x.size();
  auto mp = mass_points(x, w);
  if (mp.values.empty()) return b;
  b.weight = mp.total;
  b.q1 = weighted_quantile(mp, 0.25);
  b.median = weighted_quantile(mp, 0.5);
  b.q3 = weighted_quantile(mp, 0.75);
  b.mean = weighted_mean(x, w);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr;
  const double hi = b.q3 + 1.5 * iqr;
  b.lower_whisker = std::numeric_limits<double>::infinity();
  b.upper_whisker = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i] <= 0) continue;
    if (x[i] < lo || x[i] > hi) {
      ++b.outliers;
      continue;
    }
    b.lower_whisker = std::min(b.lower_whisker, x[i]);
    b.upper_whisker = std::max(b.upper_whisker, x[i]);
  }
  return b;
}

/// Unweighted Pearson correlation; NaN when either series is constant.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace pfs::stats
