#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "pfs/error.hpp"

namespace pfs::special {

struct IncompleteGammaOptions {
  double tolerance = 1e-12;
  int max_iterations = 300;
};

namespace detail {

// log of x^a e^-x / Gamma(a), the common prefactor of both expansions.
inline double log_prefactor(double a, double x) { return a * std::log(x) - x - std::lgamma(a); }

[[noreturn]] inline void cap_reached(const char* method, double a, double x, int cap) {
  throw Error(ErrorKind::numeric, std::string("incomplete gamma ") + method + " did not converge in " +
                                      std::to_string(cap) + " iterations (a=" + std::to_string(a) +
                                      ", x=" + std::to_string(x) + ")");
}

// P(a, x) by the power series x^a e^-x / Gamma(a+1) * sum x^n / (a+1)...(a+n).
// Stops once the geometric bound on the remaining tail drops below tolerance.
inline double lower_series(double a, double x, const IncompleteGammaOptions& opt) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n <= opt.max_iterations; ++n) {
    term *= x / (a + n);
    sum += term;
    const double ratio = x / (a + n + 1);
    if (ratio < 1.0 && term / (1.0 - ratio) <= opt.tolerance * sum)
      return sum * std::exp(log_prefactor(a, x));
  }
  cap_reached("series", a, x, opt.max_iterations);
}

// Q(a, x) by the Legendre continued fraction, evaluated with modified Lentz.
inline double upper_continued_fraction(double a, double x, const IncompleteGammaOptions& opt) {
  constexpr double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= opt.max_iterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) <= opt.tolerance * 1e-3) return std::exp(log_prefactor(a, x)) * h;
  }
  cap_reached("continued fraction", a, x, opt.max_iterations);
}

// Chernoff bound on the far tail: P(a, x) for x < a and Q(a, x) for x > a
// are at most exp(-a (r - 1 - ln r)) with r = x / a. Beyond 36 nats the
// tail is below 2.4e-16 and is returned as zero without iterating, which
// keeps very large shapes away from the iteration cap.
inline bool far_tail(double a, double x) {
  const double r = x / a;
  return a * (r - 1.0 - std::log(r)) > 36.0;
}

inline void check_args(double a, double x) {
  if (!(a > 0.0) || !std::isfinite(a))
    throw Error(ErrorKind::domain, "incomplete gamma needs a finite shape > 0");
  if (!(x >= 0.0)) throw Error(ErrorKind::domain, "incomplete gamma needs x >= 0");
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x). Series below x = a + 1,
/// continued fraction above.
inline double gamma_p(double a, double x, const IncompleteGammaOptions& opt = {}) {
  detail::check_args(a, x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (detail::far_tail(a, x)) return x < a ? 0.0 : 1.0;
  if (x < a + 1.0) return detail::lower_series(a, x, opt);
  return 1.0 - detail::upper_continued_fraction(a, x, opt);
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
inline double gamma_q(double a, double x, const IncompleteGammaOptions& opt = {}) {
  detail::check_args(a, x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (detail::far_tail(a, x)) return x < a ? 1.0 : 0.0;
  if (x < a + 1.0) return 1.0 - detail::lower_series(a, x, opt);
  return detail::upper_continued_fraction(a, x, opt);
}

}  // namespace pfs::special
