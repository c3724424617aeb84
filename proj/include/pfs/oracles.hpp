#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pfs/random.hpp"

// Independent reference computations used by the tests and the acceptance
// harness. Nothing here calls into the production estimators.
namespace pfs::oracle {

struct MonteCarlo {
  double share = 0;
  double se = 0;
  std::size_t draws = 0;
};

/// Share of Gamma(alpha, scale) draws at or above `threshold`.
inline MonteCarlo survival_mc(double threshold, double alpha, double scale, std::size_t draws, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < draws; ++i)
    if (rng.gamma(alpha, scale) >= threshold) ++hits;
  MonteCarlo mc;
  mc.draws = draws;
  mc.share = static_cast<double>(hits) / static_cast<double>(draws);
  mc.se = std::sqrt(std::max(mc.share * (1 - mc.share), 1e-12) / static_cast<double>(draws));
  return mc;
}

/// Survival shares at several thresholds from one shared set of draws.
inline std::vector<MonteCarlo> survival_mc(const std::vector<double>& thresholds, double alpha, double scale,
                                           std::size_t draws, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> hits(thresholds.size(), 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const double x = rng.gamma(alpha, scale);
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      if (x >= thresholds[k]) ++hits[k];
  }
  std::vector<MonteCarlo> out;
  for (auto h : hits) {
    MonteCarlo mc;
    mc.draws = draws;
    mc.share = static_cast<double>(h) / static_cast<double>(draws);
    mc.se = std::sqrt(std::max(mc.share * (1 - mc.share), 1e-12) / static_cast<double>(draws));
    out.push_back(mc);
  }
  return out;
}

struct SearchResult {
  std::vector<double> beta;
  double objective = 0;
  int iterations = 0;
  bool converged = false;
};

/// Nelder-Mead minimiser with restarts around the incumbent.
template <class F>
SearchResult nelder_mead(F&& f, std::vector<double> start, double step, double tol, int max_iter) {
  const std::size_t n = start.size();
  SearchResult res;
  int used = 0;
  for (int restart = 0; restart < 4; ++restart) {
    std::vector<std::vector<double>> simplex(n + 1, start);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);
    bool done = false;
    while (used < max_iter) {
      ++used;
      std::vector<std::size_t> ord(n + 1);
      for (std::size_t i = 0; i <= n; ++i) ord[i] = i;
      std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
      std::vector<std::vector<double>> s2;
      std::vector<double> f2;
      for (auto i : ord) {
        s2.push_back(simplex[i]);
        f2.push_back(fv[i]);
      }
      simplex = s2;
      fv = f2;
      double spread = std::fabs(fv[n] - fv[0]);
      double size = 0;
      for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t k = 0; k < n; ++k) size = std::max(size, std::fabs(simplex[i][k] - simplex[0][k]));
      if (spread <= tol * (1 + std::fabs(fv[0])) && size <= std::sqrt(tol)) {
        done = true;
        break;
      }
      std::vector<double> centroid(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / static_cast<double>(n);
      auto along = [&](double t) {
        std::vector<double> p(n);
        for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + t * (simplex[n][k] - centroid[k]);
        return p;
      };
      auto xr = along(-1.0);
      double fr = f(xr);
      if (fr < fv[0]) {
        auto xe = along(-2.0);
        double fe = f(xe);
        if (fe < fr) simplex[n] = xe, fv[n] = fe;
        else simplex[n] = xr, fv[n] = fr;
      } else if (fr < fv[n - 1]) {
        simplex[n] = xr;
        fv[n] = fr;
      } else {
        auto xc = fr < fv[n] ? along(-0.5) : along(0.5);
        double fc = f(xc);
        if (fc < std::min(fr, fv[n])) {
          simplex[n] = xc;
          fv[n] = fc;
        } else {
          for (std::size_t i = 1; i <= n; ++i) {
            for (std::size_t k = 0; k < n; ++k) simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
            fv[i] = f(simplex[i]);
          }
        }
      }
    }
    std::size_t best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    const bool improved = restart == 0 || fv[best] < res.objective - tol * (1 + std::fabs(res.objective));
    res.beta = simplex[best];
    res.objective = fv[best];
    start = res.beta;
    step *= 0.5;
    if (done && !improved) {
      res.converged = true;
      break;
    }
    if (used >= max_iter) break;
  }
  res.iterations = used;
  return res;
}

/// Maximises the weighted Poisson quasi-log-likelihood sum w (y eta - e^eta)
/// by direct search. Rows of X are observations.
inline SearchResult qmle_search(const std::vector<std::vector<double>>& X, const std::vector<double>& y,
                                const std::vector<double>& w, std::vector<double> start = {}, double tol = 1e-14,
                                int max_iter = 200000) {
  const std::size_t p = X.empty() ? 0 : X[0].size();
  if (start.empty()) start.assign(p, 0.0);
  double wsum = 0;
  for (double v : w) wsum += v;
  auto negll = [&](const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      double eta = 0;
      for (std::size_t k = 0; k < p; ++k) eta += X[i][k] * b[k];
      s += w[i] * (y[i] * eta - std::exp(std::min(eta, 700.0)));
    }
    return -s / wsum;
  };
  return nelder_mead(negll, start, 0.1, tol, max_iter);
}

// ---------------------------------------------------------------------------
// dynamics by enumeration over status strings ('S', 'I', 'U')

struct EnumSpell {
  std::size_t start = 0;
  std::size_t length = 0;
  bool left_censored = false;
  bool right_censored = false;
};

/// Every interval [a, b] is tested for being a maximal all-insecure block.
inline std::vector<EnumSpell> enum_spells(const std::string& s) {
  std::vector<EnumSpell> out;
  const std::size_t n = s.size();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) {
      bool all = true;
      for (std::size_t k = a; k <= b; ++k) all = all && s[k] == 'I';
      if (!all) continue;
      const bool open_left = a == 0 || s[a - 1] != 'I';
      const bool open_right = b + 1 == n || s[b + 1] != 'I';
      if (!open_left || !open_right) continue;
      EnumSpell sp;
      sp.start = a;
      sp.length = b - a + 1;
      sp.left_censored = a == 0 || s[a - 1] == 'U';
      sp.right_censored = b + 1 == n || s[b + 1] == 'U';
      out.push_back(sp);
    }
  return out;
}

/// (from, to) -> count over adjacent known pairs.
inline std::map<std::pair<char, char>, std::size_t> enum_transitions(const std::string& s) {
  std::map<std::pair<char, char>, std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) {
      if (j != i + 1) continue;
      if (s[i] == 'U' || s[j] == 'U') continue;
      ++out[{s[i], s[j]}];
    }
  return out;
}

/// Chronic when some pair of adjacent waves inside [lo, hi] are both insecure.
inline bool enum_chronic(const std::string& s, std::size_t lo, std::size_t hi) {
  for (std::size_t i = lo; i <= hi && i < s.size(); ++i)
    for (std::size_t j = lo; j <= hi && j < s.size(); ++j)
      if (j == i + 1 && s[i] == 'I' && s[j] == 'I') return true;
  return false;
}

struct EnumNewlyStill {
  double still = 0;
  double newly = 0;
  double prior_unknown = 0;
};

/// Weighted insecure mass at wave t split by the status at t - 1.
inline EnumNewlyStill enum_newly_still(const std::vector<std::string>& seqs, const std::vector<std::vector<double>>& w,
                                       std::size_t t) {
  EnumNewlyStill out;
  for (std::size_t p = 0; p < seqs.size(); ++p) {
    if (seqs[p][t] != 'I') continue;
    const char before = t == 0 ? 'U' : seqs[p][t - 1];
    if (before == 'I') out.still += w[p][t];
    else if (before == 'S') out.newly += w[p][t];
    else out.prior_unknown += w[p][t];
  }
  return out;
}

/// Kendall tau-b over all pairs.
inline double kendall_brute(const std::vector<double>& x, const std::vector<double>& y) {
  double c = 0, d = 0, tx = 0, ty = 0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = x[i] - x[j], b = y[i] - y[j];
      if (a == 0 && b == 0) continue;
      if (a == 0) tx += 1;
      else if (b == 0) ty += 1;
      else if ((a > 0) == (b > 0)) c += 1;
      else d += 1;
    }
  return (c - d) / std::sqrt((c + d + tx) * (c + d + ty));
}

}  // namespace pfs::oracle
