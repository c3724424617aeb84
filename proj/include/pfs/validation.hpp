#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pfs/oracles.hpp"
#include "pfs/pipeline.hpp"
#include "pfs/random.hpp"

// Acceptance checks shared by the acceptance binary and `pfs validate`.
namespace pfs::validation {

namespace fs = std::filesystem;

struct Criterion {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Options {
  fs::path fixtures = "tests/fixtures";
  fs::path fixture_config = "config/fixture.json";
  fs::path scratch;  // working directory for pipeline runs; a temp dir when empty
  std::size_t recovery_persons = 5000;
  std::uint64_t seed = 20240601;
};

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

/// Synthetic panel run through ingest and estimation in memory.
struct LargeRun {
  synth::SyntheticPanel synth;
  dynasty::Panel panel;
  estimate::EstimatorConfig cfg;
  estimate::MomentsResult moments;
  std::vector<estimate::PfsRow> pfs;
  WaveCalendar calendar;
  double seconds = 0;
};

inline std::unique_ptr<LargeRun> large_run(std::size_t persons, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = std::make_unique<LargeRun>();
  synth::DGPConfig dgp;
  dgp.n_persons = persons;
  dgp.seed = seed;
  run->calendar = dgp.calendar;
  run->synth = synth::generate(dgp);
  auto parsed = ingest::parse_panel_table(run->synth.raw);
  auto h = ingest::harmonize_panel(std::move(parsed.records), run->synth.cpi);
  run->panel = dynasty::build_panel(h.records);
  run->cfg.standard_errors = true;
  run->moments = estimate::estimate_moments(run->panel.person_years, run->cfg, run->calendar);
  run->pfs = estimate::compute_pfs(run->panel.person_years, run->moments.rows);
  run->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

struct FixtureRun {
  pipeline::PipelineConfig config;
  std::string manifest;
  double seconds = 0;
};

inline FixtureRun fixture_run(const Options& o, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  FixtureRun r;
  r.config = pipeline::load_config(o.fixture_config);
  r.config.base_dir = out;
  r.config.output_dir = "out";
  r.config.inputs = {};
  fs::remove_all(r.config.out());
  pipeline::run_all(r.config);
  std::ifstream in(r.config.out() / "manifest.json", std::ios::binary);
  r.manifest.assign(std::istreambuf_iterator<char>(in), {});
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

class Suite {
 public:
  explicit Suite(Options o) : o_(std::move(o)) {
    if (o_.scratch.empty()) {
      o_.scratch = fs::temp_directory_path() / ("pfs-validate-" + std::to_string(::getpid()));
      owns_scratch_ = true;
    }
    fs::create_directories(o_.scratch);
  }
  ~Suite() {
    if (owns_scratch_) {
      std::error_code ec;
      fs::remove_all(o_.scratch, ec);
    }
  }
  Suite(const Suite&) = delete;
  Suite& operator=(const Suite&) = delete;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"incomplete-gamma correctness", "QMLE recovery",
                                               "end-to-end PFS recovery",       "calibration exactness",
                                               "dynamics oracle",               "threshold-model round trip",
                                               "harmonization golden",          "determinism"};
    return n;
  }

  Criterion run(int id) {
    Criterion c;
    c.id = id;
    c.name = names().at(static_cast<std::size_t>(id - 1));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (id) {
        case 1: ac1(c); break;
        case 2: ac2(c); break;
        case 3: ac3(c); break;
        case 4: ac4(c); break;
        case 5: ac5(c); break;
        case 6: ac6(c); break;
        case 7: ac7(c); break;
        case 8: ac8(c); break;
        default: throw Error(ErrorKind::usage, "no criterion " + std::to_string(id));
      }
    } catch (const std::exception& e) {
      c.passed = false;
      c.detail = std::string("raised: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
  }

  std::vector<Criterion> run_all() {
    std::vector<Criterion> out;
    for (int id = 1; id <= 8; ++id) out.push_back(run(id));
    return out;
  }

  // -------------------------------------------------------------------------

  void ac1(Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> alphas = {0.5, 1, 2, 5, 10, 50}, scales = {0.5, 1, 75};
    const std::vector<double> quantiles = {0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};
    double worst_quad = 0, worst_z = 0;
    std::size_t mc_fail = 0, points = 0;
    std::uint64_t stream = 0;
    for (double a : alphas)
      for (double b : scales) {
        std::vector<double> thresholds;
        for (double q : quantiles) thresholds.push_back(boost::math::gamma_p_inv(a, q) * b);
        // One million draws per grid point, shared by its seven thresholds.
        const auto mc = oracle::survival_mc(thresholds, a, b, 1000000, derive_seed(o_.seed, ++stream));
        const double log_norm = std::lgamma(a) + a * std::log(b);
        auto pdf = [&](double x) { return x <= 0 ? 0.0 : std::exp((a - 1) * std::log(x) - x / b - log_norm); };
        for (std::size_t k = 0; k < thresholds.size(); ++k) {
          ++points;
          const double w = thresholds[k];
          const double s = estimate::gamma_survival(w, {a, b});
          double err = 0;
          const double quad =
              boost::math::quadrature::gauss_kronrod<double, 61>::integrate(pdf, w, std::numeric_limits<double>::infinity(), 15, 1e-14, &err);
          worst_quad = std::max(worst_quad, std::fabs(s - quad));
          const double z = std::fabs(mc[k].share - s) / mc[k].se;
          worst_z = std::max(worst_z, z);
          if (z > 3) ++mc_fail;
        }
      }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.passed = worst_quad <= 1e-9 && mc_fail == 0 && secs < 10;
    c.detail = std::to_string(points) + " points; max |quadrature diff| " + detail::fmt(worst_quad, 3) +
               "; max MC z " + detail::fmt(worst_z, 3) + " (" + std::to_string(mc_fail) + " beyond 3 SE); " +
               detail::fmt(secs, 3) + " s";
  }

  void ac2(Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& run = large();
    std::map<std::string, double> truth_mean, truth_var;
    {
      const auto& t = run.synth.truth_coefficients;
      for (const auto& r : t.rows) {
        truth_mean[r[0]] = *csv::parse_double(r[1]);
        truth_var[r[0]] = *csv::parse_double(r[2]);
      }
    }
    const glm::Frame f = estimate::make_frame(run.panel.person_years);
    auto binary = [&](const std::string& term) {
      if (term.find('=') != std::string::npos) return true;
      auto it = f.numeric.find(term);
      if (it == f.numeric.end()) return false;
      for (double v : it->second)
        if (!std::isnan(v) && v != 0 && v != 1) return false;
      return true;
    };
    std::vector<std::string> misses;
    std::size_t checked = 0;
    double worst_cont = 0, worst_cat = 0;
    auto check = [&](const glm::FittedModel& m, const glm::Vector& se, const std::map<std::string, double>& truth,
                     const char* eq) {
      for (std::size_t i = 0; i < m.names.size(); ++i) {
        const auto& term = m.names[i];
        if (term == "intercept" || term.rfind("fe_", 0) == 0) continue;
        const double want = truth.count(term) ? truth.at(term) : 0.0;
        const double got = m.beta(static_cast<Eigen::Index>(i));
        const bool cat = binary(term);
        const double tol = cat ? 0.05 : 0.02;
        const double dev = std::fabs(got - want);
        (cat ? worst_cat : worst_cont) = std::max(cat ? worst_cat : worst_cont, dev);
        ++checked;
        if (dev > tol)
          misses.push_back(std::string(eq) + ":" + term + " " + detail::fmt(got) + " vs " + detail::fmt(want) +
                           " (se " + detail::fmt(se(static_cast<Eigen::Index>(i)), 2) + ")");
      }
    };
    check(run.moments.mean_model, run.moments.mean_se, truth_mean, "mean");
    check(run.moments.variance_model, run.moments.variance_se, truth_var, "variance");

    // Small instances against direct search.
    Rng rng(derive_seed(o_.seed, 9001));
    double worst_small = 0;
    std::size_t small_fail = 0;
    for (int inst = 0; inst < 50; ++inst) {
      const int p = 1 + inst % 3;
      const int n = 10 + static_cast<int>(rng.uniform_int(0, 40));
      std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(p)));
      std::vector<double> y(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
      glm::Matrix X(n, p);
      glm::Vector yv(n), wv(n);
      std::vector<double> beta(static_cast<std::size_t>(p));
      for (auto& b : beta) b = rng.uniform(-0.5, 0.5);
      beta[0] += 1.0;
      for (int i = 0; i < n; ++i) {
        double eta = 0;
        for (int k = 0; k < p; ++k) {
          const double x = k == 0 ? 1.0 : rng.normal(0, 0.7);
          rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = x;
          X(i, k) = x;
          eta += x * beta[static_cast<std::size_t>(k)];
        }
        const double mu = std::exp(eta);
        y[static_cast<std::size_t>(i)] = rng.gamma(2.0, mu / 2.0);
        w[static_cast<std::size_t>(i)] = rng.uniform(0.5, 2.0);
        yv(i) = y[static_cast<std::size_t>(i)];
        wv(i) = w[static_cast<std::size_t>(i)];
      }
      glm::FitOptions opt;
      opt.beta_tolerance = 1e-13;
      const auto fit = glm::fit_poisson_qmle(X, yv, wv, {}, opt);
      const auto search = oracle::qmle_search(rows, y, w);
      bool ok = fit.converged && search.converged && fit.names.size() == static_cast<std::size_t>(p);
      for (int k = 0; ok && k < p; ++k) {
        const double d = std::fabs(fit.beta(k) - search.beta[static_cast<std::size_t>(k)]);
        worst_small = std::max(worst_small, d);
        if (d > 1e-6) ok = false;
      }
      if (!ok) ++small_fail;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.passed = misses.empty() && small_fail == 0 && secs < 120;
    c.detail = std::to_string(checked) + " coefficients; max dev continuous " + detail::fmt(worst_cont, 3) +
               ", categorical " + detail::fmt(worst_cat, 3) + "; small instances max diff " +
               detail::fmt(worst_small, 3) + " (" + std::to_string(small_fail) + " failed); " + detail::fmt(secs, 3) +
               " s";
    if (!misses.empty()) {
      c.detail += "; outside tolerance:";
      for (const auto& m : misses) c.detail += " [" + m + "]";
    }
  }

  void ac3(Criterion& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& run = large();
    std::map<std::pair<std::string, int>, double> truth;
    {
      const auto& t = run.synth.truth_person_years;
      const auto ci = t.require("person_id"), cy = t.require("year"), cp = t.require("true_pfs");
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        truth[{t.rows[r][ci], static_cast<int>(csv::require_int(t, r, cy))}] = csv::require_double(t, r, cp);
    }
    std::vector<double> dev;
    for (const auto& r : run.pfs) {
      auto it = truth.find({r.person_id, r.year});
      if (it == truth.end()) throw Error(ErrorKind::join, "no true PFS for " + r.person_id);
      dev.push_back(std::fabs(r.pfs - it->second));
    }
    // Fixed-seed sample of 10,000 person-years.
    std::vector<std::size_t> idx(dev.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(o_.seed, 9101));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(i - 1)))]);
    const std::size_t n = std::min<std::size_t>(10000, idx.size());
    double mad = 0, mad_all = 0;
    for (std::size_t i = 0; i < n; ++i) mad += dev[idx[i]];
    for (double d : dev) mad_all += d;
    mad /= static_cast<double>(n);
    mad_all /= static_cast<double>(dev.size());

    const auto& fx = fixture();
    const auto rows = pipeline::load_pfs(fx.config);
    double num = 0, den = 0;
    for (const auto& r : rows) {
      num += r.adjusted_weight * r.pfs;
      den += r.adjusted_weight;
    }
    const double mean_pfs = num / den;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + run.seconds;
    c.passed = n == 10000 && mad <= 0.05 && mean_pfs >= 0.77 && mean_pfs <= 0.85 && secs < 180;
    c.detail = "MAD " + detail::fmt(mad, 3) + " over " + std::to_string(n) + " person-years (" +
               detail::fmt(mad_all, 3) + " over all " + std::to_string(dev.size()) + "); fixture weighted mean PFS " +
               detail::fmt(mean_pfs, 4) + "; " + detail::fmt(secs, 3) + " s";
  }

  void ac4(Criterion& c) {
    std::vector<threshold::ByYear> inputs;
    {
      threshold::ByYear s;
      for (const auto& r : large().pfs) {
        s[r.year].pfs.push_back(r.pfs);
        s[r.year].weight.push_back(r.adjusted_weight);
      }
      inputs.push_back(std::move(s));
    }
    {
      threshold::ByYear s;
      for (const auto& r : pipeline::load_pfs(fixture().config)) {
        s[r.year].pfs.push_back(r.pfs);
        s[r.year].weight.push_back(r.adjusted_weight);
      }
      inputs.push_back(std::move(s));
    }
    // Adversarial inputs: heavy ties, one dominant weight, tiny samples.
    Rng rng(derive_seed(o_.seed, 9201));
    threshold::ByYear adv;
    for (int y = 0; y < 40; ++y) {
      auto& s = adv[2000 + y];
      const int n = 1 + static_cast<int>(rng.uniform_int(0, 60));
      for (int i = 0; i < n; ++i) {
        s.pfs.push_back(y % 3 == 0 ? std::round(rng.uniform() * 5) / 5 : rng.uniform());
        s.weight.push_back(y % 4 == 0 && i == 0 ? 50.0 : rng.uniform(0.1, 3.0));
      }
    }
    inputs.push_back(std::move(adv));

    // A cutoff cannot split observations that share one PFS value, so the
    // unit of mass is the value, not the observation. On tie-free samples the
    // two bounds coincide.
    std::size_t years = 0, tied_years = 0, bound_fail = 0, mono_fail = 0, scale_fail = 0, single_over = 0;
    double worst_ratio = 0, worst_free = 0;
    for (const auto& input : inputs)
      for (const auto& [y, s] : input) {
        ++years;
        double total = 0, wmax = 0;
        std::map<double, double> mass;
        for (std::size_t i = 0; i < s.pfs.size(); ++i) {
          total += s.weight[i];
          wmax = std::max(wmax, s.weight[i]);
          mass[s.pfs[i]] += s.weight[i];
        }
        double mmax = 0;
        for (const auto& [v, m] : mass) mmax = std::max(mmax, m);
        const bool tied = mass.size() < s.pfs.size();
        if (tied) ++tied_years;
        const double bound = (tied ? mmax : wmax) / total;
        std::vector<double> scaled = s.weight;
        for (double& w : scaled) w *= 7.25;
        double prev = -std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 20; ++k) {
          const double target = k / 20.0;
          const double cut = threshold::calibrate_cutoff(s.pfs, s.weight, target);
          const double achieved = threshold::weighted_prevalence(s.pfs, s.weight, cut);
          const double gap = std::fabs(achieved - target);
          worst_ratio = std::max(worst_ratio, gap / bound);
          if (!tied) worst_free = std::max(worst_free, gap / bound);
          if (gap > bound * (1 + 1e-12)) ++bound_fail;
          if (gap > wmax / total * (1 + 1e-12)) ++single_over;
          if (cut < prev) ++mono_fail;
          if (threshold::calibrate_cutoff(s.pfs, scaled, target) != cut) ++scale_fail;
          prev = cut;
        }
      }
    c.passed = bound_fail == 0 && mono_fail == 0 && scale_fail == 0;
    c.detail = std::to_string(years) + " year samples x 21 targets (" + std::to_string(tied_years) +
               " with tied values); max |gap|/bound " + detail::fmt(worst_free, 3) + " tie-free, " +
               detail::fmt(worst_ratio, 3) + " overall; " + std::to_string(single_over) +
               " tied-sample targets beyond one observation's weight but within the tied mass; " +
               std::to_string(bound_fail) + " bound, " +
               std::to_string(mono_fail) + " monotonicity, " + std::to_string(scale_fail) +
               " weight-scale violations";
  }

  void ac5(Criterion& c) {
    using dynamics::Status;
    std::size_t mismatches = 0, sequences = 0;
    const auto cal = WaveCalendar::annual(2001, 2006);
    std::vector<std::string> all;
    for (int code = 0; code < 729; ++code) {
      std::string s;
      for (int k = 0, v = code; k < 6; ++k, v /= 3) s += "SIU"[v % 3];
      all.push_back(s);
    }
    Rng rng(derive_seed(o_.seed, 9301));
    std::vector<dynamics::PersonSeries> people;
    std::vector<std::vector<double>> weights;
    for (const auto& s : all) {
      ++sequences;
      dynamics::PersonSeries p;
      p.person_id = s;
      p.status = dynamics::parse_statuses(s);
      std::vector<double> w(6);
      for (std::size_t t = 0; t < 6; ++t) w[t] = s[t] == 'U' ? 0.0 : rng.uniform(0.5, 2.0);
      p.weight = w;
      people.push_back(p);
      weights.push_back(w);

      // spells
      const auto got = dynamics::spells_of(p.status);
      const auto want = oracle::enum_spells(s);
      bool ok = got.size() == want.size();
      for (std::size_t i = 0; ok && i < got.size(); ++i)
        ok = got[i].start == want[i].start && got[i].length == want[i].length &&
             got[i].left_censored == want[i].left_censored && got[i].right_censored == want[i].right_censored;
      // transitions, unit weights so shares times pair count are counts
      dynamics::PersonSeries unit = p;
      for (std::size_t t = 0; t < 6; ++t) unit.weight[t] = s[t] == 'U' ? 0.0 : 1.0;
      const auto tm = dynamics::transition_matrix({unit}, cal, dynamics::Grouping::total);
      const auto counts = oracle::enum_transitions(s);
      std::size_t pairs = 0;
      for (const auto& [k, v] : counts) pairs += v;
      auto count = [&](char a, char b) {
        auto it = counts.find({a, b});
        return it == counts.end() ? 0.0 : static_cast<double>(it->second);
      };
      if (pairs == 0) {
        ok = ok && tm.empty();
      } else {
        ok = ok && tm.size() == 1 && tm[0].n_pairs == pairs && tm[0].insecure_both * pairs == count('I', 'I') &&
             tm[0].insecure_first_only * pairs == count('I', 'S') &&
             tm[0].insecure_second_only * pairs == count('S', 'I') && tm[0].secure_both * pairs == count('S', 'S');
      }
      // chronic flags over every window
      for (std::size_t lo = 0; lo < 6; ++lo)
        for (std::size_t hi = lo; hi < 6; ++hi)
          ok = ok && dynamics::chronic_in_window(p.status, cal, {cal.waves[lo], cal.waves[hi]}) ==
                         oracle::enum_chronic(s, lo, hi);
      // newly / still for this sequence alone
      const auto ns = dynamics::newly_still_decomposition({p}, cal);
      for (std::size_t t = 0; ok && t < 6; ++t) {
        const auto e = oracle::enum_newly_still({s}, {w}, t);
        ok = ns[t].still == e.still && ns[t].newly == e.newly && ns[t].prior_unknown == e.prior_unknown;
      }
      if (!ok) ++mismatches;
    }
    // pooled newly / still over all sequences
    double pooled = 0;
    const auto ns = dynamics::newly_still_decomposition(people, cal);
    for (std::size_t t = 0; t < 6; ++t) {
      const auto e = oracle::enum_newly_still(all, weights, t);
      pooled = std::max({pooled, std::fabs(ns[t].still - e.still), std::fabs(ns[t].newly - e.newly),
                         std::fabs(ns[t].prior_unknown - e.prior_unknown)});
    }

    // identities on the large panel
    const auto& run = large();
    threshold::ByYear samples;
    for (const auto& r : run.pfs) {
      samples[r.year].pfs.push_back(r.pfs);
      samples[r.year].weight.push_back(r.adjusted_weight);
    }
    const auto cutoffs = threshold::calibrate(samples, threshold::Mode::p20, std::nullopt, std::nullopt).cutoffs;
    std::vector<dynamics::Observation> obs;
    for (const auto& r : run.pfs) obs.push_back({r.person_id, r.year, r.pfs < cutoffs.at(r.year).cutoff, r.adjusted_weight, "", "", ""});
    const auto big_cal = run.calendar.restricted(run.cfg.first_year, 2019);
    const auto series = dynamics::build_status_series(obs, big_cal);
    std::size_t insecure_waves = 0, spell_waves = 0;
    double insecure_mass = 0, spell_mass = 0;
    for (const auto& p : series) {
      for (std::size_t t = 0; t < p.status.size(); ++t)
        if (p.status[t] == Status::insecure) {
          ++insecure_waves;
          insecure_mass += p.weight[t];
        }
      for (const auto& sp : dynamics::spells_of(p.status)) {
        spell_waves += sp.length;
        for (std::size_t t = sp.start; t < sp.start + sp.length; ++t) spell_mass += p.weight[t];
      }
    }
    double conservation = 0;
    for (const auto& r : dynamics::newly_still_decomposition(series, big_cal))
      conservation = std::max(conservation, std::fabs(r.still + r.newly + r.prior_unknown - r.insecure_weight) /
                                                std::max(1.0, r.insecure_weight));
    const double additivity = std::fabs(spell_mass - insecure_mass) / std::max(1.0, insecure_mass);
    c.passed = mismatches == 0 && pooled <= 1e-12 * 729 && insecure_waves == spell_waves && additivity <= 1e-12 &&
               conservation <= 1e-12;
    c.detail = std::to_string(sequences) + " sequences, " + std::to_string(mismatches) + " mismatches; pooled newly/still diff " +
               detail::fmt(pooled, 3) + "; large panel: " + std::to_string(insecure_waves) + " insecure waves vs " +
               std::to_string(spell_waves) + " in spells, weighted additivity " + detail::fmt(additivity, 3) +
               ", conservation " + detail::fmt(conservation, 3);
  }

  void ac6(Criterion& c) {
    threshold::MacroSeries macro;
    Rng rng(derive_seed(o_.seed, 9401));
    for (int y = 1979; y <= 2019; ++y) {
      threshold::MacroRow r;
      r.snap_rate = 6 + 8 * rng.uniform();
      r.unemployment = 4 + 6 * rng.uniform();
      r.gdp_pc_growth = -2 + 5 * rng.uniform();
      r.ln_disp_income_pc = 10 + 0.01 * (y - 1979) + 0.02 * rng.uniform();
      r.poverty_rate = 11 + 4 * rng.uniform();
      macro.by_year[y] = r;
    }
    const double a = 0.61, b = 0.0125;
    std::map<int, double> anchored;
    std::vector<int> held;
    for (int y = 1979; y <= 2019; ++y) {
      if (y % 4 == 0) held.push_back(y);
      else anchored[y] = a + b * macro.at(y).snap_rate;
    }
    const auto m = threshold::fit_threshold_model(anchored, macro, threshold::Variant::snap);
    double worst = 0;
    for (int y : held) worst = std::max(worst, std::fabs(threshold::predict_cutoff(m, macro.at(y)).value - (a + b * macro.at(y).snap_rate)));
    const double r2 = m.fit.r_squared;
    const auto t2 = threshold::variant_table(anchored, macro);
    const auto b3 = threshold::correlation_table(anchored, macro);
    const bool shape = t2.header.size() == 6 && b3.rows.size() == 6 && b3.header.size() == 7;
    c.passed = std::fabs(r2 - 1) <= 1e-12 && worst <= 1e-10 && shape;
    c.detail = "R^2 " + detail::fmt(r2, 17) + "; slope " + detail::fmt(*m.fit.coef("snap_rate"), 12) +
               "; max held-out error " + detail::fmt(worst, 3) + " over " + std::to_string(held.size()) +
               " years; variant table " + std::to_string(t2.header.size() - 1) + " columns, correlation matrix " +
               std::to_string(b3.rows.size()) + "x" + std::to_string(b3.header.size() - 1);
  }

  void ac7(Criterion& c) {
    const auto input = o_.fixtures / "harmonize_input.csv";
    const auto cpi = o_.fixtures / "harmonize_cpi.csv";
    const auto golden = o_.fixtures / "harmonized_golden.csv";
    auto parsed = ingest::parse_panel_table(csv::read(input));
    const std::size_t rows = parsed.records.size();
    // Coverage of the fixture itself.
    std::set<ingest::SnapRegime> regimes;
    std::set<ingest::Recall> recalls;
    bool gap = false;
    for (const auto& r : parsed.records) {
      regimes.insert(ingest::snap_regime(r.year));
      for (const auto* comp : {&r.food_home, &r.food_out, &r.food_delivered}) recalls.insert(comp->recall);
      recalls.insert(r.benefit_recall);
      gap = gap || (r.year >= 1988 && r.year <= 1991);
    }
    auto h = ingest::harmonize_panel(std::move(parsed.records), ingest::CpiTable::from_csv(cpi));
    std::ostringstream got;
    csv::write(got, ingest::harmonized_table(h.records));
    std::ifstream in(golden, std::ios::binary);
    if (!in) throw Error(ErrorKind::data, "cannot read " + golden.string());
    const std::string want(std::istreambuf_iterator<char>(in), {});
    const bool exact = got.str() == want;
    std::size_t first_diff = 0;
    if (!exact)
      while (first_diff < std::min(want.size(), got.str().size()) && want[first_diff] == got.str()[first_diff]) ++first_diff;
    const bool covered = rows == 40 && regimes.size() == 3 && recalls.size() == 6 && gap;
    c.passed = exact && covered;
    c.detail = std::to_string(rows) + " input rows, " + std::to_string(regimes.size()) + " SNAP regimes, " +
               std::to_string(recalls.size()) + " recall codes, gap rows " + (gap ? "yes" : "no") + "; " +
               (exact ? "byte-exact match (" + std::to_string(want.size()) + " bytes)"
                      : "differs at byte " + std::to_string(first_diff));
  }

  void ac8(Criterion& c) {
    const auto& first = fixture();
    const auto second = detail::fixture_run(o_, o_.scratch / "run2");
    const bool same = !first.manifest.empty() && first.manifest == second.manifest;
    auto files = nlohmann::json::parse(first.manifest)["files"].size();
    c.passed = same;
    c.detail = std::string(same ? "identical" : "different") + " manifests over " + std::to_string(files) +
               " files; runs took " + detail::fmt(first.seconds, 3) + " s and " + detail::fmt(second.seconds, 3) + " s";
  }

 private:
  const detail::LargeRun& large() {
    if (!large_) large_ = detail::large_run(o_.recovery_persons, o_.seed);
    return *large_;
  }

  const detail::FixtureRun& fixture() {
    if (!fixture_) fixture_ = std::make_unique<detail::FixtureRun>(detail::fixture_run(o_, o_.scratch / "run1"));
    return *fixture_;
  }

  Options o_;
  bool owns_scratch_ = false;
  std::unique_ptr<detail::LargeRun> large_;
  std::unique_ptr<detail::FixtureRun> fixture_;
};

inline std::string line(const Criterion& c) {
  return "AC" + std::to_string(c.id) + " " + (c.passed ? "PASS" : "FAIL") + " " + c.name + ": " + c.detail;
}

}  // namespace pfs::validation
