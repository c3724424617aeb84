#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pfs/calendar.hpp"
#include "pfs/csv.hpp"
#include "pfs/error.hpp"

namespace pfs::glm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Column store for regression inputs. Missing numeric values are NaN,
/// missing categorical values are empty strings.
struct Frame {
  std::vector<std::string> person;
  std::vector<int> year;
  std::map<std::string, std::vector<double>> numeric;
  std::map<std::string, std::vector<std::string>> categorical;

  std::size_t rows() const { return person.size(); }

  bool has(const std::string& c) const {
    return numeric.count(c) || categorical.count(c) || c == "year" || c == "person_id";
  }

  const std::vector<double>& num(const std::string& c) const {
    auto it = numeric.find(c);
    if (it == numeric.end()) throw Error(ErrorKind::schema, "design refers to absent numeric column '" + c + "'");
    return it->second;
  }

  /// Levels of a factor column; `year` and `person_id` are always available.
  std::vector<std::string> levels_of(const std::string& c) const {
    if (auto it = categorical.find(c); it != categorical.end()) return it->second;
    if (c == "person_id") return person;
    std::vector<std::string> out;
    if (c == "year") {
      for (int y : year) out.push_back(std::to_string(y));
      return out;
    }
    if (auto it = numeric.find(c); it != numeric.end()) {
      for (double v : it->second) out.push_back(std::isnan(v) ? std::string{} : csv::format(v));
      return out;
    }
    throw Error(ErrorKind::schema, "design refers to absent factor column '" + c + "'");
  }
};

struct Covariate {
  std::string column;
  bool categorical = false;
  std::string reference;  // required for categorical covariates
};

struct DesignSpec {
  std::string response;
  std::string lag_source;  // column whose prior-wave value enters the lag polynomial; defaults to response
  int lag_degree = 2;
  std::vector<Covariate> covariates;
  std::vector<std::string> fixed_effects;
  std::string weight_column;  // empty: unit weights
  bool intercept = true;

  const std::string& lag_column() const { return lag_source.empty() ? response : lag_source; }
};

inline nlohmann::ordered_json to_json(const DesignSpec& s) {
  nlohmann::ordered_json j;
  j["response"] = s.response;
  j["lag_source"] = s.lag_column();
  j["lag_degree"] = s.lag_degree;
  j["covariates"] = nlohmann::ordered_json::array();
  for (const auto& c : s.covariates) {
    nlohmann::ordered_json cj;
    cj["column"] = c.column;
    cj["categorical"] = c.categorical;
    if (c.categorical) cj["reference"] = c.reference;
    j["covariates"].push_back(cj);
  }
  j["fixed_effects"] = s.fixed_effects;
  j["weight_column"] = s.weight_column;
  j["intercept"] = s.intercept;
  return j;
}

struct Design {
  Matrix X;
  Vector y;
  Vector w;
  std::vector<std::string> columns;
  std::vector<std::size_t> kept;         // frame rows behind each design row
  std::vector<std::size_t> no_lag;       // frame rows without a prior-wave value
  std::vector<std::size_t> missing;      // frame rows with a missing regressor, response or weight
};

inline std::string lag_name(int power) { return power == 1 ? "lag" : "lag^" + std::to_string(power); }

/// Builds X, y and w. The lag is the lag column's value in the calendar wave
/// immediately preceding the row's year for the same person; rows whose
/// prior wave is unobserved (first observations, re-entries, post-gap waves)
/// are excluded and listed.
inline Design build_design(const Frame& f, const DesignSpec& spec, const WaveCalendar& cal) {
  const std::size_t n = f.rows();
  const auto& y = f.num(spec.response);
  const std::vector<double>* lag_src = spec.lag_degree > 0 ? &f.num(spec.lag_column()) : nullptr;
  const std::vector<double>* wcol = nullptr;
  if (!spec.weight_column.empty()) wcol = &f.num(spec.weight_column);

  std::vector<double> lag(n, std::numeric_limits<double>::quiet_NaN());
  if (lag_src) {
    std::unordered_map<std::string, std::unordered_map<int, std::size_t>> index;
    for (std::size_t i = 0; i < n; ++i) index[f.person[i]][f.year[i]] = i;
    for (std::size_t i = 0; i < n; ++i) {
      auto prev = cal.previous(f.year[i]);
      if (!prev) continue;
      const auto& rows = index[f.person[i]];
      auto it = rows.find(*prev);
      if (it != rows.end()) lag[i] = (*lag_src)[it->second];
    }
  }

  struct Factor {
    std::string prefix;
    std::vector<std::string> values;
    std::vector<std::string> levels;  // non-reference levels in column order
  };
  std::vector<const std::vector<double>*> numeric_cov;
  std::vector<std::string> numeric_names;
  std::vector<Factor> factors;
  for (const auto& c : spec.covariates) {
    if (!f.has(c.column)) throw Error(ErrorKind::schema, "design refers to absent column '" + c.column + "'");
    if (c.categorical) {
      if (c.reference.empty())
        throw Error(ErrorKind::config, "categorical covariate '" + c.column + "' needs a reference level");
      factors.push_back({c.column, f.levels_of(c.column), {}});
    } else {
      numeric_cov.push_back(&f.num(c.column));
      numeric_names.push_back(c.column);
    }
  }
  const std::size_t n_cov_factors = factors.size();
  for (const auto& fe : spec.fixed_effects) {
    if (!f.has(fe)) throw Error(ErrorKind::schema, "design refers to absent fixed-effect column '" + fe + "'");
    factors.push_back({"fe_" + fe, f.levels_of(fe), {}});
  }

  Design d;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = !std::isnan(y[i]) && (!wcol || (!std::isnan((*wcol)[i]) && (*wcol)[i] >= 0));
    for (auto* c : numeric_cov) ok = ok && !std::isnan((*c)[i]);
    for (const auto& fac : factors) ok = ok && !fac.values[i].empty();
    if (!ok) {
      d.missing.push_back(i);
      continue;
    }
    if (lag_src && std::isnan(lag[i])) {
      d.no_lag.push_back(i);
      continue;
    }
    d.kept.push_back(i);
  }

  // Levels are taken from the rows that enter the fit.
  for (std::size_t k = 0; k < factors.size(); ++k) {
    std::set<std::string> seen;
    for (std::size_t i : d.kept) seen.insert(factors[k].values[i]);
    std::string reference;
    if (k < n_cov_factors) {
      std::size_t ci = 0, count = 0;
      for (std::size_t c = 0; c < spec.covariates.size(); ++c)
        if (spec.covariates[c].categorical && count++ == k) ci = c;
      reference = spec.covariates[ci].reference;
    } else if (!seen.empty()) {
      reference = *seen.begin();
    }
    for (const auto& l : seen)
      if (l != reference) factors[k].levels.push_back(l);
  }

  if (spec.intercept) d.columns.push_back("intercept");
  for (int p = 1; p <= spec.lag_degree; ++p) d.columns.push_back(lag_name(p));
  std::size_t fi = 0;
  for (const auto& c : spec.covariates) {
    if (!c.categorical) {
      d.columns.push_back(c.column);
    } else {
      for (const auto& l : factors[fi].levels) d.columns.push_back(c.column + "=" + l);
      ++fi;
    }
  }
  for (std::size_t k = n_cov_factors; k < factors.size(); ++k)
    for (const auto& l : factors[k].levels) d.columns.push_back(factors[k].prefix + "=" + l);

  const auto m = static_cast<Eigen::Index>(d.kept.size());
  const auto p = static_cast<Eigen::Index>(d.columns.size());
  d.X = Matrix::Zero(m, p);
  d.y.resize(m);
  d.w.resize(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t i = d.kept[static_cast<std::size_t>(r)];
    d.y(r) = y[i];
    d.w(r) = wcol ? (*wcol)[i] : 1.0;
    Eigen::Index c = 0;
    if (spec.intercept) d.X(r, c++) = 1.0;
    for (int pw = 1; pw <= spec.lag_degree; ++pw) d.X(r, c++) = std::pow(lag[i], pw);
    std::size_t fk = 0, nk = 0;
    for (const auto& cov : spec.covariates) {
      if (!cov.categorical) {
        d.X(r, c++) = (*numeric_cov[nk++])[i];
      } else {
        for (const auto& l : factors[fk].levels) d.X(r, c++) = factors[fk].values[i] == l ? 1.0 : 0.0;
        ++fk;
      }
    }
    for (std::size_t k = n_cov_factors; k < factors.size(); ++k)
      for (const auto& l : factors[k].levels) d.X(r, c++) = factors[k].values[i] == l ? 1.0 : 0.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// fitting

enum class Link { log, identity };

inline const char* to_string(Link l) { return l == Link::log ? "log" : "identity"; }

struct FitOptions {
  double beta_tolerance = 1e-10;
  double deviance_tolerance = 1e-12;
  int max_iterations = 100;
  double rank_tolerance = 1e-10;
};

struct FittedModel {
  Link link = Link::log;
  std::vector<std::string> names;  // retained columns, design order
  Vector beta;
  std::vector<std::string> dropped;
  std::size_t n_obs = 0;
  bool converged = false;
  int iterations = 0;
  double deviance = 0;
  double max_abs_score = 0;
  double r_squared = std::numeric_limits<double>::quiet_NaN();

  std::optional<double> coef(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return beta(static_cast<Eigen::Index>(i));
    return std::nullopt;
  }

  std::map<std::string, double> coefficients() const {
    std::map<std::string, double> m;
    for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = beta(static_cast<Eigen::Index>(i));
    return m;
  }
};

inline nlohmann::ordered_json to_json(const FittedModel& m) {
  nlohmann::ordered_json j;
  j["link"] = to_string(m.link);
  j["columns"] = m.names;
  nlohmann::ordered_json coefs = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < m.names.size(); ++i) coefs[m.names[i]] = m.beta(static_cast<Eigen::Index>(i));
  j["coefficients"] = coefs;
  j["dropped_columns"] = m.dropped;
  j["n_obs"] = m.n_obs;
  j["converged"] = m.converged;
  j["iterations"] = m.iterations;
  j["deviance"] = m.deviance;
  j["max_abs_score"] = m.max_abs_score;
  if (!std::isnan(m.r_squared)) j["r_squared"] = m.r_squared;
  return j;
}

/// Indices of columns that are linearly independent of the columns before
/// them, judged on sqrt(w)-scaled, unit-normalised columns.
inline std::vector<Eigen::Index> independent_columns(const Matrix& X, const Vector& w, double tol) {
  const Vector sw = w.cwiseMax(0.0).cwiseSqrt();
  Matrix Q(X.rows(), X.cols());
  Eigen::Index q = 0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    Vector v = X.col(j).cwiseProduct(sw);
    const double norm0 = v.norm();
    if (!(norm0 > 0)) continue;
    v /= norm0;
    for (int pass = 0; pass < 2 && q > 0; ++pass) v -= Q.leftCols(q) * (Q.leftCols(q).transpose() * v);
    const double r = v.norm();
    if (r <= tol) continue;
    Q.col(q++) = v / r;
    keep.push_back(j);
  }
  return keep;
}

namespace detail {

inline Matrix select_columns(const Matrix& X, const std::vector<Eigen::Index>& cols) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = X.col(cols[k]);
  return out;
}

/// Weighted least squares by Householder QR on column-scaled sqrt(w) X.
inline Vector wls_solve(const Matrix& X, const Vector& z, const Vector& w) {
  const Vector sw = w.cwiseMax(0.0).cwiseSqrt();
  Matrix A = sw.asDiagonal() * X;
  Vector scale = A.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < scale.size(); ++j)
    if (!(scale(j) > 0)) scale(j) = 1.0;
  A = A * scale.cwiseInverse().asDiagonal();
  Vector gamma = A.householderQr().solve(sw.cwiseProduct(z));
  return gamma.cwiseQuotient(scale);
}

inline double poisson_deviance(const Vector& y, const Vector& mu, const Vector& w) {
  double dev = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double t = y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) : 0.0;
    dev += w(i) * (t - (y(i) - mu(i)));
  }
  return 2.0 * dev;
}

inline Vector exp_clamped(const Vector& eta) {
  return eta.unaryExpr([](double e) { return std::exp(std::min(e, 700.0)); });
}

struct Prepared {
  Matrix X;
  std::vector<std::string> names;
  std::vector<std::string> dropped;
};

inline Prepared prepare(const Matrix& X, const Vector& w, const std::vector<std::string>& names, double tol) {
  std::vector<std::string> nm = names;
  if (nm.empty())
    for (Eigen::Index j = 0; j < X.cols(); ++j) nm.push_back("x" + std::to_string(j));
  if (static_cast<Eigen::Index>(nm.size()) != X.cols())
    throw Error(ErrorKind::schema, "column names do not match the design matrix");
  auto keep = independent_columns(X, w, tol);
  Prepared p;
  p.X = select_columns(X, keep);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (k < keep.size() && keep[k] == j) {
      p.names.push_back(nm[static_cast<std::size_t>(j)]);
      ++k;
    } else {
      p.dropped.push_back(nm[static_cast<std::size_t>(j)]);
    }
  }
  return p;
}

inline void check_inputs(const Matrix& X, const Vector& y, const Vector& w) {
  if (y.size() != X.rows() || w.size() != X.rows())
    throw Error(ErrorKind::domain, "design, response and weights differ in length");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!(w(i) >= 0)) throw Error(ErrorKind::domain, "regression weights must be nonnegative");
}

}  // namespace detail

/// Poisson quasi-maximum likelihood with log link, solved by iteratively
/// reweighted least squares with step halving.
inline FittedModel fit_poisson_qmle(const Matrix& X, const Vector& y, const Vector& w,
                                    const std::vector<std::string>& names = {}, const FitOptions& opt = {}) {
  detail::check_inputs(X, y, w);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (!(y(i) >= 0)) throw Error(ErrorKind::domain, "Poisson quasi-likelihood needs a nonnegative response");
  auto prep = detail::prepare(X, w, names, opt.rank_tolerance);
  FittedModel m;
  m.link = Link::log;
  m.names = prep.names;
  m.dropped = prep.dropped;
  m.n_obs = static_cast<std::size_t>(X.rows());
  const Matrix& Xk = prep.X;
  if (Xk.cols() == 0 || w.sum() <= 0) {
    m.beta = Vector::Zero(Xk.cols());
    return m;
  }

  const double ybar = w.dot(y) / w.sum();
  Vector mu = (y.array() + ybar).matrix() * 0.5;
  Vector eta = mu.array().log().matrix();
  Vector beta = Vector::Zero(Xk.cols());
  double dev = detail::poisson_deviance(y, mu, w);
  bool have_beta = false;

  for (int it = 1; it <= opt.max_iterations; ++it) {
    m.iterations = it;
    const Vector z = eta + (y - mu).cwiseQuotient(mu);
    const Vector wk = w.cwiseProduct(mu);
    Vector next = detail::wls_solve(Xk, z, wk);
    Vector next_mu = detail::exp_clamped(Xk * next);
    double next_dev = detail::poisson_deviance(y, next_mu, w);
    if (have_beta) {
      for (int h = 0; h < 30 && !(next_dev <= dev * (1 + 1e-12) + 1e-300); ++h) {
        next = 0.5 * (next + beta);
        next_mu = detail::exp_clamped(Xk * next);
        next_dev = detail::poisson_deviance(y, next_mu, w);
      }
    }
    const double step = have_beta ? (next - beta).cwiseAbs().maxCoeff() : std::numeric_limits<double>::infinity();
    const double rel = std::fabs(next_dev - dev) / std::max(std::fabs(next_dev), 1e-300);
    beta = next;
    mu = next_mu;
    eta = Xk * beta;
    dev = next_dev;
    if (have_beta && (step < opt.beta_tolerance || rel < opt.deviance_tolerance)) {
      m.converged = true;
      break;
    }
    have_beta = true;
  }
  m.beta = beta;
  m.deviance = dev;
  m.max_abs_score = (Xk.transpose() * w.cwiseProduct(y - mu)).cwiseAbs().maxCoeff();
  return m;
}

/// Weighted least squares with weighted R-squared.
inline FittedModel fit_ols(const Matrix& X, const Vector& y, const Vector& w, const std::vector<std::string>& names = {},
                           const FitOptions& opt = {}) {
  detail::check_inputs(X, y, w);
  auto prep = detail::prepare(X, w, names, opt.rank_tolerance);
  FittedModel m;
  m.link = Link::identity;
  m.names = prep.names;
  m.dropped = prep.dropped;
  m.n_obs = static_cast<std::size_t>(X.rows());
  m.iterations = 1;
  m.beta = prep.X.cols() ? detail::wls_solve(prep.X, y, w) : Vector::Zero(0);
  const Vector fitted = prep.X.cols() ? Vector(prep.X * m.beta) : Vector::Zero(y.size());
  const Vector resid = y - fitted;
  const double sw = w.sum();
  const double ybar = sw > 0 ? w.dot(y) / sw : 0.0;
  const double ssr = w.dot(resid.cwiseProduct(resid));
  const Vector centred = (y.array() - ybar).matrix();
  const double sst = w.dot(centred.cwiseProduct(centred));
  m.deviance = ssr;
  m.r_squared = sst > 0 ? 1.0 - ssr / sst : 0.0;
  m.max_abs_score = prep.X.cols() ? (prep.X.transpose() * w.cwiseProduct(resid)).cwiseAbs().maxCoeff() : 0.0;
  m.converged = true;
  return m;
}

/// Linear predictor mapped through the link. `columns` names the columns of
/// X; every retained model coefficient must be present.
inline Vector predict(const FittedModel& m, const Matrix& X, const std::vector<std::string>& columns) {
  if (static_cast<Eigen::Index>(columns.size()) != X.cols())
    throw Error(ErrorKind::schema, "column names do not match the design matrix");
  Vector eta = Vector::Zero(X.rows());
  for (std::size_t k = 0; k < m.names.size(); ++k) {
    auto it = std::find(columns.begin(), columns.end(), m.names[k]);
    if (it == columns.end()) throw Error(ErrorKind::schema, "prediction design lacks column '" + m.names[k] + "'");
    eta += m.beta(static_cast<Eigen::Index>(k)) * X.col(it - columns.begin());
  }
  if (m.link == Link::log) return detail::exp_clamped(eta);
  return eta;
}

inline Vector predict(const FittedModel& m, const Matrix& X) { return predict(m, X, m.names); }

/// Sandwich standard errors A^-1 B A^-1 for a fitted model. Scores are summed
/// within `clusters` when given, otherwise each row is its own cluster.
inline Vector robust_se(const FittedModel& m, const Matrix& X, const std::vector<std::string>& columns, const Vector& y,
                        const Vector& w, const std::vector<std::string>& clusters = {}) {
  std::vector<Eigen::Index> idx;
  for (const auto& name : m.names) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorKind::schema, "design lacks column '" + name + "'");
    idx.push_back(it - columns.begin());
  }
  const Matrix Xk = detail::select_columns(X, idx);
  const Vector mu = predict(m, Xk);
  const Vector v = m.link == Link::log ? mu : Vector::Ones(mu.size());
  const Matrix A = Xk.transpose() * w.cwiseProduct(v).asDiagonal() * Xk;
  const Vector r = w.cwiseProduct(y - mu);
  Matrix B = Matrix::Zero(Xk.cols(), Xk.cols());
  if (clusters.empty()) {
    const Matrix S = r.asDiagonal() * Xk;
    B = S.transpose() * S;
  } else {
    if (static_cast<Eigen::Index>(clusters.size()) != X.rows())
      throw Error(ErrorKind::domain, "cluster keys must match the row count");
    std::unordered_map<std::string, Eigen::Index> id;
    for (const auto& c : clusters) id.emplace(c, static_cast<Eigen::Index>(id.size()));
    Matrix S = Matrix::Zero(static_cast<Eigen::Index>(id.size()), Xk.cols());
    for (Eigen::Index i = 0; i < Xk.rows(); ++i) S.row(id.at(clusters[static_cast<std::size_t>(i)])) += r(i) * Xk.row(i);
    B = S.transpose() * S;
  }
  const Matrix Ainv = A.ldlt().solve(Matrix::Identity(A.rows(), A.cols()));
  return (Ainv * B * Ainv).diagonal().cwiseMax(0.0).cwiseSqrt();
}

/// Replaces each column by its deviation from the weighted mean of its group.
inline Matrix within_transform(const Matrix& X, const std::vector<std::string>& groups, const Vector& w) {
  if (static_cast<Eigen::Index>(groups.size()) != X.rows() || w.size() != X.rows())
    throw Error(ErrorKind::domain, "group keys and weights must match the row count");
  std::unordered_map<std::string, std::size_t> id;
  std::vector<std::size_t> g(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) g[i] = id.emplace(groups[i], id.size()).first->second;
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(id.size()), X.cols());
  Vector wsum = Vector::Zero(static_cast<Eigen::Index>(id.size()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(g[static_cast<std::size_t>(i)]);
    sums.row(k) += w(i) * X.row(i);
    wsum(k) += w(i);
  }
  Matrix out = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(g[static_cast<std::size_t>(i)]);
    if (wsum(k) > 0) out.row(i) -= sums.row(k) / wsum(k);
    else out.row(i).setZero();
  }
  return out;
}

}  // namespace pfs::glm
