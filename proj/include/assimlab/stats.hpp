#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "assimlab/error.hpp"

namespace assimlab {

// ---------------------------------------------------------------------------
// Kruskal-Wallis

using GroupedScores = std::map<std::string, std::vector<double>>;

struct KruskalResult {
  double h = 0.0;
  double p_value = 1.0;
  std::size_t df = 0;
  std::size_t n = 0;
  /// 1 - sum(t^3 - t) / (N^3 - N); 1 when there are no ties.
  double tie_correction = 1.0;
  /// p comes from full enumeration of group assignments rather than the
  /// chi-square approximation.
  bool exact = false;
};

/// Samples with at most this many distinct group assignments get an exact
/// permutation p-value.
inline constexpr double kKruskalExactLimit = 200'000;

/// Midranks (1-based) of `values`, ties sharing the average rank.
inline std::vector<double> midranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

/// Chi-square upper tail.
inline double chi_square_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

namespace detail {

/// Number of ways to split n labelled items into groups of the given sizes.
inline double multinomial(const std::vector<double>& sizes) {
  double out = 1.0;
  double placed = 0.0;
  for (double size : sizes)
    for (double i = 1; i <= size; ++i) out *= ++placed / i;
  return out;
}

/// Fraction of group assignments of `ranks` whose sum of R_j^2 / n_j reaches
/// `observed`. The statistic is an increasing function of that sum.
inline double kruskal_exact_p(const std::vector<double>& ranks, const std::vector<double>& group_n, double observed) {
  const std::size_t k = group_n.size();
  std::vector<double> left = group_n;
  std::vector<double> sums(k, 0.0);
  const double tol = 1e-9 * std::max(1.0, observed);
  double hits = 0.0;
  double total = 0.0;
  auto rec = [&](auto&& self, std::size_t i) -> void {
    if (i == ranks.size()) {
      double stat = 0.0;
      for (std::size_t j = 0; j < k; ++j) stat += sums[j] * sums[j] / group_n[j];
      total += 1.0;
      hits += stat >= observed - tol;
      return;
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (left[j] == 0.0) continue;
      left[j] -= 1.0;
      sums[j] += ranks[i];
      self(self, i + 1);
      sums[j] -= ranks[i];
      left[j] += 1.0;
    }
  };
  rec(rec, 0);
  return hits / total;
}

}  // namespace detail

inline KruskalResult kruskal_wallis(const GroupedScores& groups) {
  if (groups.size() < 2) throw Error(ErrorKind::insufficient_data, "Kruskal-Wallis needs at least two groups");
  std::vector<double> pooled;
  std::vector<std::size_t> owner;
  std::size_t g = 0;
  for (const auto& [label, values] : groups) {
    if (values.empty()) throw Error(ErrorKind::insufficient_data, "group '" + label + "' is empty");
    for (double v : values) {
      if (std::isnan(v)) throw Error(ErrorKind::invalid_argument, "group '" + label + "' contains NaN");
      pooled.push_back(v);
      owner.push_back(g);
    }
    ++g;
  }
  const std::size_t k = groups.size();
  const std::size_t n = pooled.size();
  if (n < k + 1)
    throw Error(ErrorKind::insufficient_data, "Kruskal-Wallis needs more observations than groups");

  const auto ranks = midranks(pooled);
  std::vector<double> rank_sum(k, 0.0);
  std::vector<double> group_n(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    rank_sum[owner[i]] += ranks[i];
    group_n[owner[i]] += 1.0;
  }
  const double N = static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) sum += rank_sum[j] * rank_sum[j] / group_n[j];
  double h = 12.0 / (N * (N + 1.0)) * sum - 3.0 * (N + 1.0);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  KruskalResult out;
  out.df = k - 1;
  out.n = n;
  out.tie_correction = 1.0 - ties / (N * N * N - N);
  if (out.tie_correction <= 0.0) {
    // Every observation tied: no rank information at all.
    out.h = 0.0;
    out.p_value = 1.0;
    return out;
  }
  h /= out.tie_correction;
  out.h = std::max(h, 0.0);
  if (detail::multinomial(group_n) <= kKruskalExactLimit) {
    out.exact = true;
    out.p_value = detail::kruskal_exact_p(ranks, group_n, sum);
  } else {
    out.p_value = chi_square_sf(out.h, static_cast<double>(out.df));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Categorical design

/// A categorical predictor. The reference level gets no column.
struct Factor {
  std::string name;
  std::vector<std::string> levels;
  std::string reference;
  std::string title;  // table heading; defaults to the capitalized name

  std::string heading() const {
    if (!title.empty()) return title;
    std::string out = name;
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
  }
};

struct Observation {
  std::map<std::string, std::string> levels;  // factor name -> level
  double response = 0.0;
};

enum class ColumnKind { intercept, main, interaction };

struct DesignColumn {
  std::string name;   // level, or "levelA * levelB"
  std::string group;  // factor name, or "factorA * factorB"
  ColumnKind kind = ColumnKind::main;
};

struct DesignMatrix {
  std::vector<Factor> factors;
  std::vector<std::pair<std::string, std::string>> interactions;
  std::vector<DesignColumn> columns;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::string> warnings;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }

  std::ptrdiff_t column_index(std::string_view name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].name == name) return static_cast<std::ptrdiff_t>(j);
    return -1;
  }
};

/// Intercept, one dummy per non-reference level of each factor (factor
/// order, then level order), then the products of non-reference dummies for
/// each requested factor pair.
inline DesignMatrix encode_design(const std::vector<Observation>& observations, const std::vector<Factor>& factors,
                                  const std::vector<std::pair<std::string, std::string>>& interactions = {}) {
  DesignMatrix d;
  d.factors = factors;
  d.interactions = interactions;
  std::map<std::string, const Factor*> by_name;
  for (const auto& f : factors) {
    if (f.levels.empty()) throw Error(ErrorKind::invalid_argument, "factor '" + f.name + "' has no levels");
    if (std::find(f.levels.begin(), f.levels.end(), f.reference) == f.levels.end())
      throw Error(ErrorKind::unknown_category, "reference '" + f.reference + "' is not a level of '" + f.name + "'");
    if (!by_name.emplace(f.name, &f).second)
      throw Error(ErrorKind::invalid_argument, "factor '" + f.name + "' listed twice");
  }

  // column -> list of (factor, level) that must all hold for a 1
  std::vector<std::vector<std::pair<std::string, std::string>>> conditions;
  d.columns.push_back({"Intercept", "", ColumnKind::intercept});
  conditions.push_back({});
  for (const auto& f : factors)
    for (const auto& level : f.levels) {
      if (level == f.reference) continue;
      d.columns.push_back({level, f.name, ColumnKind::main});
      conditions.push_back({{f.name, level}});
    }
  for (const auto& [a, b] : interactions) {
    auto fa = by_name.find(a);
    auto fb = by_name.find(b);
    if (fa == by_name.end() || fb == by_name.end() || a == b)
      throw Error(ErrorKind::invalid_argument, "bad interaction '" + a + " * " + b + "'");
    for (const auto& la : fa->second->levels) {
      if (la == fa->second->reference) continue;
      for (const auto& lb : fb->second->levels) {
        if (lb == fb->second->reference) continue;
        d.columns.push_back({la + " * " + lb, a + " * " + b, ColumnKind::interaction});
        conditions.push_back({{a, la}, {b, lb}});
      }
    }
  }

  const auto n = static_cast<Eigen::Index>(observations.size());
  const auto k = static_cast<Eigen::Index>(d.columns.size());
  d.x = Eigen::MatrixXd::Zero(n, k);
  d.y.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& obs = observations[static_cast<std::size_t>(r)];
    for (const auto& f : factors) {
      auto it = obs.levels.find(f.name);
      if (it == obs.levels.end())
        throw Error(ErrorKind::unknown_category, "observation " + std::to_string(r) + " has no level for '" + f.name + "'");
      if (std::find(f.levels.begin(), f.levels.end(), it->second) == f.levels.end())
        throw Error(ErrorKind::unknown_category, "unknown level '" + it->second + "' for factor '" + f.name + "'");
    }
    d.y(r) = obs.response;
    for (Eigen::Index c = 0; c < k; ++c) {
      bool on = true;
      for (const auto& [factor, level] : conditions[static_cast<std::size_t>(c)])
        on = on && obs.levels.at(factor) == level;
      d.x(r, c) = on ? 1.0 : 0.0;
    }
  }
  for (Eigen::Index c = 1; c < k && n > 0; ++c) {
    const double first = d.x(0, c);
    if ((d.x.col(c).array() == first).all())
      d.warnings.push_back("column '" + d.columns[static_cast<std::size_t>(c)].name + "' is constant (" +
                           (first == 0.0 ? "all zero" : "all one") + "); the design may be rank deficient");
  }
  return d;
}

// ---------------------------------------------------------------------------
// OLS

struct OlsOptions {
  /// Drop identically zero non-intercept columns before fitting.
  bool drop_zero_columns = true;
};

struct RegressionFit {
  std::vector<DesignColumn> columns;  // after dropping
  std::vector<std::string> dropped;
  Eigen::VectorXd coef, se, t, p;
  std::vector<std::string> stars;
  std::size_t n = 0;
  std::size_t k = 0;
  double df_resid = 0.0;
  double sigma = 0.0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  double f = std::numeric_limits<double>::quiet_NaN();
  double f_p = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;

  double coefficient(std::string_view name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].name == name) return coef(static_cast<Eigen::Index>(j));
    throw Error(ErrorKind::invalid_argument, "no coefficient '" + std::string(name) + "'");
  }
};

/// Star code used in regression tables: "***" for p < 0.001, blank otherwise.
inline std::string star_code(double p) { return p < 0.001 ? "***" : ""; }

inline double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t) || df <= 0.0) return std::isinf(t) ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

/// Least squares through a column-pivoted Householder QR. Standard errors are
/// the classical homoskedastic ones; F tests against the intercept-only model.
inline RegressionFit ols_fit(const DesignMatrix& design, const OlsOptions& options = {}) {
  if (design.columns.empty() || design.columns.front().kind != ColumnKind::intercept)
    throw Error(ErrorKind::invalid_argument, "design must start with an intercept column");

  RegressionFit fit;
  std::vector<Eigen::Index> keep;
  for (std::size_t j = 0; j < design.columns.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    if (options.drop_zero_columns && j > 0 && (design.x.col(c).array() == 0.0).all()) {
      fit.dropped.push_back(design.columns[j].name);
      continue;
    }
    keep.push_back(c);
    fit.columns.push_back(design.columns[j]);
  }
  const auto n = design.x.rows();
  const auto k = static_cast<Eigen::Index>(keep.size());
  if (n < k)
    throw Error(ErrorKind::insufficient_data, "regression has " + std::to_string(n) + " rows for " +
                                                  std::to_string(k) + " columns");
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index j = 0; j < k; ++j) x.col(j) = design.x.col(keep[static_cast<std::size_t>(j)]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < k; ++j) {
      if (!names.empty()) names += ", ";
      names += "'" + fit.columns[static_cast<std::size_t>(perm(j))].name + "'";
    }
    throw Error(ErrorKind::rank_deficient, "design is rank deficient; collinear column(s): " + names);
  }

  fit.n = static_cast<std::size_t>(n);
  fit.k = static_cast<std::size_t>(k);
  fit.coef = qr.solve(design.y);
  fit.fitted = x * fit.coef;
  fit.residuals = design.y - fit.fitted;
  fit.df_resid = static_cast<double>(n - k);

  const double ssr = fit.residuals.squaredNorm();
  const double mean = design.y.mean();
  const double sst = (design.y.array() - mean).square().sum();
  fit.r2 = sst > 0.0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 0.0;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  fit.se = Eigen::VectorXd::Constant(k, nan);
  fit.t = Eigen::VectorXd::Constant(k, nan);
  fit.p = Eigen::VectorXd::Constant(k, nan);
  if (fit.df_resid > 0.0) {
    const double sigma2 = ssr / fit.df_resid;
    fit.sigma = std::sqrt(sigma2);
    // (X'X)^-1 = P R^-1 R^-T P'
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv =
        r.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::VectorXd diag_pivoted = r_inv.rowwise().squaredNorm();
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = 0; j < k; ++j) fit.se(perm(j)) = std::sqrt(sigma2 * diag_pivoted(j));
    for (Eigen::Index j = 0; j < k; ++j) {
      fit.t(j) = fit.coef(j) / fit.se(j);
      fit.p(j) = t_two_sided_p(fit.t(j), fit.df_resid);
    }
    fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (static_cast<double>(n) - 1.0) / fit.df_resid;
    const double df_model = static_cast<double>(k - 1);
    if (df_model > 0.0) {
      if (ssr == 0.0) {
        fit.f = std::numeric_limits<double>::infinity();
        fit.f_p = 0.0;
      } else {
        fit.f = ((sst - ssr) / df_model) / sigma2;
        boost::math::fisher_f dist(df_model, fit.df_resid);
        fit.f_p = fit.f > 0.0 ? boost::math::cdf(boost::math::complement(dist, fit.f)) : 1.0;
      }
    }
  } else {
    fit.r2 = 1.0;
    fit.adj_r2 = nan;
  }
  for (Eigen::Index j = 0; j < k; ++j) fit.stars.push_back(star_code(fit.p(j)));
  return fit;
}

}  // namespace assimlab
