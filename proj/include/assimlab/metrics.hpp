#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "assimlab/catalog.hpp"
#include "assimlab/error.hpp"
#include "assimlab/util.hpp"

namespace assimlab {

// ---------------------------------------------------------------------------
// Demographic proportions

struct DemographicProportions {
  DemographicAxis axis;
  std::vector<double> proportions;  // aligned with axis.categories

  double at(std::string_view category) const {
    for (std::size_t i = 0; i < axis.categories.size(); ++i)
      if (axis.categories[i] == category) return proportions[i];
    throw Error(ErrorKind::unknown_category, "no category '" + std::string(category) + "'");
  }
};

/// Share of each category within one axis. Categories absent from `counts`
/// count as zero; keys that are not categories of the axis are rejected.
inline DemographicProportions demographic_proportions(const std::map<std::string, double>& counts,
                                                      const DemographicAxis& axis) {
  axis.validate();
  for (const auto& [category, count] : counts) {
    if (!axis.has_category(category))
      throw Error(ErrorKind::category_mismatch, "category '" + category + "' is not part of axis '" +
                                                    std::string(axis.name()) + "'");
    if (!(count >= 0.0)) throw Error(ErrorKind::invalid_argument, "negative count for '" + category + "'");
  }
  DemographicProportions out{axis, {}};
  double total = 0.0;
  for (const auto& c : axis.categories) {
    auto it = counts.find(c);
    const double n = it == counts.end() ? 0.0 : it->second;
    out.proportions.push_back(n);
    total += n;
  }
  if (total <= 0.0)
    throw Error(ErrorKind::all_zero, "all counts are zero on axis '" + std::string(axis.name()) + "'");
  for (auto& p : out.proportions) p /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Interest ratios

/// Share of a population's interest declarations per catalog interest.
struct InterestRatioVector {
  std::string label;
  std::vector<std::string> ids;  // catalog order
  std::vector<double> ratios;
  /// Sum of the counts the ratios were normalized by.
  double total = 0.0;

  std::size_t size() const noexcept { return ids.size(); }

  double ratio(std::string_view id) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    if (it == ids.end() || *it != id) throw Error(ErrorKind::invalid_argument, "no interest '" + std::string(id) + "'");
    return ratios[static_cast<std::size_t>(it - ids.begin())];
  }
};

inline InterestRatioVector interest_ratios(const std::map<std::string, double>& counts,
                                           const InterestCatalog& catalog, std::string label = {}) {
  for (const auto& [id, count] : counts) {
    if (!catalog.contains(id))
      throw Error(ErrorKind::invalid_argument, "count for '" + id + "' which is not in the catalog");
    if (!(count >= 0.0)) throw Error(ErrorKind::invalid_argument, "negative count for '" + id + "'");
  }
  InterestRatioVector out{std::move(label), catalog.ids(), {}, 0.0};
  out.ratios.reserve(out.ids.size());
  for (const auto& id : out.ids) {
    auto it = counts.find(id);
    const double n = it == counts.end() ? 0.0 : it->second;
    out.ratios.push_back(n);
    out.total += n;
  }
  if (out.total <= 0.0)
    throw Error(ErrorKind::all_zero, "population '" + out.label + "' has no interest declarations");
  for (auto& r : out.ratios) r /= out.total;
  return out;
}

inline InterestRatioVector interest_ratios(const std::map<std::string, std::uint64_t>& counts,
                                           const InterestCatalog& catalog, std::string label = {}) {
  std::map<std::string, double> as_double;
  for (const auto& [id, n] : counts) as_double.emplace(id, static_cast<double>(n));
  return interest_ratios(as_double, catalog, std::move(label));
}

// ---------------------------------------------------------------------------
// Destination-distinct interest filter

/// Which interests the step-2 percentile is taken over.
enum class DeltaBase {
  step1_survivors,  // default
  all_interests,
};

struct FilterReport {
  std::vector<std::string> kept;
  std::vector<std::string> removed_step1;
  std::vector<std::string> removed_step2;
  /// dest - source for every interest, catalog order.
  std::vector<std::string> ids;
  std::vector<double> deltas;
  double percentile = 50.0;
  double threshold = 0.0;
  DeltaBase base = DeltaBase::step1_survivors;

  bool keeps(std::string_view id) const {
    return std::binary_search(kept.begin(), kept.end(), id);
  }
};

namespace detail {

inline void require_aligned(const InterestRatioVector& a, const InterestRatioVector& b) {
  if (a.ids != b.ids)
    throw Error(ErrorKind::invalid_argument,
                "ratio vectors '" + a.label + "' and '" + b.label + "' cover different catalogs");
}

}  // namespace detail

/// Step 1 drops interests with dest < source. Step 2 drops survivors whose
/// delta = dest - source is <= the p-th percentile of the deltas.
inline FilterReport filter_interests(const InterestRatioVector& dest, const InterestRatioVector& source,
                                     double p, DeltaBase base = DeltaBase::step1_survivors) {
  detail::require_aligned(dest, source);
  if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorKind::invalid_argument, "percentile must be in [0, 100]");
  FilterReport report;
  report.percentile = p;
  report.base = base;
  report.ids = dest.ids;
  report.deltas.resize(dest.size());
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < dest.size(); ++i) {
    report.deltas[i] = dest.ratios[i] - source.ratios[i];
    if (dest.ratios[i] < source.ratios[i])
      report.removed_step1.push_back(dest.ids[i]);
    else
      survivors.push_back(i);
  }
  if (survivors.empty())
    throw Error(ErrorKind::empty_filter, "no interest survives step 1 for '" + dest.label + "' vs '" + source.label + "'");

  std::vector<double> base_deltas;
  if (base == DeltaBase::step1_survivors) {
    for (auto i : survivors) base_deltas.push_back(report.deltas[i]);
  } else {
    base_deltas = report.deltas;
  }
  report.threshold = percentile(base_deltas, p);
  for (auto i : survivors) {
    if (report.deltas[i] <= report.threshold)
      report.removed_step2.push_back(dest.ids[i]);
    else
      report.kept.push_back(dest.ids[i]);
  }
  if (report.kept.empty())
    throw Error(ErrorKind::empty_filter, "filter leaves no destination-distinct interests for '" +
                                             dest.label + "' vs '" + source.label + "'");
  return report;
}

// ---------------------------------------------------------------------------
// Assimilation ratios

struct ArRow {
  std::string id;
  double expat_ratio = 0.0;
  double dest_ratio = 0.0;
  double ar = 0.0;
  double log_ar = 0.0;
  /// Expat ratio was zero and the floor was substituted.
  bool floored = false;
};

struct AssimilationReport {
  std::string expat;
  std::string dest;
  std::string source;
  std::vector<ArRow> rows;  // kept interests, catalog order
  double median_log_ar = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  FilterReport filter;

  std::vector<double> log_ars() const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.log_ar);
    return out;
  }
};

struct ArOptions {
  /// Share substituted for a zero expat ratio. Defaults to half of one
  /// declaration's share of the expat population.
  std::optional<double> zero_floor;
};

inline AssimilationReport assimilation_ratios(const InterestRatioVector& expat, const InterestRatioVector& dest,
                                              const FilterReport& filter, const ArOptions& options = {}) {
  detail::require_aligned(expat, dest);
  if (filter.ids != dest.ids)
    throw Error(ErrorKind::invalid_argument, "filter was built over a different catalog");
  if (filter.kept.empty()) throw Error(ErrorKind::empty_filter, "filter keeps no interests");
  const double floor = options.zero_floor.value_or(0.5 / expat.total);
  if (!(floor > 0.0)) throw Error(ErrorKind::invalid_argument, "zero floor must be positive");

  AssimilationReport report;
  report.expat = expat.label;
  report.dest = dest.label;
  report.filter = filter;
  for (std::size_t i = 0; i < dest.size(); ++i) {
    if (!filter.keeps(dest.ids[i])) continue;
    if (!(dest.ratios[i] > 0.0))
      throw Error(ErrorKind::invalid_argument, "kept interest '" + dest.ids[i] + "' has zero destination share");
    ArRow row{dest.ids[i], expat.ratios[i], dest.ratios[i], 0.0, 0.0, false};
    double share = row.expat_ratio;
    if (share <= 0.0) {
      share = floor;
      row.floored = true;
    }
    row.ar = share / row.dest_ratio;
    row.log_ar = std::log(row.ar);
    report.rows.push_back(std::move(row));
  }
  const auto values = report.log_ars();
  report.median_log_ar = median(values);
  report.ci_low = report.ci_high = report.median_log_ar;
  return report;
}

// ---------------------------------------------------------------------------
// Median with bootstrap CI

struct MedianCi {
  double median = 0.0;
  double low = 0.0;
  double high = 0.0;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
  /// Fewer than five values: the interval is not meaningful.
  bool degenerate = false;
};

/// Percentile bootstrap 95% interval for the median. The interval is widened
/// to contain the sample median if resampling misses it.
inline MedianCi median_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  if (values.empty()) throw Error(ErrorKind::insufficient_data, "median of no values");
  if (resamples == 0) throw Error(ErrorKind::invalid_argument, "bootstrap needs at least one resample");
  MedianCi out;
  out.median = median(values);
  out.resamples = resamples;
  out.seed = seed;
  out.degenerate = values.size() < 5;
  Rng rng(seed);
  std::vector<double> medians(resamples);
  std::vector<double> sample(values.size());
  for (auto& m : medians) {
    for (auto& s : sample) s = values[draw_index(rng, values.size())];
    m = median(sample);
  }
  out.low = std::min(percentile(medians, 2.5), out.median);
  out.high = std::max(percentile(medians, 97.5), out.median);
  return out;
}

inline MedianCi median_ar_ci(AssimilationReport& report, std::size_t resamples, std::uint64_t seed) {
  const auto values = report.log_ars();
  MedianCi ci = median_ci(values, resamples, seed);
  report.median_log_ar = ci.median;
  report.ci_low = ci.low;
  report.ci_high = ci.high;
  return ci;
}

// ---------------------------------------------------------------------------
// Proxy validation

inline constexpr double kKlSmoothing = 1e-9;

/// KL(p || q) after adding `eps` to every cell of both and renormalizing.
inline double smoothed_kl(std::span<const double> p, std::span<const double> q, double eps = kKlSmoothing) {
  if (p.size() != q.size() || p.empty())
    throw Error(ErrorKind::category_mismatch, "KL needs two distributions over the same categories");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i] + eps;
    sq += q[i] + eps;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + eps) / sp;
    const double qi = (q[i] + eps) / sq;
    kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

struct AxisKl {
  std::string axis;
  double kl = 0.0;
  /// A zero cell was present and only smoothing kept the divergence finite.
  bool smoothed = false;
};

struct ProxyValidation {
  std::vector<AxisKl> axes;
  double observed_kl = 0.0;  // summed over axes
  std::vector<double> baseline;  // one summed KL per random draw
  double baseline_mean = 0.0;
  double baseline_p5 = 0.0;
  /// Fraction of baseline draws with KL <= observed.
  double quantile = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  bool pass = false;  // observed below the baseline's 5th percentile
};

/// Flat Dirichlet draw (uniform on the simplex).
inline std::vector<double> draw_uniform_simplex(Rng& rng, std::size_t k) {
  std::vector<double> out(k);
  double total = 0.0;
  for (auto& v : out) total += (v = draw_exponential(rng));
  for (auto& v : out) v /= total;
  return out;
}

inline ProxyValidation validate_proxy(std::span<const DemographicProportions> estimated,
                                      std::span<const DemographicProportions> ground_truth,
                                      std::size_t trials, std::uint64_t seed) {
  if (estimated.size() != ground_truth.size() || estimated.empty())
    throw Error(ErrorKind::category_mismatch, "estimated and ground truth must cover the same axes");
  if (trials == 0) throw Error(ErrorKind::invalid_argument, "validation needs at least one baseline trial");
  for (std::size_t a = 0; a < estimated.size(); ++a) {
    if (estimated[a].axis.axis != ground_truth[a].axis.axis ||
        estimated[a].axis.categories != ground_truth[a].axis.categories)
      throw Error(ErrorKind::category_mismatch,
                  "axis '" + std::string(estimated[a].axis.name()) + "' categories differ from ground truth");
  }

  ProxyValidation out;
  out.trials = trials;
  out.seed = seed;
  for (std::size_t a = 0; a < estimated.size(); ++a) {
    const auto& p = estimated[a].proportions;
    const auto& q = ground_truth[a].proportions;
    AxisKl axis{std::string(estimated[a].axis.name()), smoothed_kl(p, q), false};
    for (std::size_t i = 0; i < p.size(); ++i) axis.smoothed |= (p[i] == 0.0 || q[i] == 0.0);
    out.observed_kl += axis.kl;
    out.axes.push_back(std::move(axis));
  }

  Rng rng(seed);
  out.baseline.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    double kl = 0.0;
    for (const auto& gt : ground_truth) kl += smoothed_kl(draw_uniform_simplex(rng, gt.proportions.size()), gt.proportions);
    out.baseline.push_back(kl);
  }
  double sum = 0.0;
  std::size_t below = 0;
  for (double b : out.baseline) {
    sum += b;
    below += b <= out.observed_kl;
  }
  out.baseline_mean = sum / static_cast<double>(trials);
  out.baseline_p5 = percentile(out.baseline, 5.0);
  out.quantile = static_cast<double>(below) / static_cast<double>(trials);
  out.pass = out.observed_kl < out.baseline_p5;
  return out;
}

// ---------------------------------------------------------------------------
// Kernel density

enum class BandwidthRule { silverman, scott, fixed };

struct Bandwidth {
  BandwidthRule rule = BandwidthRule::silverman;
  double value = 0.0;  // used by fixed
};

struct GridSpec {
  std::optional<double> lo;
  std::optional<double> hi;
  std::size_t points = 512;
};

struct DensityCurve {
  std::vector<double> x;
  std::vector<double> y;
  double bandwidth = 0.0;
};

inline double select_bandwidth(std::span<const double> values, const Bandwidth& rule) {
  if (values.size() < 2) throw Error(ErrorKind::insufficient_data, "bandwidth needs at least two values");
  if (rule.rule == BandwidthRule::fixed) {
    if (!(rule.value > 0.0)) throw Error(ErrorKind::invalid_argument, "fixed bandwidth must be positive");
    return rule.value;
  }
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw Error(ErrorKind::zero_variance, "all values are identical");
  if (rule.rule == BandwidthRule::scott) return 1.06 * sd * std::pow(n, -0.2);
  const double iqr = percentile(values, 75.0) - percentile(values, 25.0);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(n, -0.2);
}

/// Gaussian KDE on an evenly spaced grid. The default grid spans five
/// bandwidths beyond the data and is fine enough for trapezoid integration.
inline DensityCurve kde_density(std::span<const double> values, const Bandwidth& rule = {},
                                const GridSpec& grid = {}) {
  if (values.size() < 2) throw Error(ErrorKind::insufficient_data, "KDE needs at least two values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (*mn == *mx) throw Error(ErrorKind::zero_variance, "all values are identical");
  DensityCurve curve;
  curve.bandwidth = select_bandwidth(values, rule);
  const double h = curve.bandwidth;
  const double lo = grid.lo.value_or(*mn - 5.0 * h);
  const double hi = grid.hi.value_or(*mx + 5.0 * h);
  if (!(hi > lo)) throw Error(ErrorKind::invalid_argument, "empty KDE grid");
  std::size_t points = std::max<std::size_t>(grid.points, 2);
  if (!grid.lo && !grid.hi) {
    const auto needed = static_cast<std::size_t>(std::ceil((hi - lo) / (h / 4.0))) + 1;
    points = std::max(points, std::min<std::size_t>(needed, 100'000));
  }
  const double norm = 1.0 / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * M_PI));
  curve.x.resize(points);
  curve.y.resize(points);
  for (std::size_t k = 0; k < points; ++k) {
    const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
    double sum = 0.0;
    for (double v : values) {
      const double z = (x - v) / h;
      sum += std::exp(-0.5 * z * z);
    }
    curve.x[k] = x;
    curve.y[k] = sum * norm;
  }
  return curve;
}

inline double trapezoid_mass(const DensityCurve& curve) {
  double mass = 0.0;
  for (std::size_t k = 1; k < curve.x.size(); ++k)
    mass += 0.5 * (curve.y[k] + curve.y[k - 1]) * (curve.x[k] - curve.x[k - 1]);
  return mass;
}

// ---------------------------------------------------------------------------
// Top-k

struct RankedInterest {
  std::string id;
  double ratio = 0.0;

  friend bool operator==(const RankedInterest&, const RankedInterest&) = default;
};

/// Highest ratios first, ties by id.
inline std::vector<RankedInterest> top_k_interests(const InterestRatioVector& ratios, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "k must be at least 1");
  std::vector<RankedInterest> ranked;
  ranked.reserve(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) ranked.push_back({ratios.ids[i], ratios.ratios[i]});
  std::sort(ranked.begin(), ranked.end(), [](const RankedInterest& a, const RankedInterest& b) {
    return a.ratio != b.ratio ? a.ratio > b.ratio : a.id < b.id;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

}  // namespace assimlab
