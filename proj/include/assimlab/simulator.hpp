#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "assimlab/audience.hpp"
#include "assimlab/catalog.hpp"
#include "assimlab/error.hpp"
#include "assimlab/metrics.hpp"
#include "assimlab/util.hpp"
#include "assimlab/wire.hpp"

namespace assimlab {

/// Ground-truth attributes shared by every person in a subgroup. Empty
/// strings mean "not set"; an empty expat_origin means the person lives in
/// their country of origin.
struct Traits {
  std::string affinity;
  std::string home_country;
  std::string expat_origin;
  std::string language;
  std::string location;
  std::map<Axis, std::string> demographics;  // never holds Axis::language

  void set(Axis axis, std::string category) {
    if (axis == Axis::language)
      language = std::move(category);
    else
      demographics[axis] = std::move(category);
  }

  friend bool operator==(const Traits&, const Traits&) = default;
};

struct Subgroup {
  std::string name;
  Traits traits;
  std::uint64_t size = 0;
  /// Probability that a member declares each interest.
  std::map<std::string, double> interests;
};

enum class DeclarationMode {
  /// Exactly round(size * p) members declare, chosen by a seeded permutation.
  quota,
  /// Independent seeded coin flips per member.
  stochastic,
};

struct WorldOptions {
  std::optional<int> rounding;  // significant digits
  std::optional<std::uint64_t> floor;
  DeclarationMode mode = DeclarationMode::quota;
};

/// Rounds to `digits` significant digits, halves away from zero.
inline std::uint64_t round_significant(std::uint64_t raw, int digits) {
  if (digits <= 0) throw Error(ErrorKind::invalid_argument, "rounding needs at least one significant digit");
  int width = 0;
  for (std::uint64_t v = raw; v > 0; v /= 10) ++width;
  if (width <= digits) return raw;
  std::uint64_t unit = 1;
  for (int i = 0; i < width - digits; ++i) unit *= 10;
  return (raw / unit + (raw % unit >= unit - unit / 2 ? 1 : 0)) * unit;
}

/// Keyed bijection on [0, n): a balanced Feistel network with cycle walking.
class KeyedPermutation {
 public:
  KeyedPermutation(std::uint64_t n, std::uint64_t key) : n_(n), key_(key) {
    int bits = 1;
    while (bits < 64 && (std::uint64_t{1} << bits) < n) ++bits;
    half_bits_ = (bits + 1) / 2;
    mask_ = (std::uint64_t{1} << half_bits_) - 1;
  }

  std::uint64_t operator()(std::uint64_t x) const {
    do {
      x = encrypt(x);
    } while (x >= n_);
    return x;
  }

 private:
  std::uint64_t encrypt(std::uint64_t x) const {
    std::uint64_t left = (x >> half_bits_) & mask_;
    std::uint64_t right = x & mask_;
    for (std::uint64_t round = 0; round < 4; ++round) {
      const std::uint64_t f = mix64(key_ ^ (round << 56) ^ right) & mask_;
      std::swap(left, right);
      right ^= f;
    }
    return (left << half_bits_) | right;
  }

  std::uint64_t n_;
  std::uint64_t key_;
  int half_bits_ = 1;
  std::uint64_t mask_ = 1;
};

/// A seeded synthetic population that answers reach queries exactly.
/// Read-only after construction; safe to query concurrently.
class SyntheticWorld {
 public:
  static constexpr std::uint64_t kMaxStochasticSubgroup = 50'000'000;

  SyntheticWorld() = default;

  SyntheticWorld(std::uint64_t seed, std::vector<Subgroup> subgroups, WorldOptions options = {})
      : seed_(seed), subgroups_(std::move(subgroups)), options_(options) {
    if (options_.rounding && *options_.rounding <= 0)
      throw Error(ErrorKind::invalid_argument, "rounding needs at least one significant digit");
    for (std::size_t s = 0; s < subgroups_.size(); ++s) {
      const auto& g = subgroups_[s];
      if (g.size == 0) throw Error(ErrorKind::invalid_argument, "subgroup '" + g.name + "' is empty");
      if (g.traits.demographics.contains(Axis::language))
        throw Error(ErrorKind::invalid_argument, "subgroup '" + g.name + "': language belongs in traits.language");
      total_ += g.size;
      register_traits(g.traits);
      for (const auto& [interest, p] : g.interests) {
        if (!(p >= 0.0 && p <= 1.0))
          throw Error(ErrorKind::invalid_argument,
                      "subgroup '" + g.name + "': probability for '" + interest + "' outside [0, 1]");
        interests_.insert(interest);
      }
    }
    if (options_.mode == DeclarationMode::stochastic)
      for (const auto& g : subgroups_)
        if (g.size > kMaxStochasticSubgroup)
          throw Error(ErrorKind::invalid_argument, "stochastic mode scans every person; subgroup '" + g.name + "' is too large");
    declared_.resize(subgroups_.size());
    for (std::size_t s = 0; s < subgroups_.size(); ++s) {
      const auto& g = subgroups_[s];
      for (const auto& [interest, p] : g.interests) {
        std::uint64_t n = 0;
        if (options_.mode == DeclarationMode::quota) {
          n = quota(g.size, p);
        } else {
          for (std::uint64_t j = 0; j < g.size; ++j) n += declares(s, interest, p, j);
        }
        declared_[s][interest] = n;
      }
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Subgroup>& subgroups() const noexcept { return subgroups_; }
  const WorldOptions& options() const noexcept { return options_; }
  std::uint64_t total_population() const noexcept { return total_; }
  const std::set<std::string>& interests() const noexcept { return interests_; }

  /// Makes category labels valid targeting values even when no subgroup
  /// carries them (they simply count zero).
  void register_axis(const DemographicAxis& axis) {
    for (const auto& c : axis.categories) {
      if (axis.axis == Axis::language)
        languages_.insert(c);
      else
        axis_values_[axis.axis].insert(c);
    }
  }

  /// Throws invalid_targeting when the query uses a value the world has
  /// never heard of.
  void check_targeting(const AudienceQuery& query) const {
    const auto& spec = query.spec;
    auto check = [](const std::set<std::string>& known, const std::string& value, std::string_view what) {
      if (!known.contains(value))
        throw Error(ErrorKind::invalid_targeting, "unknown " + std::string(what) + " '" + value + "'");
    };
    if (spec.ethnic_affinity) check(affinities_, *spec.ethnic_affinity, "ethnic affinity");
    if (spec.home_country) check(countries_, *spec.home_country, "home country");
    if (spec.expat_status == ExpatStatus::expat) check(countries_, spec.expat_origin, "expat origin");
    if (spec.language) check(languages_, *spec.language, "language");
    if (spec.locations)
      for (const auto& l : *spec.locations) check(locations_, l, "location");
    for (const auto& [axis, category] : spec.demographics) {
      auto it = axis_values_.find(axis);
      if (it == axis_values_.end() || !it->second.contains(category))
        throw Error(ErrorKind::invalid_targeting,
                    "unknown " + std::string(to_string(axis)) + " category '" + category + "'");
    }
    for (const auto& i : spec.interests_required) check(interests_, i, "interest");
    if (query.interest) check(interests_, *query.interest, "interest");
  }

  static bool matches(const PopulationSpec& spec, const Traits& t) {
    if (spec.ethnic_affinity && *spec.ethnic_affinity != t.affinity) return false;
    if (spec.home_country && *spec.home_country != t.home_country) return false;
    if (spec.expat_status == ExpatStatus::non_expat && !t.expat_origin.empty()) return false;
    if (spec.expat_status == ExpatStatus::expat && spec.expat_origin != t.expat_origin) return false;
    if (spec.language && *spec.language != t.language) return false;
    if (spec.locations && !spec.locations->contains(t.location)) return false;
    for (const auto& [axis, category] : spec.demographics) {
      auto it = t.demographics.find(axis);
      if (it == t.demographics.end() || it->second != category) return false;
    }
    return true;
  }

  /// Exact number of matching persons, before rounding and floor.
  std::uint64_t raw_count(const AudienceQuery& query) const {
    check_targeting(query);
    std::vector<std::string> required(query.spec.interests_required.begin(), query.spec.interests_required.end());
    if (query.interest && !query.spec.interests_required.contains(*query.interest))
      required.push_back(*query.interest);

    std::uint64_t total = 0;
    for (std::size_t s = 0; s < subgroups_.size(); ++s) {
      const auto& g = subgroups_[s];
      if (!matches(query.spec, g.traits)) continue;
      if (required.empty()) {
        total += g.size;
        continue;
      }
      std::vector<std::pair<const std::string*, double>> probs;
      bool impossible = false;
      for (const auto& id : required) {
        auto it = g.interests.find(id);
        if (it == g.interests.end() || it->second == 0.0) {
          impossible = true;
          break;
        }
        probs.emplace_back(&it->first, it->second);
      }
      if (impossible) continue;
      if (probs.size() == 1) {
        total += declared_[s].at(*probs.front().first);
        continue;
      }
      for (std::uint64_t j = 0; j < g.size; ++j) {
        bool all = true;
        for (const auto& [id, p] : probs)
          if (!declares(s, *id, p, j)) {
            all = false;
            break;
          }
        total += all;
      }
    }
    return total;
  }

  /// Raw count with the world's rounding and floor applied.
  ReachResult count(const AudienceQuery& query) const {
    ReachResult out{raw_count(query), false};
    if (options_.rounding) out.count = round_significant(out.count, *options_.rounding);
    if (options_.floor && out.count < *options_.floor) {
      out.count = *options_.floor;
      out.clamped = true;
    }
    return out;
  }

  /// Expected (unsampled) number of declarations of `interest` among persons
  /// matching `spec`. Specs with required interests are not supported.
  double expected_declarations(const PopulationSpec& spec, const std::string& interest) const {
    if (!spec.interests_required.empty())
      throw Error(ErrorKind::invalid_argument, "expected counts need specs without required interests");
    double total = 0.0;
    for (const auto& g : subgroups_) {
      if (!matches(spec, g.traits)) continue;
      auto it = g.interests.find(interest);
      if (it != g.interests.end()) total += static_cast<double>(g.size) * it->second;
    }
    return total;
  }

  std::uint64_t matching_persons(const PopulationSpec& spec) const {
    std::uint64_t total = 0;
    for (const auto& g : subgroups_)
      if (matches(spec, g.traits)) total += g.size;
    return total;
  }

 private:
  static std::uint64_t quota(std::uint64_t size, double p) {
    return static_cast<std::uint64_t>(std::llround(static_cast<long double>(size) * p));
  }

  std::uint64_t stream_key(std::size_t subgroup, const std::string& interest) const {
    return mix64(seed_ ^ mix64(subgroup + 1) ^ fnv1a64(interest));
  }

  bool declares(std::size_t s, const std::string& interest, double p, std::uint64_t person) const {
    const std::uint64_t key = stream_key(s, interest);
    if (options_.mode == DeclarationMode::quota) {
      const auto& g = subgroups_[s];
      return KeyedPermutation(g.size, key)(person) < quota(g.size, p);
    }
    return static_cast<double>(mix64(key ^ person) >> 11) * 0x1.0p-53 < p;
  }

  void register_traits(const Traits& t) {
    if (!t.affinity.empty()) affinities_.insert(t.affinity);
    if (!t.home_country.empty()) countries_.insert(t.home_country);
    if (!t.expat_origin.empty()) countries_.insert(t.expat_origin);
    if (!t.language.empty()) languages_.insert(t.language);
    if (!t.location.empty()) locations_.insert(t.location);
    for (const auto& [axis, category] : t.demographics) axis_values_[axis].insert(category);
  }

  std::uint64_t seed_ = 0;
  std::vector<Subgroup> subgroups_;
  WorldOptions options_;
  std::uint64_t total_ = 0;
  std::vector<std::map<std::string, std::uint64_t>> declared_;
  std::set<std::string> interests_;
  std::set<std::string> affinities_, countries_, languages_, locations_;
  std::map<Axis, std::set<std::string>> axis_values_;
};

inline AudienceCount serve_count(const SyntheticWorld& world, const AudienceQuery& query, Clock& clock) {
  const ReachResult r = world.count(query);
  return {query, r.count, r.clamped, clock.now_ms(), "sim"};
}

class SimulatorBackend final : public CountBackend {
 public:
  explicit SimulatorBackend(const SyntheticWorld& world) : world_(world) {}
  Served serve(const AudienceQuery& query) override { return {world_.count(query), "sim"}; }
  std::string label() const override { return "sim"; }

 private:
  const SyntheticWorld& world_;
};

/// Spec selecting exactly the persons carrying `traits` (unset fields are
/// left unconstrained).
inline PopulationSpec spec_for_traits(const Traits& t, std::string label) {
  PopulationSpec spec;
  spec.label = std::move(label);
  if (!t.affinity.empty()) spec.ethnic_affinity = t.affinity;
  if (!t.home_country.empty()) spec.home_country = t.home_country;
  if (t.expat_origin.empty()) {
    spec.expat_status = ExpatStatus::non_expat;
  } else {
    spec.expat_status = ExpatStatus::expat;
    spec.expat_origin = t.expat_origin;
  }
  if (!t.language.empty()) spec.language = t.language;
  if (!t.location.empty()) spec.locations = std::set<std::string>{t.location};
  spec.demographics = t.demographics;
  return spec;
}

// ---------------------------------------------------------------------------
// Planted scenarios

struct PlantedCell {
  std::vector<std::pair<Axis, std::string>> selectors;
  double weight = 1.0;
  /// Added to every planted log AR inside this cell.
  double log_ar_shift = 0.0;
};

struct PlantedExpatGroup {
  std::string label;
  Traits traits;
  /// Planted log AR per interest. Entries for destination-distinct interests
  /// are binding; the rest only weight how leftover share is spread.
  std::map<std::string, double> log_ar;
  std::vector<PlantedCell> cells;  // empty = one undivided subgroup
};

struct PlantedOrigin {
  std::string name;
  std::string source_label;
  Traits source_traits;
  std::map<std::string, double> source_shares;
  std::vector<PlantedExpatGroup> expats;
};

struct PlantedScenario {
  std::vector<std::string> interests;
  std::string dest_label = "destination";
  Traits dest_traits;
  std::map<std::string, double> dest_shares;
  std::vector<PlantedOrigin> origins;
  double percentile = 50.0;
  /// Persons per planted population. Large enough that integer quotas
  /// reproduce planted ratios to ~1e-13; must stay below 2^53.
  std::uint64_t scale = std::uint64_t{1} << 50;
  std::vector<Subgroup> background;
  std::vector<DemographicAxis> axes = default_axes();
  WorldOptions options;
};

struct PlantedPopulations {
  PopulationSpec destination;
  struct Origin {
    std::string name;
    PopulationSpec source;
    std::vector<PopulationSpec> expats;
  };
  std::vector<Origin> origins;
};

inline PlantedPopulations planted_populations(const PlantedScenario& scenario) {
  PlantedPopulations out;
  out.destination = spec_for_traits(scenario.dest_traits, scenario.dest_label);
  for (const auto& o : scenario.origins) {
    PlantedPopulations::Origin origin{o.name, spec_for_traits(o.source_traits, o.source_label), {}};
    for (const auto& e : o.expats) origin.expats.push_back(spec_for_traits(e.traits, e.label));
    out.origins.push_back(std::move(origin));
  }
  return out;
}

namespace detail {

/// Integer quotas for `shares` over `size` persons summing exactly to
/// round(size * sum(shares)); the rounding residue goes to `absorb`.
inline std::vector<std::uint64_t> exact_quotas(const std::vector<double>& shares, std::uint64_t size,
                                               std::size_t absorb) {
  std::vector<std::uint64_t> q(shares.size());
  long double wanted = 0.0L;
  std::int64_t have = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    q[i] = static_cast<std::uint64_t>(std::llround(static_cast<long double>(size) * shares[i]));
    wanted += static_cast<long double>(size) * shares[i];
    have += static_cast<std::int64_t>(q[i]);
  }
  const std::int64_t residue = std::llround(wanted) - have;
  if (residue != 0) {
    const auto fixed = static_cast<std::int64_t>(q[absorb]) + residue;
    if (fixed < 0) throw Error(ErrorKind::infeasible_scenario, "cannot absorb quota rounding residue");
    q[absorb] = static_cast<std::uint64_t>(fixed);
  }
  return q;
}

inline std::vector<double> normalized_shares(const std::vector<std::string>& ids,
                                             const std::map<std::string, double>& shares,
                                             const std::string& what) {
  for (const auto& [id, s] : shares)
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      throw Error(ErrorKind::invalid_argument, what + " share for unknown interest '" + id + "'");
  std::vector<double> out;
  double total = 0.0;
  for (const auto& id : ids) {
    auto it = shares.find(id);
    const double s = it == shares.end() ? 0.0 : it->second;
    if (!(s >= 0.0)) throw Error(ErrorKind::invalid_argument, what + " share for '" + id + "' is negative");
    out.push_back(s);
    total += s;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::infeasible_scenario, what + " has no interest share");
  for (auto& s : out) s /= total;
  return out;
}

inline std::size_t argmax(const std::vector<double>& v, const std::vector<bool>& allowed) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (allowed[i] && (best == v.size() || v[i] > v[best])) best = i;
  return best;
}

inline Subgroup subgroup_from_quotas(std::string name, Traits traits, std::uint64_t size,
                                     const std::vector<std::string>& ids, const std::vector<std::uint64_t>& q) {
  Subgroup g{std::move(name), std::move(traits), size, {}};
  for (std::size_t i = 0; i < ids.size(); ++i)
    g.interests[ids[i]] = static_cast<double>(static_cast<long double>(q[i]) / static_cast<long double>(size));
  return g;
}

}  // namespace detail

/// Builds a world whose exact interest shares reproduce the planted AR values
/// on the destination-distinct interests of every origin.
inline SyntheticWorld generate_world(const PlantedScenario& scenario, std::uint64_t seed) {
  const auto& ids = scenario.interests;
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "scenario declares no interests");
  if (scenario.scale == 0 || scenario.scale > (std::uint64_t{1} << 52))
    throw Error(ErrorKind::invalid_argument, "scenario scale must be in [1, 2^52]");
  const auto catalog = InterestCatalog::from_ids(ids);
  // Work in catalog (sorted) order throughout.
  const auto sorted_ids = catalog.ids();
  const std::size_t n = sorted_ids.size();
  const std::vector<bool> all(n, true);

  std::vector<Subgroup> groups = scenario.background;

  const auto dest_shares = detail::normalized_shares(sorted_ids, scenario.dest_shares, "destination");
  const auto dest_q = detail::exact_quotas(dest_shares, scenario.scale, detail::argmax(dest_shares, all));
  groups.push_back(detail::subgroup_from_quotas(scenario.dest_label, scenario.dest_traits, scenario.scale,
                                                sorted_ids, dest_q));
  std::map<std::string, double> dest_exact;
  for (std::size_t i = 0; i < n; ++i) dest_exact[sorted_ids[i]] = static_cast<double>(dest_q[i]);
  const auto dest_ratios = interest_ratios(dest_exact, catalog, scenario.dest_label);

  for (const auto& origin : scenario.origins) {
    const auto source_shares = detail::normalized_shares(sorted_ids, origin.source_shares, origin.name + " source");
    const auto source_q =
        detail::exact_quotas(source_shares, scenario.scale, detail::argmax(source_shares, all));
    groups.push_back(detail::subgroup_from_quotas(origin.source_label, origin.source_traits, scenario.scale,
                                                  sorted_ids, source_q));
    std::map<std::string, double> source_exact;
    for (std::size_t i = 0; i < n; ++i) source_exact[sorted_ids[i]] = static_cast<double>(source_q[i]);
    // Planted values are checked before filtering so an impossible AR is
    // reported as such even when the filter would come out empty.
    for (const auto& group : origin.expats) {
      for (const auto& [id, l] : group.log_ar) {
        if (!catalog.contains(id))
          throw Error(ErrorKind::invalid_argument, "planted AR for unknown interest '" + id + "'");
        if (!std::isfinite(l)) throw Error(ErrorKind::infeasible_scenario, "planted log AR must be finite");
        const auto i = static_cast<std::size_t>(
            std::lower_bound(sorted_ids.begin(), sorted_ids.end(), id) - sorted_ids.begin());
        for (const auto& cell : group.cells.empty() ? std::vector<PlantedCell>{PlantedCell{}} : group.cells) {
          const double ar = std::exp(l + cell.log_ar_shift);
          const double share = ar * dest_ratios.ratios[i];
          if (share > 1.0)
            throw Error(ErrorKind::infeasible_scenario, "planted AR " + format_double(ar) + " for '" + id +
                                                            "' needs expat share " + format_double(share) + " > 1");
        }
      }
    }
    const auto filter =
        filter_interests(dest_ratios, interest_ratios(source_exact, catalog, origin.source_label), scenario.percentile);

    for (const auto& group : origin.expats) {
      std::vector<PlantedCell> cells = group.cells;
      if (cells.empty()) cells.push_back({});
      double weight_total = 0.0;
      for (const auto& c : cells) {
        if (!(c.weight > 0.0)) throw Error(ErrorKind::invalid_argument, "cell weights must be positive");
        weight_total += c.weight;
      }
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = cells[c];
        std::vector<double> expat_shares(n, 0.0);
        std::vector<bool> free(n, false);
        double kept_mass = 0.0;
        double free_mass = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& id = sorted_ids[i];
          auto it = group.log_ar.find(id);
          const double ar = std::exp((it == group.log_ar.end() ? 0.0 : it->second) + cell.log_ar_shift);
          const double share = ar * dest_ratios.ratios[i];
          if (it != group.log_ar.end() && share > 1.0)
            throw Error(ErrorKind::infeasible_scenario,
                        "planted AR " + format_double(ar) + " for '" + id + "' needs expat share " +
                            format_double(share) + " > 1");
          if (filter.keeps(id)) {
            if (it == group.log_ar.end())
              throw Error(ErrorKind::infeasible_scenario, "group '" + group.label +
                                                              "' has no planted AR for destination-distinct interest '" +
                                                              id + "'");
            expat_shares[i] = share;
            kept_mass += share;
          } else {
            expat_shares[i] = share;
            free[i] = share > 0.0;
            free_mass += share;
          }
        }
        if (kept_mass > 1.0 + 1e-12)
          throw Error(ErrorKind::infeasible_scenario,
                      "planted ARs of group '" + group.label + "' need expat shares summing to " +
                          format_double(kept_mass) + " > 1");
        const double leftover = std::max(0.0, 1.0 - kept_mass);
        if (leftover > 0.0 && free_mass <= 0.0)
          throw Error(ErrorKind::infeasible_scenario,
                      "group '" + group.label + "' has no free interests to absorb the remaining share");
        for (std::size_t i = 0; i < n; ++i)
          if (!filter.keeps(sorted_ids[i]))
            expat_shares[i] = free_mass > 0.0 ? expat_shares[i] * leftover / free_mass : 0.0;

        const auto size = static_cast<std::uint64_t>(
            std::llround(static_cast<long double>(scenario.scale) * cell.weight / weight_total));
        if (size == 0) throw Error(ErrorKind::infeasible_scenario, "cell of group '" + group.label + "' is empty");
        std::size_t absorb = detail::argmax(expat_shares, free);
        if (absorb == n) absorb = detail::argmax(expat_shares, all);
        const auto q = detail::exact_quotas(expat_shares, size, absorb);
        Traits traits = group.traits;
        for (const auto& [axis, category] : cell.selectors) traits.set(axis, category);
        std::string name = group.label;
        if (!cell.selectors.empty()) name += " | " + cell_label(cell.selectors);
        groups.push_back(detail::subgroup_from_quotas(std::move(name), std::move(traits), size, sorted_ids, q));
      }
    }
  }

  SyntheticWorld world(seed, std::move(groups), scenario.options);
  for (const auto& axis : scenario.axes) world.register_axis(axis);
  return world;
}

struct OracleAssimilation {
  FilterReport filter;
  std::map<std::string, double> ar;  // kept interests only
};

/// Ground-truth AR from the world's exact declaration probabilities,
/// bypassing quotas, sampling and rounding.
inline OracleAssimilation oracle_assimilation(const SyntheticWorld& world, const PopulationSpec& expat,
                                              const PopulationSpec& dest, const PopulationSpec& source,
                                              const InterestCatalog& catalog, double p) {
  for (const auto* spec : {&expat, &dest, &source})
    if (world.matching_persons(*spec) == 0)
      throw Error(ErrorKind::invalid_argument, "population '" + spec->label + "' does not exist in the world");
  auto expected = [&](const PopulationSpec& spec) {
    std::map<std::string, double> counts;
    for (const auto& i : catalog.interests()) counts[i.id] = world.expected_declarations(spec, i.id);
    return interest_ratios(counts, catalog, spec.label);
  };
  const auto e = expected(expat);
  const auto d = expected(dest);
  const auto s = expected(source);
  OracleAssimilation out{filter_interests(d, s, p), {}};
  for (std::size_t i = 0; i < catalog.size(); ++i)
    if (out.filter.keeps(d.ids[i])) out.ar[d.ids[i]] = e.ratios[i] / d.ratios[i];
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files (JSON)

inline Traits traits_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "traits must be an object");
  Traits t;
  for (const auto& [key, value] : j.items()) {
    const auto v = detail::require_string(value, key.c_str());
    if (key == "affinity") t.affinity = v;
    else if (key == "home_country") t.home_country = v;
    else if (key == "expat_origin") t.expat_origin = v;
    else if (key == "language") t.language = v;
    else if (key == "location") t.location = v;
    else t.set(parse_axis(key), v);
  }
  return t;
}

inline Json traits_to_json(const Traits& t) {
  Json j = Json::object();
  if (!t.affinity.empty()) j["affinity"] = t.affinity;
  if (!t.home_country.empty()) j["home_country"] = t.home_country;
  if (!t.expat_origin.empty()) j["expat_origin"] = t.expat_origin;
  if (!t.language.empty()) j["language"] = t.language;
  if (!t.location.empty()) j["location"] = t.location;
  for (const auto& [axis, c] : t.demographics) j[std::string(to_string(axis))] = c;
  return j;
}

inline std::map<std::string, double> number_map(const Json& j, const char* what) {
  if (!j.is_object()) throw Error(ErrorKind::parse, std::string(what) + " must be an object");
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorKind::parse, std::string(what) + "." + k + " must be a number");
    out[k] = v.get<double>();
  }
  return out;
}

struct ScenarioFile {
  std::uint64_t seed = 0;
  PlantedScenario scenario;
};

/// Scenario document:
/// {"seed": N, "rounding": d|null, "floor": N|null, "mode": "quota"|"stochastic",
///  "interests": [..], "subgroups": [{"name","traits","size","interests":{id:p}}],
///  "planted": {"scale","percentile","destination":{"label","traits","shares"},
///              "origins":[{"name","source":{"label","traits","shares"},
///                          "expats":[{"label","traits","log_ar",
///                                     "cells":[{"selectors","weight","log_ar_shift"}]}]}]}}
inline ScenarioFile scenario_from_json(const Json& j) {
  try {
    ScenarioFile file;
    auto& sc = file.scenario;
    file.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("rounding") && !j.at("rounding").is_null()) sc.options.rounding = j.at("rounding").get<int>();
    if (j.contains("floor") && !j.at("floor").is_null()) sc.options.floor = j.at("floor").get<std::uint64_t>();
    const auto mode = j.value("mode", std::string("quota"));
    if (mode == "stochastic") sc.options.mode = DeclarationMode::stochastic;
    else if (mode != "quota") throw Error(ErrorKind::parse, "unknown declaration mode '" + mode + "'");
    sc.interests = j.at("interests").get<std::vector<std::string>>();
    if (j.contains("subgroups")) {
      for (const auto& g : j.at("subgroups")) {
        Subgroup s{g.value("name", std::string()), traits_from_json(g.value("traits", Json::object())),
                   g.at("size").get<std::uint64_t>(), number_map(g.at("interests"), "subgroup interests")};
        sc.background.push_back(std::move(s));
      }
    }
    if (j.contains("planted")) {
      const auto& p = j.at("planted");
      sc.scale = p.value("scale", sc.scale);
      sc.percentile = p.value("percentile", sc.percentile);
      const auto& d = p.at("destination");
      sc.dest_label = d.value("label", std::string("destination"));
      sc.dest_traits = traits_from_json(d.at("traits"));
      sc.dest_shares = number_map(d.at("shares"), "destination shares");
      for (const auto& o : p.value("origins", Json::array())) {
        PlantedOrigin origin;
        origin.name = o.at("name").get<std::string>();
        const auto& src = o.at("source");
        origin.source_label = src.value("label", origin.name + " source");
        origin.source_traits = traits_from_json(src.at("traits"));
        origin.source_shares = number_map(src.at("shares"), "source shares");
        for (const auto& e : o.value("expats", Json::array())) {
          PlantedExpatGroup group;
          group.label = e.at("label").get<std::string>();
          group.traits = traits_from_json(e.at("traits"));
          group.log_ar = number_map(e.at("log_ar"), "log_ar");
          for (const auto& c : e.value("cells", Json::array())) {
            PlantedCell cell;
            const Json selectors = c.value("selectors", Json::object());
            for (const auto& [axis, cat] : selectors.items())
              cell.selectors.emplace_back(parse_axis(axis), cat.get<std::string>());
            cell.weight = c.value("weight", 1.0);
            cell.log_ar_shift = c.value("log_ar_shift", 0.0);
            group.cells.push_back(std::move(cell));
          }
          origin.expats.push_back(std::move(group));
        }
        sc.origins.push_back(std::move(origin));
      }
    }
    return file;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad scenario: ") + e.what());
  }
}

/// World described by a scenario file: planted populations when present,
/// otherwise only the explicit subgroups.
inline SyntheticWorld world_from_scenario(const ScenarioFile& file) {
  if (!file.scenario.dest_shares.empty()) return generate_world(file.scenario, file.seed);
  SyntheticWorld world(file.seed, file.scenario.background, file.scenario.options);
  for (const auto& axis : file.scenario.axes) world.register_axis(axis);
  return world;
}

}  // namespace assimlab
