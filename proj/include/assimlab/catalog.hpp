#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "assimlab/error.hpp"

namespace assimlab {

/// Lowercase, with every run of non-alphanumeric characters collapsed to one
/// hyphen: "Southern hip hop" -> "southern-hip-hop".
inline std::string slugify(std::string_view name) {
  std::string out;
  bool pending_hyphen = false;
  for (unsigned char c : name) {
    if (std::isalnum(c)) {
      if (pending_hyphen && !out.empty()) out.push_back('-');
      pending_hyphen = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_hyphen = true;
    }
  }
  return out;
}

struct Interest {
  std::string id;
  std::string name;
  std::uint64_t worldwide_audience = 0;

  friend bool operator==(const Interest&, const Interest&) = default;
};

/// The interest set every ratio vector is aligned to. Members are sorted by id
/// and all satisfy worldwide_audience >= floor.
class InterestCatalog {
 public:
  InterestCatalog() = default;

  /// Builds a catalog from already-filtered interests. Throws on duplicate ids
  /// or members below the floor.
  static InterestCatalog from_interests(std::vector<Interest> interests,
                                        std::uint64_t floor = 0,
                                        std::size_t dropped = 0) {
    std::sort(interests.begin(), interests.end(),
              [](const Interest& a, const Interest& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < interests.size(); ++i) {
      if (interests[i].id.empty())
        throw Error(ErrorKind::invalid_argument, "interest with empty id");
      if (i > 0 && interests[i].id == interests[i - 1].id)
        throw Error(ErrorKind::invalid_argument, "duplicate interest id '" + interests[i].id + "'");
      if (interests[i].worldwide_audience < floor)
        throw Error(ErrorKind::invalid_argument,
                    "interest '" + interests[i].id + "' below catalog floor");
    }
    InterestCatalog catalog;
    catalog.interests_ = std::move(interests);
    catalog.floor_ = floor;
    catalog.dropped_ = dropped;
    return catalog;
  }

  /// Convenience for tests and planted scenarios: ids only, audience unknown.
  static InterestCatalog from_ids(std::span<const std::string> ids) {
    std::vector<Interest> interests;
    interests.reserve(ids.size());
    for (const auto& id : ids) interests.push_back({id, id, 0});
    return from_interests(std::move(interests));
  }

  const std::vector<Interest>& interests() const noexcept { return interests_; }
  std::size_t size() const noexcept { return interests_.size(); }
  bool empty() const noexcept { return interests_.empty(); }
  std::uint64_t floor() const noexcept { return floor_; }
  std::size_t dropped() const noexcept { return dropped_; }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = std::lower_bound(interests_.begin(), interests_.end(), id,
                               [](const Interest& a, std::string_view key) { return a.id < key; });
    if (it == interests_.end() || it->id != id) return std::nullopt;
    return static_cast<std::size_t>(it - interests_.begin());
  }

  bool contains(std::string_view id) const { return index_of(id).has_value(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(interests_.size());
    for (const auto& i : interests_) out.push_back(i.id);
    return out;
  }

  friend bool operator==(const InterestCatalog&, const InterestCatalog&) = default;

 private:
  std::vector<Interest> interests_;
  std::uint64_t floor_ = 0;
  std::size_t dropped_ = 0;
};

struct RawGenre {
  std::string name;
  std::uint64_t worldwide_audience = 0;
};

/// Slugifies names, merges duplicates (keeping the largest audience) and
/// drops everything below `floor`. `dropped()` on the result counts the
/// distinct interests removed by the floor.
inline InterestCatalog build_catalog(std::span<const RawGenre> raw, std::uint64_t floor) {
  if (raw.empty()) throw Error(ErrorKind::invalid_argument, "build_catalog: empty genre list");
  std::map<std::string, Interest> merged;
  for (const auto& genre : raw) {
    std::string id = slugify(genre.name);
    if (id.empty()) throw Error(ErrorKind::invalid_argument, "genre name '" + genre.name + "' has no usable characters");
    auto [it, inserted] = merged.try_emplace(id, Interest{id, genre.name, genre.worldwide_audience});
    if (!inserted && genre.worldwide_audience > it->second.worldwide_audience) {
      it->second.name = genre.name;
      it->second.worldwide_audience = genre.worldwide_audience;
    }
  }
  std::vector<Interest> kept;
  std::size_t dropped = 0;
  for (auto& [id, interest] : merged) {
    if (interest.worldwide_audience >= floor)
      kept.push_back(std::move(interest));
    else
      ++dropped;
  }
  if (kept.empty())
    throw Error(ErrorKind::empty_result, "no genre reaches the audience floor of " + std::to_string(floor));
  return InterestCatalog::from_interests(std::move(kept), floor, dropped);
}

// ---------------------------------------------------------------------------
// Demographic axes

enum class Axis { gender, age, education, language, region };

inline constexpr Axis kAllAxes[] = {Axis::gender, Axis::age, Axis::education, Axis::language,
                                    Axis::region};

inline std::string_view to_string(Axis axis) {
  switch (axis) {
    case Axis::gender: return "gender";
    case Axis::age: return "age";
    case Axis::education: return "education";
    case Axis::language: return "language";
    case Axis::region: return "region";
  }
  return "?";
}

inline Axis parse_axis(std::string_view name) {
  for (Axis axis : kAllAxes)
    if (to_string(axis) == name) return axis;
  throw Error(ErrorKind::invalid_argument, "unknown demographic axis '" + std::string(name) + "'");
}

struct DemographicAxis {
  Axis axis = Axis::gender;
  std::vector<std::string> categories;
  /// Age and education are ordered, but every consumer treats them as plain
  /// categories.
  bool ordinal = false;
  std::string reference;

  std::string_view name() const { return to_string(axis); }

  bool has_category(std::string_view c) const {
    return std::find(categories.begin(), categories.end(), c) != categories.end();
  }

  void validate() const {
    if (categories.empty())
      throw Error(ErrorKind::invalid_argument, "axis '" + std::string(name()) + "' has no categories");
    std::set<std::string> seen(categories.begin(), categories.end());
    if (seen.size() != categories.size())
      throw Error(ErrorKind::invalid_argument, "axis '" + std::string(name()) + "' repeats a category");
    if (!reference.empty() && !has_category(reference))
      throw Error(ErrorKind::unknown_category,
                  "reference level '" + reference + "' not in axis '" + std::string(name()) + "'");
  }

  friend bool operator==(const DemographicAxis&, const DemographicAxis&) = default;
};

/// Axes and reference levels used by the regression tables.
inline std::vector<DemographicAxis> default_axes() {
  return {
      {Axis::gender, {"Female", "Male"}, false, "Female"},
      {Axis::age, {"13-18", "19-28", "29-38", "39-48", "49-65"}, true, "13-18"},
      {Axis::education,
       {"College degree+", "High school graduate", "Less than high school graduate",
        "Two-year degree, Some college"},
       true,
       "College degree+"},
      {Axis::language, {"Bilingual", "English", "Spanish"}, false, "Bilingual"},
      {Axis::region, {"Midwest", "Northeast", "South", "West"}, false, "Midwest"},
  };
}

// ---------------------------------------------------------------------------
// Population specs

enum class ExpatStatus { any, non_expat, expat };

/// A conjunctive targeting predicate. Unset fields do not constrain.
/// The language selector lives in `language`; `demographics` never holds
/// Axis::language.
struct PopulationSpec {
  std::string label;
  std::optional<std::string> ethnic_affinity;
  std::optional<std::string> home_country;
  ExpatStatus expat_status = ExpatStatus::any;
  std::string expat_origin;  // set iff expat_status == expat
  std::optional<std::string> language;
  std::set<std::string> interests_required;
  std::optional<std::set<std::string>> locations;
  std::map<Axis, std::string> demographics;

  /// Sets the selector for one axis, routing language to its own field.
  PopulationSpec& select(Axis axis, std::string category) {
    if (axis == Axis::language)
      language = std::move(category);
    else
      demographics[axis] = std::move(category);
    return *this;
  }

  std::optional<std::string> selector(Axis axis) const {
    if (axis == Axis::language) return language;
    auto it = demographics.find(axis);
    if (it == demographics.end()) return std::nullopt;
    return it->second;
  }

  void validate() const {
    if (demographics.contains(Axis::language))
      throw Error(ErrorKind::invalid_argument, "language selector must use the language field");
    if ((expat_status == ExpatStatus::expat) == expat_origin.empty())
      throw Error(ErrorKind::invalid_argument,
                  "spec '" + label + "': expat origin must be set exactly when status is expat");
  }

  /// Predicate equality, ignoring the label.
  bool same_predicates(const PopulationSpec& other) const {
    return ethnic_affinity == other.ethnic_affinity && home_country == other.home_country &&
           expat_status == other.expat_status && expat_origin == other.expat_origin &&
           language == other.language && interests_required == other.interests_required &&
           locations == other.locations && demographics == other.demographics;
  }

  friend bool operator==(const PopulationSpec&, const PopulationSpec&) = default;
};

namespace detail {

inline void merge_field(std::optional<std::string>& into, const std::optional<std::string>& other,
                        std::string_view field) {
  if (!other) return;
  if (into && *into != *other)
    throw Error(ErrorKind::contradiction, std::string(field) + "=" + *into + " conflicts with " +
                                              std::string(field) + "=" + *other);
  into = other;
}

}  // namespace detail

/// Conjunction of two specs. Throws ErrorKind::contradiction when both select
/// different values for the same attribute.
inline PopulationSpec intersect_specs(const PopulationSpec& a, const PopulationSpec& b) {
  PopulationSpec out = a;
  out.label = a.label == b.label ? a.label : a.label + " ∩ " + b.label;
  detail::merge_field(out.ethnic_affinity, b.ethnic_affinity, "ethnic_affinity");
  detail::merge_field(out.home_country, b.home_country, "home_country");
  detail::merge_field(out.language, b.language, "language");

  if (b.expat_status != ExpatStatus::any) {
    if (out.expat_status == ExpatStatus::any) {
      out.expat_status = b.expat_status;
      out.expat_origin = b.expat_origin;
    } else if (out.expat_status != b.expat_status || out.expat_origin != b.expat_origin) {
      throw Error(ErrorKind::contradiction, "expat status conflicts between '" + a.label +
                                                "' and '" + b.label + "'");
    }
  }

  out.interests_required.insert(b.interests_required.begin(), b.interests_required.end());

  if (b.locations) {
    if (!out.locations) {
      out.locations = b.locations;
    } else {
      std::set<std::string> common;
      std::set_intersection(out.locations->begin(), out.locations->end(), b.locations->begin(),
                            b.locations->end(), std::inserter(common, common.begin()));
      out.locations = std::move(common);
    }
  }

  for (const auto& [axis, category] : b.demographics) {
    auto [it, inserted] = out.demographics.try_emplace(axis, category);
    if (!inserted && it->second != category)
      throw Error(ErrorKind::contradiction, std::string(to_string(axis)) + "=" + it->second +
                                                " conflicts with " + std::string(to_string(axis)) +
                                                "=" + category);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation proxies

enum class ProxyKind { interest_in_origin, speaks_origin_language, origin_communities };

inline std::string_view to_string(ProxyKind kind) {
  switch (kind) {
    case ProxyKind::interest_in_origin: return "interest_in_origin";
    case ProxyKind::speaks_origin_language: return "speaks_origin_language";
    case ProxyKind::origin_communities: return "origin_communities";
  }
  return "?";
}

inline ProxyKind parse_proxy_kind(std::string_view name) {
  for (ProxyKind k : {ProxyKind::interest_in_origin, ProxyKind::speaks_origin_language,
                      ProxyKind::origin_communities})
    if (to_string(k) == name) return k;
  throw Error(ErrorKind::invalid_argument, "unknown proxy kind '" + std::string(name) + "'");
}

struct GenerationProxy {
  ProxyKind kind = ProxyKind::interest_in_origin;
  /// Only used by origin_communities; empty means "take the config's list".
  std::vector<std::string> community_cities;
};

/// Study-level parameters the proxies are resolved against.
struct ProxyConfig {
  std::string group_label = "Mexican Americans";
  std::string ethnic_affinity = "Hispanic (US - All)";
  std::string home_country = "US";
  std::string origin_name = "Mexico";
  std::string origin_language = "Spanish";
  std::vector<std::string> community_cities;
};

inline PopulationSpec resolve_proxy(const GenerationProxy& proxy, const ProxyConfig& config) {
  if (config.ethnic_affinity.empty())
    throw Error(ErrorKind::missing_config, "proxy resolution needs an ethnic affinity label");
  PopulationSpec spec;
  spec.ethnic_affinity = config.ethnic_affinity;
  spec.home_country = config.home_country;
  spec.expat_status = ExpatStatus::non_expat;
  switch (proxy.kind) {
    case ProxyKind::interest_in_origin:
      if (config.origin_name.empty())
        throw Error(ErrorKind::missing_config, "interest_in_origin needs an origin name");
      spec.label = config.group_label + " (" + config.origin_name + ")";
      spec.interests_required.insert(slugify(config.origin_name));
      break;
    case ProxyKind::speaks_origin_language:
      if (config.origin_language.empty())
        throw Error(ErrorKind::missing_config, "speaks_origin_language needs a language label");
      spec.label = config.group_label + " (" + config.origin_language + ")";
      spec.language = config.origin_language;
      break;
    case ProxyKind::origin_communities: {
      const auto& cities =
          proxy.community_cities.empty() ? config.community_cities : proxy.community_cities;
      if (cities.empty())
        throw Error(ErrorKind::missing_config, "origin_communities needs a community city list");
      spec.label = config.group_label + " (communities)";
      spec.locations = std::set<std::string>(cities.begin(), cities.end());
      break;
    }
  }
  return spec;
}

}  // namespace assimlab
