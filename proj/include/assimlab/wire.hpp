#pragma once

// JSON encodings shared by the HTTP backend, the simulator server and the
// snapshot files.
//
// Reach request:   {"spec": <predicates>, "interest": "<id>" | null}
// Reach response:  {"count": <uint>, "clamped": <bool>}
// Error response:  {"error": "<kind>", "message": "<text>"}
//
// Predicates omit unset fields:
//   {"ethnic_affinity": s, "home_country": s,
//    "expat": {"status": "non_expat"} | {"status": "expat", "origin": s},
//    "language": s, "interests_required": [s...], "locations": [s...],
//    "demographics": {"gender"|"age"|"education"|"region": s}}

#include <optional>
#include <string>

#include <json.hpp>

#include "assimlab/catalog.hpp"
#include "assimlab/error.hpp"

namespace assimlab {

using Json = nlohmann::json;

inline Json spec_to_json(const PopulationSpec& spec) {
  Json j = Json::object();
  if (spec.ethnic_affinity) j["ethnic_affinity"] = *spec.ethnic_affinity;
  if (spec.home_country) j["home_country"] = *spec.home_country;
  if (spec.expat_status == ExpatStatus::non_expat) j["expat"] = {{"status", "non_expat"}};
  if (spec.expat_status == ExpatStatus::expat)
    j["expat"] = {{"status", "expat"}, {"origin", spec.expat_origin}};
  if (spec.language) j["language"] = *spec.language;
  if (!spec.interests_required.empty()) j["interests_required"] = spec.interests_required;
  if (spec.locations) j["locations"] = *spec.locations;
  if (!spec.demographics.empty()) {
    Json demo = Json::object();
    for (const auto& [axis, category] : spec.demographics) demo[std::string(to_string(axis))] = category;
    j["demographics"] = std::move(demo);
  }
  return j;
}

namespace detail {

inline std::string require_string(const Json& j, const char* field) {
  if (!j.is_string()) throw Error(ErrorKind::parse, std::string(field) + " must be a string");
  return j.get<std::string>();
}

inline std::set<std::string> require_string_set(const Json& j, const char* field) {
  if (!j.is_array()) throw Error(ErrorKind::parse, std::string(field) + " must be an array");
  std::set<std::string> out;
  for (const auto& v : j) out.insert(require_string(v, field));
  return out;
}

}  // namespace detail

/// Parses predicates; `label` and `selectors` keys are accepted so study
/// configs can use the same shape ("selectors" may include language).
inline PopulationSpec spec_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "population spec must be an object");
  PopulationSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "label") {
      spec.label = detail::require_string(value, "label");
    } else if (key == "ethnic_affinity") {
      spec.ethnic_affinity = detail::require_string(value, "ethnic_affinity");
    } else if (key == "home_country") {
      spec.home_country = detail::require_string(value, "home_country");
    } else if (key == "expat") {
      if (!value.is_object() || !value.contains("status"))
        throw Error(ErrorKind::parse, "expat must be an object with a status");
      const auto status = detail::require_string(value.at("status"), "expat.status");
      if (status == "non_expat") {
        spec.expat_status = ExpatStatus::non_expat;
      } else if (status == "expat") {
        spec.expat_status = ExpatStatus::expat;
        if (!value.contains("origin")) throw Error(ErrorKind::parse, "expat status needs an origin");
        spec.expat_origin = detail::require_string(value.at("origin"), "expat.origin");
      } else if (status != "any") {
        throw Error(ErrorKind::parse, "unknown expat status '" + status + "'");
      }
    } else if (key == "language") {
      spec.language = detail::require_string(value, "language");
    } else if (key == "interests_required") {
      spec.interests_required = detail::require_string_set(value, "interests_required");
    } else if (key == "locations") {
      spec.locations = detail::require_string_set(value, "locations");
    } else if (key == "demographics" || key == "selectors") {
      if (!value.is_object()) throw Error(ErrorKind::parse, key + " must be an object");
      for (const auto& [axis, category] : value.items())
        spec.select(parse_axis(axis), detail::require_string(category, "demographic category"));
    } else {
      throw Error(ErrorKind::parse, "unknown population spec field '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

/// Canonical (sorted-key, compact) text of the predicates plus interest.
/// Request ids hash this, so it must never depend on the label.
inline std::string canonical_query_text(const PopulationSpec& spec,
                                        const std::optional<std::string>& interest) {
  Json doc = {{"spec", spec_to_json(spec)}, {"interest", interest ? Json(*interest) : Json(nullptr)}};
  return doc.dump();
}

struct ReachResult {
  std::uint64_t count = 0;
  bool clamped = false;

  friend bool operator==(const ReachResult&, const ReachResult&) = default;
};

inline Json reach_request_json(const PopulationSpec& spec, const std::optional<std::string>& interest) {
  return {{"spec", spec_to_json(spec)}, {"interest", interest ? Json(*interest) : Json(nullptr)}};
}

inline Json reach_response_json(const ReachResult& r) {
  return {{"count", r.count}, {"clamped", r.clamped}};
}

inline ReachResult reach_response_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("count") || !j.at("count").is_number_unsigned())
    throw Error(ErrorKind::parse, "reach response needs an unsigned count");
  return {j.at("count").get<std::uint64_t>(), j.value("clamped", false)};
}

inline Json error_json(ErrorKind kind, const std::string& message) {
  return {{"error", std::string(to_string(kind))}, {"message", message}};
}

inline ErrorKind parse_error_kind(std::string_view name) {
  for (int k = 0; k <= static_cast<int>(ErrorKind::parse); ++k)
    if (to_string(static_cast<ErrorKind>(k)) == name) return static_cast<ErrorKind>(k);
  return ErrorKind::transport;
}

}  // namespace assimlab
