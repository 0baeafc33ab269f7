#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "assimlab/catalog.hpp"
#include "assimlab/error.hpp"
#include "assimlab/util.hpp"
#include "assimlab/wire.hpp"

namespace assimlab {

/// One count request. `request_id` is a pure function of the predicates and
/// the interest; labels do not participate.
struct AudienceQuery {
  PopulationSpec spec;
  std::optional<std::string> interest;  // absent = population total
  std::string request_id;

  friend bool operator==(const AudienceQuery&, const AudienceQuery&) = default;
};

inline std::string compute_request_id(const PopulationSpec& spec,
                                      const std::optional<std::string>& interest) {
  return hex64(fnv1a64(canonical_query_text(spec, interest)));
}

inline AudienceQuery make_query(PopulationSpec spec, std::optional<std::string> interest = std::nullopt) {
  spec.validate();
  AudienceQuery q{std::move(spec), std::move(interest), {}};
  q.request_id = compute_request_id(q.spec, q.interest);
  return q;
}

struct AudienceCount {
  AudienceQuery query;
  std::uint64_t count = 0;
  bool clamped = false;
  std::int64_t fetched_at = 0;  // ms since epoch, from the injected clock
  std::string backend;

  friend bool operator==(const AudienceCount&, const AudienceCount&) = default;
};

// ---------------------------------------------------------------------------
// Clocks

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() = 0;
  virtual void sleep_ms(std::int64_t ms) = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
  void sleep_ms(std::int64_t ms) override {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }
};

/// Test clock: time only moves when someone sleeps or calls advance().
class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start_ms = 0) : now_(start_ms) {}
  std::int64_t now_ms() override { return now_; }
  void sleep_ms(std::int64_t ms) override {
    if (ms <= 0) return;
    now_ += ms;
    total_slept_ += ms;
    sleeps_.push_back(ms);
  }
  void advance(std::int64_t ms) { now_ += ms; }
  std::int64_t total_slept() const { return total_slept_; }
  const std::vector<std::int64_t>& sleeps() const { return sleeps_; }

 private:
  std::int64_t now_;
  std::int64_t total_slept_ = 0;
  std::vector<std::int64_t> sleeps_;
};

// ---------------------------------------------------------------------------
// Backends

struct Served {
  ReachResult result;
  std::string backend;
};

/// Anything that can answer a reach query: the HTTP client, the in-process
/// simulator, a stored snapshot, or a cache in front of one of those.
class CountBackend {
 public:
  virtual ~CountBackend() = default;
  virtual Served serve(const AudienceQuery& query) = 0;
  virtual std::string label() const = 0;
};

/// Memoizes answers by request id. Hits report backend "cache".
class CachedBackend final : public CountBackend {
 public:
  explicit CachedBackend(CountBackend& inner) : inner_(inner) {}

  Served serve(const AudienceQuery& query) override {
    {
      std::lock_guard lock(mutex_);
      auto it = cache_.find(query.request_id);
      if (it != cache_.end()) {
        ++hits_;
        return {it->second, "cache"};
      }
    }
    Served served = inner_.serve(query);
    std::lock_guard lock(mutex_);
    cache_.emplace(query.request_id, served.result);
    ++misses_;
    return served;
  }

  std::string label() const override { return inner_.label(); }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  CountBackend& inner_;
  std::mutex mutex_;
  std::unordered_map<std::string, ReachResult> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

inline AudienceCount reach_estimate(CountBackend& backend, const AudienceQuery& query, Clock& clock) {
  Served served = backend.serve(query);
  return {query, served.result.count, served.result.clamped, clock.now_ms(), std::move(served.backend)};
}

// ---------------------------------------------------------------------------
// Query planning

/// Deduplicated, ordered list of queries. Insertion order is preserved so a
/// plan built from the same inputs is always identical.
class QueryPlan {
 public:
  bool add(AudienceQuery query) {
    if (!seen_.insert(query.request_id).second) return false;
    queries_.push_back(std::move(query));
    return true;
  }

  void merge(const QueryPlan& other) {
    for (const auto& q : other.queries_) add(q);
  }

  const std::vector<AudienceQuery>& queries() const noexcept { return queries_; }
  std::size_t estimated_request_count() const noexcept { return queries_.size(); }
  bool contains(const std::string& request_id) const { return seen_.contains(request_id); }

 private:
  std::vector<AudienceQuery> queries_;
  std::unordered_set<std::string> seen_;
};

/// Every combination of one category per axis, in axis order with the last
/// axis varying fastest.
inline std::vector<std::vector<std::pair<Axis, std::string>>> cross_section_cells(
    std::span<const DemographicAxis> axes) {
  std::vector<std::vector<std::pair<Axis, std::string>>> cells{{}};
  for (const auto& axis : axes) {
    axis.validate();
    std::vector<std::vector<std::pair<Axis, std::string>>> next;
    next.reserve(cells.size() * axis.categories.size());
    for (const auto& cell : cells)
      for (const auto& category : axis.categories) {
        auto extended = cell;
        extended.emplace_back(axis.axis, category);
        next.push_back(std::move(extended));
      }
    cells = std::move(next);
  }
  return cells;
}

inline std::string cell_label(const std::vector<std::pair<Axis, std::string>>& cell) {
  std::string out;
  for (const auto& [axis, category] : cell) {
    if (!out.empty()) out += ", ";
    out += std::string(to_string(axis)) + "=" + category;
  }
  return out;
}

/// Restricts `population` to one cross-section cell. Returns nullopt when the
/// population already selects a different category on one of the axes.
inline std::optional<PopulationSpec> restrict_to_cell(
    const PopulationSpec& population, const std::vector<std::pair<Axis, std::string>>& cell) {
  if (cell.empty()) return population;
  PopulationSpec selector;
  selector.label = population.label + " | " + cell_label(cell);
  for (const auto& [axis, category] : cell) selector.select(axis, category);
  try {
    PopulationSpec out = intersect_specs(population, selector);
    out.label = selector.label;
    return out;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::contradiction) return std::nullopt;
    throw;
  }
}

/// Plans (population x cross-section cell x interest) queries plus one total
/// per (population x cell). Throws plan_too_large when the deduplicated plan
/// exceeds `budget`.
inline QueryPlan plan_queries(std::span<const PopulationSpec> populations,
                              const InterestCatalog& catalog,
                              std::span<const DemographicAxis> cross_sections = {},
                              std::optional<std::size_t> budget = std::nullopt) {
  if (populations.empty()) throw Error(ErrorKind::invalid_argument, "plan_queries: no populations");
  const auto cells = cross_section_cells(cross_sections);
  if (budget) {
    const std::size_t upper = populations.size() * cells.size() * (catalog.size() + 1);
    // Dedup can only shrink the plan; skip building it when even a perfectly
    // shared plan would be over budget.
    if (upper / populations.size() > *budget)
      throw Error(ErrorKind::plan_too_large, "plan needs at least " +
                                                 std::to_string(upper / populations.size()) +
                                                 " requests, budget is " + std::to_string(*budget));
  }
  QueryPlan plan;
  for (const auto& population : populations) {
    for (const auto& cell : cells) {
      auto spec = restrict_to_cell(population, cell);
      if (!spec) continue;
      for (const auto& interest : catalog.interests()) plan.add(make_query(*spec, interest.id));
      plan.add(make_query(*spec));
    }
  }
  if (budget && plan.estimated_request_count() > *budget)
    throw Error(ErrorKind::plan_too_large, "plan needs " +
                                               std::to_string(plan.estimated_request_count()) +
                                               " requests, budget is " + std::to_string(*budget));
  return plan;
}

/// Totals for each category of each axis, as needed for demographic
/// proportions of one population.
inline QueryPlan plan_category_totals(const PopulationSpec& population,
                                      std::span<const DemographicAxis> axes) {
  QueryPlan plan;
  for (const auto& axis : axes) {
    for (const auto& category : axis.categories) {
      auto spec = restrict_to_cell(population, {{axis.axis, category}});
      if (spec) plan.add(make_query(*spec));
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Rate limiting

struct RateLimitPolicy {
  std::size_t max_requests_per_window = 100;
  std::int64_t window_ms = 1000;
  std::size_t max_retries = 3;
  std::vector<std::int64_t> backoff_ms{1000, 2000, 4000};

  void validate() const {
    if (max_requests_per_window == 0 || window_ms <= 0 || max_retries == 0 || backoff_ms.empty())
      throw Error(ErrorKind::invalid_argument, "rate limit policy values must be positive");
    for (auto b : backoff_ms)
      if (b <= 0) throw Error(ErrorKind::invalid_argument, "backoff durations must be positive");
  }

  std::int64_t backoff_for(std::size_t attempt) const {
    return backoff_ms[std::min(attempt, backoff_ms.size() - 1)];
  }
};

/// Parses "R/window", e.g. "200/60s", "5/500ms", "1000/1h".
inline std::pair<std::size_t, std::int64_t> parse_rate(std::string_view text) {
  const auto slash = text.find('/');
  auto fail = [&] { return Error(ErrorKind::parse, "bad rate '" + std::string(text) + "', expected R/window"); };
  if (slash == std::string_view::npos) throw fail();
  std::size_t requests = 0;
  std::int64_t amount = 0;
  std::string unit;
  try {
    requests = std::stoul(std::string(text.substr(0, slash)));
    std::string window(text.substr(slash + 1));
    std::size_t used = 0;
    amount = window.empty() || !std::isdigit(static_cast<unsigned char>(window[0])) ? 1 : std::stoll(window, &used);
    unit = window.substr(used);
  } catch (const std::logic_error&) {
    throw fail();
  }
  std::int64_t scale = 0;
  if (unit == "ms") scale = 1;
  else if (unit == "s" || unit.empty()) scale = 1000;
  else if (unit == "m" || unit == "min") scale = 60'000;
  else if (unit == "h") scale = 3'600'000;
  else throw fail();
  if (requests == 0 || amount <= 0) throw fail();
  return {requests, amount * scale};
}

/// Fixed-window limiter driven by an injected clock.
class RateLimiter {
 public:
  RateLimiter(const RateLimitPolicy& policy, Clock& clock) : policy_(policy), clock_(clock) {
    policy_.validate();
  }

  void acquire() {
    std::lock_guard lock(mutex_);
    std::int64_t now = clock_.now_ms();
    if (!started_ || now - window_start_ >= policy_.window_ms) {
      started_ = true;
      window_start_ = now;
      used_ = 0;
    }
    if (used_ >= policy_.max_requests_per_window) {
      clock_.sleep_ms(window_start_ + policy_.window_ms - now);
      window_start_ = clock_.now_ms();
      used_ = 0;
    }
    ++used_;
  }

 private:
  RateLimitPolicy policy_;
  Clock& clock_;
  std::mutex mutex_;
  bool started_ = false;
  std::int64_t window_start_ = 0;
  std::size_t used_ = 0;
};

// ---------------------------------------------------------------------------
// Overlap

struct OverlapResult {
  double fraction = 0.0;
  std::uint64_t count_a = 0;
  std::uint64_t count_b = 0;
  std::uint64_t count_both = 0;
  /// Rounded live counts can put count_both above the denominator.
  bool clamped = false;
  std::string denominator = "min(count(a), count(b))";
};

/// count(a ∩ b) / min(count(a), count(b)). An empty side gives 0 unless both
/// are empty.
inline OverlapResult overlap_fraction(const PopulationSpec& a, const PopulationSpec& b,
                                      CountBackend& backend) {
  const PopulationSpec both = intersect_specs(a, b);
  OverlapResult out;
  out.count_a = backend.serve(make_query(a)).result.count;
  out.count_b = backend.serve(make_query(b)).result.count;
  out.count_both = backend.serve(make_query(both)).result.count;
  if (out.count_a == 0 && out.count_b == 0)
    throw Error(ErrorKind::division_by_zero, "overlap of two empty populations");
  const std::uint64_t denom = std::min(out.count_a, out.count_b);
  if (denom == 0) return out;
  out.fraction = static_cast<double>(out.count_both) / static_cast<double>(denom);
  if (out.fraction > 1.0) {
    out.fraction = 1.0;
    out.clamped = true;
  }
  return out;
}

}  // namespace assimlab
