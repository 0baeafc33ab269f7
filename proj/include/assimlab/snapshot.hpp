#pragma once

// Snapshot files: UTF-8, one JSON document per line, keys sorted.
//
//   line 1:  {"backend":..,"schema":"assimlab.snapshot","study":..,"version":1}
//   counts:  {"backend":..,"clamped":..,"count":..,"fetched_at":..,"interest":..,
//             "label":..,"request_id":..,"spec":{..},"status":"ok"}
//   failure: {"backend":..,"error":"<kind>","fetched_at":..,"interest":..,"label":..,
//             "message":..,"request_id":..,"spec":{..},"status":"failed"}
//
// Files are append-only; when a request id appears more than once the last
// record wins.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "assimlab/audience.hpp"
#include "assimlab/error.hpp"
#include "assimlab/wire.hpp"

namespace assimlab {

inline constexpr int kSnapshotSchemaVersion = 1;

struct QueryFailure {
  AudienceQuery query;
  ErrorKind kind = ErrorKind::transport;
  std::string message;
  std::int64_t failed_at = 0;
  std::string backend;

  friend bool operator==(const QueryFailure&, const QueryFailure&) = default;
};

using SnapshotEntry = std::variant<AudienceCount, QueryFailure>;

inline const AudienceQuery& entry_query(const SnapshotEntry& e) {
  return std::visit([](const auto& v) -> const AudienceQuery& { return v.query; }, e);
}

struct SnapshotHeader {
  std::string study;
  std::string backend;
  int version = kSnapshotSchemaVersion;

  friend bool operator==(const SnapshotHeader&, const SnapshotHeader&) = default;
};

namespace detail {

inline Json query_fields(const AudienceQuery& q) {
  return {{"request_id", q.request_id},
          {"label", q.spec.label},
          {"spec", spec_to_json(q.spec)},
          {"interest", q.interest ? Json(*q.interest) : Json(nullptr)}};
}

inline AudienceQuery query_from_record(const Json& j) {
  PopulationSpec spec = spec_from_json(j.at("spec"));
  spec.label = j.at("label").get<std::string>();
  std::optional<std::string> interest;
  if (!j.at("interest").is_null()) interest = j.at("interest").get<std::string>();
  AudienceQuery q = make_query(std::move(spec), std::move(interest));
  if (q.request_id != j.at("request_id").get<std::string>())
    throw Error(ErrorKind::parse, "snapshot record request_id " + j.at("request_id").get<std::string>() +
                                      " does not match its content");
  return q;
}

}  // namespace detail

inline std::string header_line(const SnapshotHeader& h) {
  return Json{{"schema", "assimlab.snapshot"}, {"version", h.version}, {"study", h.study},
              {"backend", h.backend}}
      .dump();
}

inline std::string entry_line(const SnapshotEntry& entry) {
  Json j;
  if (const auto* c = std::get_if<AudienceCount>(&entry)) {
    j = detail::query_fields(c->query);
    j["status"] = "ok";
    j["count"] = c->count;
    j["clamped"] = c->clamped;
    j["fetched_at"] = c->fetched_at;
    j["backend"] = c->backend;
  } else {
    const auto& f = std::get<QueryFailure>(entry);
    j = detail::query_fields(f.query);
    j["status"] = "failed";
    j["error"] = std::string(to_string(f.kind));
    j["message"] = f.message;
    j["fetched_at"] = f.failed_at;
    j["backend"] = f.backend;
  }
  return j.dump();
}

inline SnapshotEntry entry_from_line(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad snapshot record: ") + e.what());
  }
  try {
    AudienceQuery q = detail::query_from_record(j);
    const auto status = j.at("status").get<std::string>();
    if (status == "ok") {
      return AudienceCount{std::move(q), j.at("count").get<std::uint64_t>(), j.at("clamped").get<bool>(),
                           j.at("fetched_at").get<std::int64_t>(), j.at("backend").get<std::string>()};
    }
    if (status == "failed") {
      return QueryFailure{std::move(q), parse_error_kind(j.at("error").get<std::string>()),
                          j.at("message").get<std::string>(), j.at("fetched_at").get<std::int64_t>(),
                          j.at("backend").get<std::string>()};
    }
    throw Error(ErrorKind::parse, "unknown snapshot record status '" + status + "'");
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, std::string("incomplete snapshot record: ") + e.what());
  }
}

/// In-memory snapshot: header plus records in file order.
class Snapshot {
 public:
  Snapshot() = default;
  explicit Snapshot(SnapshotHeader header) : header_(std::move(header)) {}

  const SnapshotHeader& header() const noexcept { return header_; }
  const std::vector<SnapshotEntry>& entries() const noexcept { return entries_; }

  void append(SnapshotEntry entry) {
    latest_[entry_query(entry).request_id] = entries_.size();
    entries_.push_back(std::move(entry));
  }

  /// Latest record for the id, if any.
  const SnapshotEntry* find(const std::string& request_id) const {
    auto it = latest_.find(request_id);
    return it == latest_.end() ? nullptr : &entries_[it->second];
  }

  const AudienceCount* find_count(const std::string& request_id) const {
    const auto* e = find(request_id);
    return e ? std::get_if<AudienceCount>(e) : nullptr;
  }

  bool answered(const std::string& request_id) const { return find_count(request_id) != nullptr; }

  std::size_t failure_count() const {
    std::size_t n = 0;
    for (const auto& [id, idx] : latest_) n += std::holds_alternative<QueryFailure>(entries_[idx]);
    return n;
  }

  /// Request ids from `plan` that have no successful count.
  std::vector<std::string> missing(const QueryPlan& plan) const {
    std::vector<std::string> out;
    for (const auto& q : plan.queries())
      if (!answered(q.request_id)) out.push_back(q.request_id);
    return out;
  }

  std::string to_ndjson() const {
    std::string out = header_line(header_) + "\n";
    for (const auto& e : entries_) out += entry_line(e) + "\n";
    return out;
  }

  static Snapshot parse(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::parse, "empty snapshot");
    Json h;
    try {
      h = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::parse, std::string("bad snapshot header: ") + e.what());
    }
    if (h.value("schema", "") != "assimlab.snapshot")
      throw Error(ErrorKind::parse, "not an assimlab snapshot");
    const int version = h.value("version", 0);
    if (version != kSnapshotSchemaVersion)
      throw Error(ErrorKind::parse, "unsupported snapshot version " + std::to_string(version));
    Snapshot snap({h.value("study", ""), h.value("backend", ""), version});
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      snap.append(entry_from_line(line));
    }
    return snap;
  }

  static Snapshot parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Snapshot load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open snapshot " + path.string());
    return parse(in);
  }

 private:
  SnapshotHeader header_;
  std::vector<SnapshotEntry> entries_;
  std::unordered_map<std::string, std::size_t> latest_;
};

/// A snapshot backed by an append-only file. Appends are serialized.
class SnapshotStore {
 public:
  /// Opens `path`, loading existing records (resume) or writing a fresh
  /// header. An existing file must belong to the same study.
  static SnapshotStore open(const std::filesystem::path& path, const SnapshotHeader& header) {
    SnapshotStore store;
    store.path_ = path;
    if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
      store.snapshot_ = Snapshot::load(path);
      if (store.snapshot_.header().study != header.study)
        throw Error(ErrorKind::invalid_argument, "snapshot " + path.string() + " belongs to study '" +
                                                     store.snapshot_.header().study + "'");
    } else {
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      store.snapshot_ = Snapshot(header);
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::io, "cannot create snapshot " + path.string());
      out << header_line(header) << '\n';
    }
    return store;
  }

  /// Purely in-memory store (no file).
  static SnapshotStore in_memory(const SnapshotHeader& header) {
    SnapshotStore store;
    store.snapshot_ = Snapshot(header);
    return store;
  }

  SnapshotStore(SnapshotStore&& other) noexcept
      : path_(std::move(other.path_)), snapshot_(std::move(other.snapshot_)) {}

  void append(SnapshotEntry entry) {
    std::lock_guard lock(mutex_);
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      if (!out) throw Error(ErrorKind::io, "cannot append to snapshot " + path_.string());
      out << entry_line(entry) << '\n';
      out.flush();
      if (!out) throw Error(ErrorKind::io, "write failed on snapshot " + path_.string());
    }
    snapshot_.append(std::move(entry));
  }

  const Snapshot& snapshot() const noexcept { return snapshot_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  SnapshotStore() = default;
  std::filesystem::path path_;
  Snapshot snapshot_;
  std::mutex mutex_;
};

/// Serves counts recorded in a snapshot. Queries without a successful record
/// fail with partial_snapshot; recorded failures are replayed.
class SnapshotBackend final : public CountBackend {
 public:
  explicit SnapshotBackend(const Snapshot& snapshot) : snapshot_(snapshot) {}

  Served serve(const AudienceQuery& query) override {
    const auto* entry = snapshot_.find(query.request_id);
    if (entry == nullptr)
      throw Error(ErrorKind::partial_snapshot, "snapshot has no record for " + query.request_id +
                                                   " (" + query.spec.label + ")");
    if (const auto* f = std::get_if<QueryFailure>(entry))
      throw Error(f->kind, "recorded failure for " + query.request_id + ": " + f->message);
    const auto& c = std::get<AudienceCount>(*entry);
    return {{c.count, c.clamped}, "snapshot"};
  }

  std::string label() const override { return "snapshot"; }

 private:
  const Snapshot& snapshot_;
};

struct FetchReport {
  std::size_t answered = 0;
  std::size_t skipped = 0;  // already answered in a previous run
  std::size_t failed = 0;
  std::size_t retries = 0;
};

/// Answers every planned query not already answered in `store`, appending one
/// record per query. Non-retryable errors are recorded as failures; transport
/// errors are retried per policy and then recorded. Quota rejections that
/// persist through max_retries abort the fetch with quota_exceeded, leaving
/// the completed portion in the store.
inline FetchReport fetch_snapshot(CountBackend& backend, const QueryPlan& plan,
                                  const RateLimitPolicy& policy, SnapshotStore& store, Clock& clock) {
  policy.validate();
  RateLimiter limiter(policy, clock);
  FetchReport report;
  for (const auto& query : plan.queries()) {
    if (store.snapshot().answered(query.request_id)) {
      ++report.skipped;
      continue;
    }
    for (std::size_t attempt = 0;; ++attempt) {
      limiter.acquire();
      try {
        store.append(reach_estimate(backend, query, clock));
        ++report.answered;
        break;
      } catch (const Error& e) {
        const bool can_retry = e.retryable() && attempt < policy.max_retries;
        if (can_retry) {
          ++report.retries;
          clock.sleep_ms(policy.backoff_for(attempt));
          continue;
        }
        if (e.kind() == ErrorKind::quota_exceeded)
          throw Error(ErrorKind::quota_exceeded,
                      "quota still exceeded after " + std::to_string(policy.max_retries) +
                          " retries; " + std::to_string(report.answered) + " queries completed");
        store.append(QueryFailure{query, e.kind(), e.what(), clock.now_ms(), backend.label()});
        ++report.failed;
        break;
      }
    }
  }
  return report;
}

}  // namespace assimlab
