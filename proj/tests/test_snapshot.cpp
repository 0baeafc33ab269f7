#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "assimlab/report.hpp"
#include "assimlab/simulator.hpp"
#include "assimlab/snapshot.hpp"

using namespace assimlab;
namespace fs = std::filesystem;

namespace {

SyntheticWorld world() {
  Traits a, b;
  a.home_country = "US";
  a.language = "English";
  b.home_country = "MX";
  b.language = "Spanish";
  return SyntheticWorld(17, {{"us", a, 50'000, {{"rock", 0.3}, {"jazz", 0.1}, {"banda", 0.01}}},
                             {"mx", b, 30'000, {{"rock", 0.1}, {"banda", 0.4}, {"cumbia", 0.3}}}});
}

QueryPlan plan_of(std::size_t n_pops) {
  std::vector<std::string> ids{"banda", "cumbia", "jazz", "rock"};
  const auto catalog = InterestCatalog::from_ids(ids);
  std::vector<PopulationSpec> pops;
  PopulationSpec us, mx, all;
  us.label = "us";
  us.home_country = "US";
  mx.label = "mx";
  mx.home_country = "MX";
  all.label = "all";
  for (const auto& p : {us, mx, all}) pops.push_back(p);
  pops.resize(n_pops);
  return plan_queries(pops, catalog);
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "assimlab_snapshot_tests";
  fs::create_directories(dir);
  const auto p = dir / name;
  fs::remove(p);
  return p;
}

const SnapshotHeader kHeader{"test-study", "sim", kSnapshotSchemaVersion};

/// Fails with a non-Error exception after `limit` calls, like a killed process.
class DyingBackend final : public CountBackend {
 public:
  DyingBackend(CountBackend& inner, std::size_t limit) : inner_(inner), limit_(limit) {}
  Served serve(const AudienceQuery& q) override {
    if (calls_++ >= limit_) throw std::runtime_error("killed");
    return inner_.serve(q);
  }
  std::string label() const override { return inner_.label(); }

 private:
  CountBackend& inner_;
  std::size_t limit_;
  std::size_t calls_ = 0;
};

/// Throws `kind` for the first `failures` calls on each query, then answers.
class FlakyBackend final : public CountBackend {
 public:
  FlakyBackend(CountBackend& inner, ErrorKind kind, std::size_t failures)
      : inner_(inner), kind_(kind), failures_(failures) {}
  Served serve(const AudienceQuery& q) override {
    if (seen_[q.request_id]++ < failures_) throw Error(kind_, "flaky");
    return inner_.serve(q);
  }
  std::string label() const override { return "flaky"; }
  std::size_t calls() const {
    std::size_t n = 0;
    for (const auto& [id, c] : seen_) n += c;
    return n;
  }

 private:
  CountBackend& inner_;
  ErrorKind kind_;
  std::size_t failures_;
  std::map<std::string, std::size_t> seen_;
};

RateLimitPolicy fast_policy() {
  RateLimitPolicy p;
  p.max_requests_per_window = 1000;
  p.window_ms = 1000;
  p.max_retries = 3;
  p.backoff_ms = {10, 20, 40};
  return p;
}

}  // namespace

TEST(SnapshotFormat, EntryLineRoundTrip) {
  PopulationSpec s;
  s.label = "label with \"quotes\" and ∩";
  s.home_country = "US";
  s.select(Axis::age, "13-18");
  s.locations = std::set<std::string>{"Los Angeles"};
  const AudienceCount c{make_query(s, "rock"), 123'456'789'012ULL, true, 1'700'000'000'000, "sim"};
  const auto line = entry_line(c);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto back = entry_from_line(line);
  ASSERT_TRUE(std::holds_alternative<AudienceCount>(back));
  EXPECT_EQ(std::get<AudienceCount>(back), c);
  EXPECT_EQ(entry_line(back), line);

  const QueryFailure f{make_query(s), ErrorKind::invalid_targeting, "unknown thing", 5, "http"};
  EXPECT_EQ(std::get<QueryFailure>(entry_from_line(entry_line(f))), f);
}

TEST(SnapshotFormat, RejectsTamperedRequestId) {
  PopulationSpec s;
  s.home_country = "US";
  auto line = entry_line(AudienceCount{make_query(s), 10, false, 0, "sim"});
  const auto pos = line.find("\"home_country\":\"US\"");
  ASSERT_NE(pos, std::string::npos);
  line.replace(pos, 19, "\"home_country\":\"MX\"");
  EXPECT_THROW(entry_from_line(line), Error);
}

TEST(SnapshotFormat, RejectsForeignHeaders) {
  EXPECT_THROW(Snapshot::parse(std::string("{\"schema\":\"other\",\"version\":1}\n")), Error);
  EXPECT_THROW(Snapshot::parse(std::string("{\"schema\":\"assimlab.snapshot\",\"version\":99}\n")), Error);
  EXPECT_THROW(Snapshot::parse(std::string("")), Error);
}

TEST(FetchSnapshot, TenQueriesHappyPath) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(2);
  ASSERT_EQ(plan.estimated_request_count(), 10u);
  auto store = SnapshotStore::in_memory(kHeader);
  ManualClock clock;
  const auto report = fetch_snapshot(sim, plan, fast_policy(), store, clock);
  EXPECT_EQ(report.answered, 10u);
  EXPECT_EQ(report.failed, 0u);
  EXPECT_EQ(store.snapshot().entries().size(), 10u);
  EXPECT_TRUE(store.snapshot().missing(plan).empty());
}

TEST(FetchSnapshot, WriteReadReserveIsValueIdenticalAndRewriteByteIdentical) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(3);
  const auto path = temp_file("roundtrip.ndjson");
  ManualClock clock(1'700'000'000'000);
  {
    auto store = SnapshotStore::open(path, kHeader);
    fetch_snapshot(sim, plan, fast_policy(), store, clock);
  }
  const auto bytes = read_file(path);
  const auto snap = Snapshot::load(path);
  SnapshotBackend replay(snap);
  for (const auto& q : plan.queries()) EXPECT_EQ(replay.serve(q).result, sim.serve(q).result);
  EXPECT_EQ(snap.to_ndjson(), bytes);

  const auto copy = temp_file("rewrite.ndjson");
  write_file_atomic(copy, Snapshot::load(path).to_ndjson());
  EXPECT_EQ(read_file(copy), bytes);
}

TEST(FetchSnapshot, ResumeAfterKillMatchesUninterruptedRun) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(3);
  const auto full_path = temp_file("full.ndjson");
  const auto resumed_path = temp_file("resumed.ndjson");
  {
    ManualClock clock(1000);
    auto store = SnapshotStore::open(full_path, kHeader);
    fetch_snapshot(sim, plan, fast_policy(), store, clock);
  }
  for (std::size_t kill_after : {0u, 1u, 7u}) {
    fs::remove(resumed_path);
    {
      ManualClock clock(1000);
      DyingBackend dying(sim, kill_after);
      auto store = SnapshotStore::open(resumed_path, kHeader);
      EXPECT_THROW(fetch_snapshot(dying, plan, fast_policy(), store, clock), std::runtime_error);
      EXPECT_EQ(store.snapshot().entries().size(), kill_after);
    }
    ManualClock clock(1000);
    auto store = SnapshotStore::open(resumed_path, kHeader);
    const auto report = fetch_snapshot(sim, plan, fast_policy(), store, clock);
    EXPECT_EQ(report.skipped, kill_after);
    EXPECT_EQ(read_file(resumed_path), read_file(full_path)) << "kill after " << kill_after;
  }
}

TEST(FetchSnapshot, RerunIsNoOp) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(2);
  const auto path = temp_file("rerun.ndjson");
  ManualClock clock;
  {
    auto store = SnapshotStore::open(path, kHeader);
    fetch_snapshot(sim, plan, fast_policy(), store, clock);
  }
  const auto before = read_file(path);
  auto store = SnapshotStore::open(path, kHeader);
  const auto report = fetch_snapshot(sim, plan, fast_policy(), store, clock);
  EXPECT_EQ(report.answered, 0u);
  EXPECT_EQ(report.skipped, plan.estimated_request_count());
  EXPECT_EQ(read_file(path), before);
}

TEST(FetchSnapshot, RefusesSnapshotOfAnotherStudy) {
  const auto path = temp_file("other.ndjson");
  { SnapshotStore::open(path, kHeader); }
  EXPECT_THROW(SnapshotStore::open(path, {"another", "sim", kSnapshotSchemaVersion}), Error);
}

TEST(FetchSnapshot, CacheTransparencyIgnoringTimestamps) {
  const auto w = world();
  SimulatorBackend sim(w);
  CachedBackend cached(sim);
  const auto plan = plan_of(3);
  auto first = SnapshotStore::in_memory(kHeader);
  auto second = SnapshotStore::in_memory(kHeader);
  ManualClock c1(0), c2(99'999);
  fetch_snapshot(cached, plan, fast_policy(), first, c1);
  fetch_snapshot(cached, plan, fast_policy(), second, c2);
  ASSERT_EQ(first.snapshot().entries().size(), second.snapshot().entries().size());
  for (std::size_t i = 0; i < first.snapshot().entries().size(); ++i) {
    const auto& a = std::get<AudienceCount>(first.snapshot().entries()[i]);
    const auto& b = std::get<AudienceCount>(second.snapshot().entries()[i]);
    EXPECT_EQ(a.query, b.query);
    EXPECT_EQ(a.count, b.count);
    EXPECT_EQ(a.clamped, b.clamped);
  }
}

TEST(FetchSnapshot, TransportErrorsRetryWithBackoff) {
  const auto w = world();
  SimulatorBackend sim(w);
  FlakyBackend flaky(sim, ErrorKind::transport, 2);
  const auto plan = plan_of(1);
  auto store = SnapshotStore::in_memory(kHeader);
  ManualClock clock;
  const auto report = fetch_snapshot(flaky, plan, fast_policy(), store, clock);
  EXPECT_EQ(report.answered, plan.estimated_request_count());
  EXPECT_EQ(report.retries, 2 * plan.estimated_request_count());
  EXPECT_EQ(clock.total_slept(), static_cast<std::int64_t>(plan.estimated_request_count()) * (10 + 20));
}

TEST(FetchSnapshot, PersistentTransportErrorsAreRecorded) {
  const auto w = world();
  SimulatorBackend sim(w);
  FlakyBackend flaky(sim, ErrorKind::transport, 100);
  const auto plan = plan_of(1);
  auto store = SnapshotStore::in_memory(kHeader);
  ManualClock clock;
  const auto report = fetch_snapshot(flaky, plan, fast_policy(), store, clock);
  EXPECT_EQ(report.failed, plan.estimated_request_count());
  EXPECT_EQ(store.snapshot().failure_count(), plan.estimated_request_count());
  EXPECT_EQ(flaky.calls(), plan.estimated_request_count() * 4);
  SnapshotBackend replay(store.snapshot());
  try {
    replay.serve(plan.queries().front());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::transport);
  }
}

TEST(FetchSnapshot, PersistentQuotaAbortsKeepingCompletedPortion) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(2);
  const auto path = temp_file("quota.ndjson");
  class Quota final : public CountBackend {
   public:
    explicit Quota(CountBackend& inner) : inner_(inner) {}
    Served serve(const AudienceQuery& q) override {
      if (++calls_ > 3) throw Error(ErrorKind::quota_exceeded, "429");
      return inner_.serve(q);
    }
    std::string label() const override { return "quota"; }

   private:
    CountBackend& inner_;
    std::size_t calls_ = 0;
  } quota(sim);
  ManualClock clock;
  {
    auto store = SnapshotStore::open(path, kHeader);
    try {
      fetch_snapshot(quota, plan, fast_policy(), store, clock);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::quota_exceeded);
    }
    EXPECT_EQ(store.snapshot().entries().size(), 3u);
  }
  EXPECT_EQ(Snapshot::load(path).entries().size(), 3u);
  EXPECT_EQ(clock.sleeps(), (std::vector<std::int64_t>{10, 20, 40}));
}

TEST(FetchSnapshot, InvalidTargetingIsRecordedNotRetried) {
  const auto w = world();
  SimulatorBackend sim(w);
  QueryPlan plan;
  PopulationSpec bad;
  bad.home_country = "ZZ";
  plan.add(make_query(bad));
  auto store = SnapshotStore::in_memory(kHeader);
  ManualClock clock;
  const auto report = fetch_snapshot(sim, plan, fast_policy(), store, clock);
  EXPECT_EQ(report.failed, 1u);
  EXPECT_EQ(report.retries, 0u);
  const auto* entry = store.snapshot().find(plan.queries()[0].request_id);
  ASSERT_NE(entry, nullptr);
  EXPECT_EQ(std::get<QueryFailure>(*entry).kind, ErrorKind::invalid_targeting);
}

TEST(SnapshotBackend, MissingRecordIsPartialSnapshot) {
  Snapshot snap(kHeader);
  SnapshotBackend backend(snap);
  PopulationSpec s;
  try {
    backend.serve(make_query(s));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::partial_snapshot);
  }
}

TEST(SnapshotBackend, ConcurrentReaders) {
  const auto w = world();
  SimulatorBackend sim(w);
  const auto plan = plan_of(3);
  auto store = SnapshotStore::in_memory(kHeader);
  ManualClock clock;
  fetch_snapshot(sim, plan, fast_policy(), store, clock);
  SnapshotBackend replay(store.snapshot());
  std::vector<std::thread> readers;
  std::atomic<std::size_t> mismatches{0};
  for (int t = 0; t < 4; ++t)
    readers.emplace_back([&] {
      for (int round = 0; round < 50; ++round)
        for (const auto& q : plan.queries())
          if (replay.serve(q).result != sim.serve(q).result) ++mismatches;
    });
  for (auto& t : readers) t.join();
  EXPECT_EQ(mismatches.load(), 0u);
}
