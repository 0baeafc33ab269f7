#pragma once

// Study configuration and the subcommands of the assimlab CLI. Every command
// reads a study config, talks to one CountBackend and writes deterministic
// CSV/JSON artifacts; wall-clock data only goes to metadata_<command>.json.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "assimlab/audience.hpp"
#include "assimlab/catalog.hpp"
#include "assimlab/error.hpp"
#include "assimlab/http.hpp"
#include "assimlab/metrics.hpp"
#include "assimlab/report.hpp"
#include "assimlab/simulator.hpp"
#include "assimlab/snapshot.hpp"
#include "assimlab/stats.hpp"
#include "assimlab/util.hpp"
#include "assimlab/wire.hpp"

namespace assimlab {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

struct PairSpec {
  std::string name;
  std::string expat;
  std::string dest;
  std::string source;
};

struct ComparisonSpec {
  std::string name;
  /// group label -> pairs whose log AR values are pooled into the group
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
};

struct RegressionSpec {
  std::string dest;
  std::string source;
  /// generation level label -> population; the first entry is the reference
  std::vector<std::pair<std::string, std::string>> expats;
  std::vector<Axis> axes;
  std::optional<std::size_t> interests_top;
  /// model name -> factor pairs to interact
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> models;
};

struct ValidationSpec {
  std::vector<std::string> populations;
  std::vector<Axis> axes;
  fs::path ground_truth;
  std::vector<std::pair<std::string, std::string>> overlaps;
};

struct BackendSettings {
  std::string kind = "sim";
  fs::path scenario;
  std::string endpoint;
  std::optional<std::size_t> budget;
  RateLimitPolicy policy;
  std::vector<std::string> headers;
};

struct StudyConfig {
  std::string study = "study";
  std::uint64_t seed = 0;
  std::string config_hash;
  fs::path base_dir;

  fs::path catalog_path;
  std::vector<std::string> catalog_ids;  // alternative to catalog_path
  std::uint64_t floor = 100'000;

  double percentile = 50.0;
  std::size_t bootstrap = 1000;
  std::size_t kl_trials = 1000;
  std::size_t top_k = 10;

  ProxyConfig proxy_config;
  std::vector<std::pair<std::string, PopulationSpec>> populations;
  std::vector<PairSpec> pairs;
  std::vector<ComparisonSpec> comparisons;
  std::optional<RegressionSpec> regression;
  std::optional<ValidationSpec> validation;
  std::vector<DemographicAxis> axes = default_axes();
  BackendSettings backend;
  fs::path output = "out";

  const PopulationSpec& population(const std::string& name) const {
    for (const auto& [n, spec] : populations)
      if (n == name) return spec;
    throw Error(ErrorKind::missing_config, "unknown population '" + name + "'");
  }

  const DemographicAxis& axis(Axis a) const {
    for (const auto& ax : axes)
      if (ax.axis == a) return ax;
    throw Error(ErrorKind::missing_config, "no categories configured for axis '" + std::string(to_string(a)) + "'");
  }
};

namespace detail {

inline fs::path resolve_path(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(ErrorKind::missing_config, what + " '" + p.string() + "' does not exist");
}

inline std::vector<std::pair<std::string, std::string>> string_pairs(const Json& j) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) throw Error(ErrorKind::parse, "expected a list of [a, b] pairs");
    out.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  }
  return out;
}

}  // namespace detail

/// Study config document, see README for the full schema. Relative paths
/// resolve against the config file's directory.
inline StudyConfig study_config_from_json(const Json& j, const fs::path& base_dir) {
  StudyConfig c;
  c.base_dir = base_dir;
  try {
    c.study = j.value("study", c.study);
    c.seed = j.value("seed", c.seed);
    if (j.contains("catalog")) {
      const auto& cat = j.at("catalog");
      if (cat.contains("path")) c.catalog_path = detail::resolve_path(base_dir, cat.at("path").get<std::string>());
      if (cat.contains("interests")) c.catalog_ids = cat.at("interests").get<std::vector<std::string>>();
      c.floor = cat.value("floor", c.floor);
    }
    c.percentile = j.value("percentile", c.percentile);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.kl_trials = j.value("kl_trials", c.kl_trials);
    c.top_k = j.value("top_k", c.top_k);
    if (j.contains("axes")) {
      c.axes.clear();
      for (const auto& a : j.at("axes")) {
        DemographicAxis axis{parse_axis(a.at("name").get<std::string>()),
                             a.at("categories").get<std::vector<std::string>>(), a.value("ordinal", false),
                             a.value("reference", std::string())};
        if (axis.reference.empty()) axis.reference = axis.categories.front();
        axis.validate();
        c.axes.push_back(std::move(axis));
      }
    }
    if (j.contains("proxy_config")) {
      const auto& p = j.at("proxy_config");
      auto& pc = c.proxy_config;
      pc.group_label = p.value("group_label", pc.group_label);
      pc.ethnic_affinity = p.value("ethnic_affinity", pc.ethnic_affinity);
      pc.home_country = p.value("home_country", pc.home_country);
      pc.origin_name = p.value("origin_name", pc.origin_name);
      pc.origin_language = p.value("origin_language", pc.origin_language);
      pc.community_cities = p.value("community_cities", pc.community_cities);
    }
    const Json populations = j.value("populations", Json::object());
    for (const auto& [name, spec_json] : populations.items()) {
      PopulationSpec spec = spec_from_json(spec_json);
      if (spec.label.empty()) spec.label = name;
      c.populations.emplace_back(name, std::move(spec));
    }
    const Json proxies = j.value("proxies", Json::object());
    for (const auto& [name, proxy_json] : proxies.items()) {
      GenerationProxy proxy{parse_proxy_kind(proxy_json.at("kind").get<std::string>()),
                            proxy_json.value("community_cities", std::vector<std::string>{})};
      c.populations.emplace_back(name, resolve_proxy(proxy, c.proxy_config));
    }
    for (std::size_t a = 0; a < c.populations.size(); ++a)
      for (std::size_t b = a + 1; b < c.populations.size(); ++b)
        if (c.populations[a].first == c.populations[b].first || c.populations[a].second.label == c.populations[b].second.label)
          throw Error(ErrorKind::invalid_argument, "population '" + c.populations[b].first + "' is declared twice");
    for (const auto& p : j.value("pairs", Json::array())) {
      PairSpec pair{p.at("name").get<std::string>(), p.at("expat").get<std::string>(), p.at("dest").get<std::string>(),
                    p.at("source").get<std::string>()};
      c.population(pair.expat), c.population(pair.dest), c.population(pair.source);
      c.pairs.push_back(std::move(pair));
    }
    for (const auto& cmp : j.value("compare", Json::array())) {
      ComparisonSpec spec{cmp.at("name").get<std::string>(), {}};
      for (const auto& g : cmp.at("groups")) {
        spec.groups.emplace_back(g.at("label").get<std::string>(), g.at("pairs").get<std::vector<std::string>>());
        for (const auto& pair : spec.groups.back().second)
          if (std::none_of(c.pairs.begin(), c.pairs.end(), [&](const PairSpec& p) { return p.name == pair; }))
            throw Error(ErrorKind::missing_config, "comparison '" + spec.name + "' uses unknown pair '" + pair + "'");
      }
      c.comparisons.push_back(std::move(spec));
    }
    if (j.contains("regression")) {
      const auto& r = j.at("regression");
      RegressionSpec spec;
      spec.dest = r.at("dest").get<std::string>();
      spec.source = r.at("source").get<std::string>();
      for (const auto& e : r.at("expats")) spec.expats.emplace_back(e.at("level").get<std::string>(), e.at("population").get<std::string>());
      if (spec.expats.empty()) throw Error(ErrorKind::missing_config, "regression needs at least one expat population");
      for (const auto& a : r.value("axes", std::vector<std::string>{"gender", "education", "age", "language", "region"}))
        spec.axes.push_back(parse_axis(a));
      if (r.contains("interests_top")) spec.interests_top = r.at("interests_top").get<std::size_t>();
      if (r.contains("models")) {
        for (const auto& [name, pairs] : r.at("models").items()) spec.models.emplace_back(name, detail::string_pairs(pairs));
      } else {
        spec.models = {{"main", {}},
                       {"age_education", {{"age", "education"}}},
                       {"age_language", {{"age", "language"}}},
                       {"age_generation", {{"age", "generation"}}}};
      }
      c.population(spec.dest), c.population(spec.source);
      for (const auto& [level, pop] : spec.expats) c.population(pop);
      c.regression = std::move(spec);
    }
    if (j.contains("validation")) {
      const auto& v = j.at("validation");
      ValidationSpec spec;
      spec.populations = v.at("populations").get<std::vector<std::string>>();
      for (const auto& a : v.at("axes").get<std::vector<std::string>>()) spec.axes.push_back(parse_axis(a));
      spec.ground_truth = detail::resolve_path(base_dir, v.at("ground_truth").get<std::string>());
      detail::require_file(spec.ground_truth, "ground truth file");
      if (v.contains("overlaps")) spec.overlaps = detail::string_pairs(v.at("overlaps"));
      for (const auto& p : spec.populations) c.population(p);
      for (const auto& [a, b] : spec.overlaps) c.population(a), c.population(b);
      c.validation = std::move(spec);
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      auto& s = c.backend;
      s.kind = b.value("kind", s.kind);
      if (b.contains("scenario")) s.scenario = detail::resolve_path(base_dir, b.at("scenario").get<std::string>());
      s.endpoint = b.value("endpoint", s.endpoint);
      if (b.contains("budget")) s.budget = b.at("budget").get<std::size_t>();
      if (b.contains("rate")) {
        auto [n, window] = parse_rate(b.at("rate").get<std::string>());
        s.policy.max_requests_per_window = n;
        s.policy.window_ms = window;
      }
      s.policy.max_retries = b.value("max_retries", s.policy.max_retries);
      if (b.contains("backoff_ms")) s.policy.backoff_ms = b.at("backoff_ms").get<std::vector<std::int64_t>>();
      s.headers = b.value("headers", s.headers);
      s.policy.validate();
    }
    if (j.contains("output")) c.output = detail::resolve_path(base_dir, j.at("output").get<std::string>());
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, std::string("bad study config: ") + e.what());
  }
  if (c.catalog_path.empty() && c.catalog_ids.empty())
    throw Error(ErrorKind::missing_config, "study config needs a catalog path or interest list");
  if (!c.catalog_path.empty()) detail::require_file(c.catalog_path, "catalog file");
  if (c.backend.kind == "sim" && !c.backend.scenario.empty()) detail::require_file(c.backend.scenario, "scenario file");
  return c;
}

inline StudyConfig load_study_config(const fs::path& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, "cannot parse " + path.string() + ": " + e.what());
  }
  StudyConfig c = study_config_from_json(j, fs::absolute(path).parent_path());
  c.config_hash = hex64(fnv1a64(text));
  if (!j.contains("output")) c.output = fs::absolute(path).parent_path() / "out";
  return c;
}

/// Reads "name,worldwide_audience" rows (header line required).
inline std::vector<RawGenre> read_genre_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<RawGenre> out;
  std::getline(in, line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string name, count;
    if (line.front() == '"') {
      const auto close = line.find("\",", 1);
      if (close == std::string::npos) throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": bad quoting");
      name = line.substr(1, close - 1);
      count = line.substr(close + 2);
    } else {
      const auto comma = line.rfind(',');
      if (comma == std::string::npos) throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": expected name,count");
      name = line.substr(0, comma);
      count = line.substr(comma + 1);
    }
    try {
      out.push_back({name, std::stoull(count)});
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": bad audience '" + count + "'");
    }
  }
  return out;
}

inline InterestCatalog load_catalog(const StudyConfig& c) {
  if (!c.catalog_ids.empty()) return InterestCatalog::from_ids(c.catalog_ids);
  const auto raw = read_genre_csv(c.catalog_path);
  return build_catalog(raw, c.floor);
}

// ---------------------------------------------------------------------------
// Command context

struct CommandOptions {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<std::string> backend;
  std::optional<std::string> endpoint;
  std::optional<std::size_t> budget;
  std::optional<std::string> rate;
  std::optional<fs::path> resume;
  bool allow_partial = false;
  // sim
  std::optional<fs::path> scenario;
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

class StudyContext {
 public:
  StudyContext(StudyConfig config, const CommandOptions& options, bool collecting)
      : config_(std::move(config)), allow_partial_(options.allow_partial) {
    if (options.seed) config_.seed = *options.seed;
    if (options.out) config_.output = *options.out;
    if (options.endpoint) config_.backend.endpoint = *options.endpoint;
    if (options.budget) config_.backend.budget = *options.budget;
    if (options.rate) {
      auto [n, window] = parse_rate(*options.rate);
      config_.backend.policy.max_requests_per_window = n;
      config_.backend.policy.window_ms = window;
    }
    snapshot_path_ = options.resume ? *options.resume : config_.output / "snapshot.ndjson";
    catalog_ = load_catalog(config_);
    backend_kind_ = options.backend ? *options.backend : (collecting ? config_.backend.kind : std::string("snapshot"));
    open_backend();
  }

  const StudyConfig& config() const { return config_; }
  const InterestCatalog& catalog() const { return catalog_; }
  const fs::path& snapshot_path() const { return snapshot_path_; }
  const std::string& backend_kind() const { return backend_kind_; }
  CountBackend& backend() { return *backend_; }
  bool reading_snapshot() const { return backend_kind_ == "snapshot"; }

  std::uint64_t seed_for(const std::string& label) const { return derive_seed(config_.seed, label); }

  std::vector<std::string> preamble() const {
    return {"study=" + config_.study + " config_hash=" + config_.config_hash + " seed=" + std::to_string(config_.seed)};
  }

  Json stamp(Json doc) const {
    doc["study"] = config_.study;
    doc["config_hash"] = config_.config_hash;
    doc["seed"] = config_.seed;
    return doc;
  }

  void write(const std::string& name, const std::string& content) const {
    write_file_atomic(config_.output / name, content);
  }

  void write_json(const std::string& name, const Json& doc) const { write(name, stamp(doc).dump(2) + "\n"); }

  /// Refuses to go on when the snapshot lacks planned queries, unless
  /// --allow-partial was given.
  void require_complete(const QueryPlan& plan) {
    if (!reading_snapshot()) return;
    const auto missing = snapshot_->missing(plan);
    if (!missing.empty() && !allow_partial_)
      throw Error(ErrorKind::partial_snapshot, "snapshot " + snapshot_path_.string() + " lacks " +
                                                   std::to_string(missing.size()) + " of " +
                                                   std::to_string(plan.estimated_request_count()) +
                                                   " planned queries (use --allow-partial to continue)");
  }

  /// Count for a query, or nullopt when it is missing and partial input is
  /// allowed.
  std::optional<std::uint64_t> count(const AudienceQuery& q) {
    try {
      return backend_->serve(q).result.count;
    } catch (const Error& e) {
      if (allow_partial_ && (e.kind() == ErrorKind::partial_snapshot || reading_snapshot())) return std::nullopt;
      throw;
    }
  }

  struct Ratios {
    InterestRatioVector vector;
    std::set<std::string> missing;
  };

  Ratios ratios(const PopulationSpec& spec, const InterestCatalog& catalog) {
    std::map<std::string, std::uint64_t> counts;
    std::set<std::string> missing;
    for (const auto& i : catalog.interests()) {
      auto c = count(make_query(spec, i.id));
      if (c)
        counts[i.id] = *c;
      else
        missing.insert(i.id);
    }
    return {interest_ratios(counts, catalog, spec.label), std::move(missing)};
  }

  const SyntheticWorld* world() const { return world_ ? &*world_ : nullptr; }

 private:
  void open_backend() {
    const auto& kind = backend_kind_;
    if (kind == "snapshot") {
      snapshot_ = Snapshot::load(snapshot_path_);
      backend_ = std::make_unique<SnapshotBackend>(*snapshot_);
      return;
    }
    std::unique_ptr<CountBackend> inner;
    if (kind == "sim") {
      if (config_.backend.scenario.empty()) throw Error(ErrorKind::missing_config, "sim backend needs a scenario file");
      auto file = scenario_from_json(Json::parse(read_file(config_.backend.scenario)));
      file.seed = derive_seed(config_.seed, "world");
      world_ = world_from_scenario(file);
      for (const auto& axis : config_.axes) world_->register_axis(axis);
      inner = std::make_unique<SimulatorBackend>(*world_);
    } else if (kind == "http") {
      if (config_.backend.endpoint.empty()) throw Error(ErrorKind::missing_config, "http backend needs an endpoint");
      httplib::Headers headers;
      for (const auto& h : config_.backend.headers) headers.insert(parse_header(h));
      if (const char* env = std::getenv("ASSIMLAB_AUTH_HEADER"); env && *env) headers.insert(parse_header(env));
      inner = std::make_unique<HttpBackend>(config_.backend.endpoint, std::move(headers));
    } else {
      throw Error(ErrorKind::invalid_argument, "unknown backend '" + kind + "' (expected http, sim or snapshot)");
    }
    inner_ = std::move(inner);
    backend_ = std::make_unique<CachedBackend>(*inner_);
  }

  StudyConfig config_;
  bool allow_partial_ = false;
  fs::path snapshot_path_;
  InterestCatalog catalog_;
  std::string backend_kind_;
  std::optional<SyntheticWorld> world_;
  std::optional<Snapshot> snapshot_;
  std::unique_ptr<CountBackend> inner_;
  std::unique_ptr<CountBackend> backend_;
};

// ---------------------------------------------------------------------------
// Plans per command

inline QueryPlan pair_plan(const StudyConfig& c, const InterestCatalog& catalog) {
  std::vector<PopulationSpec> pops;
  for (const auto& p : c.pairs)
    for (const auto* name : {&p.expat, &p.dest, &p.source}) pops.push_back(c.population(*name));
  if (pops.empty()) return {};
  return plan_queries(pops, catalog);
}

inline InterestCatalog regression_catalog(const StudyConfig& c, const InterestCatalog& catalog) {
  if (!c.regression || !c.regression->interests_top || *c.regression->interests_top >= catalog.size()) return catalog;
  auto interests = catalog.interests();
  std::stable_sort(interests.begin(), interests.end(), [](const Interest& a, const Interest& b) {
    return a.worldwide_audience != b.worldwide_audience ? a.worldwide_audience > b.worldwide_audience : a.id < b.id;
  });
  interests.resize(*c.regression->interests_top);
  return InterestCatalog::from_interests(std::move(interests), catalog.floor());
}

inline std::vector<DemographicAxis> regression_axes(const StudyConfig& c) {
  std::vector<DemographicAxis> axes;
  for (Axis a : c.regression->axes) axes.push_back(c.axis(a));
  return axes;
}

inline QueryPlan regression_plan(const StudyConfig& c, const InterestCatalog& catalog) {
  if (!c.regression) return {};
  const auto& r = *c.regression;
  const auto cat = regression_catalog(c, catalog);
  std::vector<PopulationSpec> whole{c.population(r.dest), c.population(r.source)};
  QueryPlan plan = plan_queries(whole, cat);
  std::vector<PopulationSpec> expats;
  for (const auto& [level, pop] : r.expats) expats.push_back(c.population(pop));
  const auto axes = regression_axes(c);
  plan.merge(plan_queries(expats, cat, axes));
  return plan;
}

inline QueryPlan validation_plan(const StudyConfig& c) {
  QueryPlan plan;
  if (!c.validation) return plan;
  std::vector<DemographicAxis> axes;
  for (Axis a : c.validation->axes) axes.push_back(c.axis(a));
  for (const auto& p : c.validation->populations) plan.merge(plan_category_totals(c.population(p), axes));
  for (const auto& [a, b] : c.validation->overlaps) {
    const auto& sa = c.population(a);
    const auto& sb = c.population(b);
    plan.add(make_query(sa));
    plan.add(make_query(sb));
    plan.add(make_query(intersect_specs(sa, sb)));
  }
  return plan;
}

inline QueryPlan full_plan(const StudyConfig& c, const InterestCatalog& catalog) {
  QueryPlan plan = pair_plan(c, catalog);
  plan.merge(regression_plan(c, catalog));
  plan.merge(validation_plan(c));
  return plan;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_collect(StudyContext& ctx) {
  const auto& c = ctx.config();
  QueryPlan plan = full_plan(c, ctx.catalog());
  if (c.backend.budget && plan.estimated_request_count() > *c.backend.budget)
    throw Error(ErrorKind::plan_too_large, "plan needs " + std::to_string(plan.estimated_request_count()) +
                                               " requests, budget is " + std::to_string(*c.backend.budget));
  auto store = SnapshotStore::open(ctx.snapshot_path(), {c.study, ctx.backend_kind(), kSnapshotSchemaVersion});
  SystemClock clock;
  const auto report = fetch_snapshot(ctx.backend(), plan, c.backend.policy, store, clock);
  ctx.write_json("collect.json", {{"planned", plan.estimated_request_count()},
                                  {"catalog_size", ctx.catalog().size()},
                                  {"catalog_dropped", ctx.catalog().dropped()},
                                  {"answered", report.answered},
                                  {"skipped", report.skipped},
                                  {"failed", report.failed},
                                  {"backend", ctx.backend_kind()}});
  std::cout << "planned " << plan.estimated_request_count() << " queries: " << report.answered << " fetched, "
            << report.skipped << " already present, " << report.failed << " failed\n";
  return report.failed == 0 ? 0 : 3;
}

struct PairResult {
  PairSpec pair;
  AssimilationReport report;
  MedianCi ci;
  InterestRatioVector expat_ratios;
  std::set<std::string> missing;
};

inline PairResult compute_pair(StudyContext& ctx, const PairSpec& pair) {
  const auto& c = ctx.config();
  auto expat = ctx.ratios(c.population(pair.expat), ctx.catalog());
  auto dest = ctx.ratios(c.population(pair.dest), ctx.catalog());
  auto source = ctx.ratios(c.population(pair.source), ctx.catalog());
  const auto filter = filter_interests(dest.vector, source.vector, c.percentile);
  PairResult out{pair, assimilation_ratios(expat.vector, dest.vector, filter), {}, expat.vector, {}};
  out.report.source = source.vector.label;
  out.ci = median_ar_ci(out.report, c.bootstrap, ctx.seed_for("bootstrap/" + pair.name));
  for (auto* m : {&expat.missing, &dest.missing, &source.missing}) out.missing.insert(m->begin(), m->end());
  return out;
}

inline std::vector<PairResult> compute_pairs(StudyContext& ctx) {
  ctx.require_complete(pair_plan(ctx.config(), ctx.catalog()));
  std::vector<PairResult> out;
  for (const auto& p : ctx.config().pairs) out.push_back(compute_pair(ctx, p));
  return out;
}

inline Json pair_summary(const PairResult& r) {
  const auto& f = r.report.filter;
  return {{"pair", r.pair.name},
          {"expat", r.report.expat},
          {"dest", r.report.dest},
          {"source", r.report.source},
          {"interests", r.report.rows.size()},
          {"median_log_ar", r.report.median_log_ar},
          {"ci_low", r.report.ci_low},
          {"ci_high", r.report.ci_high},
          {"bootstrap", r.ci.resamples},
          {"bootstrap_seed", r.ci.seed},
          {"degenerate_ci", r.ci.degenerate},
          {"missing_counts", r.missing.size()},
          {"missing_interests", r.missing},
          {"filter",
           {{"percentile", f.percentile},
            {"delta_base", f.base == DeltaBase::step1_survivors ? "step1_survivors" : "all_interests"},
            {"threshold", f.threshold},
            {"kept", f.kept},
            {"removed_step1", f.removed_step1},
            {"removed_step2", f.removed_step2}}}};
}

inline int cmd_ar(StudyContext& ctx) {
  const auto results = compute_pairs(ctx);
  Json summary = Json::array();
  for (const auto& r : results) {
    CsvWriter csv({"interest", "expat_ratio", "dest_ratio", "ar", "log_ar", "floored", "missing"}, ctx.preamble());
    for (const auto& row : r.report.rows)
      csv.row({row.id, format_double(row.expat_ratio), format_double(row.dest_ratio), format_double(row.ar),
               format_double(row.log_ar), row.floored ? "1" : "0", r.missing.contains(row.id) ? "1" : "0"});
    ctx.write("ar_" + safe_name(r.pair.name) + ".csv", csv.str());

    CsvWriter top({"rank", "interest", "ratio"}, ctx.preamble());
    std::size_t rank = 0;
    for (const auto& t : top_k_interests(r.expat_ratios, ctx.config().top_k))
      top.row({std::to_string(++rank), t.id, format_double(t.ratio)});
    ctx.write("topk_" + safe_name(r.pair.name) + ".csv", top.str());
    summary.push_back(pair_summary(r));
  }
  ctx.write_json("ar_summary.json", {{"pairs", summary}});
  for (const auto& r : results)
    std::cout << r.pair.name << ": median log AR " << format_fixed(r.report.median_log_ar, 3) << " ["
              << format_fixed(r.report.ci_low, 3) << ", " << format_fixed(r.report.ci_high, 3) << "] over "
              << r.report.rows.size() << " interests\n";
  return 0;
}

inline int cmd_compare(StudyContext& ctx) {
  const auto& c = ctx.config();
  const auto results = compute_pairs(ctx);
  std::map<std::string, const PairResult*> by_name;
  for (const auto& r : results) by_name[r.pair.name] = &r;

  CsvWriter pairs_csv({"pair", "interests", "median_log_ar", "ci_low", "ci_high"}, ctx.preamble());
  std::vector<MedianBar> bars;
  for (const auto& r : results) {
    pairs_csv.row({r.pair.name, std::to_string(r.report.rows.size()), format_double(r.report.median_log_ar),
                   format_double(r.report.ci_low), format_double(r.report.ci_high)});
    bars.push_back({r.pair.name, r.report.median_log_ar, r.report.ci_low, r.report.ci_high});
  }
  ctx.write("compare.csv", pairs_csv.str());
  ctx.write("compare.svg", render_median_svg(bars, "Median log assimilation ratio (95% bootstrap CI)"));

  Json comparisons = Json::array();
  for (const auto& cmp : c.comparisons) {
    GroupedScores grouped;
    CsvWriter csv({"group", "values", "median_log_ar", "ci_low", "ci_high"}, ctx.preamble());
    std::vector<MedianBar> group_bars;
    for (const auto& [label, pair_names] : cmp.groups) {
      auto& values = grouped[label];
      for (const auto& p : pair_names) {
        const auto v = by_name.at(p)->report.log_ars();
        values.insert(values.end(), v.begin(), v.end());
      }
      const auto ci = median_ci(values, c.bootstrap, ctx.seed_for("compare/" + cmp.name + "/" + label));
      csv.row({label, std::to_string(values.size()), format_double(ci.median), format_double(ci.low),
               format_double(ci.high)});
      group_bars.push_back({label, ci.median, ci.low, ci.high});
    }
    Json doc = {{"name", cmp.name}};
    try {
      const auto kw = kruskal_wallis(grouped);
      doc["kruskal"] = {{"h", kw.h}, {"p_value", kw.p_value}, {"df", kw.df}, {"n", kw.n}, {"tie_correction", kw.tie_correction}, {"exact", kw.exact}};
    } catch (const Error& e) {
      doc["kruskal"] = {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}};
    }
    Json groups = Json::array();
    for (const auto& b : group_bars)
      groups.push_back({{"group", b.name}, {"median_log_ar", b.median}, {"ci_low", b.low}, {"ci_high", b.high}});
    doc["groups"] = groups;
    comparisons.push_back(doc);
    ctx.write("compare_" + safe_name(cmp.name) + ".csv", csv.str());
    ctx.write("compare_" + safe_name(cmp.name) + ".svg", render_median_svg(group_bars, cmp.name));
  }
  Json pairs = Json::array();
  for (const auto& r : results) pairs.push_back(pair_summary(r));
  ctx.write_json("compare.json", {{"pairs", pairs}, {"comparisons", comparisons}});
  for (const auto& cmp : comparisons) std::cout << cmp["name"].get<std::string>() << ": " << cmp["kruskal"].dump() << "\n";
  return 0;
}

inline int cmd_kde(StudyContext& ctx) {
  const auto results = compute_pairs(ctx);
  std::vector<NamedCurve> curves;
  Json entries = Json::array();
  for (const auto& r : results) {
    const auto values = r.report.log_ars();
    try {
      auto curve = kde_density(values);
      CsvWriter csv({"log_ar", "density"}, ctx.preamble());
      for (std::size_t i = 0; i < curve.x.size(); ++i) csv.row({format_double(curve.x[i]), format_double(curve.y[i])});
      ctx.write("kde_" + safe_name(r.pair.name) + ".csv", csv.str());
      entries.push_back({{"pair", r.pair.name}, {"bandwidth", curve.bandwidth}, {"rule", "silverman"},
                         {"points", curve.x.size()}, {"mass", trapezoid_mass(curve)}});
      curves.push_back({r.pair.name, std::move(curve)});
    } catch (const Error& e) {
      entries.push_back({{"pair", r.pair.name}, {"skipped", std::string(to_string(e.kind()))}, {"message", e.what()}});
    }
  }
  ctx.write_json("kde.json", {{"curves", entries}});
  ctx.write("kde.svg", render_density_svg(curves, "Kernel density of log assimilation ratios"));
  return 0;
}

inline std::map<std::string, std::map<std::string, double>> read_ground_truth(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
    std::map<std::string, std::map<std::string, double>> out;
    for (const auto& [axis, cats] : j.items()) out[axis] = cats.get<std::map<std::string, double>>();
    return out;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, "bad ground truth file " + path.string() + ": " + e.what());
  }
}

inline int cmd_validate(StudyContext& ctx) {
  const auto& c = ctx.config();
  if (!c.validation) throw Error(ErrorKind::missing_config, "study config has no validation section");
  ctx.require_complete(validation_plan(c));
  const auto& v = *c.validation;
  const auto truth = read_ground_truth(v.ground_truth);
  std::vector<DemographicProportions> gt;
  for (Axis a : v.axes) {
    auto it = truth.find(std::string(to_string(a)));
    if (it == truth.end())
      throw Error(ErrorKind::category_mismatch, "ground truth has no axis '" + std::string(to_string(a)) + "'");
    gt.push_back(demographic_proportions(it->second, c.axis(a)));
  }

  Json pops = Json::array();
  bool all_pass = true;
  for (const auto& name : v.populations) {
    const auto& spec = c.population(name);
    std::vector<DemographicProportions> est;
    for (Axis a : v.axes) {
      std::map<std::string, double> counts;
      for (const auto& cat : c.axis(a).categories) {
        auto cell = restrict_to_cell(spec, {{a, cat}});
        if (!cell) continue;
        if (auto n = ctx.count(make_query(*cell))) counts[cat] = static_cast<double>(*n);
      }
      est.push_back(demographic_proportions(counts, c.axis(a)));
    }
    const auto result = validate_proxy(est, gt, c.kl_trials, ctx.seed_for("kl/" + name));
    Json axes = Json::array();
    for (std::size_t i = 0; i < result.axes.size(); ++i) {
      Json e = Json::object(), g = Json::object();
      for (std::size_t k = 0; k < est[i].axis.categories.size(); ++k) {
        e[est[i].axis.categories[k]] = est[i].proportions[k];
        g[gt[i].axis.categories[k]] = gt[i].proportions[k];
      }
      axes.push_back({{"axis", result.axes[i].axis}, {"kl", result.axes[i].kl}, {"smoothed", result.axes[i].smoothed},
                      {"estimated", e}, {"ground_truth", g}});
    }
    all_pass = all_pass && result.pass;
    pops.push_back({{"population", name},
                    {"label", spec.label},
                    {"observed_kl", result.observed_kl},
                    {"baseline_mean", result.baseline_mean},
                    {"baseline_p5", result.baseline_p5},
                    {"quantile", result.quantile},
                    {"trials", result.trials},
                    {"baseline_seed", result.seed},
                    {"verdict", result.pass ? "pass" : "fail"},
                    {"axes", axes}});
    std::cout << name << ": KL " << format_fixed(result.observed_kl, 3) << " vs baseline mean "
              << format_fixed(result.baseline_mean, 3) << " -> " << (result.pass ? "pass" : "fail") << "\n";
  }
  Json overlaps = Json::array();
  for (const auto& [a, b] : v.overlaps) {
    const auto o = overlap_fraction(c.population(a), c.population(b), ctx.backend());
    overlaps.push_back({{"a", a}, {"b", b}, {"fraction", o.fraction}, {"count_a", o.count_a}, {"count_b", o.count_b},
                        {"count_both", o.count_both}, {"clamped", o.clamped}, {"denominator", o.denominator}});
  }
  ctx.write_json("validation.json", {{"populations", pops}, {"overlaps", overlaps}, {"kl_smoothing", kKlSmoothing},
                                     {"kl_direction", "KL(estimated || ground_truth)"}});
  return all_pass ? 0 : 4;
}

struct RegressionData {
  std::vector<Factor> factors;
  std::vector<Observation> observations;
  std::vector<std::string> cell_labels;
  std::vector<std::string> interests;
  std::vector<std::string> warnings;
};

inline RegressionData regression_observations(StudyContext& ctx) {
  const auto& c = ctx.config();
  const auto& r = *c.regression;
  const auto cat = regression_catalog(c, ctx.catalog());
  RegressionData data;
  for (Axis a : r.axes) {
    const auto& axis = c.axis(a);
    data.factors.push_back({std::string(to_string(a)), axis.categories, axis.reference, {}});
  }
  Factor generation{"generation", {}, r.expats.front().first, "Gen. 2+ population"};
  for (const auto& [level, pop] : r.expats) generation.levels.push_back(level);
  data.factors.push_back(generation);

  const auto dest = ctx.ratios(c.population(r.dest), cat);
  const auto source = ctx.ratios(c.population(r.source), cat);
  const auto filter = filter_interests(dest.vector, source.vector, c.percentile);
  const auto axes = regression_axes(c);
  const auto cells = cross_section_cells(axes);
  for (const auto& [level, pop] : r.expats) {
    for (const auto& cell : cells) {
      auto spec = restrict_to_cell(c.population(pop), cell);
      if (!spec) continue;
      std::optional<StudyContext::Ratios> ratios;
      try {
        ratios = ctx.ratios(*spec, cat);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::all_zero) throw;
        data.warnings.push_back("skipped empty cell '" + spec->label + "'");
        continue;
      }
      const auto report = assimilation_ratios(ratios->vector, dest.vector, filter);
      for (const auto& row : report.rows) {
        Observation obs;
        for (const auto& [axis, category] : cell) obs.levels[std::string(to_string(axis))] = category;
        obs.levels["generation"] = level;
        obs.response = row.log_ar;
        data.observations.push_back(std::move(obs));
        data.cell_labels.push_back(level + " | " + cell_label(cell));
        data.interests.push_back(row.id);
      }
    }
  }
  return data;
}

inline int cmd_regress(StudyContext& ctx) {
  const auto& c = ctx.config();
  if (!c.regression) throw Error(ErrorKind::missing_config, "study config has no regression section");
  ctx.require_complete(regression_plan(c, ctx.catalog()));
  const auto data = regression_observations(ctx);

  CsvWriter obs_csv({"cell", "interest", "log_ar"}, ctx.preamble());
  for (std::size_t i = 0; i < data.observations.size(); ++i)
    obs_csv.row({data.cell_labels[i], data.interests[i], format_double(data.observations[i].response)});
  ctx.write("regression_observations.csv", obs_csv.str());

  Json models = Json::array();
  for (const auto& [name, interactions] : c.regression->models) {
    const auto design = encode_design(data.observations, data.factors, interactions);
    const auto fit = ols_fit(design);
    const std::string title = "Model '" + name + "': OLS on log assimilation ratio, destination '" +
                              c.population(c.regression->dest).label + "'";
    ctx.write("regression_" + safe_name(name) + ".txt", render_regression_table(fit, design, title));
    ctx.write("regression_" + safe_name(name) + ".csv", render_regression_csv(fit, design, ctx.preamble()));
    Json warnings = design.warnings;
    for (const auto& w : data.warnings) warnings.push_back(w);
    models.push_back({{"model", name}, {"n", fit.n}, {"columns", fit.k}, {"r2", fit.r2}, {"f", fit.f}, {"f_p", fit.f_p},
                      {"dropped", fit.dropped}, {"warnings", warnings}});
    std::cout << name << ": " << fit_footer(fit) << "\n";
  }
  ctx.write_json("regression.json", {{"models", models}});
  return 0;
}

/// Per-command metadata with wall-clock data, kept apart from the
/// deterministic artifacts.
inline void write_metadata(const fs::path& out, const std::string& command, std::int64_t started,
                           std::int64_t finished, const StudyConfig& c, int status) {
  Json doc = {{"command", command}, {"version", kVersion}, {"started_at_ms", started}, {"finished_at_ms", finished},
              {"config_hash", c.config_hash}, {"seed", c.seed}, {"exit_status", status}};
  write_file_atomic(out / ("metadata_" + command + ".json"), doc.dump(2) + "\n");
}

inline int run_study_command(const std::string& command, const CommandOptions& options) {
  SystemClock clock;
  const auto started = clock.now_ms();
  StudyContext ctx(load_study_config(options.config), options, command == "collect");
  int status = 0;
  if (command == "collect") status = cmd_collect(ctx);
  else if (command == "validate") status = cmd_validate(ctx);
  else if (command == "ar") status = cmd_ar(ctx);
  else if (command == "compare") status = cmd_compare(ctx);
  else if (command == "kde") status = cmd_kde(ctx);
  else if (command == "regress") status = cmd_regress(ctx);
  else throw Error(ErrorKind::invalid_argument, "unknown command '" + command + "'");
  write_metadata(ctx.config().output, command, started, clock.now_ms(), ctx.config(), status);
  return status;
}

// ---------------------------------------------------------------------------
// sim

inline ScenarioFile load_scenario(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::parse, "cannot parse " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

/// Writes world.json: subgroup sizes plus, for planted scenarios, the oracle
/// AR of every planted expat group.
inline Json describe_world(const ScenarioFile& file, const SyntheticWorld& world) {
  Json groups = Json::array();
  for (const auto& g : world.subgroups())
    groups.push_back({{"name", g.name}, {"size", g.size}, {"traits", traits_to_json(g.traits)}});
  Json doc = {{"seed", world.seed()}, {"total_population", world.total_population()}, {"subgroups", groups}};
  if (!file.scenario.dest_shares.empty()) {
    const auto pops = planted_populations(file.scenario);
    const auto catalog = InterestCatalog::from_ids(file.scenario.interests);
    Json oracle = Json::array();
    for (const auto& origin : pops.origins)
      for (const auto& expat : origin.expats) {
        const auto o = oracle_assimilation(world, expat, pops.destination, origin.source, catalog, file.scenario.percentile);
        Json ar = Json::object();
        for (const auto& [id, v] : o.ar) ar[id] = v;
        oracle.push_back({{"origin", origin.name}, {"expat", expat.label}, {"ar", ar}});
      }
    doc["oracle"] = oracle;
  }
  return doc;
}

inline int run_sim_command(const std::string& action, const CommandOptions& options) {
  fs::path scenario_path;
  std::optional<StudyConfig> config;
  if (!options.config.empty()) config = load_study_config(options.config);
  if (options.scenario)
    scenario_path = *options.scenario;
  else if (config)
    scenario_path = config->backend.scenario;
  if (scenario_path.empty()) throw Error(ErrorKind::missing_config, "sim needs --scenario or a config with a scenario");
  auto file = load_scenario(scenario_path);
  if (options.seed)
    file.seed = *options.seed;
  else if (config)
    file.seed = derive_seed(config->seed, "world");
  SyntheticWorld world = world_from_scenario(file);
  if (config)
    for (const auto& axis : config->axes) world.register_axis(axis);

  if (action == "generate") {
    const fs::path out = options.out ? *options.out : config ? config->output : fs::path("out");
    write_file_atomic(out / "world.json", describe_world(file, world).dump(2) + "\n");
    std::cout << "world with " << world.subgroups().size() << " subgroups, " << world.total_population()
              << " persons\n";
    return 0;
  }
  if (action == "serve") {
    SimulatorBackend backend(world);
    ReachServer server(backend);
    const int port = server.bind(options.host, options.port);
    std::cout << "serving " << kReachPath << " on " << options.host << ":" << port << std::endl;
    server.listen();
    return 0;
  }
  throw Error(ErrorKind::invalid_argument, "unknown sim action '" + action + "' (expected generate or serve)");
}

}  // namespace assimlab
