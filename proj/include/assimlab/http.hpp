#pragma once

// HTTP transport for the reach protocol: a client backend and a server that
// exposes any CountBackend (normally the simulator).
//
//   POST /v1/reach   body: reach request   -> 200 reach response
//                                          -> 400 {"error":"invalid_targeting"|"parse",..}
//                                          -> 429 {"error":"quota_exceeded",..}
//   GET  /v1/health                        -> 200 {"status":"ok"}

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
// <resolv.h> defines _res, which clashes with Eigen internals.
#ifdef _res
#undef _res
#endif

#include "assimlab/audience.hpp"
#include "assimlab/error.hpp"
#include "assimlab/wire.hpp"

namespace assimlab {

inline constexpr const char* kReachPath = "/v1/reach";

class HttpBackend final : public CountBackend {
 public:
  /// `endpoint` is scheme://host:port. Extra headers are passed through
  /// untouched (credentials live there).
  explicit HttpBackend(std::string endpoint, httplib::Headers headers = {}, int timeout_s = 30)
      : endpoint_(std::move(endpoint)), headers_(std::move(headers)), client_(endpoint_) {
    client_.set_connection_timeout(timeout_s, 0);
    client_.set_read_timeout(timeout_s, 0);
  }

  Served serve(const AudienceQuery& query) override {
    const std::string body = reach_request_json(query.spec, query.interest).dump();
    httplib::Result res;
    {
      std::lock_guard lock(mutex_);
      res = client_.Post(kReachPath, headers_, body, "application/json");
    }
    if (!res)
      throw Error(ErrorKind::transport, "request to " + endpoint_ + " failed: " + httplib::to_string(res.error()));
    Json doc;
    try {
      doc = Json::parse(res->body);
    } catch (const Json::exception&) {
      throw Error(ErrorKind::transport, "unparseable response (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status == 200) return {reach_response_from_json(doc), "http"};
    const std::string message = doc.value("message", std::string("HTTP ") + std::to_string(res->status));
    if (res->status == 429) throw Error(ErrorKind::quota_exceeded, message);
    if (res->status == 400) throw Error(parse_error_kind(doc.value("error", "invalid_targeting")), message);
    throw Error(ErrorKind::transport, "HTTP " + std::to_string(res->status) + ": " + message);
  }

  std::string label() const override { return "http"; }

 private:
  std::string endpoint_;
  httplib::Headers headers_;
  httplib::Client client_;
  std::mutex mutex_;
};

/// Parses "Name: value" into a header pair.
inline std::pair<std::string, std::string> parse_header(const std::string& line) {
  const auto colon = line.find(':');
  if (colon == std::string::npos || colon == 0)
    throw Error(ErrorKind::parse, "header must look like 'Name: value'");
  auto value = line.substr(colon + 1);
  value.erase(0, value.find_first_not_of(' '));
  return {line.substr(0, colon), value};
}

/// Serves reach requests from a backend over HTTP.
class ReachServer {
 public:
  explicit ReachServer(CountBackend& backend) : backend_(backend) {
    server_.Post(kReachPath, [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  ~ReachServer() { stop(); }

  ReachServer(const ReachServer&) = delete;
  ReachServer& operator=(const ReachServer&) = delete;

  /// Rejects every request after the first `limit` successful ones with 429.
  void set_quota(std::size_t limit) { quota_ = limit; }

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host.c_str()) : (server_.bind_to_port(host.c_str(), port) ? port : -1);
    if (port_ < 0) throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
    return port_;
  }

  /// Blocks until stop().
  void listen() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::size_t served() const { return served_; }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    auto fail = [&](int status, ErrorKind kind, const std::string& message) {
      res.status = status;
      res.set_content(error_json(kind, message).dump(), "application/json");
    };
    if (quota_ && served_.load() >= *quota_) return fail(429, ErrorKind::quota_exceeded, "request quota exhausted");
    try {
      const Json doc = Json::parse(req.body);
      if (!doc.is_object() || !doc.contains("spec")) throw Error(ErrorKind::parse, "request needs a spec");
      std::optional<std::string> interest;
      if (doc.contains("interest") && !doc.at("interest").is_null()) interest = doc.at("interest").get<std::string>();
      const auto query = make_query(spec_from_json(doc.at("spec")), interest);
      const auto served = backend_.serve(query);
      ++served_;
      res.set_content(reach_response_json(served.result).dump(), "application/json");
    } catch (const Json::exception& e) {
      fail(400, ErrorKind::parse, e.what());
    } catch (const Error& e) {
      const bool client_side = e.kind() == ErrorKind::invalid_targeting || e.kind() == ErrorKind::parse ||
                               e.kind() == ErrorKind::invalid_argument || e.kind() == ErrorKind::unknown_category;
      const int status = e.kind() == ErrorKind::quota_exceeded ? 429 : client_side ? 400 : 500;
      fail(status, e.kind() == ErrorKind::invalid_argument ? ErrorKind::invalid_targeting : e.kind(), e.what());
    }
  }

  CountBackend& backend_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::optional<std::size_t> quota_;
  std::atomic<std::size_t> served_{0};
};

}  // namespace assimlab
