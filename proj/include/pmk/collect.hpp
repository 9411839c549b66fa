#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pmk/dataset.hpp"

namespace pmk::collect {

using Clock = std::function<std::chrono::steady_clock::time_point()>;

struct ServiceConfig {
  std::filesystem::path root;  // dataset directory; votes go to root/votes.jsonl
  std::uint64_t seed = 0;
  TwoAfcSessionConfig two_afc;
  JndSessionConfig jnd;
  std::chrono::minutes idle_timeout{60};
  double suspect_latency_ms = 200.0;
};

/// Status, JSON (or raw) body and extra headers of one handled request.
struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Transport-free request handling. Thread-safe; the HTTP layer calls
/// handle() from its worker threads.
class Service {
 public:
  explicit Service(ServiceConfig cfg, Clock clock = [] { return std::chrono::steady_clock::now(); });
  ~Service();

  Response handle(const std::string& method, const std::string& path,
                  const std::map<std::string, std::string>& query, const std::string& body);

  /// Ends sessions idle past the timeout; they are logged as incomplete.
  std::size_t expire_idle();

  /// Votes in the log whose session is known here but whose item is not in
  /// that session's plan. Zero when the log is consistent.
  std::size_t audit() const;

  std::size_t accepted_answers() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP front end (cpp-httplib) over a Service. Files under static_dir are
/// served at / ahead of the API routes.
class Server {
 public:
  explicit Server(Service& service, std::optional<std::filesystem::path> static_dir = {});
  ~Server();

  /// Binds host:port (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pmk::collect
