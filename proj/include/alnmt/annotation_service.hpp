#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "alnmt/active_loop.hpp"

namespace alnmt::service {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 = any free port
  std::chrono::milliseconds lease{std::chrono::minutes(10)};
};

/// Outcome of an annotator action, mapped to an HTTP status by the server.
enum class Outcome { ack, stale_lease, invalid, no_batch };

struct LeaseGrant {
  std::string lease_id;
  std::int64_t sentence_id = 0;
  std::string source_text;
  std::string hypothesis;
  double score = 0;
};

/// Work queue shared between the active-learning loop (which blocks in
/// `serve`) and annotators (who lease, submit and skip sentences). Usable
/// without HTTP; `HttpServer` exposes it over the network.
class AnnotationQueue {
 public:
  explicit AnnotationQueue(std::chrono::milliseconds lease) : lease_(lease) {}

  /// Publishes the request and blocks until every item is resolved, the
  /// queue is aborted, or `timeout` passes (OracleAborted in the last two
  /// cases).
  void serve(const active::OracleRequest& request, const active::OracleSink& sink,
             std::optional<std::chrono::milliseconds> timeout = std::nullopt);

  /// Next unleased (or lease-expired) sentence for `annotator`.
  std::optional<LeaseGrant> next(const std::string& annotator);
  Outcome submit(const std::string& lease_id, std::int64_t sentence_id, const std::string& target,
                 std::string* error = nullptr);
  Outcome skip(const std::string& lease_id, std::int64_t sentence_id, std::string* error = nullptr);

  /// Wakes `serve` with OracleAborted; used on shutdown.
  void abort();
  std::size_t pending() const;

 private:
  struct Task {
    active::OracleItem item;
    bool resolved = false;
    std::string lease_id;
    std::string annotator;
    std::chrono::steady_clock::time_point expiry{};
  };
  Task* find_leased(const std::string& lease_id, std::int64_t sentence_id);

  std::chrono::milliseconds lease_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Task> tasks_;
  const active::OracleSink* sink_ = nullptr;
  bool aborted_ = false;
  std::uint64_t lease_counter_ = 0;
};

/// Oracle that waits for human labels through an AnnotationQueue.
class InteractiveOracle final : public active::Oracle {
 public:
  InteractiveOracle(AnnotationQueue& queue, std::optional<std::chrono::milliseconds> timeout = std::nullopt)
      : queue_(queue), timeout_(timeout) {}
  active::OracleMode mode() const override { return active::OracleMode::interactive; }
  void query(const active::OracleRequest& request, const active::OracleSink& sink) override {
    queue_.serve(request, sink, timeout_);
  }

 private:
  AnnotationQueue& queue_;
  std::optional<std::chrono::milliseconds> timeout_;
};

/// HTTP front end:
///   GET  /api/run/status
///   GET  /api/batch/next?annotator=NAME
///   POST /api/batch/submit   {lease_id, sentence_id, target_text}
///   POST /api/batch/skip     {lease_id, sentence_id}
class HttpServer {
 public:
  using StatusFn = std::function<active::Status()>;

  HttpServer(AnnotationQueue& queue, StatusFn status, ServiceOptions options = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string options_host_;
  int options_port_ = 0;
  int port_ = 0;
};

}  // namespace alnmt::service
