#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tpb/events.hpp"

namespace tpb {

/// Listens for phase events from workloads.
///
/// Endpoints are `unix:<path>` (or a bare path) for a local stream socket,
/// or `tcp:<host>:<port>` for loopback TCP; port 0 picks a free port. Each
/// client receives the handshake line `{"epoch_ns": <int>, "proto": 1}` and
/// then streams newline-delimited event records. Malformed or oversized lines
/// are counted and skipped; the connection stays open.
class EventServer {
 public:
  /// Throws Error{BindFailed}.
  EventServer(const std::string& endpoint, std::int64_t epoch_ns);
  ~EventServer();

  EventServer(const EventServer&) = delete;
  EventServer& operator=(const EventServer&) = delete;

  /// The bound endpoint in connectable form (resolved port for tcp).
  const std::string& endpoint() const noexcept { return endpoint_; }

  /// Closes the listener and all connections, draining what was received.
  void stop();

  /// Every event received so far: connections in accept order, each in
  /// arrival order. Cross-connection merging happens at validation.
  std::vector<PhaseEvent> events() const;
  std::size_t rejected_lines() const noexcept { return rejected_.load(); }
  std::size_t connections() const noexcept { return accepted_.load(); }

  /// Blocks until `pred(events)` holds or the timeout passes.
  bool wait_for(const std::function<bool(const std::vector<PhaseEvent>&)>& pred,
                std::chrono::milliseconds timeout) const;

 private:
  struct Connection;

  void accept_loop();
  void serve_connection(std::shared_ptr<Connection> conn);

  std::string endpoint_;
  std::string unix_path_;
  std::int64_t epoch_ns_;
  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> rejected_{0};
  std::atomic<std::size_t> accepted_{0};

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<std::shared_ptr<Connection>> conns_;
  std::vector<std::thread> workers_;
  std::thread acceptor_;
};

/// Workload side of the protocol: connects, reads the handshake, and sends
/// one event per line.
class EventClient {
 public:
  /// Throws Error{IoError} when the endpoint refuses or the handshake is bad.
  explicit EventClient(const std::string& endpoint);
  ~EventClient();

  EventClient(const EventClient&) = delete;
  EventClient& operator=(const EventClient&) = delete;

  std::int64_t epoch_ns() const noexcept { return epoch_ns_; }
  /// Nanoseconds since the harness epoch on the shared monotonic clock.
  std::int64_t now_ns() const;

  void send(const PhaseEvent& event);
  /// Sends `line` verbatim plus a newline.
  void send_line(const std::string& line);
  void close();

 private:
  int fd_ = -1;
  std::int64_t epoch_ns_ = 0;
};

}  // namespace tpb
