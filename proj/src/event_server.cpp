#include "tpb/event_server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <json.hpp>

#include "tpb/error.hpp"
#include "tpb/types.hpp"

namespace tpb {

struct EventServer::Connection {
  int fd = -1;
  std::vector<PhaseEvent> events;
};

namespace {

[[noreturn]] void bind_failed(const std::string& endpoint, const std::string& why) {
  throw Error(ErrorCode::BindFailed, endpoint + ": " + why);
}

void send_all(int fd, const std::string& data) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    ssize_t n = send(fd, p, left, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return;
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace

EventServer::EventServer(const std::string& endpoint, std::int64_t epoch_ns)
    : epoch_ns_(epoch_ns) {
  std::string spec = endpoint;
  if (spec.rfind("tcp:", 0) == 0) {
    auto rest = spec.substr(4);
    auto colon = rest.rfind(':');
    if (colon == std::string::npos) bind_failed(endpoint, "expected tcp:<host>:<port>");
    const auto host = rest.substr(0, colon);
    int port = 0;
    try {
      port = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      bind_failed(endpoint, "bad port");
    }
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) bind_failed(endpoint, "bad host");
    listen_fd_ = socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) bind_failed(endpoint, std::strerror(errno));
    int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      auto why = std::strerror(errno);
      close(listen_fd_);
      bind_failed(endpoint, why);
    }
    socklen_t len = sizeof(addr);
    getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    endpoint_ = "tcp:" + host + ":" + std::to_string(ntohs(addr.sin_port));
  } else {
    if (spec.rfind("unix:", 0) == 0) spec = spec.substr(5);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (spec.empty() || spec.size() >= sizeof(addr.sun_path)) {
      bind_failed(endpoint, "socket path empty or too long");
    }
    std::memcpy(addr.sun_path, spec.c_str(), spec.size() + 1);
    listen_fd_ = socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) bind_failed(endpoint, std::strerror(errno));
    if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      auto why = std::strerror(errno);
      close(listen_fd_);
      bind_failed(endpoint, why);
    }
    unix_path_ = spec;
    endpoint_ = "unix:" + spec;
  }
  if (listen(listen_fd_, 16) != 0) {
    auto why = std::strerror(errno);
    close(listen_fd_);
    bind_failed(endpoint, why);
  }
  if (pipe2(wake_pipe_, O_CLOEXEC) != 0) {
    close(listen_fd_);
    bind_failed(endpoint, "pipe failed");
  }
  acceptor_ = std::thread([this] { accept_loop(); });
}

EventServer::~EventServer() { stop(); }

void EventServer::stop() {
  if (stopping_.exchange(true)) return;
  char b = 1;
  [[maybe_unused]] auto n = write(wake_pipe_[1], &b, 1);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (auto& w : workers) w.join();
  close(listen_fd_);
  close(wake_pipe_[0]);
  close(wake_pipe_[1]);
  if (!unix_path_.empty()) unlink(unix_path_.c_str());
  cv_.notify_all();
}

void EventServer::accept_loop() {
  while (true) {
    pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {wake_pipe_[0], POLLIN, 0}};
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      return;
    }
    if (fds[1].revents) return;
    if (!(fds[0].revents & POLLIN)) continue;
    int fd = accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    ++accepted_;
    std::lock_guard lock(mu_);
    conns_.push_back(conn);
    workers_.emplace_back([this, conn] { serve_connection(conn); });
  }
}

void EventServer::serve_connection(std::shared_ptr<Connection> conn) {
  send_all(conn->fd, "{\"epoch_ns\": " + std::to_string(epoch_ns_) + ", \"proto\": 1}\n");

  std::string buffer;
  bool discarding = false;  // inside an oversized line
  char chunk[8192];

  auto take_line = [&](std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    try {
      PhaseEvent e = parse_event_line(line);
      std::lock_guard lock(mu_);
      conn->events.push_back(std::move(e));
      cv_.notify_all();
    } catch (const Error&) {
      ++rejected_;
    }
  };

  auto consume = [&](const char* data, std::size_t n) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (data[i] != '\n') continue;
      if (discarding) {
        discarding = false;
      } else {
        buffer.append(data + start, i - start);
        take_line(buffer);
      }
      buffer.clear();
      start = i + 1;
    }
    if (!discarding) buffer.append(data + start, n - start);
    if (buffer.size() > kMaxEventLineBytes) {
      ++rejected_;
      buffer.clear();
      discarding = true;
    }
  };

  bool draining = false;
  while (true) {
    pollfd fds[2] = {{conn->fd, POLLIN, 0}, {wake_pipe_[0], POLLIN, 0}};
    int timeout = draining ? 0 : -1;
    int r = ::poll(fds, draining ? 1 : 2, timeout);
    if (r < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (r == 0) break;  // drained
    if (!draining && fds[1].revents) {
      draining = true;
      continue;
    }
    ssize_t n = recv(conn->fd, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    consume(chunk, static_cast<std::size_t>(n));
  }
  if (!discarding && !buffer.empty()) take_line(buffer);
  close(conn->fd);
}

std::vector<PhaseEvent> EventServer::events() const {
  std::lock_guard lock(mu_);
  std::vector<PhaseEvent> out;
  for (const auto& c : conns_) out.insert(out.end(), c->events.begin(), c->events.end());
  return out;
}

bool EventServer::wait_for(const std::function<bool(const std::vector<PhaseEvent>&)>& pred,
                           std::chrono::milliseconds timeout) const {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::unique_lock lock(mu_);
  while (true) {
    std::vector<PhaseEvent> all;
    for (const auto& c : conns_) all.insert(all.end(), c->events.begin(), c->events.end());
    if (pred(all)) return true;
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
      all.clear();
      for (const auto& c : conns_) all.insert(all.end(), c->events.begin(), c->events.end());
      return pred(all);
    }
  }
}

}  // namespace tpb

namespace tpb {

namespace {

[[noreturn]] void client_failed(const std::string& endpoint, const std::string& why) {
  throw Error(ErrorCode::IoError, "event endpoint " + endpoint + ": " + why);
}

}  // namespace

EventClient::EventClient(const std::string& endpoint) {
  std::string spec = endpoint;
  if (spec.rfind("tcp:", 0) == 0) {
    auto rest = spec.substr(4);
    auto colon = rest.rfind(':');
    if (colon == std::string::npos) client_failed(endpoint, "expected tcp:<host>:<port>");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    try {
      addr.sin_port = htons(static_cast<uint16_t>(std::stoi(rest.substr(colon + 1))));
    } catch (const std::exception&) {
      client_failed(endpoint, "bad port");
    }
    if (inet_pton(AF_INET, rest.substr(0, colon).c_str(), &addr.sin_addr) != 1) {
      client_failed(endpoint, "bad host");
    }
    fd_ = socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0 || connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      auto why = std::strerror(errno);
      close();
      client_failed(endpoint, why);
    }
  } else {
    if (spec.rfind("unix:", 0) == 0) spec = spec.substr(5);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (spec.empty() || spec.size() >= sizeof(addr.sun_path)) {
      client_failed(endpoint, "socket path empty or too long");
    }
    std::memcpy(addr.sun_path, spec.c_str(), spec.size() + 1);
    fd_ = socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0 || connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      auto why = std::strerror(errno);
      close();
      client_failed(endpoint, why);
    }
  }
  std::string line;
  char c = 0;
  while (true) {
    ssize_t n = recv(fd_, &c, 1, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      close();
      client_failed(endpoint, "connection closed before handshake");
    }
    if (c == '\n') break;
    line += c;
    if (line.size() > 4096) {
      close();
      client_failed(endpoint, "handshake line too long");
    }
  }
  try {
    auto hs = nlohmann::json::parse(line);
    epoch_ns_ = hs.at("epoch_ns").get<std::int64_t>();
    if (hs.at("proto").get<int>() != 1) {
      close();
      client_failed(endpoint, "unsupported protocol version");
    }
  } catch (const nlohmann::json::exception& e) {
    close();
    client_failed(endpoint, std::string("bad handshake: ") + e.what());
  }
}

EventClient::~EventClient() { close(); }

std::int64_t EventClient::now_ns() const { return monotonic_now_ns() - epoch_ns_; }

void EventClient::send(const PhaseEvent& event) { send_line(format_event_line(event)); }

void EventClient::send_line(const std::string& line) {
  if (fd_ < 0) throw Error(ErrorCode::IoError, "event client is closed");
  send_all(fd_, line + "\n");
}

void EventClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

}  // namespace tpb
