#pragma once

// Thin RAII wrappers over POSIX TCP sockets, plus a blocking frame client
// used by the probe command and the tests.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thalamus/model.hpp"
#include "thalamus/wire.hpp"

namespace thalamus::net {

class BindError : public Error {
 public:
  explicit BindError(const std::string& msg) : Error("bind_error", msg) {}
};

class ConnectError : public Error {
 public:
  explicit ConnectError(const std::string& msg) : Error("connect_error", msg) {}
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  /// Blocks until every byte is written. False on any socket error.
  bool send_all(std::string_view bytes) const;
  /// recv(2); 0 = orderly shutdown, <0 = error.
  long recv_some(char* buf, std::size_t n) const;
  /// Waits for readability; false on timeout.
  bool wait_readable(std::chrono::milliseconds timeout) const;
  /// shutdown(2) both directions; unblocks pending accept/recv/send.
  void shutdown() const noexcept;

  void set_nodelay() const;
  void set_send_buffer(int bytes) const;
  void set_recv_buffer(int bytes) const;

 private:
  int fd_ = -1;
};

/// Binds and listens. Port 0 picks an ephemeral port.
Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 128);
std::uint16_t local_port(const Socket& s);
/// Returns an invalid socket once the listener has been shut down.
Socket accept_connection(const Socket& listener);
/// `recv_buffer` > 0 shrinks SO_RCVBUF before connecting.
Socket connect_tcp(const std::string& host, std::uint16_t port,
                   std::chrono::milliseconds timeout = std::chrono::seconds(5), int recv_buffer = 0);

/// Splits "host:port".
std::pair<std::string, std::uint16_t> split_endpoint(const std::string& endpoint);

/// Milliseconds since the Unix epoch from the system clock.
Timestamp now_ms();

/// A connected protocol endpoint: writes messages, reads framed messages.
class FrameClient {
 public:
  explicit FrameClient(Socket sock, std::size_t max_frame_bytes = wire::kDefaultMaxFrameBytes)
      : sock_(std::move(sock)), reader_(max_frame_bytes) {}

  static FrameClient connect(const std::string& host, std::uint16_t port, int recv_buffer = 0) {
    return FrameClient(connect_tcp(host, port, std::chrono::seconds(5), recv_buffer));
  }

  bool send(const wire::Message& m) { return sock_.send_all(wire::encode_frame(m)); }
  bool send_raw(std::string_view bytes) { return sock_.send_all(bytes); }

  /// Next complete line, or nullopt on timeout / disconnect.
  std::optional<std::string> next_line(std::chrono::milliseconds timeout);
  /// Next decoded message; lines that fail to decode are skipped.
  std::optional<wire::Message> next(std::chrono::milliseconds timeout);

  bool closed() const noexcept { return closed_; }
  Socket& socket() noexcept { return sock_; }

 private:
  Socket sock_;
  wire::FrameReader reader_;
  std::vector<std::string> pending_;
  std::size_t pending_pos_ = 0;
  bool closed_ = false;
};

}  // namespace thalamus::net
