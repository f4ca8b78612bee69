#include "thalamus/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace thalamus::net {

namespace {

std::string errno_text() { return std::strerror(errno); }

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const char* node = host.empty() ? nullptr : host.c_str();
  int rc = ::getaddrinfo(node, std::to_string(port).c_str(), &hints, &res);
  if (rc != 0) return nullptr;
  return res;
}

}  // namespace

Socket::~Socket() {
  if (fd_ >= 0) ::close(fd_);
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

bool Socket::send_all(std::string_view bytes) const {
  while (!bytes.empty()) {
    ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

long Socket::recv_some(char* buf, std::size_t n) const {
  for (;;) {
    ssize_t r = ::recv(fd_, buf, n, 0);
    if (r < 0 && errno == EINTR) continue;
    return static_cast<long>(r);
  }
}

bool Socket::wait_readable(std::chrono::milliseconds timeout) const {
  pollfd p{fd_, POLLIN, 0};
  for (;;) {
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    return rc > 0;
  }
}

void Socket::shutdown() const noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::set_nodelay() const {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

void Socket::set_send_buffer(int bytes) const {
  if (bytes > 0) ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &bytes, sizeof bytes);
}

void Socket::set_recv_buffer(int bytes) const {
  if (bytes > 0) ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &bytes, sizeof bytes);
}

Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog) {
  addrinfo* res = resolve(host, port, true);
  if (!res) throw BindError("cannot resolve " + host);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw BindError("socket: " + errno_text());
  }
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  int rc = ::bind(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) throw BindError(host + ":" + std::to_string(port) + ": " + errno_text());
  if (::listen(s.fd(), backlog) != 0) throw BindError("listen: " + errno_text());
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) return 0;
  return ntohs(addr.sin_port);
}

Socket accept_connection(const Socket& listener) {
  for (;;) {
    int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) return Socket(fd);
    if (errno == EINTR || errno == ECONNABORTED) continue;
    return Socket{};
  }
}

Socket connect_tcp(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout,
                   int recv_buffer) {
  addrinfo* res = resolve(host, port, false);
  if (!res) throw ConnectError("cannot resolve " + host);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw ConnectError("socket: " + errno_text());
  }
  s.set_recv_buffer(recv_buffer);
  int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 && errno != EINPROGRESS) throw ConnectError(host + ":" + std::to_string(port) + ": " + errno_text());
  if (rc != 0) {
    pollfd p{s.fd(), POLLOUT, 0};
    if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0)
      throw ConnectError(host + ":" + std::to_string(port) + ": timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw ConnectError(host + ":" + std::to_string(port) + ": " + std::strerror(err));
  }
  ::fcntl(s.fd(), F_SETFL, flags);
  s.set_nodelay();
  return s;
}

std::pair<std::string, std::uint16_t> split_endpoint(const std::string& endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw ConnectError("expected host:port, got '" + endpoint + "'");
  std::string host = endpoint.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  int port = -1;
  try {
    port = std::stoi(endpoint.substr(colon + 1));
  } catch (const std::exception&) {
  }
  if (port <= 0 || port > 65535) throw ConnectError("invalid port in '" + endpoint + "'");
  return {host, static_cast<std::uint16_t>(port)};
}

Timestamp now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::optional<std::string> FrameClient::next_line(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (pending_pos_ >= pending_.size()) {
    pending_.clear();
    pending_pos_ = 0;
    if (closed_) return std::nullopt;
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() < 0 || !sock_.wait_readable(left)) return std::nullopt;
    char buf[65536];
    long n = sock_.recv_some(buf, sizeof buf);
    if (n <= 0) {
      closed_ = true;
      return std::nullopt;
    }
    try {
      pending_ = reader_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    } catch (const wire::FrameTooLarge&) {
      closed_ = true;
      return std::nullopt;
    }
  }
  return std::move(pending_[pending_pos_++]);
}

std::optional<wire::Message> FrameClient::next(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    auto line = next_line(std::max(left, std::chrono::milliseconds(0)));
    if (!line) return std::nullopt;
    try {
      return wire::decode_frame(*line);
    } catch (const wire::DecodeError&) {
      continue;
    }
  }
}

}  // namespace thalamus::net
