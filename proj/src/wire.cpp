#include "mprobe/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>

namespace mprobe {
namespace {

using Clock = std::chrono::steady_clock;

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline, bool forever) {
  if (forever) return -1;
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

Clock::time_point deadline_after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(std::max(0.0, seconds)));
}

}  // namespace

// ---- Stream -----------------------------------------------------------------

Stream::Stream(int read_fd, int write_fd, pid_t child)
    : read_fd_(read_fd), write_fd_(write_fd), child_(child) {}

Stream::~Stream() { close(); }

void Stream::close() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
  if (child_ > 0) {
    ::kill(child_, SIGTERM);
    int status = 0;
    while (::waitpid(child_, &status, 0) < 0 && errno == EINTR) {
    }
    child_ = -1;
  }
}

void Stream::write_all(const void* data, std::size_t n) {
  if (write_fd_ < 0) throw DisconnectError("stream is closed");
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    ssize_t w = ::send(write_fd_, p, n, MSG_NOSIGNAL);
    if (w < 0 && errno == ENOTSOCK) w = ::write(write_fd_, p, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE || errno == ECONNRESET) throw DisconnectError("peer closed the connection");
      throw TransportError(sys_error("write failed"));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

bool Stream::read_or_eof(void* data, std::size_t n, double timeout_seconds) {
  if (read_fd_ < 0) throw DisconnectError("stream is closed");
  const bool forever = timeout_seconds < 0.0;
  const auto deadline = deadline_after(timeout_seconds);
  char* p = static_cast<char*>(data);
  std::size_t got = 0;
  while (got < n) {
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, remaining_ms(deadline, forever));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("poll failed"));
    }
    if (ready == 0)
      throw TimeoutError("no data from peer within " + std::to_string(timeout_seconds) + " s");
    const ssize_t r = ::read(read_fd_, p + got, n - got);
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == ECONNRESET) throw DisconnectError("connection reset by peer");
      throw TransportError(sys_error("read failed"));
    }
    if (r == 0) {
      if (got == 0) return false;
      throw DisconnectError("peer closed the connection mid-frame (" + std::to_string(got) +
                            " of " + std::to_string(n) + " bytes)");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void Stream::read_exact(void* data, std::size_t n, double timeout_seconds) {
  if (n > 0 && !read_or_eof(data, n, timeout_seconds))
    throw DisconnectError("peer closed the connection");
}

std::pair<std::unique_ptr<Stream>, std::unique_ptr<Stream>> stream_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0)
    throw TransportError(sys_error("socketpair failed"));
  return {std::make_unique<Stream>(fds[0], fds[0]), std::make_unique<Stream>(fds[1], fds[1])};
}

std::unique_ptr<Stream> open_tcp(const std::string& host, std::uint16_t port, double timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string where = host + ":" + std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc)
    throw ConnectionError("cannot resolve " + where + ": " + ::gai_strerror(rc));
  std::string last = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(std::ceil(timeout * 1000.0)));
      if (rc == 0) {
        ::close(fd);
        ::freeaddrinfo(res);
        throw TimeoutError("connecting to " + where + " timed out");
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      errno = err;
      rc = err == 0 ? 0 : -1;
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      return std::make_unique<Stream>(fd, fd);
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw ConnectionError("cannot connect to " + where + ": " + last);
}

std::unique_ptr<Stream> open_exec(const std::string& command) {
  ::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw ConnectionError(sys_error("pipe failed"));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ConnectionError(sys_error("pipe failed"));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw ConnectionError(sys_error("fork failed"));
  }
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<Stream>(from_child[0], to_child[1], pid);
}

std::unique_ptr<Stream> open_endpoint(const std::string& endpoint, double timeout) {
  if (endpoint.rfind("exec:", 0) == 0) return open_exec(endpoint.substr(5));
  if (endpoint.rfind("tcp://", 0) == 0) {
    const std::string rest = endpoint.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0)
      throw ConfigError("endpoint '" + endpoint + "' must look like tcp://host:port");
    std::string host = rest.substr(0, colon);
    if (host.size() > 2 && host.front() == '[' && host.back() == ']')
      host = host.substr(1, host.size() - 2);
    unsigned long port = 0;
    try {
      port = std::stoul(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("endpoint '" + endpoint + "' has an invalid port");
    }
    if (port == 0 || port > 65535) throw ConfigError("endpoint '" + endpoint + "' port out of range");
    return open_tcp(host, static_cast<std::uint16_t>(port), timeout);
  }
  throw ConfigError("endpoint '" + endpoint + "' must start with tcp:// or exec:");
}

// ---- TcpListener ------------------------------------------------------------

TcpListener::TcpListener(std::uint16_t port, const std::string& host) : fd_(-1), port_(0) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw ConnectionError(sys_error("socket failed"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw ConfigError("listen address must be an IPv4 literal, got '" + host + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
    const std::string msg = sys_error("cannot listen on " + host + ":" + std::to_string(port));
    ::close(fd_);
    throw ConnectionError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
  }
  fd_ = -1;
}

std::unique_ptr<Stream> TcpListener::accept() {
  while (true) {
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return std::make_unique<Stream>(fd, fd);
    }
    if (errno != EINTR) throw ConnectionError(sys_error("accept failed"));
  }
}

// ---- encoding ---------------------------------------------------------------

namespace wire {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string encode_floats(const std::vector<float>& values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (const float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::vector<float> decode_floats(const std::string& payload) {
  if (payload.size() % 4 != 0)
    throw MalformedFrameError("float payload of " + std::to_string(payload.size()) +
                              " bytes is not a multiple of 4");
  std::vector<float> out(payload.size() / 4);
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return out;
}

std::string encode_frame(std::uint32_t tag, std::uint32_t request_id, const std::string& payload) {
  std::string out;
  out.reserve(12 + payload.size());
  put_u32(out, tag);
  put_u32(out, request_id);
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out += payload;
  return out;
}

std::string encode_hello(const Hello& hello) {
  std::string out(magic, 4);
  put_u32(out, hello.version);
  put_u32(out, hello.latent_dim);
  put_u32(out, static_cast<std::uint32_t>(hello.shape.channels));
  put_u32(out, static_cast<std::uint32_t>(hello.shape.height));
  put_u32(out, static_cast<std::uint32_t>(hello.shape.width));
  put_u32(out, hello.flags);
  return out;
}

namespace {

Frame read_frame_body(Stream& s, std::uint32_t tag, double timeout) {
  unsigned char head[8];
  s.read_exact(head, sizeof head, timeout);
  Frame f;
  f.tag = tag;
  f.request_id = get_u32(head);
  const std::uint32_t len = get_u32(head + 4);
  if (len > max_payload)
    throw MalformedFrameError("frame payload length " + std::to_string(len) + " exceeds limit");
  f.payload.resize(len);
  s.read_exact(f.payload.data(), len, timeout);
  return f;
}

}  // namespace

Frame read_frame(Stream& s, double timeout) {
  unsigned char tag[4];
  s.read_exact(tag, sizeof tag, timeout);
  return read_frame_body(s, get_u32(tag), timeout);
}

Hello client_handshake(Stream& s, double timeout) {
  std::string greeting(magic, 4);
  put_u32(greeting, version);
  s.write_all(greeting.data(), greeting.size());

  unsigned char head[4];
  s.read_exact(head, sizeof head, timeout);
  if (std::memcmp(head, magic, 4) != 0) {
    if (get_u32(head) == tag_error) {
      const Frame f = read_frame_body(s, tag_error, timeout);
      throw VersionMismatchError("server rejected handshake: " + f.payload);
    }
    throw MalformedFrameError("handshake reply does not start with MPRB");
  }
  unsigned char body[24];
  s.read_exact(body, sizeof body, timeout);
  Hello h;
  h.version = get_u32(body);
  if (h.version != version)
    throw VersionMismatchError("server speaks protocol version " + std::to_string(h.version) +
                               ", client speaks " + std::to_string(version));
  h.latent_dim = get_u32(body + 4);
  h.shape = ImageShape{get_u32(body + 8), get_u32(body + 12), get_u32(body + 16)};
  h.flags = get_u32(body + 20);
  if (h.latent_dim < 1 || !h.shape.valid())
    throw MalformedFrameError("handshake advertises zero latent or output dimensions");
  return h;
}

}  // namespace wire

// ---- server -----------------------------------------------------------------

namespace {

void send_error(Stream& s, std::uint32_t id, const std::string& message) {
  const auto frame = wire::encode_frame(wire::tag_error, id, message);
  s.write_all(frame.data(), frame.size());
}

}  // namespace

void serve_connection(Stream& s, const ServerModel& model) {
  unsigned char greet[8];
  if (!s.read_or_eof(greet, sizeof greet, -1.0)) return;
  if (std::memcmp(greet, wire::magic, 4) != 0) {
    send_error(s, 0, "bad handshake magic");
    return;
  }
  const std::uint32_t client_version = wire::get_u32(greet + 4);
  if (client_version != wire::version) {
    send_error(s, 0, "unsupported protocol version " + std::to_string(client_version) +
                         " (server speaks " + std::to_string(wire::version) + ")");
    return;
  }
  wire::Hello hello;
  hello.latent_dim = model.latent_dim;
  hello.shape = model.shape;
  hello.flags = model.concurrent_safe ? wire::flag_concurrent_safe : 0u;
  const auto reply = wire::encode_hello(hello);
  s.write_all(reply.data(), reply.size());

  const std::size_t expected = static_cast<std::size_t>(model.latent_dim) * 4;
  while (true) {
    unsigned char tag[4];
    try {
      if (!s.read_or_eof(tag, sizeof tag, -1.0)) return;
    } catch (const DisconnectError&) {
      return;
    }
    wire::Frame f;
    try {
      unsigned char head[8];
      s.read_exact(head, sizeof head, -1.0);
      f.tag = wire::get_u32(tag);
      f.request_id = wire::get_u32(head);
      const std::uint32_t len = wire::get_u32(head + 4);
      if (len > wire::max_payload) {
        send_error(s, f.request_id, "payload length " + std::to_string(len) + " exceeds limit");
        return;
      }
      f.payload.resize(len);
      s.read_exact(f.payload.data(), len, -1.0);
    } catch (const DisconnectError&) {
      return;
    }
    if (f.tag != wire::tag_request) {
      send_error(s, f.request_id, "unexpected frame tag " + std::to_string(f.tag));
      continue;
    }
    if (f.payload.size() != expected) {
      send_error(s, f.request_id,
                 "request payload has " + std::to_string(f.payload.size()) + " bytes, expected " +
                     std::to_string(expected));
      continue;
    }
    std::vector<float> out;
    try {
      out = model.compute(wire::decode_floats(f.payload));
    } catch (const std::exception& e) {
      send_error(s, f.request_id, std::string("model failure: ") + e.what());
      continue;
    }
    if (out.size() != model.shape.size()) {
      send_error(s, f.request_id, "model produced " + std::to_string(out.size()) + " values");
      continue;
    }
    const auto frame = wire::encode_frame(wire::tag_response, f.request_id, wire::encode_floats(out));
    s.write_all(frame.data(), frame.size());
  }
}

// ---- client generator -------------------------------------------------------

ExternalGenerator::ExternalGenerator(Opener opener, double timeout, std::size_t pool_size,
                                     std::string name)
    : opener_(std::move(opener)), timeout_(timeout), pool_size_(std::max<std::size_t>(1, pool_size)) {
  auto stream = opener_();
  hello_ = wire::client_handshake(*stream, timeout_);
  desc_ = {std::move(name), hello_.latent_dim, hello_.shape,
           (hello_.flags & wire::flag_concurrent_safe) != 0};
  idle_.push_back(std::make_unique<Connection>(Connection{std::move(stream), false}));
  open_ = 1;
}

ExternalGenerator::ExternalGenerator(std::unique_ptr<Stream> stream, double timeout,
                                     std::string name)
    : timeout_(timeout), pool_size_(1) {
  hello_ = wire::client_handshake(*stream, timeout_);
  desc_ = {std::move(name), hello_.latent_dim, hello_.shape,
           (hello_.flags & wire::flag_concurrent_safe) != 0};
  idle_.push_back(std::make_unique<Connection>(Connection{std::move(stream), false}));
  open_ = 1;
}

std::size_t ExternalGenerator::open_connections() const {
  std::lock_guard lock(mutex_);
  return open_;
}

std::unique_ptr<ExternalGenerator::Connection> ExternalGenerator::acquire() const {
  std::unique_lock lock(mutex_);
  const std::size_t limit = desc_.concurrent_safe ? pool_size_ : 1;
  while (idle_.empty()) {
    if (open_ < limit && opener_) {
      ++open_;
      lock.unlock();
      try {
        auto stream = opener_();
        const auto h = wire::client_handshake(*stream, timeout_);
        if (h.latent_dim != hello_.latent_dim || !(h.shape == hello_.shape))
          throw MalformedFrameError("pooled connection advertised different dimensions");
        return std::make_unique<Connection>(Connection{std::move(stream), false});
      } catch (...) {
        lock.lock();
        --open_;
        available_.notify_one();
        throw;
      }
    }
    if (open_ == 0) throw DisconnectError("connection to generator server is closed");
    available_.wait(lock);
  }
  auto c = std::move(idle_.back());
  idle_.pop_back();
  return c;
}

void ExternalGenerator::release(std::unique_ptr<Connection> c) const {
  std::lock_guard lock(mutex_);
  if (c->broken)
    --open_;
  else
    idle_.push_back(std::move(c));
  available_.notify_one();
}

Vector ExternalGenerator::evaluate_flat(const LatentPoint& z) const {
  std::vector<float> request(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) request[static_cast<std::size_t>(i)] = static_cast<float>(z[i]);
  const std::uint32_t id = next_id_.fetch_add(1);
  const auto frame = wire::encode_frame(wire::tag_request, id, wire::encode_floats(request));

  auto conn = acquire();
  try {
    conn->stream->write_all(frame.data(), frame.size());
    const wire::Frame reply = wire::read_frame(*conn->stream, timeout_);
    if (reply.tag == wire::tag_error) {
      release(std::move(conn));
      throw RemoteError("server error for request " + std::to_string(id) + ": " + reply.payload);
    }
    if (reply.tag != wire::tag_response)
      throw MalformedFrameError("unexpected frame tag " + std::to_string(reply.tag));
    if (reply.request_id != id)
      throw MalformedFrameError("response id " + std::to_string(reply.request_id) +
                                " does not match request " + std::to_string(id));
    const std::size_t expected = desc_.output_shape.size() * 4;
    if (reply.payload.size() != expected)
      throw MalformedFrameError("response payload has " + std::to_string(reply.payload.size()) +
                                " bytes, expected " + std::to_string(expected));
    const auto values = wire::decode_floats(reply.payload);
    release(std::move(conn));
    Vector out(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[i];
    return out;
  } catch (const RemoteError&) {
    throw;
  } catch (...) {
    if (conn) {
      conn->broken = true;
      conn->stream->close();
      release(std::move(conn));
    }
    throw;
  }
}

std::shared_ptr<ExternalGenerator> connect_external(const std::string& endpoint, double timeout,
                                                    std::size_t pool_size) {
  if (!(timeout > 0.0)) throw ConfigError("timeout must be positive");
  return std::make_shared<ExternalGenerator>(
      [endpoint, timeout] { return open_endpoint(endpoint, timeout); }, timeout, pool_size,
      endpoint);
}

}  // namespace mprobe
