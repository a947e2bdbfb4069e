#pragma once

#include <sys/types.h>

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mprobe/error.hpp"
#include "mprobe/generator.hpp"

namespace mprobe {

class TransportError : public Error {
 public:
  using Error::Error;
};

// Endpoint could not be reached or spawned.
class ConnectionError : public TransportError {
 public:
  using TransportError::TransportError;
};

class VersionMismatchError : public TransportError {
 public:
  using TransportError::TransportError;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

class MalformedFrameError : public TransportError {
 public:
  using TransportError::TransportError;
};

class DisconnectError : public TransportError {
 public:
  using TransportError::TransportError;
};

// The server answered with an error frame.
class RemoteError : public TransportError {
 public:
  using TransportError::TransportError;
};

// Bidirectional byte stream over a pair of file descriptors (the same fd for
// sockets). Owns the descriptors and, for exec endpoints, the child process.
class Stream {
 public:
  Stream(int read_fd, int write_fd, pid_t child = -1);
  ~Stream();
  Stream(const Stream&) = delete;
  Stream& operator=(const Stream&) = delete;

  void write_all(const void* data, std::size_t n);
  // Negative timeout waits forever.
  void read_exact(void* data, std::size_t n, double timeout_seconds);
  // Like read_exact but returns false on a clean EOF before the first byte.
  bool read_or_eof(void* data, std::size_t n, double timeout_seconds);
  void close();

 private:
  int read_fd_;
  int write_fd_;
  pid_t child_;
};

std::pair<std::unique_ptr<Stream>, std::unique_ptr<Stream>> stream_pair();
std::unique_ptr<Stream> open_tcp(const std::string& host, std::uint16_t port, double timeout);
// Runs `command` under /bin/sh and talks to its stdin/stdout.
std::unique_ptr<Stream> open_exec(const std::string& command);
// "tcp://host:port" or "exec:command".
std::unique_ptr<Stream> open_endpoint(const std::string& endpoint, double timeout);

class TcpListener {
 public:
  // Port 0 picks a free port.
  explicit TcpListener(std::uint16_t port = 0, const std::string& host = "127.0.0.1");
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<Stream> accept();
  void close();

 private:
  int fd_;
  std::uint16_t port_;
};

namespace wire {

inline constexpr char magic[4] = {'M', 'P', 'R', 'B'};
inline constexpr std::uint32_t version = 1;
inline constexpr std::uint32_t tag_request = 1;
inline constexpr std::uint32_t tag_response = 2;
inline constexpr std::uint32_t tag_error = 3;
inline constexpr std::uint32_t flag_concurrent_safe = 1;
inline constexpr std::uint32_t max_payload = 1u << 30;

struct Hello {
  std::uint32_t version = wire::version;
  std::uint32_t latent_dim = 0;
  ImageShape shape;
  std::uint32_t flags = 0;
};

struct Frame {
  std::uint32_t tag = 0;
  std::uint32_t request_id = 0;
  std::string payload;
};

void put_u32(std::string& out, std::uint32_t v);
std::uint32_t get_u32(const unsigned char* p);

std::string encode_floats(const std::vector<float>& values);
std::vector<float> decode_floats(const std::string& payload);

std::string encode_frame(std::uint32_t tag, std::uint32_t request_id, const std::string& payload);
std::string encode_hello(const Hello& hello);

Frame read_frame(Stream& s, double timeout);

// Client side of the handshake.
Hello client_handshake(Stream& s, double timeout);

}  // namespace wire

// Server-side description of one condition.
struct ServerModel {
  std::uint32_t latent_dim = 1;
  ImageShape shape;
  bool concurrent_safe = false;
  std::function<std::vector<float>(const std::vector<float>&)> compute;
};

// Serves a single connection until the peer closes it. Bad frames are
// answered with error frames and the connection is kept.
void serve_connection(Stream& s, const ServerModel& model);

// Generator whose evaluate round-trips over MPROBE/1.
class ExternalGenerator final : public Generator {
 public:
  using Opener = std::function<std::unique_ptr<Stream>()>;

  // Opens one connection and handshakes. Extra connections, up to
  // pool_size, are opened on demand when the server is concurrent-safe.
  ExternalGenerator(Opener opener, double timeout, std::size_t pool_size, std::string name);
  // Adopts an open stream; no pooling.
  ExternalGenerator(std::unique_ptr<Stream> stream, double timeout, std::string name = "external");

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  const wire::Hello& hello() const noexcept { return hello_; }
  std::size_t open_connections() const;

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  struct Connection {
    std::unique_ptr<Stream> stream;
    bool broken = false;
  };

  std::unique_ptr<Connection> acquire() const;
  void release(std::unique_ptr<Connection> c) const;

  Opener opener_;
  double timeout_;
  std::size_t pool_size_;
  wire::Hello hello_;
  GeneratorDescriptor desc_;

  mutable std::mutex mutex_;
  mutable std::condition_variable available_;
  mutable std::vector<std::unique_ptr<Connection>> idle_;
  mutable std::size_t open_ = 0;
  mutable std::atomic<std::uint32_t> next_id_{1};
};

std::shared_ptr<ExternalGenerator> connect_external(const std::string& endpoint, double timeout,
                                                    std::size_t pool_size = 1);

}  // namespace mprobe
