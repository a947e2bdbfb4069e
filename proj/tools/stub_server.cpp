// Deterministic MPROBE/1 server for tests and client bring-up. Serves on
// stdin/stdout by default, or on a TCP port with --port.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <thread>

#include "mprobe/wire.hpp"

using namespace mprobe;

namespace {

// out[i] = sin(z[i % E] + 0.1 i) + 0.5 z[(i + 1) % E] * z[i % E]
std::vector<float> stub_pipeline(const std::vector<float>& z, std::size_t n_out) {
  std::vector<float> out(n_out);
  const std::size_t e = z.size();
  for (std::size_t i = 0; i < n_out; ++i) {
    const double a = z[i % e], b = z[(i + 1) % e];
    out[i] = static_cast<float>(std::sin(a + 0.1 * static_cast<double>(i)) + 0.5 * a * b);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MPROBE/1 stub server"};
  std::uint32_t latent_dim = 4;
  std::vector<std::size_t> shape = {1, 4, 4};
  bool concurrent = false;
  int port = -1;
  app.add_option("--latent-dim", latent_dim)->check(CLI::PositiveNumber);
  app.add_option("--shape", shape, "C H W")->expected(3);
  app.add_flag("--concurrent", concurrent, "Advertise concurrent_safe");
  app.add_option("--port", port, "Listen on 127.0.0.1:PORT (0 picks one and prints it)");
  CLI11_PARSE(app, argc, argv);

  ServerModel model;
  model.latent_dim = latent_dim;
  model.shape = {shape[0], shape[1], shape[2]};
  model.concurrent_safe = concurrent;
  const std::size_t n_out = model.shape.size();
  model.compute = [n_out](const std::vector<float>& z) { return stub_pipeline(z, n_out); };

  if (port < 0) {
    Stream io(0, 1);
    serve_connection(io, model);
    return 0;
  }
  TcpListener listener(static_cast<std::uint16_t>(port));
  std::printf("%u\n", listener.port());
  std::fflush(stdout);
  for (;;) {
    std::shared_ptr<Stream> s = listener.accept();
    std::thread([s, model] {
      try {
        serve_connection(*s, model);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "stub: %s\n", e.what());
      }
    }).detach();
  }
}
