#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace mprobe {

// Mixes a base seed with a stream index (splitmix64 finalizer). Every
// randomized operation draws from its own derived stream so results do not
// depend on evaluation order.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

// Stream tags for the seeded draws the toolkit makes.
namespace streams {
inline constexpr std::uint64_t latent = 0x6c6174656e74ULL;
inline constexpr std::uint64_t basis = 0x6261736973ULL;
inline constexpr std::uint64_t neighbors = 0x6e65696768ULL;
inline constexpr std::uint64_t endpoint_a = 0x656e6461ULL;
inline constexpr std::uint64_t endpoint_b = 0x656e6462ULL;
inline constexpr std::uint64_t weights = 0x77656967ULL;
}  // namespace streams

// mt19937_64 with hand-rolled distributions: the standard distribution
// objects are implementation-defined, these are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  double normal();

  Eigen::VectorXd normal_vector(Eigen::Index n);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  // Uniform direction on the unit sphere in R^n.
  Eigen::VectorXd unit_vector(Eigen::Index n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Standard-normal latent code for a sample seed.
Eigen::VectorXd latent_from_seed(std::uint64_t seed, Eigen::Index latent_dim);

}  // namespace mprobe
