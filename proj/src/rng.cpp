#include "mprobe/rng.hpp"

#include <cmath>
#include <numbers>

namespace mprobe {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Eigen::VectorXd Rng::normal_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Eigen::MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  // Column-major fill so a column is a contiguous run of draws.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal();
  return m;
}

Eigen::VectorXd Rng::unit_vector(Eigen::Index n) {
  for (;;) {
    Eigen::VectorXd v = normal_vector(n);
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

Eigen::VectorXd latent_from_seed(std::uint64_t seed, Eigen::Index latent_dim) {
  Rng rng(derive_seed(seed, streams::latent));
  return rng.normal_vector(latent_dim);
}

}  // namespace mprobe
