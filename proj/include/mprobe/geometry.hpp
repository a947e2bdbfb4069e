#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "mprobe/generator.hpp"
#include "mprobe/tensor.hpp"

namespace mprobe {

// E x P matrix with orthonormal columns.
struct SubspaceBasis {
  Matrix w;
  std::uint64_t seed = 0;

  std::size_t latent_dim() const noexcept { return static_cast<std::size_t>(w.rows()); }
  std::size_t subspace_dim() const noexcept { return static_cast<std::size_t>(w.cols()); }
};

enum class FdScheme { forward, central };

struct SubspaceJacobian {
  Matrix matrix;  // D_output x P
  double step = 0.0;
  ImageTensor base;  // G(z), reused for image-space energies
};

struct MetricTensor {
  Matrix matrix;
};

struct SpectralDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column i pairs with eigenvalues[i]

  std::size_t size() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
  Vector principal() const { return eigenvectors.col(0); }
};

using Decomposer = std::function<SpectralDecomposition(const MetricTensor&)>;

struct Neighbor {
  LatentPoint point;
  SpectralDecomposition spectrum;
};

struct LocalComplexity {
  double value = 0.0;
  bool degenerate = false;
};

struct CouplingProfile {
  // Mean |cos(V1(z), v'_k(z'))| for k = 2..P.
  Vector similarities;
  double principal = 0.0;  // same quantity for k = 1
  double sis = 0.0;
};

SubspaceBasis sample_orthonormal_basis(std::size_t latent_dim, std::size_t subspace_dim,
                                       std::uint64_t seed);

// Forward scheme: P + 1 evaluations. Central scheme: 2P + 1 (the base point
// is still evaluated so `base` is filled).
SubspaceJacobian fd_jacobian(const Generator& gen, const LatentPoint& z,
                             const SubspaceBasis& basis, double epsilon,
                             FdScheme scheme = FdScheme::forward);

MetricTensor metric_tensor(const SubspaceJacobian& j);

SpectralDecomposition eigendecompose(const MetricTensor& a);

// Negative infinity when no eigenvalue clears the threshold.
double local_scaling(const SpectralDecomposition& d, double rank_tolerance = 1e-12);

ImageTensor principal_projection(const SubspaceJacobian& j, const SpectralDecomposition& d,
                                 const ImageShape& shape);

// True when (lambda1 - lambda2) <= tolerance * lambda1.
bool is_degenerate(const SpectralDecomposition& d, double tolerance);

// Points z + radius * u_k with u_k uniform on the unit sphere, one derived
// stream per k.
std::vector<LatentPoint> neighbor_points(const LatentPoint& z, double radius, std::size_t count,
                                         std::uint64_t seed);

struct NeighborOptions {
  double radius = 1e-2;
  std::size_t count = 8;
  double epsilon = 1e-3;
  FdScheme scheme = FdScheme::forward;
  std::uint64_t seed = 0;
  Decomposer decomposer;  // empty: eigendecompose
};

std::vector<Neighbor> neighbor_spectra(const Generator& gen, const LatentPoint& z,
                                       const SubspaceBasis& basis,
                                       const NeighborOptions& options);

LocalComplexity local_complexity(const LatentPoint& z, const SpectralDecomposition& base,
                                 const std::vector<Neighbor>& neighbors,
                                 double degeneracy_tolerance = 1e-2);

LocalComplexity local_complexity(const Generator& gen, const LatentPoint& z,
                                 const SubspaceBasis& basis, const SpectralDecomposition& base,
                                 const NeighborOptions& options,
                                 double degeneracy_tolerance = 1e-2);

// Builds the profile from per-axis mean |cos| values (index 0 is k = 1).
CouplingProfile coupling_profile_from_means(const Vector& mean_abs_cos, double floor);

CouplingProfile spectral_isolation(const SpectralDecomposition& base,
                                   const std::vector<Neighbor>& neighbors, double floor = 1e-8);

CouplingProfile spectral_isolation(const Generator& gen, const LatentPoint& z,
                                   const SubspaceBasis& basis, const SpectralDecomposition& base,
                                   const NeighborOptions& options, double floor = 1e-8);

// 1 - ood/normal per axis; NaN where the normal similarity is not positive.
Vector dimensional_coupling_ratio(const Vector& normal, const Vector& ood);

double explained_variance(const SpectralDecomposition& d, std::size_t k);

double paired_axis_similarity(const Vector& a, const Vector& b);

}  // namespace mprobe
