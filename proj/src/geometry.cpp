#include "mprobe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe {
namespace {

ImageTensor evaluate_at(const Generator& gen, const LatentPoint& z,
                        std::optional<std::size_t> column) {
  try {
    return gen.evaluate(z);
  } catch (const EvaluationError& e) {
    if (!column) throw;
    throw EvaluationError(std::string(e.what()) + " (finite-difference column " +
                              std::to_string(*column) + ")",
                          column);
  }
}

void check_neighbor_options(const NeighborOptions& o) {
  if (!(o.radius > 0.0)) throw ContractError("neighbor radius must be positive");
  if (o.count < 1) throw ContractError("neighbor count must be >= 1");
}

}  // namespace

SubspaceBasis sample_orthonormal_basis(std::size_t latent_dim, std::size_t subspace_dim,
                                       std::uint64_t seed) {
  if (subspace_dim < 1 || latent_dim < 1) throw DimensionError("basis dimensions must be >= 1");
  if (subspace_dim > latent_dim)
    throw DimensionError("subspace_dim " + std::to_string(subspace_dim) + " exceeds latent_dim " +
                         std::to_string(latent_dim));
  const auto e = static_cast<Eigen::Index>(latent_dim);
  const auto p = static_cast<Eigen::Index>(subspace_dim);
  Rng rng(derive_seed(seed, streams::basis));
  const Matrix draw = rng.normal_matrix(e, p);
  Eigen::HouseholderQR<Matrix> qr(draw);
  Matrix q = qr.householderQ() * Matrix::Identity(e, p);
  // Fix the QR sign freedom so columns follow the drawn directions.
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index i = 0; i < p; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return SubspaceBasis{std::move(q), seed};
}

SubspaceJacobian fd_jacobian(const Generator& gen, const LatentPoint& z,
                             const SubspaceBasis& basis, double epsilon, FdScheme scheme) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw ContractError("finite-difference step must be positive");
  if (!z.allFinite()) throw ContractError("latent point has non-finite entries");
  if (basis.latent_dim() != gen.latent_dim())
    throw DimensionError("basis has " + std::to_string(basis.latent_dim()) +
                         " rows, generator latent_dim is " + std::to_string(gen.latent_dim()));
  if (static_cast<std::size_t>(z.size()) != gen.latent_dim())
    throw DimensionError("latent has length " + std::to_string(z.size()) +
                         ", generator expects " + std::to_string(gen.latent_dim()));

  SubspaceJacobian out;
  out.step = epsilon;
  out.base = evaluate_at(gen, z, std::nullopt);
  const Vector& g0 = out.base.data();
  const auto p = basis.w.cols();
  out.matrix.resize(g0.size(), p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const auto col = static_cast<std::size_t>(i);
    const LatentPoint plus = z + epsilon * basis.w.col(i);
    if (scheme == FdScheme::forward) {
      out.matrix.col(i) = (evaluate_at(gen, plus, col).data() - g0) / epsilon;
    } else {
      const LatentPoint minus = z - epsilon * basis.w.col(i);
      out.matrix.col(i) =
          (evaluate_at(gen, plus, col).data() - evaluate_at(gen, minus, col).data()) /
          (2.0 * epsilon);
    }
  }
  return out;
}

MetricTensor metric_tensor(const SubspaceJacobian& j) {
  if (!j.matrix.allFinite()) throw ContractError("Jacobian has non-finite entries");
  const Matrix a = j.matrix.transpose() * j.matrix;
  return MetricTensor{0.5 * (a + a.transpose())};
}

SpectralDecomposition eigendecompose(const MetricTensor& a) {
  const Matrix& m = a.matrix;
  if (m.rows() != m.cols() || m.rows() < 1) throw DimensionError("metric tensor must be square");
  if (!m.allFinite()) throw ContractError("metric tensor has non-finite entries");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1.0);
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ContractError("metric tensor is not symmetric");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition did not converge");
  const auto n = m.rows();
  SpectralDecomposition d;
  d.eigenvalues = solver.eigenvalues().reverse();
  d.eigenvectors = solver.eigenvectors().rowwise().reverse();
  for (Eigen::Index c = 0; c < n; ++c) {
    auto v = d.eigenvectors.col(c);
    v.normalize();
    Eigen::Index lead = 0;
    for (Eigen::Index r = 1; r < n; ++r)
      if (std::abs(v[r]) > std::abs(v[lead])) lead = r;
    if (v[lead] < 0.0) v = -v;
  }
  return d;
}

double local_scaling(const SpectralDecomposition& d, double rank_tolerance) {
  if (!d.eigenvalues.allFinite()) throw ContractError("eigenvalues must be finite");
  const double top = d.eigenvalues.size() ? d.eigenvalues.maxCoeff() : 0.0;
  const double threshold = rank_tolerance * std::max(top, 1e-300);
  double sum = 0.0;
  bool any = false;
  for (const double lambda : d.eigenvalues) {
    if (lambda > threshold) {
      sum += std::log(lambda);
      any = true;
    }
  }
  return any ? 0.5 * sum : -std::numeric_limits<double>::infinity();
}

ImageTensor principal_projection(const SubspaceJacobian& j, const SpectralDecomposition& d,
                                 const ImageShape& shape) {
  if (j.matrix.cols() != d.eigenvectors.rows())
    throw DimensionError("Jacobian has " + std::to_string(j.matrix.cols()) +
                         " columns, eigenvectors have " + std::to_string(d.eigenvectors.rows()) +
                         " entries");
  if (static_cast<std::size_t>(j.matrix.rows()) != shape.size())
    throw DimensionError("Jacobian has " + std::to_string(j.matrix.rows()) +
                         " rows, shape " + shape.str() + " needs " + std::to_string(shape.size()));
  return ImageTensor(shape, j.matrix * d.eigenvectors.col(0));
}

bool is_degenerate(const SpectralDecomposition& d, double tolerance) {
  if (d.eigenvalues.size() < 2) return false;
  const double l1 = d.eigenvalues[0];
  return l1 - d.eigenvalues[1] <= tolerance * l1;
}

std::vector<LatentPoint> neighbor_points(const LatentPoint& z, double radius, std::size_t count,
                                         std::uint64_t seed) {
  const std::uint64_t stream = derive_seed(seed, streams::neighbors);
  std::vector<LatentPoint> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(stream, k));
    out.push_back(z + radius * rng.unit_vector(z.size()));
  }
  return out;
}

std::vector<Neighbor> neighbor_spectra(const Generator& gen, const LatentPoint& z,
                                       const SubspaceBasis& basis,
                                       const NeighborOptions& options) {
  check_neighbor_options(options);
  const Decomposer decompose = options.decomposer ? options.decomposer : Decomposer(eigendecompose);
  std::vector<Neighbor> out;
  out.reserve(options.count);
  for (auto& point : neighbor_points(z, options.radius, options.count, options.seed)) {
    const auto j = fd_jacobian(gen, point, basis, options.epsilon, options.scheme);
    out.push_back(Neighbor{std::move(point), decompose(metric_tensor(j))});
  }
  return out;
}

LocalComplexity local_complexity(const LatentPoint& z, const SpectralDecomposition& base,
                                 const std::vector<Neighbor>& neighbors,
                                 double degeneracy_tolerance) {
  if (neighbors.empty()) throw ContractError("local complexity needs at least one neighbor");
  const Vector v1 = base.principal();
  LocalComplexity out;
  out.degenerate = is_degenerate(base, degeneracy_tolerance);
  double sum = 0.0;
  for (const auto& n : neighbors) {
    if (n.spectrum.eigenvectors.rows() != v1.size())
      throw DimensionError("neighbor spectrum size differs from base spectrum");
    const Vector v1n = n.spectrum.principal();
    const double s = v1.dot(v1n) < 0.0 ? -1.0 : 1.0;
    const double dist = (z - n.point).norm();
    if (!(dist > 0.0)) throw ContractError("neighbor coincides with the base point");
    sum += (v1 - s * v1n).norm() / dist;
    out.degenerate = out.degenerate || is_degenerate(n.spectrum, degeneracy_tolerance);
  }
  out.value = sum / static_cast<double>(neighbors.size());
  return out;
}

LocalComplexity local_complexity(const Generator& gen, const LatentPoint& z,
                                 const SubspaceBasis& basis, const SpectralDecomposition& base,
                                 const NeighborOptions& options, double degeneracy_tolerance) {
  return local_complexity(z, base, neighbor_spectra(gen, z, basis, options),
                          degeneracy_tolerance);
}

CouplingProfile coupling_profile_from_means(const Vector& mean_abs_cos, double floor) {
  if (!(floor > 0.0)) throw ContractError("SIS floor must be positive");
  if (mean_abs_cos.size() < 1) throw DimensionError("coupling profile needs at least one axis");
  CouplingProfile out;
  out.principal = mean_abs_cos[0];
  out.similarities = mean_abs_cos.tail(mean_abs_cos.size() - 1);
  out.sis = out.principal / (out.similarities.sum() + floor);
  return out;
}

CouplingProfile spectral_isolation(const SpectralDecomposition& base,
                                   const std::vector<Neighbor>& neighbors, double floor) {
  if (neighbors.empty()) throw ContractError("spectral isolation needs at least one neighbor");
  const Vector v1 = base.principal();
  Vector sums = Vector::Zero(v1.size());
  for (const auto& n : neighbors) {
    if (n.spectrum.eigenvectors.rows() != v1.size())
      throw DimensionError("neighbor spectrum size differs from base spectrum");
    sums += (n.spectrum.eigenvectors.transpose() * v1).cwiseAbs().cwiseMin(1.0);
  }
  return coupling_profile_from_means(sums / static_cast<double>(neighbors.size()), floor);
}

CouplingProfile spectral_isolation(const Generator& gen, const LatentPoint& z,
                                   const SubspaceBasis& basis, const SpectralDecomposition& base,
                                   const NeighborOptions& options, double floor) {
  return spectral_isolation(base, neighbor_spectra(gen, z, basis, options), floor);
}

Vector dimensional_coupling_ratio(const Vector& normal, const Vector& ood) {
  if (normal.size() != ood.size())
    throw DimensionError("coupling profiles have lengths " + std::to_string(normal.size()) +
                         " and " + std::to_string(ood.size()));
  Vector out(normal.size());
  for (Eigen::Index k = 0; k < normal.size(); ++k)
    out[k] = normal[k] > 0.0 ? 1.0 - ood[k] / normal[k]
                             : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double explained_variance(const SpectralDecomposition& d, std::size_t k) {
  const auto p = d.size();
  if (k < 1 || k > p)
    throw ContractError("k must lie in [1, " + std::to_string(p) + "], got " + std::to_string(k));
  const Vector clamped = d.eigenvalues.cwiseMax(0.0);
  const double total = clamped.sum();
  if (!(total > 0.0)) throw UndefinedError("explained variance of an all-zero spectrum");
  return clamped.head(static_cast<Eigen::Index>(k)).sum() / total;
}

double paired_axis_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("axis vectors differ in length");
  if (std::abs(a.norm() - 1.0) > 1e-8 || std::abs(b.norm() - 1.0) > 1e-8)
    throw ContractError("axis similarity needs unit-norm vectors");
  return std::min(1.0, std::abs(a.dot(b)));
}

}  // namespace mprobe
