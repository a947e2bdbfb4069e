#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mprobe/generator.hpp"

namespace mprobe {

// G(z) = M z.
class LinearGenerator final : public AnalyticGenerator {
 public:
  LinearGenerator(Matrix m, ImageShape shape, std::string name = "linear");

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint&) const override { return m_; }
  double curvature_bound(const LatentPoint&, double) const override { return 0.0; }
  const Matrix& matrix() const noexcept { return m_; }

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override { return m_ * z; }

 private:
  Matrix m_;
  GeneratorDescriptor desc_;
};

// G(z) = c for every z.
class ConstantGenerator final : public AnalyticGenerator {
 public:
  ConstantGenerator(std::size_t latent_dim, ImageShape shape, double value);

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint&) const override;
  double curvature_bound(const LatentPoint&, double) const override { return 0.0; }

 protected:
  Vector evaluate_flat(const LatentPoint&) const override;

 private:
  GeneratorDescriptor desc_;
  double value_;
};

// G(z1, z2) = (z1^2, z2); eigenvalues of the metric cross at |z1| = 1/2.
class SaddleGenerator final : public AnalyticGenerator {
 public:
  SaddleGenerator();

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint& z) const override;
  double curvature_bound(const LatentPoint&, double) const override { return 2.0; }

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  GeneratorDescriptor desc_;
};

// Unit-sphere chart (cos a cos b, sin a cos b, sin b).
class SphereGenerator final : public AnalyticGenerator {
 public:
  SphereGenerator();

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint& z) const override;
  double curvature_bound(const LatentPoint&, double) const override { return 1.0; }

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  GeneratorDescriptor desc_;
};

// G(z) = B tanh(A z) with seeded Gaussian weights.
class RandomFeatureGenerator final : public AnalyticGenerator {
 public:
  RandomFeatureGenerator(std::size_t latent_dim, std::size_t hidden, ImageShape shape,
                         double scale, std::uint64_t seed);

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint& z) const override;
  double curvature_bound(const LatentPoint& z, double radius) const override;
  const Matrix& input_weights() const noexcept { return a_; }
  const Matrix& output_weights() const noexcept { return b_; }

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  Matrix a_;
  Matrix b_;
  GeneratorDescriptor desc_;
};

struct FamilyParams {
  std::size_t latent_dim = 16;
  std::size_t height = 8;
  std::size_t width = 8;
  // Weight of the log-radius term; sets how strongly curvature feeds P1.
  double gamma = 1.0;
  // Amplitude and frequency of the curvature-independent texture term.
  double texture = 0.05;
  double texture_frequency = 3.0;
  // Scale of the linear directions that keep the metric full rank.
  double secondary = 0.1;
  std::uint64_t pattern_seed = 0;
};

// Synthetic family with a polar principal direction. With r = |(z0, z1)|
//
//   G(z) = r (S0 + xi(z2) T) + gamma log(r) H + s * sum_{k>=1} z_k Q_k
//
// the principal eigenvector is the radial direction, which rotates at rate
// 1/r, so 1/r is the ground-truth curvature knob. The coupled family uses a
// checkerboard for H (the curvature term carries high-frequency detail);
// the decoupled family uses a flat channel (the curvature term is only a
// global shift). Both have identical metric spectra, so Local Scaling
// cannot tell them apart.
class FamilyGenerator final : public AnalyticGenerator {
 public:
  FamilyGenerator(bool coupled, const FamilyParams& params);

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint& z) const override;
  double curvature_bound(const LatentPoint& z, double radius) const override;

  bool coupled() const noexcept { return coupled_; }
  double curvature_knob(const LatentPoint& z) const;

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  double texture_amplitude(double t) const;
  double texture_slope(double t) const;

  bool coupled_;
  FamilyParams params_;
  Vector base_;     // S0
  Vector texture_;  // T
  Vector curve_;    // H
  Matrix linear_;   // columns Q_1 .. Q_{E-1}
  GeneratorDescriptor desc_;
};

// Rotates consecutive coordinate pairs by twist * |z|. Stands in for a
// sampler condition that warps interpolation paths.
class CurlSampler final : public AnalyticGenerator {
 public:
  CurlSampler(std::size_t latent_dim, double twist);

  const GeneratorDescriptor& descriptor() const noexcept override { return desc_; }
  Matrix jacobian(const LatentPoint& z) const override;
  double curvature_bound(const LatentPoint& z, double radius) const override;

 protected:
  Vector evaluate_flat(const LatentPoint& z) const override;

 private:
  double twist_;
  GeneratorDescriptor desc_;
};

std::vector<std::string> builtin_kinds();

// Builds a built-in generator from a kind name and JSON parameters. `seed`
// drives any random weights.
AnalyticGeneratorPtr make_builtin(const std::string& kind, const nlohmann::json& params,
                                  std::uint64_t seed);

}  // namespace mprobe
