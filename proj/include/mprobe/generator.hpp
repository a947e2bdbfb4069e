#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "mprobe/tensor.hpp"

namespace mprobe {

struct GeneratorDescriptor {
  std::string name;
  std::size_t latent_dim = 1;
  ImageShape output_shape;
  bool concurrent_safe = true;
};

// A black-box map G: R^E -> R^(C*H*W). Implementations must be
// referentially transparent: the same z always yields the same bits.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual const GeneratorDescriptor& descriptor() const noexcept = 0;

  std::size_t latent_dim() const noexcept { return descriptor().latent_dim; }
  const ImageShape& output_shape() const noexcept { return descriptor().output_shape; }

  // Checks the latent length, then forwards to evaluate_flat.
  ImageTensor evaluate(const LatentPoint& z) const;

 protected:
  virtual Vector evaluate_flat(const LatentPoint& z) const = 0;
};

// Generator with a closed-form Jacobian; the test oracle for every
// finite-difference quantity.
class AnalyticGenerator : public Generator {
 public:
  // D_output x E.
  virtual Matrix jacobian(const LatentPoint& z) const = 0;

  // Upper bound on |d^2/dt^2 G_i(z + t w)| over unit w, all output entries i
  // and all points within `radius` of z.
  virtual double curvature_bound(const LatentPoint& z, double radius) const = 0;
};

using GeneratorPtr = std::shared_ptr<const Generator>;
using AnalyticGeneratorPtr = std::shared_ptr<const AnalyticGenerator>;

}  // namespace mprobe
