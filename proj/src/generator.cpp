#include "mprobe/generator.hpp"

#include "mprobe/error.hpp"

namespace mprobe {

ImageTensor Generator::evaluate(const LatentPoint& z) const {
  const auto& desc = descriptor();
  if (static_cast<std::size_t>(z.size()) != desc.latent_dim)
    throw DimensionError(desc.name + ": latent has length " + std::to_string(z.size()) +
                         ", generator expects " + std::to_string(desc.latent_dim));
  Vector out = evaluate_flat(z);
  if (static_cast<std::size_t>(out.size()) != desc.output_shape.size())
    throw DimensionError(desc.name + ": produced " + std::to_string(out.size()) +
                         " values for declared shape " + desc.output_shape.str());
  if (!out.allFinite()) throw EvaluationError(desc.name + ": non-finite output", std::nullopt);
  return ImageTensor(desc.output_shape, std::move(out));
}

}  // namespace mprobe
