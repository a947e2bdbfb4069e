#include "mprobe/tensor.hpp"

#include "mprobe/error.hpp"

namespace mprobe {

std::string ImageShape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

ImageTensor::ImageTensor(ImageShape shape)
    : shape_(shape), data_(Vector::Zero(static_cast<Eigen::Index>(shape.size()))) {
  if (!shape.valid()) throw DimensionError("image shape must be at least 1x1x1, got " + shape.str());
}

ImageTensor::ImageTensor(ImageShape shape, Vector data) : shape_(shape), data_(std::move(data)) {
  if (!shape.valid()) throw DimensionError("image shape must be at least 1x1x1, got " + shape.str());
  if (static_cast<std::size_t>(data_.size()) != shape.size())
    throw DimensionError("image data has " + std::to_string(data_.size()) + " entries, shape " +
                         shape.str() + " needs " + std::to_string(shape.size()));
}

}  // namespace mprobe
