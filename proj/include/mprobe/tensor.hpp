#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Core>

namespace mprobe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Latent code z in R^E.
using LatentPoint = Eigen::VectorXd;

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t pixels() const noexcept { return height * width; }
  std::size_t size() const noexcept { return channels * height * width; }
  bool valid() const noexcept { return channels >= 1 && height >= 1 && width >= 1; }
  std::string str() const;

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

// C x H x W real array stored channel-major, row-major within a channel.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(ImageShape shape);
  ImageTensor(ImageShape shape, Vector data);

  const ImageShape& shape() const noexcept { return shape_; }
  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }

  std::size_t index(std::size_t c, std::size_t i, std::size_t j) const noexcept {
    return (c * shape_.height + i) * shape_.width + j;
  }
  double operator()(std::size_t c, std::size_t i, std::size_t j) const noexcept {
    return data_[static_cast<Eigen::Index>(index(c, i, j))];
  }
  double& operator()(std::size_t c, std::size_t i, std::size_t j) noexcept {
    return data_[static_cast<Eigen::Index>(index(c, i, j))];
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  ImageShape shape_;
  Vector data_;
};

}  // namespace mprobe
