#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>

#include "mprobe/geometry.hpp"
#include "mprobe/tensor.hpp"

namespace mprobe {

enum class PhfeMode { variance, mav };

PhfeMode parse_phfe_mode(const std::string& name);
std::string to_string(PhfeMode mode);

// 5-point Laplacian per channel, replicate padding.
ImageTensor laplacian(const ImageTensor& img);

// Population variance over every entry.
double variance_energy(const ImageTensor& field);
double mav_energy(const ImageTensor& field);

double phfe(const ImageTensor& p1, PhfeMode mode = PhfeMode::variance);

// Share of total mass held by the max(1, floor(k% * n)) largest entries of m.
// Ties resolve to the lower index.
double topk_share(const Vector& m, double k_percent, double floor = 1e-12);

// Per-pixel channel mean of |laplacian(img)|, row-major H*W.
Vector laplacian_magnitude(const ImageTensor& img);

double topk_hf_share(const ImageTensor& img, double k_percent, double floor = 1e-12);

// H x W map with the range used for min-max normalization.
struct HeatMap {
  Matrix data;
  double min = 0.0;
  double max = 0.0;
};

// Min-max scale to [0, 1]; a constant map becomes all zeros.
HeatMap normalize_map(const Matrix& raw);

HeatMap jacobian_norm_map(const Matrix& j, const ImageShape& shape);
inline HeatMap jacobian_norm_map(const SubspaceJacobian& j, const ImageShape& shape) {
  return jacobian_norm_map(j.matrix, shape);
}

// Normalized channel-mean |laplacian| of an image-shaped field.
HeatMap laplacian_heat_map(const ImageTensor& field);

enum class Upsample { nearest, bilinear };

Upsample parse_upsample(const std::string& name);

// Blue (index 0) to red (index 255).
std::array<double, 3> ramp_color(std::size_t index);

// 3 x height x width RGB image with entries in [0, 1].
ImageTensor render_heatmap(const HeatMap& map, std::size_t height, std::size_t width,
                           Upsample mode = Upsample::nearest);

// 8-bit RGB PNG of a 3-channel image with entries in [0, 1].
void write_png(const ImageTensor& rgb, const std::filesystem::path& path);

// Row-major normalized values, 9 significant digits.
void write_map_csv(const HeatMap& map, const std::filesystem::path& path);

}  // namespace mprobe
