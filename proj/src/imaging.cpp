#include "mprobe/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <vector>

#include <png.h>

#include "mprobe/error.hpp"

namespace mprobe {

PhfeMode parse_phfe_mode(const std::string& name) {
  if (name == "variance") return PhfeMode::variance;
  if (name == "mav") return PhfeMode::mav;
  throw ConfigError("phfe_mode must be 'variance' or 'mav', got '" + name + "'");
}

std::string to_string(PhfeMode mode) { return mode == PhfeMode::mav ? "mav" : "variance"; }

ImageTensor laplacian(const ImageTensor& img) {
  const auto& s = img.shape();
  ImageTensor out(s);
  const std::size_t h = s.height, w = s.width;
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t up = i == 0 ? 0 : i - 1;
      const std::size_t down = i + 1 < h ? i + 1 : h - 1;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t left = j == 0 ? 0 : j - 1;
        const std::size_t right = j + 1 < w ? j + 1 : w - 1;
        out(c, i, j) = img(c, up, j) + img(c, down, j) + img(c, i, left) + img(c, i, right) -
                       4.0 * img(c, i, j);
      }
    }
  }
  return out;
}

double variance_energy(const ImageTensor& field) {
  const Vector& x = field.data();
  if (x.size() == 0) throw DimensionError("energy of an empty field");
  const double mean = x.mean();
  return (x.array() - mean).square().mean();
}

double mav_energy(const ImageTensor& field) {
  const Vector& x = field.data();
  if (x.size() == 0) throw DimensionError("energy of an empty field");
  return x.cwiseAbs().mean();
}

double phfe(const ImageTensor& p1, PhfeMode mode) {
  const ImageTensor lap = laplacian(p1);
  return mode == PhfeMode::mav ? mav_energy(lap) : variance_energy(lap);
}

double topk_share(const Vector& m, double k_percent, double floor) {
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw ContractError("k_percent must lie in (0, 100]");
  if (floor < 0.0) throw ContractError("top-k floor must be non-negative");
  const auto n = static_cast<std::size_t>(m.size());
  if (n == 0) throw DimensionError("top-k share of an empty map");
  const auto raw = static_cast<std::size_t>(
      std::floor(k_percent * static_cast<double>(n) / 100.0 + 1e-9));
  const std::size_t count = std::clamp<std::size_t>(raw, 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return m[static_cast<Eigen::Index>(a)] > m[static_cast<Eigen::Index>(b)];
  });
  // Sums are taken relative to the peak so equal shares add up exactly.
  const double peak = m[static_cast<Eigen::Index>(order[0])];
  if (!(peak > 0.0)) return 0.0;
  double selected = 0.0;
  for (std::size_t r = 0; r < count; ++r) selected += m[static_cast<Eigen::Index>(order[r])] / peak;
  double total = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) total += m[i] / peak;
  return selected / (total + floor / peak);
}

Vector laplacian_magnitude(const ImageTensor& img) {
  const ImageTensor lap = laplacian(img);
  const auto& s = img.shape();
  Vector m = Vector::Zero(static_cast<Eigen::Index>(s.pixels()));
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t i = 0; i < s.height; ++i)
      for (std::size_t j = 0; j < s.width; ++j)
        m[static_cast<Eigen::Index>(i * s.width + j)] += std::abs(lap(c, i, j));
  return m / static_cast<double>(s.channels);
}

double topk_hf_share(const ImageTensor& img, double k_percent, double floor) {
  return topk_share(laplacian_magnitude(img), k_percent, floor);
}

HeatMap normalize_map(const Matrix& raw) {
  if (raw.size() == 0) throw DimensionError("heat map is empty");
  HeatMap out;
  out.min = raw.minCoeff();
  out.max = raw.maxCoeff();
  const double range = out.max - out.min;
  if (range > 0.0)
    out.data = ((raw.array() - out.min) / range).matrix();
  else
    out.data = Matrix::Zero(raw.rows(), raw.cols());
  return out;
}

HeatMap jacobian_norm_map(const Matrix& j, const ImageShape& shape) {
  if (static_cast<std::size_t>(j.rows()) != shape.size())
    throw DimensionError("Jacobian has " + std::to_string(j.rows()) + " rows, shape " +
                         shape.str() + " needs " + std::to_string(shape.size()));
  const auto h = static_cast<Eigen::Index>(shape.height);
  const auto w = static_cast<Eigen::Index>(shape.width);
  Matrix raw = Matrix::Zero(h, w);
  const Vector row_sq = j.rowwise().squaredNorm();
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(shape.channels); ++c)
    for (Eigen::Index i = 0; i < h; ++i)
      for (Eigen::Index k = 0; k < w; ++k) raw(i, k) += row_sq[(c * h + i) * w + k];
  return normalize_map(raw.cwiseSqrt());
}

HeatMap laplacian_heat_map(const ImageTensor& field) {
  const auto& s = field.shape();
  const Vector m = laplacian_magnitude(field);
  Matrix raw(static_cast<Eigen::Index>(s.height), static_cast<Eigen::Index>(s.width));
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (Eigen::Index k = 0; k < raw.cols(); ++k) raw(i, k) = m[i * raw.cols() + k];
  return normalize_map(raw);
}

Upsample parse_upsample(const std::string& name) {
  if (name == "nearest") return Upsample::nearest;
  if (name == "bilinear") return Upsample::bilinear;
  throw ConfigError("upsample mode must be 'nearest' or 'bilinear', got '" + name + "'");
}

std::array<double, 3> ramp_color(std::size_t index) {
  const double t = static_cast<double>(std::min<std::size_t>(index, 255)) / 255.0;
  return {t, 0.0, 1.0 - t};
}

namespace {

double sample_bilinear(const Matrix& m, double y, double x) {
  const auto h = m.rows(), w = m.cols();
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const Eigen::Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ty = y - static_cast<double>(y0), tx = x - static_cast<double>(x0);
  const double top = (1.0 - tx) * m(y0, x0) + tx * m(y0, x1);
  const double bottom = (1.0 - tx) * m(y1, x0) + tx * m(y1, x1);
  return (1.0 - ty) * top + ty * bottom;
}

}  // namespace

ImageTensor render_heatmap(const HeatMap& map, std::size_t height, std::size_t width,
                           Upsample mode) {
  if (height == 0 || width == 0) throw DimensionError("heat map target size must be non-zero");
  if (map.data.size() == 0) throw DimensionError("heat map is empty");
  const auto h = static_cast<std::size_t>(map.data.rows());
  const auto w = static_cast<std::size_t>(map.data.cols());
  ImageTensor out(ImageShape{3, height, width});
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      double v;
      if (mode == Upsample::nearest) {
        v = map.data(static_cast<Eigen::Index>(i * h / height),
                     static_cast<Eigen::Index>(j * w / width));
      } else {
        const double y = (static_cast<double>(i) + 0.5) * static_cast<double>(h) /
                             static_cast<double>(height) - 0.5;
        const double x = (static_cast<double>(j) + 0.5) * static_cast<double>(w) /
                             static_cast<double>(width) - 0.5;
        v = sample_bilinear(map.data, y, x);
      }
      if (!(v >= 0.0)) v = 0.0;
      if (v > 1.0) v = 1.0;
      const auto color = ramp_color(static_cast<std::size_t>(std::lround(v * 255.0)));
      for (std::size_t c = 0; c < 3; ++c) out(c, i, j) = color[c];
    }
  }
  return out;
}

void write_png(const ImageTensor& rgb, const std::filesystem::path& path) {
  const auto& s = rgb.shape();
  if (s.channels != 3) throw DimensionError("PNG export needs a 3-channel image, got " + s.str());
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "wb"),
                                                       &std::fclose);
  if (!file) throw Error("cannot open '" + path.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: cannot allocate info struct");
  }
  std::vector<png_byte> row(s.width * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t i = 0; i < s.height; ++i) {
    for (std::size_t j = 0; j < s.width; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        row[j * 3 + c] =
            static_cast<png_byte>(std::lround(std::clamp(rgb(c, i, j), 0.0, 1.0) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw Error("failed flushing '" + path.string() + "'");
}

void write_map_csv(const HeatMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  char buf[32];
  for (Eigen::Index i = 0; i < map.data.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.data.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", map.data(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace mprobe
