#include <gtest/gtest.h>

#include <fstream>

#include "mprobe/builtin.hpp"
#include "mprobe/error.hpp"
#include "mprobe/geometry.hpp"
#include "mprobe/imaging.hpp"
#include "mprobe/rng.hpp"

using namespace mprobe;

namespace {

ImageTensor random_image(std::uint64_t seed, ImageShape s) {
  Rng r(seed);
  return ImageTensor(s, r.normal_vector(static_cast<Eigen::Index>(s.size())));
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Laplacian, LinearAndKillsConstants) {
  const ImageShape s{2, 5, 7};
  const auto a = random_image(1, s), b = random_image(2, s);
  const ImageTensor mix(s, 2.0 * a.data() - 3.0 * b.data());
  const Vector lhs = laplacian(mix).data();
  const Vector rhs = 2.0 * laplacian(a).data() - 3.0 * laplacian(b).data();
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  const ImageTensor c(s, Vector::Constant(static_cast<Eigen::Index>(s.size()), 4.2));
  EXPECT_EQ(laplacian(c).data().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Laplacian, InteriorStencil) {
  ImageTensor img(ImageShape{1, 3, 3});
  img(0, 1, 1) = 1.0;
  const auto lap = laplacian(img);
  EXPECT_DOUBLE_EQ(lap(0, 1, 1), -4.0);
  EXPECT_DOUBLE_EQ(lap(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(lap(0, 0, 0), 0.0);
}

TEST(Phfe, ScalesWithSquare) {
  const auto a = random_image(3, ImageShape{3, 6, 6});
  const ImageTensor b(a.shape(), 2.5 * a.data());
  EXPECT_NEAR(phfe(b), 6.25 * phfe(a), 1e-12 * phfe(b));
  EXPECT_NEAR(phfe(b, PhfeMode::mav), 2.5 * phfe(a, PhfeMode::mav), 1e-12);
  EXPECT_EQ(parse_phfe_mode("mav"), PhfeMode::mav);
  EXPECT_THROW(parse_phfe_mode("x"), ConfigError);
}

TEST(TopK, HandComputedFourPixels) {
  EXPECT_EQ(topk_share(vec({4, 3, 2, 1}), 25, 0.0), 0.4);
  EXPECT_EQ(topk_share(vec({1, 2, 3, 4}), 50, 0.0), 0.7);
  EXPECT_EQ(topk_share(vec({1, 1, 1, 1}), 50, 0.0), 0.5);
  EXPECT_EQ(topk_share(vec({0, 0, 0, 8}), 10, 0.0), 1.0);  // count clamps to 1
  EXPECT_EQ(topk_share(vec({0, 0, 0, 0}), 25, 0.0), 0.0);
  EXPECT_EQ(topk_share(vec({1, 3, 0, 4}), 100, 0.0), 1.0);
}

TEST(TopK, UniformMapIsTenPercent) {
  EXPECT_EQ(topk_share(Vector::Ones(100), 10, 0.0), 0.1);
  EXPECT_EQ(topk_share(Vector::Constant(400, 0.37), 10, 0.0), 0.1);
  EXPECT_THROW(topk_share(Vector::Ones(4), 0, 0.0), ContractError);
}

TEST(TopK, NondecreasingInK) {
  const Vector m = random_image(4, ImageShape{1, 8, 8}).data().cwiseAbs();
  double prev = 0.0;
  for (double k : {5.0, 10.0, 15.0, 20.0}) {
    const double t = topk_share(m, k);
    EXPECT_GE(t, prev);
    prev = t;
  }
}

TEST(HeatMap, NormalizationAndRamp) {
  Matrix raw(2, 2);
  raw << 1, 3, 5, 5;
  const auto h = normalize_map(raw);
  EXPECT_DOUBLE_EQ(h.data(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(h.max, 5);
  const auto flat = normalize_map(Matrix::Constant(3, 3, 7));
  EXPECT_EQ(flat.data.cwiseAbs().maxCoeff(), 0.0);
  const auto blue = ramp_color(0), red = ramp_color(255);
  EXPECT_EQ(blue[2], 1.0);
  EXPECT_EQ(red[0], 1.0);
}

TEST(HeatMap, RenderNearestAndBilinear) {
  Matrix d(1, 2);
  d << 0, 1;
  const HeatMap m{d, 0, 1};
  const auto near = render_heatmap(m, 2, 4, Upsample::nearest);
  EXPECT_EQ(near.shape(), (ImageShape{3, 2, 4}));
  EXPECT_EQ(near(0, 0, 0), 0.0);
  EXPECT_EQ(near(0, 1, 3), 1.0);
  const auto bil = render_heatmap(m, 1, 4, Upsample::bilinear);
  EXPECT_GT(bil(0, 0, 2), bil(0, 0, 1));
}

TEST(HeatMap, ConstantGeneratorGivesFirstRampColor) {
  ConstantGenerator g(3, ImageShape{1, 4, 4}, 2.0);
  const auto b = sample_orthonormal_basis(3, 3, 0);
  const auto j = fd_jacobian(g, latent_from_seed(0, 3), b, 1e-3);
  const auto rgb = render_heatmap(jacobian_norm_map(j, g.output_shape()), 4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(rgb(0, i, k), 0.0);
      EXPECT_EQ(rgb(2, i, k), 1.0);
    }
}

TEST(HeatMap, PngIsDeterministic) {
  const auto dir = std::filesystem::temp_directory_path() / "mprobe_png_test";
  std::filesystem::create_directories(dir);
  Matrix d = Matrix::Random(5, 6).cwiseAbs();
  const auto rgb = render_heatmap(normalize_map(d), 10, 12);
  write_png(rgb, dir / "a.png");
  write_png(rgb, dir / "b.png");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const auto a = slurp(dir / "a.png");
  EXPECT_EQ(a.substr(1, 3), "PNG");
  EXPECT_EQ(a, slurp(dir / "b.png"));
  EXPECT_THROW(write_png(rgb, "/nonexistent-dir/x.png"), Error);
  std::filesystem::remove_all(dir);
}
