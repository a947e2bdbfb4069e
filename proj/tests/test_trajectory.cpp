#include <gtest/gtest.h>

#include <cmath>

#include "mprobe/builtin.hpp"
#include "mprobe/error.hpp"
#include "mprobe/records.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/trajectory.hpp"

using namespace mprobe;
using nlohmann::json;

TEST(Slerp, EndpointsAndNorm) {
  const auto a = latent_from_seed(0, 8), b = latent_from_seed(1, 8);
  EXPECT_LT((slerp(a, b, 0.0) - a).norm(), 1e-12);
  EXPECT_LT((slerp(a, b, 1.0) - b).norm(), 1e-12);
  const Vector u = a.normalized(), v = (b - b.dot(u) * u).normalized();
  const Vector m = slerp(u, v, 0.5);
  EXPECT_NEAR(m.norm(), 1.0, 1e-12);
  EXPECT_NEAR(m.dot(u), std::cos(M_PI / 4), 1e-12);
}

TEST(Slerp, ParallelFallsBackToLerp) {
  const auto a = latent_from_seed(0, 4);
  const Vector b = 3.0 * a;
  EXPECT_LT((slerp(a, b, 0.5) - 2.0 * a).norm(), 1e-12);
  EXPECT_THROW(slerp(Vector::Zero(4), a, 0.5), ContractError);
}

TEST(Path, CountsAndAlphas) {
  const auto p = build_path(latent_from_seed(0, 4), latent_from_seed(1, 4), 20);
  EXPECT_EQ(p.points.size(), 21u);
  EXPECT_EQ(p.alphas.front(), 0.0);
  EXPECT_EQ(p.alphas.back(), 1.0);
}

TEST(Metrics, StraightLine) {
  std::vector<Vector> pts;
  for (int k = 0; k <= 4; ++k) pts.push_back(Vector::Constant(2, k));
  const auto r = trajectory_metrics(pts, 0.0);
  EXPECT_NEAR(r.length, 4 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(r.tortuosity, 1.0, 1e-12);
  EXPECT_NEAR(r.excess, 0.0, 1e-12);
}

TEST(Metrics, IdentitiesUnderFuzzing) {
  Rng r(1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + r.index(30);
    const auto dim = static_cast<Eigen::Index>(1 + r.index(6));
    std::vector<Vector> pts;
    for (std::size_t k = 0; k < n; ++k) pts.push_back(r.normal_vector(dim) * (r.uniform() < 0.1 ? 0 : 1));
    const double eps = 1e-8;
    const auto rec = trajectory_metrics(pts, eps);
    EXPECT_GE(rec.length, rec.endpoint_distance - 1e-12);
    EXPECT_EQ(rec.excess, rec.length - rec.endpoint_distance);
    EXPECT_NEAR(rec.tortuosity * (rec.endpoint_distance + eps), rec.length, 1e-10 * std::max(1.0, rec.length));
    EXPECT_NO_THROW(validate(rec));
  }
}

TEST(Induce, IdentityReproducesPath) {
  const auto g = make_builtin("identity", json{{"latent_dim", 4}}, 0);
  const auto path = build_path(latent_from_seed(0, 4), latent_from_seed(1, 4), 10);
  const auto rec = induce_trajectory(*g, path);
  EXPECT_EQ(rec.latents.size(), 11u);
  EXPECT_EQ(rec.increments.size(), 10u);
  EXPECT_EQ(rec.latents[3], path.points[3]);
}

TEST(Frac, StrictComparison) {
  EXPECT_EQ(paired_frac({1, 2, 3, 4}, {1, 3, 2, 5}), 0.5);
  EXPECT_EQ(paired_frac({1, 1}, {1, 1}), 0.0);
  EXPECT_THROW(paired_frac({1}, {1, 2}), DimensionError);
}

TEST(Extremes, TailOrder) {
  const auto e = extremal_increments({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_DOUBLE_EQ(e.q90, 9.1);
  EXPECT_DOUBLE_EQ(e.q95, 9.55);
  EXPECT_EQ(e.max, 10.0);
}
