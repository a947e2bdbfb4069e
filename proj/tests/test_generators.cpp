#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "mprobe/builtin.hpp"
#include "mprobe/error.hpp"
#include "mprobe/geometry.hpp"
#include "mprobe/imaging.hpp"
#include "mprobe/rng.hpp"
#include "oracles.hpp"

using namespace mprobe;
using nlohmann::json;

TEST(Rng, DeriveSeedMatchesSplitmix) {
  for (std::uint64_t b : {0ull, 1ull, 12345ull, ~0ull})
    for (std::uint64_t s : {std::uint64_t{0}, std::uint64_t{7}, std::uint64_t{streams::basis}})
      EXPECT_EQ(derive_seed(b, s), oracle::splitmix(b, s));
}

TEST(Rng, SameSeedSameDraws) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_EQ(latent_from_seed(3, 16), latent_from_seed(3, 16));
  EXPECT_NE(latent_from_seed(3, 16), latent_from_seed(4, 16));
}

TEST(Rng, IndexStaysInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(r.index(7), 7u);
  Rng u(2);
  const auto v = u.unit_vector(5);
  EXPECT_NEAR(v.norm(), 1.0, 1e-14);
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  Rng r(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Generator, EvaluateChecksLatentLength) {
  const auto g = make_builtin("saddle", json::object(), 0);
  EXPECT_THROW(g->evaluate(Vector::Zero(3)), DimensionError);
}

TEST(Generator, NonFiniteOutputIsEvaluationError) {
  const auto g = make_builtin("coupled_family", json::object(), 0);
  EXPECT_THROW(g->evaluate(Vector::Zero(16)), EvaluationError);  // log(0)
}

TEST(Builtin, FactoryKnowsEveryKind) {
  for (const auto& kind : builtin_kinds()) {
    const auto g = make_builtin(kind, json::object(), 0);
    const auto z = latent_from_seed(1, static_cast<Eigen::Index>(g->latent_dim()));
    const auto out = g->evaluate(z);
    EXPECT_EQ(out.shape(), g->output_shape()) << kind;
    const Matrix j = g->jacobian(z);
    EXPECT_EQ(static_cast<std::size_t>(j.rows()), g->output_shape().size()) << kind;
    EXPECT_EQ(static_cast<std::size_t>(j.cols()), g->latent_dim()) << kind;
  }
}

TEST(Builtin, BadParamsAreConfigErrors) {
  EXPECT_THROW(make_builtin("nope", json::object(), 0), ConfigError);
  EXPECT_THROW(make_builtin("coupled_family", json{{"latent_dim", 2}}, 0), ConfigError);
  EXPECT_THROW(make_builtin("curl_sampler", json{{"latent_dim", 1}}, 0), ConfigError);
}

TEST(Builtin, LinearFromMatrix) {
  const auto g = make_builtin("linear", json{{"matrix", {{1, 2}, {3, 4}, {5, 6}}}}, 0);
  Vector z(2);
  z << 1, -1;
  const auto out = g->evaluate(z);
  EXPECT_DOUBLE_EQ(out.data()[0], -1);
  EXPECT_DOUBLE_EQ(out.data()[2], -1);
}

TEST(Builtin, RandomFeatureDependsOnSeed) {
  const auto a = make_builtin("random_feature", json::object(), 1);
  const auto b = make_builtin("random_feature", json::object(), 1);
  const auto c = make_builtin("random_feature", json::object(), 2);
  const auto z = latent_from_seed(0, 8);
  EXPECT_EQ(a->evaluate(z).data(), b->evaluate(z).data());
  EXPECT_NE(a->evaluate(z).data(), c->evaluate(z).data());
}

// Second directional derivative by central differences stays under the
// advertised bound.
TEST(Builtin, CurvatureBoundHolds) {
  for (const auto& kind : builtin_kinds()) {
    const auto g = make_builtin(kind, json::object(), 0);
    const auto e = static_cast<Eigen::Index>(g->latent_dim());
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto z = latent_from_seed(s, e);
      Rng r(s + 100);
      const Vector w = r.unit_vector(e);
      const double h = 1e-4;
      const Vector d2 = (g->evaluate(z + h * w).data() - 2 * g->evaluate(z).data() +
                         g->evaluate(z - h * w).data()) / (h * h);
      EXPECT_LE(d2.cwiseAbs().maxCoeff(), g->curvature_bound(z, 1e-3) * 1.01 + 1e-4) << kind;
    }
  }
}

TEST(Family, BothFamiliesShareTheMetricSpectrum) {
  const auto c = make_builtin("coupled_family", json::object(), 0);
  const auto d = make_builtin("decoupled_family", json::object(), 0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto z = latent_from_seed(s, 16);
    const Matrix jc = c->jacobian(z), jd = d->jacobian(z);
    const auto [lc, vc] = oracle::jacobi_eigen(jc.transpose() * jc);
    const auto [ld, vd] = oracle::jacobi_eigen(jd.transpose() * jd);
    EXPECT_LT((lc - ld).cwiseAbs().maxCoeff(), 1e-9 * lc[0]);
  }
}

// In the coupled family the principal image direction carries the checker
// pattern with weight gamma / r, so its Laplacian energy tracks the knob.
TEST(Family, CoupledPhfeTracksKnob) {
  const auto g = make_builtin("coupled_family", json::object(), 0);
  const auto& fam = dynamic_cast<const FamilyGenerator&>(*g);
  Vector z = latent_from_seed(5, 16);
  double prev = 0.0;
  for (double r : {4.0, 2.0, 1.0, 0.5, 0.25}) {
    const double scale = r / std::hypot(z[0], z[1]);
    z[0] *= scale;
    z[1] *= scale;
    EXPECT_NEAR(fam.curvature_knob(z), 1.0 / r, 1e-12);
    const Matrix j = g->jacobian(z);
    const auto [vals, vecs] = oracle::jacobi_eigen(j.transpose() * j);
    const ImageTensor p1(g->output_shape(), j * vecs.col(0));
    const double e = phfe(p1);
    EXPECT_GT(e, prev);
    prev = e;
  }
}

TEST(Curl, MatchesComplexRotationIn2D) {
  const auto g = make_builtin("curl_sampler", json{{"latent_dim", 2}, {"twist", 1.5}}, 0);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto z = latent_from_seed(s, 2);
    const std::complex<double> c(z[0], z[1]);
    const auto out = c * std::polar(1.0, 1.5 * std::abs(c));
    const auto got = g->evaluate(z);
    EXPECT_NEAR(got.data()[0], out.real(), 1e-14);
    EXPECT_NEAR(got.data()[1], out.imag(), 1e-14);
  }
}

TEST(Curl, RadialSegmentBecomesSpiral) {
  const double t = 2.0;
  const auto g = make_builtin("curl_sampler", json{{"latent_dim", 2}, {"twist", t}}, 0);
  Vector a(2), b(2);
  a << 0.6, 0.8;  // |a| = 1
  b = 3.0 * a;
  const int k = 4000;
  double length = 0.0;
  Vector prev = g->evaluate(a).data();
  for (int i = 1; i <= k; ++i) {
    const Vector p = a + (b - a) * (static_cast<double>(i) / k);
    const Vector cur = g->evaluate(p).data();
    length += (cur - prev).norm();
    prev = cur;
  }
  const double expect = oracle::spiral_length(1.0, 3.0, t);
  EXPECT_NEAR(length, expect, 1e-5 * expect);
  EXPECT_GT(length, 2.0);  // the straight segment has length 2
}
