#include "mprobe/builtin.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe {
namespace {

constexpr double kMaxTanhSecondDerivative = 0.7698004;  // max |d^2 tanh / dx^2|

ImageShape flat_shape(std::size_t n) { return ImageShape{1, 1, n}; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

ImageShape shape_param(const nlohmann::json& params, const char* key, ImageShape fallback) {
  if (!params.contains(key)) return fallback;
  const auto& s = params.at(key);
  require(s.is_array() && s.size() == 3, std::string("'") + key + "' must be [C, H, W]");
  ImageShape shape{s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()};
  require(shape.valid(), std::string("'") + key + "' entries must be >= 1");
  return shape;
}

}  // namespace

// ---- linear / constant ------------------------------------------------------

LinearGenerator::LinearGenerator(Matrix m, ImageShape shape, std::string name)
    : m_(std::move(m)) {
  if (static_cast<std::size_t>(m_.rows()) != shape.size())
    throw DimensionError("linear generator: matrix has " + std::to_string(m_.rows()) +
                         " rows, output shape " + shape.str() + " needs " +
                         std::to_string(shape.size()));
  if (m_.cols() < 1) throw DimensionError("linear generator: latent dimension must be >= 1");
  desc_ = {std::move(name), static_cast<std::size_t>(m_.cols()), shape, true};
}

ConstantGenerator::ConstantGenerator(std::size_t latent_dim, ImageShape shape, double value)
    : desc_{"constant", latent_dim, shape, true}, value_(value) {
  if (latent_dim < 1 || !shape.valid()) throw DimensionError("constant generator: bad dimensions");
}

Matrix ConstantGenerator::jacobian(const LatentPoint&) const {
  return Matrix::Zero(static_cast<Eigen::Index>(desc_.output_shape.size()),
                      static_cast<Eigen::Index>(desc_.latent_dim));
}

Vector ConstantGenerator::evaluate_flat(const LatentPoint&) const {
  return Vector::Constant(static_cast<Eigen::Index>(desc_.output_shape.size()), value_);
}

// ---- saddle / sphere --------------------------------------------------------

SaddleGenerator::SaddleGenerator() : desc_{"saddle", 2, flat_shape(2), true} {}

Vector SaddleGenerator::evaluate_flat(const LatentPoint& z) const {
  Vector out(2);
  out << z[0] * z[0], z[1];
  return out;
}

Matrix SaddleGenerator::jacobian(const LatentPoint& z) const {
  Matrix j = Matrix::Zero(2, 2);
  j(0, 0) = 2.0 * z[0];
  j(1, 1) = 1.0;
  return j;
}

SphereGenerator::SphereGenerator() : desc_{"sphere", 2, flat_shape(3), true} {}

Vector SphereGenerator::evaluate_flat(const LatentPoint& z) const {
  Vector out(3);
  out << std::cos(z[0]) * std::cos(z[1]), std::sin(z[0]) * std::cos(z[1]), std::sin(z[1]);
  return out;
}

Matrix SphereGenerator::jacobian(const LatentPoint& z) const {
  const double ca = std::cos(z[0]), sa = std::sin(z[0]);
  const double cb = std::cos(z[1]), sb = std::sin(z[1]);
  Matrix j(3, 2);
  j << -sa * cb, -ca * sb,  //
      ca * cb, -sa * sb,    //
      0.0, cb;
  return j;
}

// ---- random features --------------------------------------------------------

RandomFeatureGenerator::RandomFeatureGenerator(std::size_t latent_dim, std::size_t hidden,
                                               ImageShape shape, double scale,
                                               std::uint64_t seed) {
  if (latent_dim < 1 || hidden < 1 || !shape.valid())
    throw DimensionError("random_feature generator: bad dimensions");
  Rng rng(derive_seed(seed, streams::weights));
  const auto e = static_cast<Eigen::Index>(latent_dim);
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto d = static_cast<Eigen::Index>(shape.size());
  a_ = rng.normal_matrix(h, e) * (scale / std::sqrt(static_cast<double>(latent_dim)));
  b_ = rng.normal_matrix(d, h) * (1.0 / std::sqrt(static_cast<double>(hidden)));
  desc_ = {"random_feature", latent_dim, shape, true};
}

Vector RandomFeatureGenerator::evaluate_flat(const LatentPoint& z) const {
  return b_ * (a_ * z).array().tanh().matrix();
}

Matrix RandomFeatureGenerator::jacobian(const LatentPoint& z) const {
  const Vector t = (a_ * z).array().tanh().matrix();
  const Vector slope = (1.0 - t.array().square()).matrix();
  return b_ * slope.asDiagonal() * a_;
}

double RandomFeatureGenerator::curvature_bound(const LatentPoint&, double) const {
  const double row_mass = b_.cwiseAbs().rowwise().sum().maxCoeff();
  const double input_gain = a_.rowwise().squaredNorm().maxCoeff();
  return kMaxTanhSecondDerivative * row_mass * input_gain;
}

// ---- synthetic coupled / decoupled family -----------------------------------

FamilyGenerator::FamilyGenerator(bool coupled, const FamilyParams& params)
    : coupled_(coupled), params_(params) {
  const std::size_t e = params.latent_dim;
  const ImageShape shape{3, params.height, params.width};
  if (e < 3) throw ConfigError("family generators need latent_dim >= 3");
  if (!shape.valid()) throw ConfigError("family generators need height, width >= 1");
  const auto d = static_cast<Eigen::Index>(shape.size());
  const std::size_t fixed = 4;
  if (static_cast<std::size_t>(d) < fixed + e - 1)
    throw ConfigError("family generators need 3*height*width >= latent_dim + 3");

  ImageTensor flat0(shape), checker1(shape), flat1(shape), checker2(shape);
  const double amp = 1.0 / std::sqrt(static_cast<double>(shape.pixels()));
  for (std::size_t i = 0; i < shape.height; ++i) {
    for (std::size_t j = 0; j < shape.width; ++j) {
      const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
      flat0(0, i, j) = amp;
      flat1(1, i, j) = amp;
      checker1(1, i, j) = sign * amp;
      checker2(2, i, j) = sign * amp;
    }
  }
  base_ = flat0.data();
  texture_ = checker2.data() / checker2.data().norm();
  curve_ = coupled ? Vector(checker1.data() / checker1.data().norm()) : flat1.data();

  // Q_k: seeded Gaussian directions orthogonalized against the fixed
  // patterns and each other.
  Rng rng(derive_seed(params.pattern_seed, streams::weights));
  const auto extra = static_cast<Eigen::Index>(e - 1);
  Matrix stacked(d, static_cast<Eigen::Index>(fixed) + extra);
  stacked.col(0) = base_;
  stacked.col(1) = texture_;
  stacked.col(2) = checker1.data();
  stacked.col(3) = flat1.data();
  stacked.rightCols(extra) = rng.normal_matrix(d, extra);
  Eigen::HouseholderQR<Matrix> qr(stacked);
  const Matrix q = qr.householderQ() * Matrix::Identity(d, stacked.cols());
  linear_ = q.rightCols(extra);

  desc_ = {coupled ? "coupled_family" : "decoupled_family", e, shape, true};
}

double FamilyGenerator::texture_amplitude(double t) const {
  return params_.texture * (1.5 + std::sin(params_.texture_frequency * t));
}

double FamilyGenerator::texture_slope(double t) const {
  return params_.texture * params_.texture_frequency * std::cos(params_.texture_frequency * t);
}

double FamilyGenerator::curvature_knob(const LatentPoint& z) const {
  return 1.0 / std::hypot(z[0], z[1]);
}

Vector FamilyGenerator::evaluate_flat(const LatentPoint& z) const {
  const double r = std::hypot(z[0], z[1]);
  const double xi = texture_amplitude(z[2]);
  const auto extra = linear_.cols();
  Vector out = r * (base_ + xi * texture_) + params_.gamma * std::log(r) * curve_;
  out.noalias() += params_.secondary * (linear_ * z.tail(extra));
  return out;
}

Matrix FamilyGenerator::jacobian(const LatentPoint& z) const {
  const double r = std::hypot(z[0], z[1]);
  const double xi = texture_amplitude(z[2]);
  const Vector radial = (base_ + xi * texture_) / r + params_.gamma / (r * r) * curve_;
  Matrix j(linear_.rows(), static_cast<Eigen::Index>(desc_.latent_dim));
  j.col(0) = z[0] * radial;
  j.rightCols(linear_.cols()) = params_.secondary * linear_;
  j.col(1) += z[1] * radial;
  j.col(2) += r * texture_slope(z[2]) * texture_;
  return j;
}

double FamilyGenerator::curvature_bound(const LatentPoint& z, double radius) const {
  const double r = std::hypot(z[0], z[1]);
  const double r_min = std::max(r - radius, 1e-12);
  const double r_max = r + radius;
  const double xi_max = 2.5 * params_.texture;
  const double slope_max = params_.texture * params_.texture_frequency;
  const double bend_max = slope_max * params_.texture_frequency;
  const double entry = std::max({base_.cwiseAbs().maxCoeff(), texture_.cwiseAbs().maxCoeff(),
                                 curve_.cwiseAbs().maxCoeff()});
  // r'' <= 1/r, (log r)'' <= 1/r^2, (r xi)'' <= xi/r + 2 xi' + r xi''.
  return entry * ((1.0 + xi_max) / r_min + params_.gamma / (r_min * r_min) + 2.0 * slope_max +
                  r_max * bend_max);
}

// ---- curl sampler -----------------------------------------------------------

CurlSampler::CurlSampler(std::size_t latent_dim, double twist)
    : twist_(twist), desc_{"curl_sampler", latent_dim, flat_shape(latent_dim), true} {
  if (latent_dim < 2) throw ConfigError("curl_sampler needs latent_dim >= 2");
}

Vector CurlSampler::evaluate_flat(const LatentPoint& z) const {
  const double theta = twist_ * z.norm();
  const double c = std::cos(theta), s = std::sin(theta);
  Vector out = z;
  for (Eigen::Index i = 0; i + 1 < z.size(); i += 2) {
    out[i] = c * z[i] - s * z[i + 1];
    out[i + 1] = s * z[i] + c * z[i + 1];
  }
  return out;
}

Matrix CurlSampler::jacobian(const LatentPoint& z) const {
  const double norm = z.norm();
  const double theta = twist_ * norm;
  const double c = std::cos(theta), s = std::sin(theta);
  const auto n = z.size();
  Matrix rot = Matrix::Identity(n, n);
  Vector spin = Vector::Zero(n);  // dR/dtheta * z
  for (Eigen::Index i = 0; i + 1 < n; i += 2) {
    rot(i, i) = c;
    rot(i, i + 1) = -s;
    rot(i + 1, i) = s;
    rot(i + 1, i + 1) = c;
    spin[i] = -s * z[i] - c * z[i + 1];
    spin[i + 1] = c * z[i] - s * z[i + 1];
  }
  if (norm > 0.0) rot.noalias() += spin * (twist_ / norm) * z.transpose();
  return rot;
}

double CurlSampler::curvature_bound(const LatentPoint& z, double radius) const {
  return twist_ * twist_ * (z.norm() + radius) + 3.0 * twist_;
}

// ---- factory ----------------------------------------------------------------

std::vector<std::string> builtin_kinds() {
  return {"linear",         "identity",         "constant",      "saddle",
          "sphere",         "random_feature",   "coupled_family", "decoupled_family",
          "curl_sampler",   "contraction_sampler"};
}

AnalyticGeneratorPtr make_builtin(const std::string& kind, const nlohmann::json& params,
                                  std::uint64_t seed) {
  const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
  require(p.is_object(), "generator params must be a JSON object");

  if (kind == "linear") {
    if (p.contains("matrix")) {
      const auto rows = p.at("matrix").get<std::vector<std::vector<double>>>();
      require(!rows.empty() && !rows.front().empty(), "'matrix' must be non-empty");
      Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == rows[0].size(), "'matrix' rows must have equal length");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      const auto shape = shape_param(p, "shape", flat_shape(rows.size()));
      return std::make_shared<LinearGenerator>(std::move(m), shape);
    }
    if (p.contains("diag")) {
      const auto diag = p.at("diag").get<std::vector<double>>();
      require(!diag.empty(), "'diag' must be non-empty");
      Vector d = Eigen::Map<const Vector>(diag.data(), static_cast<Eigen::Index>(diag.size()));
      return std::make_shared<LinearGenerator>(Matrix(d.asDiagonal()), flat_shape(diag.size()));
    }
    const auto e = p.value("latent_dim", std::size_t{4});
    const auto shape = shape_param(p, "shape", flat_shape(e));
    require(e >= 1, "latent_dim must be >= 1");
    Rng rng(derive_seed(seed, streams::weights));
    return std::make_shared<LinearGenerator>(
        rng.normal_matrix(static_cast<Eigen::Index>(shape.size()), static_cast<Eigen::Index>(e)),
        shape);
  }
  if (kind == "identity") {
    const auto e = p.value("latent_dim", std::size_t{16});
    require(e >= 1, "latent_dim must be >= 1");
    const auto n = static_cast<Eigen::Index>(e);
    return std::make_shared<LinearGenerator>(Matrix::Identity(n, n), flat_shape(e), "identity");
  }
  if (kind == "contraction_sampler") {
    const auto e = p.value("latent_dim", std::size_t{16});
    const double factor = p.value("factor", 0.5);
    require(e >= 1, "latent_dim must be >= 1");
    const auto n = static_cast<Eigen::Index>(e);
    return std::make_shared<LinearGenerator>(factor * Matrix::Identity(n, n), flat_shape(e),
                                             "contraction_sampler");
  }
  if (kind == "constant") {
    const auto e = p.value("latent_dim", std::size_t{2});
    return std::make_shared<ConstantGenerator>(e, shape_param(p, "shape", ImageShape{1, 4, 4}),
                                               p.value("value", 0.0));
  }
  if (kind == "saddle") return std::make_shared<SaddleGenerator>();
  if (kind == "sphere") return std::make_shared<SphereGenerator>();
  if (kind == "random_feature") {
    return std::make_shared<RandomFeatureGenerator>(
        p.value("latent_dim", std::size_t{8}), p.value("hidden", std::size_t{32}),
        shape_param(p, "shape", ImageShape{1, 8, 8}), p.value("scale", 1.0), seed);
  }
  if (kind == "coupled_family" || kind == "decoupled_family") {
    FamilyParams fp;
    fp.latent_dim = p.value("latent_dim", fp.latent_dim);
    fp.height = p.value("height", fp.height);
    fp.width = p.value("width", fp.width);
    fp.gamma = p.value("gamma", fp.gamma);
    fp.texture = p.value("texture", fp.texture);
    fp.texture_frequency = p.value("texture_frequency", fp.texture_frequency);
    fp.secondary = p.value("secondary", fp.secondary);
    fp.pattern_seed = p.value("pattern_seed", fp.pattern_seed);
    return std::make_shared<FamilyGenerator>(kind == "coupled_family", fp);
  }
  if (kind == "curl_sampler") {
    return std::make_shared<CurlSampler>(p.value("latent_dim", std::size_t{16}),
                                         p.value("twist", 2.0));
  }
  throw ConfigError("unknown builtin generator kind '" + kind + "'");
}

}  // namespace mprobe
