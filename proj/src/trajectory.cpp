#include "mprobe/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe {
namespace {

// Mean and population std, shifted by the first value so identical inputs
// give exactly (x, 0).
std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const double shift = x.front();
  double s = 0.0, s2 = 0.0;
  for (const double v : x) {
    const double d = v - shift;
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(x.size());
  const double m = s / n;
  return {shift + m, std::sqrt(std::max(0.0, s2 / n - m * m))};
}

}  // namespace

LatentPoint slerp(const LatentPoint& a, const LatentPoint& b, double alpha) {
  if (a.size() != b.size()) throw DimensionError("slerp endpoints differ in length");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("slerp alpha must lie in [0, 1]");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ContractError("slerp endpoints must be non-zero");
  const double cosine = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double omega = std::acos(cosine);
  if (omega < 1e-6 || omega > std::numbers::pi - 1e-6) return (1.0 - alpha) * a + alpha * b;
  const double so = std::sin(omega);
  return (std::sin((1.0 - alpha) * omega) / so) * a + (std::sin(alpha * omega) / so) * b;
}

InterpolationPath build_path(const LatentPoint& a, const LatentPoint& b, std::size_t steps) {
  if (steps < 1) throw ContractError("path needs at least one step");
  InterpolationPath path{a, b, {}, {}};
  path.alphas.reserve(steps + 1);
  path.points.reserve(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double alpha = k == steps ? 1.0 : static_cast<double>(k) / static_cast<double>(steps);
    path.alphas.push_back(alpha);
    path.points.push_back(slerp(a, b, alpha));
  }
  return path;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Extremes extremal_increments(const std::vector<double>& increments) {
  if (increments.empty()) throw ContractError("extremal increments of an empty sequence");
  return Extremes{quantile(increments, 0.90), quantile(increments, 0.95),
                  *std::max_element(increments.begin(), increments.end())};
}

TrajectoryRecord trajectory_metrics(std::vector<Vector> latents, double tortuosity_epsilon) {
  if (latents.size() < 2) throw ContractError("trajectory needs at least two points");
  TrajectoryRecord rec;
  rec.increments.reserve(latents.size() - 1);
  for (std::size_t k = 0; k + 1 < latents.size(); ++k) {
    if (latents[k + 1].size() != latents[k].size())
      throw DimensionError("trajectory points differ in length");
    rec.increments.push_back((latents[k + 1] - latents[k]).norm());
  }
  for (const double d : rec.increments) rec.length += d;
  rec.endpoint_distance = (latents.back() - latents.front()).norm();
  rec.tortuosity = rec.length / (rec.endpoint_distance + tortuosity_epsilon);
  rec.excess = rec.length - rec.endpoint_distance;
  rec.tail = extremal_increments(rec.increments);
  rec.latents = std::move(latents);
  return rec;
}

TrajectoryRecord induce_trajectory(const Generator& condition, const InterpolationPath& path,
                                   double tortuosity_epsilon) {
  std::vector<Vector> latents;
  latents.reserve(path.points.size());
  for (std::size_t k = 0; k < path.points.size(); ++k) {
    try {
      latents.push_back(condition.evaluate(path.points[k]).data());
    } catch (const EvaluationError& e) {
      throw EvaluationError(std::string(e.what()) + " (path step " + std::to_string(k) + ")", k);
    }
  }
  return trajectory_metrics(std::move(latents), tortuosity_epsilon);
}

double paired_frac(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DimensionError("paired values have lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  if (a.empty()) throw ContractError("paired_frac needs at least one pair");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (b[i] > a[i]) ++wins;
  return static_cast<double>(wins) / static_cast<double>(a.size());
}

MonteCarloSummary monte_carlo_ratio(const std::vector<double>& a, const std::vector<double>& b,
                                    std::size_t n_mc, double fraction, std::uint64_t seed) {
  if (a.size() != b.size())
    throw DimensionError("paired values have lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  if (a.empty()) throw ContractError("monte_carlo_ratio needs at least one pair");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("fraction must lie in (0, 1]");
  if (n_mc < 1) throw ContractError("n_mc must be >= 1");

  const std::size_t n = a.size();
  const auto draws = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<double> ratios, diffs;
  ratios.reserve(n_mc);
  diffs.reserve(n_mc);
  MonteCarloSummary out;
  out.resamples = n_mc;
  for (std::size_t r = 0; r < n_mc; ++r) {
    Rng rng(derive_seed(seed, r));
    std::size_t first = 0;
    double sa = 0.0, sb = 0.0;
    for (std::size_t t = 0; t < draws; ++t) {
      const std::size_t i = rng.index(n);
      if (t == 0) first = i;
      sa += a[i] - a[first];
      sb += b[i] - b[first];
    }
    const double mean_a = a[first] + sa / static_cast<double>(draws);
    const double mean_b = b[first] + sb / static_cast<double>(draws);
    diffs.push_back(mean_b - mean_a);
    if (mean_a == 0.0) {
      ++out.skipped;
      continue;
    }
    ratios.push_back(mean_b / mean_a);
  }
  std::tie(out.ratio_mean, out.ratio_std) = mean_std(ratios);
  std::tie(out.diff_mean, out.diff_std) = mean_std(diffs);
  return out;
}

}  // namespace mprobe
