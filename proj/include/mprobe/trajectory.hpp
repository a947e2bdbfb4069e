#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mprobe/generator.hpp"

namespace mprobe {

LatentPoint slerp(const LatentPoint& a, const LatentPoint& b, double alpha);

struct InterpolationPath {
  LatentPoint start;
  LatentPoint end;
  std::vector<double> alphas;
  std::vector<LatentPoint> points;
};

InterpolationPath build_path(const LatentPoint& a, const LatentPoint& b, std::size_t steps);

struct Extremes {
  double q90 = 0.0;
  double q95 = 0.0;
  double max = 0.0;
};

// Type-7 quantile: linear interpolation at position q * (n - 1) of the
// sorted sample.
double quantile(std::vector<double> values, double q);

Extremes extremal_increments(const std::vector<double>& increments);

struct TrajectoryRecord {
  std::string condition;
  std::uint64_t pair = 0;
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
  std::vector<Vector> latents;
  std::vector<double> increments;
  double length = 0.0;
  double endpoint_distance = 0.0;
  double tortuosity = 0.0;
  double excess = 0.0;
  Extremes tail;
};

// Path metrics of an already-induced latent sequence (at least 2 points).
TrajectoryRecord trajectory_metrics(std::vector<Vector> latents, double tortuosity_epsilon = 1e-8);

// Evaluates the condition at each path point in order. A failure at step k
// rethrows as EvaluationError with index k.
TrajectoryRecord induce_trajectory(const Generator& condition, const InterpolationPath& path,
                                   double tortuosity_epsilon = 1e-8);

double paired_frac(const std::vector<double>& a, const std::vector<double>& b);

struct MonteCarloSummary {
  double ratio_mean = 0.0;
  double ratio_std = 0.0;  // population std across resamples
  double diff_mean = 0.0;
  double diff_std = 0.0;
  std::size_t resamples = 0;
  std::size_t skipped = 0;  // resamples whose mean_a was zero
};

// Resample r draws ceil(fraction * n) indices with replacement from
// Rng(derive_seed(seed, r)). Resample means are accumulated relative to the
// first drawn pair, so constant inputs come back exact.
MonteCarloSummary monte_carlo_ratio(const std::vector<double>& a, const std::vector<double>& b,
                                    std::size_t n_mc, double fraction, std::uint64_t seed);

}  // namespace mprobe
