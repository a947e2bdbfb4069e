#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace mprobe {

// 1-based ranks, ties share the average of the positions they span.
std::vector<double> average_ranks(const std::vector<double>& x);

// Throws UndefinedError when either input has zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationSummary {
  double rho_mean = 0.0;
  double rho_std = 0.0;  // population std across runs
  std::size_t runs = 0;  // runs that produced a value
  std::size_t skipped = 0;
  std::size_t subsample_size = 0;
  // Percentile bootstrap interval of the mean across run values.
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

// Each run draws subsample_n indices without replacement from
// Rng(derive_seed(seed, run)); the draw is evaluated in ascending index order.
CorrelationSummary subsampled_correlation(const std::vector<double>& x,
                                          const std::vector<double>& y, std::size_t subsample_n,
                                          std::size_t runs, std::uint64_t seed);

// Percentile bootstrap CI of the mean.
std::pair<double, double> bootstrap_ci(const std::vector<double>& values, std::size_t n_boot,
                                       double level, std::uint64_t seed);

// Mann-Whitney AUROC with tie credit 1/2; `positive[i]` marks the positive
// class.
double auroc(const std::vector<double>& scores, const std::vector<bool>& positive);

double transfer_efficiency(double hfe_image, double phfe_latent, double floor = 1e-12);

double correlation_drop(double rho_normal, double rho_ood);

double ood_score(double lc, double phfe, double floor = 1e-12);

double median(std::vector<double> values);

}  // namespace mprobe
