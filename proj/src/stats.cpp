#include "mprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/trajectory.hpp"

namespace mprobe {
namespace {

void check_paired(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw DimensionError("paired samples have lengths " + std::to_string(x.size()) + " and " +
                         std::to_string(y.size()));
}

double shifted_mean(const std::vector<double>& x) {
  double s = 0.0;
  for (const double v : x) s += v - x.front();
  return x.front() + s / static_cast<double>(x.size());
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;
    while (end + 1 < n && x[order[end + 1]] == x[order[start]]) ++end;
    const double rank = 1.0 + static_cast<double>(start + end) / 2.0;
    for (std::size_t k = start; k <= end; ++k) ranks[order[k]] = rank;
    start = end + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_paired(x, y);
  const std::size_t n = x.size();
  if (n < 2) throw ContractError("correlation needs at least two pairs");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedError("correlation with zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_paired(x, y);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw ContractError("spearman input has non-finite entries");
  return pearson(average_ranks(x), average_ranks(y));
}

CorrelationSummary subsampled_correlation(const std::vector<double>& x,
                                          const std::vector<double>& y, std::size_t subsample_n,
                                          std::size_t runs, std::uint64_t seed) {
  check_paired(x, y);
  const std::size_t pool = x.size();
  if (subsample_n < 2 || subsample_n > pool)
    throw ContractError("subsample size " + std::to_string(subsample_n) +
                        " must lie in [2, pool size " + std::to_string(pool) + "]");
  if (runs < 1) throw ContractError("runs must be >= 1");

  CorrelationSummary out;
  out.subsample_size = subsample_n;
  std::vector<double> rhos;
  std::vector<std::size_t> idx(pool);
  std::vector<double> sx(subsample_n), sy(subsample_n);
  for (std::size_t r = 0; r < runs; ++r) {
    Rng rng(derive_seed(seed, r));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t t = 0; t < subsample_n; ++t)
      std::swap(idx[t], idx[t + rng.index(pool - t)]);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(subsample_n));
    for (std::size_t t = 0; t < subsample_n; ++t) {
      sx[t] = x[idx[t]];
      sy[t] = y[idx[t]];
    }
    try {
      rhos.push_back(spearman(sx, sy));
    } catch (const UndefinedError&) {
      ++out.skipped;
    }
  }
  if (rhos.empty()) throw UndefinedError("every subsampling run had zero rank variance");
  out.runs = rhos.size();
  double s = 0.0, s2 = 0.0;
  for (const double v : rhos) {
    s += v - rhos.front();
    s2 += (v - rhos.front()) * (v - rhos.front());
  }
  const double n = static_cast<double>(rhos.size());
  out.rho_mean = rhos.front() + s / n;
  out.rho_std = std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
  if (rhos.size() >= 2) {
    const auto [lo, hi] = bootstrap_ci(rhos, 1000, 0.95, derive_seed(seed, runs));
    out.ci_low = lo;
    out.ci_high = hi;
  }
  return out;
}

std::pair<double, double> bootstrap_ci(const std::vector<double>& values, std::size_t n_boot,
                                       double level, std::uint64_t seed) {
  if (values.size() < 2) throw ContractError("bootstrap needs at least two values");
  if (!(level > 0.0 && level < 1.0)) throw ContractError("CI level must lie in (0, 1)");
  if (n_boot < 1) throw ContractError("n_boot must be >= 1");
  const std::size_t n = values.size();
  std::vector<double> means(n_boot), draw(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng rng(derive_seed(seed, b));
    for (std::size_t t = 0; t < n; ++t) draw[t] = values[rng.index(n)];
    means[b] = shifted_mean(draw);
  }
  const double tail = (1.0 - level) / 2.0;
  return {quantile(means, tail), quantile(means, 1.0 - tail)};
}

double auroc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size())
    throw DimensionError("scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ContractError("AUROC needs both classes");
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (positive[i]) rank_sum += ranks[i];
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double transfer_efficiency(double hfe_image, double phfe_latent, double floor) {
  if (hfe_image < 0.0 || phfe_latent < 0.0)
    throw ContractError("transfer efficiency needs non-negative energies");
  return hfe_image / std::max(phfe_latent, floor);
}

double correlation_drop(double rho_normal, double rho_ood) {
  if (rho_normal == 0.0) throw UndefinedError("correlation drop with zero baseline correlation");
  return (rho_ood - rho_normal) / rho_normal;
}

double ood_score(double lc, double phfe, double floor) {
  if (lc < 0.0 || phfe < 0.0) throw ContractError("OOD score needs non-negative LC and PHFE");
  return lc / std::max(phfe, floor);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

}  // namespace mprobe
