#include <gtest/gtest.h>

#include <cmath>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/stats.hpp"
#include "mprobe/trajectory.hpp"
#include "oracles.hpp"

using namespace mprobe;

namespace {

// Values on a coarse grid so ties are common.
std::vector<double> tied_values(Rng& r, std::size_t n, std::size_t levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(r.index(levels)) * 0.5 - 3.0;
  return v;
}

}  // namespace

TEST(Ranks, AverageTies) {
  const auto r = average_ranks({10, 20, 10, 30, 20, 20});
  EXPECT_EQ(r, (std::vector<double>{1.5, 4, 1.5, 6, 4, 4}));
}

TEST(Spearman, MatchesBruteForce) {
  Rng r(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + r.index(100);
    const auto x = tied_values(r, n, 2 + r.index(20));
    const auto y = tied_values(r, n, 2 + r.index(20));
    double got;
    try {
      got = spearman(x, y);
    } catch (const UndefinedError&) {
      continue;
    }
    EXPECT_EQ(got, oracle::spearman(x, y));
  }
}

TEST(Spearman, PerfectAndUndefined) {
  EXPECT_EQ(spearman({1, 2, 3}, {10, 20, 30}), 1.0);
  EXPECT_EQ(spearman({1, 2, 3}, {3, 2, 1}), -1.0);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), UndefinedError);
  EXPECT_THROW(spearman({1, NAN}, {1, 2}), ContractError);
  EXPECT_THROW(spearman({1, 2}, {1}), DimensionError);
}

TEST(Auroc, MatchesBruteForce) {
  Rng r(2);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + r.index(150);
    const auto s = tied_values(r, n, 2 + r.index(30));
    std::vector<bool> pos(n);
    for (auto&& p : pos) p = r.uniform() < 0.4;
    pos[0] = true;
    pos[1] = false;
    EXPECT_EQ(auroc(s, pos), oracle::auroc(s, pos));
  }
}

TEST(Auroc, KnownCases) {
  EXPECT_EQ(auroc({0.9, 0.8, 0.1, 0.2}, {true, true, false, false}), 1.0);
  EXPECT_EQ(auroc({0.5, 0.5}, {true, false}), 0.5);
  EXPECT_THROW(auroc({1, 2}, {true, true}), ContractError);
}

TEST(Auroc, ShuffledLabelsNearChance) {
  Rng r(3);
  const std::size_t n = 4000;
  std::vector<double> s(n);
  std::vector<bool> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = r.normal();
    pos[i] = r.uniform() < 0.5;
  }
  EXPECT_NEAR(auroc(s, pos), 0.5, 0.1);
}

TEST(Subsampled, FullPoolSingleRunIsSpearman) {
  Rng r(4);
  std::vector<double> x(50), y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = r.normal();
    y[i] = x[i] + r.normal();
  }
  const auto s = subsampled_correlation(x, y, 50, 1, 9);
  EXPECT_EQ(s.rho_mean, spearman(x, y));
  EXPECT_EQ(s.rho_std, 0.0);
  EXPECT_FALSE(s.ci_low.has_value());
}

TEST(Subsampled, RunsAndCi) {
  Rng r(5);
  std::vector<double> x(900), y(900);
  for (std::size_t i = 0; i < 900; ++i) {
    x[i] = r.normal();
    y[i] = 0.5 * x[i] + r.normal();
  }
  const auto s = subsampled_correlation(x, y, 100, 10, 1);
  EXPECT_EQ(s.runs, 10u);
  EXPECT_GT(s.rho_std, 0.0);
  ASSERT_TRUE(s.ci_low && s.ci_high);
  EXPECT_LE(*s.ci_low, s.rho_mean);
  EXPECT_GE(*s.ci_high, s.rho_mean);
  const auto again = subsampled_correlation(x, y, 100, 10, 1);
  EXPECT_EQ(again.rho_mean, s.rho_mean);
  EXPECT_THROW(subsampled_correlation(x, y, 901, 1, 0), ContractError);
  EXPECT_THROW(subsampled_correlation(x, y, 1, 1, 0), ContractError);
}

TEST(Subsampled, AllRunsConstantIsUndefined) {
  const std::vector<double> x(10, 1.0), y(10, 2.0);
  EXPECT_THROW(subsampled_correlation(x, y, 5, 3, 0), UndefinedError);
}

TEST(Bootstrap, ConstantInputsCollapse) {
  const auto [lo, hi] = bootstrap_ci(std::vector<double>(20, 0.3), 500, 0.95, 0);
  EXPECT_EQ(lo, 0.3);
  EXPECT_EQ(hi, 0.3);
}

TEST(Ratios, KnownValues) {
  EXPECT_NEAR(correlation_drop(0.413, 0.083), -0.799, 5e-4);
  EXPECT_NEAR(transfer_efficiency(0.0120, 158.506), 7.571e-5, 5e-8);
  EXPECT_THROW(correlation_drop(0.0, 0.1), UndefinedError);
  EXPECT_EQ(ood_score(1.0, 0.0, 0.5), 2.0);
  EXPECT_THROW(ood_score(-1.0, 1.0), ContractError);
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

TEST(Quantile, MatchesSelectionOracle) {
  Rng r(6);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + r.index(60);
    const auto v = tied_values(r, n, 2 + r.index(50));
    for (double q : {0.0, 0.1, 0.5, 0.9, 0.95, 1.0, r.uniform()})
      EXPECT_EQ(quantile(v, q), oracle::quantile7(v, q));
  }
}

TEST(MonteCarlo, ConstantPairsAreExact) {
  const std::vector<double> a(100, 0.7), b(100, 1.1);
  const auto s = monte_carlo_ratio(a, b, 800, 0.8, 3);
  EXPECT_EQ(s.ratio_mean, 1.1 / 0.7);
  EXPECT_EQ(s.ratio_std, 0.0);
  EXPECT_EQ(s.diff_mean, 1.1 - 0.7);
  EXPECT_EQ(s.diff_std, 0.0);
}

TEST(MonteCarlo, MatchesLoopOracle) {
  Rng r(7);
  std::vector<double> a(100), b(100);
  for (std::size_t i = 0; i < 100; ++i) {
    a[i] = 1.0 + std::abs(r.normal());
    b[i] = a[i] * (1.0 + 0.2 * r.normal());
  }
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto s = monte_carlo_ratio(a, b, 800, 0.8, seed);
    const auto o = oracle::monte_carlo(a, b, 800, 0.8, seed);
    EXPECT_EQ(s.ratio_mean, o.ratio_mean);
    EXPECT_EQ(s.ratio_std, o.ratio_std);
    EXPECT_EQ(s.diff_mean, o.diff_mean);
    EXPECT_EQ(s.diff_std, o.diff_std);
  }
}

TEST(MonteCarlo, ZeroBaselineResamplesAreSkipped) {
  const std::vector<double> a(5, 0.0), b(5, 1.0);
  const auto s = monte_carlo_ratio(a, b, 10, 0.8, 0);
  EXPECT_EQ(s.skipped, 10u);
  EXPECT_TRUE(std::isnan(s.ratio_mean));
  EXPECT_EQ(s.diff_mean, 1.0);
}
