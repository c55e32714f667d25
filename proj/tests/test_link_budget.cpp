#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xhap/link_budget.hpp"

using namespace xhap;
using namespace xhap::link;

TEST(PathLoss, LosAt100m) {
  const LinkBudgetParams p;
  EXPECT_NEAR(path_loss_uma(100.0, true, p), 77.362245891913, 1e-9);
}

TEST(PathLoss, Breakpoint) {
  EXPECT_NEAR(breakpoint_distance(LinkBudgetParams{}), 288.0, 1e-9);
}

TEST(PathLoss, NlosNotBelowLos) {
  const LinkBudgetParams p;
  for (double d = 10.0; d <= 5000.0; d += 7.3)
    EXPECT_GE(path_loss_uma(d, false, p), path_loss_uma(d, true, p));
}

TEST(PathLoss, ContinuousAcrossBreakpoint) {
  const LinkBudgetParams p;
  const double dbp = breakpoint_distance(p);
  EXPECT_NEAR(path_loss_uma(dbp - 1e-7, true, p), path_loss_uma(dbp + 1e-7, true, p), 1e-5);
}

TEST(PathLoss, BelowMinimumDistanceRejected) {
  EXPECT_THROW(path_loss_uma(9.9, true, LinkBudgetParams{}), ContractViolation);
}

TEST(PathLoss, ClampedAboveValidity) {
  const LinkBudgetParams p;
  EXPECT_DOUBLE_EQ(path_loss_uma(8000.0, false, p), path_loss_uma(5000.0, false, p));
}

TEST(LosProbability, Examples) {
  const LinkBudgetParams p;
  EXPECT_DOUBLE_EQ(los_probability(10.0, p), 1.0);
  EXPECT_NEAR(los_probability(100.0, p), 0.34767083684423, 1e-12);
  double prev = 1.0;
  for (double d = 1.0; d < 20000.0; d *= 1.05) {
    const double v = los_probability(d, p);
    EXPECT_LE(v, prev);
    prev = v;
  }
  EXPECT_LT(los_probability(1e6, p), 1e-4);
}

TEST(MaxPathLoss, Examples) {
  const LinkBudgetParams p;
  EXPECT_EQ(max_path_loss(20.0, p), 121.0);
  EXPECT_EQ(max_path_loss(30.0, p), 111.0);
  EXPECT_DOUBLE_EQ(max_path_loss(12.5, p) - max_path_loss(17.5, p), 5.0);
}

TEST(NoiseFloor, ThermalHelper) {
  EXPECT_NEAR(thermal_noise_floor_dbm(20e6, 7.0), -93.98970004336, 1e-9);
}

TEST(CoverageProbability, Saturation) {
  const LinkBudgetParams p;
  for (double d : {10.0, 200.0, 4000.0}) {
    EXPECT_NEAR(coverage_probability(d, 500.0, p), 1.0, 1e-12);
    EXPECT_NEAR(coverage_probability(d, -500.0, p), 0.0, 1e-12);
  }
  // p_LOS = 1 below 18 m, NLOS term weighted by zero.
  EXPECT_NEAR(coverage_probability(15.0, path_loss_uma(15.0, true, p), p), 0.5, 1e-12);
}

TEST(CoverageProbability, MonotoneInPlMax) {
  const LinkBudgetParams p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(10.0, 5000.0), pl(60.0, 180.0);
  for (int i = 0; i < 500; ++i) {
    const double x = d(rng), a = pl(rng), b = pl(rng);
    const double lo = std::min(a, b), hi = std::max(a, b);
    EXPECT_LE(coverage_probability(x, lo, p), coverage_probability(x, hi, p));
  }
}

TEST(CoverageProbability, MonotoneInDistance) {
  const LinkBudgetParams p;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(10.0, 5000.0), pl(80.0, 160.0);
  for (int i = 0; i < 500; ++i) {
    const double a = d(rng), b = d(rng), x = pl(rng);
    const double near = std::min(a, b), far = std::max(a, b);
    EXPECT_GE(coverage_probability(near, x, p) + 1e-12, coverage_probability(far, x, p))
        << near << " " << far << " " << x;
  }
}

TEST(MaxCoverageDistance, Sentinels) {
  const LinkBudgetParams p;
  const auto full = max_coverage_distance(0.99, 1000.0, p);
  EXPECT_EQ(full.outcome, CoverageOutcome::FullRange);
  EXPECT_EQ(full.distance_m, 5000.0);
  const auto none = max_coverage_distance(0.99, 10.0, p);
  EXPECT_EQ(none.outcome, CoverageOutcome::NoCoverage);
  EXPECT_THROW(max_coverage_distance(1.0, 100.0, p), ContractViolation);
}

TEST(MaxCoverageDistance, AgreesWithGridScan) {
  const LinkBudgetParams p;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ps(0.5, 0.999), pl(95.0, 140.0);
  int found = 0;
  for (int i = 0; i < 20; ++i) {
    const double pstar = ps(rng), plmax = pl(rng);
    const auto r = max_coverage_distance(pstar, plmax, p);
    if (r.outcome != CoverageOutcome::Found) continue;
    ++found;
    double grid = 10.0;
    for (double d = 10.0; d <= 5000.0; d += 0.1)
      if (coverage_probability(d, plmax, p) >= pstar) grid = d;
    EXPECT_NEAR(r.distance_m, grid, 0.5) << pstar << " " << plmax;
  }
  EXPECT_GE(found, 15);
}

TEST(MaxCoverageDistance, NonincreasingInTarget) {
  const LinkBudgetParams p;
  double prev = 1e9;
  for (double pstar = 0.5; pstar < 0.999; pstar += 0.02) {
    const double d = max_coverage_distance(pstar, 121.0, p).distance_m;
    EXPECT_LE(d, prev);
    prev = d;
  }
}
