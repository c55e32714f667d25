#pragma once

// 3GPP TR 38.901 Urban Macro path loss, LOS probability and the coverage
// analysis built on top of them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include "xhap/common.hpp"

namespace xhap::link {

constexpr double kSpeedOfLight = 3.0e8;
constexpr double kMinDistance = 10.0;
constexpr double kMaxDistance = 5000.0;

struct LinkBudgetParams {
  double ptx_dbm = 43.0;
  double gtx_db = 8.0;
  double grx_db = 0.0;
  double noise_floor_dbm = -90.0;
  double fc_ghz = 1.8;
  double h_bs_m = 25.0;
  double h_ut_m = 1.5;
  double sigma_los_db = 4.0;
  double sigma_nlos_db = 6.0;

  void validate() const {
    require(h_bs_m > 0.0 && h_ut_m > 0.0, "link: antenna heights must be > 0");
    require(sigma_los_db > 0.0 && sigma_nlos_db > 0.0, "link: shadowing sigmas must be > 0");
    require(fc_ghz >= 0.5 && fc_ghz <= 100.0, "link: fc_ghz must lie in [0.5, 100]");
  }
};

/// Thermal noise floor -174 dBm/Hz + 10 log10(B) + NF, for comparison with
/// the configured noise_floor_dbm.
inline double thermal_noise_floor_dbm(double bandwidth_hz, double noise_figure_db) {
  return -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
}

/// Breakpoint distance with the effective environment height fixed at 1 m.
inline double breakpoint_distance(const LinkBudgetParams& p) {
  constexpr double h_e = 1.0;
  return 4.0 * (p.h_bs_m - h_e) * (p.h_ut_m - h_e) * p.fc_ghz * 1e9 / kSpeedOfLight;
}

namespace detail {

inline double clamp_distance(double d) {
  if (d > kMaxDistance) {
    std::fprintf(stderr, "warning: UMa distance %.1f m above validity range, clamped to 5000 m\n", d);
    return kMaxDistance;
  }
  return d;
}

inline double los_loss(double d2d, const LinkBudgetParams& p) {
  const double dh = p.h_bs_m - p.h_ut_m;
  const double d3d = std::sqrt(d2d * d2d + dh * dh);
  const double dbp = breakpoint_distance(p);
  if (d2d <= dbp) return 28.0 + 22.0 * std::log10(d3d) + 20.0 * std::log10(p.fc_ghz);
  return 28.0 + 40.0 * std::log10(d3d) + 20.0 * std::log10(p.fc_ghz) -
         9.0 * std::log10(dbp * dbp + dh * dh);
}

}  // namespace detail

inline double path_loss_uma(double distance_m, bool los, const LinkBudgetParams& p) {
  require(distance_m >= kMinDistance, "path_loss_uma: distance below the 10 m validity bound");
  const double d = detail::clamp_distance(distance_m);
  const double pl_los = detail::los_loss(d, p);
  if (los) return pl_los;
  const double dh = p.h_bs_m - p.h_ut_m;
  const double d3d = std::sqrt(d * d + dh * dh);
  const double pl_nlos = 13.54 + 39.08 * std::log10(d3d) + 20.0 * std::log10(p.fc_ghz) -
                         0.6 * (p.h_ut_m - 1.5);
  return std::max(pl_los, pl_nlos);
}

/// LOS probability for h_UT <= 13 m.
inline double los_probability(double distance_m, const LinkBudgetParams& /*p*/) {
  require(distance_m > 0.0, "los_probability: distance must be > 0");
  if (distance_m <= 18.0) return 1.0;
  return 18.0 / distance_m + std::exp(-distance_m / 63.0) * (1.0 - 18.0 / distance_m);
}

inline double max_path_loss(double snr_req_db, const LinkBudgetParams& p) {
  return p.ptx_dbm + p.gtx_db + p.grx_db - (p.noise_floor_dbm + snr_req_db);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double coverage_probability(double distance_m, double pl_max_db,
                                   const LinkBudgetParams& p) {
  const double plos = los_probability(distance_m, p);
  const double pl_los = path_loss_uma(distance_m, true, p);
  const double pl_nlos = path_loss_uma(distance_m, false, p);
  return plos * normal_cdf((pl_max_db - pl_los) / p.sigma_los_db) +
         (1.0 - plos) * normal_cdf((pl_max_db - pl_nlos) / p.sigma_nlos_db);
}

enum class CoverageOutcome { Found, NoCoverage, FullRange };

struct CoverageDistance {
  CoverageOutcome outcome;
  double distance_m;  ///< 0 for NoCoverage, 5000 for FullRange
};

/// Largest distance in [10, 5000] m with p_cov >= p_star, by bisection to
/// 0.1 m (at most 60 iterations).
inline CoverageDistance max_coverage_distance(double p_star, double pl_max_db,
                                              const LinkBudgetParams& p) {
  require(p_star > 0.0 && p_star < 1.0, "max_coverage_distance: p_star must lie in (0,1)");
  auto covered = [&](double d) { return coverage_probability(d, pl_max_db, p) >= p_star; };
  if (!covered(kMinDistance)) return {CoverageOutcome::NoCoverage, 0.0};
  if (covered(kMaxDistance)) return {CoverageOutcome::FullRange, kMaxDistance};
  double lo = kMinDistance;  // covered
  double hi = kMaxDistance;  // not covered
  for (int it = 0; it < 60 && hi - lo > 0.1; ++it) {
    const double mid = 0.5 * (lo + hi);
    (covered(mid) ? lo : hi) = mid;
  }
  return {CoverageOutcome::Found, lo};
}

}  // namespace xhap::link
