#pragma once

// Evaluation procedures: min-SNR search per restoration threshold, coverage
// curves, threshold and MCS sweeps, rolling MSE, force-dynamics features,
// burst-loss tolerance and network capacity. Every procedure is a
// sequential, seeded computation that returns a Table.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xhap/channel_model.hpp"
#include "xhap/common.hpp"
#include "xhap/estimator.hpp"
#include "xhap/haptic_traces.hpp"
#include "xhap/link_budget.hpp"
#include "xhap/restoration.hpp"

namespace xhap::experiments {

using channel::ChannelParams;
using channel::Modulation;
using restoration::RestorationConfig;
using restoration::RestorationStats;
using traces::SequenceData;

struct Mcs {
  Modulation modulation = Modulation::QPSK;
  double code_rate = 0.602;
  bool operator==(const Mcs&) const = default;
};

inline std::string to_string(const Mcs& m) {
  return channel::to_string(m.modulation) + "@" + fmt9(m.code_rate);
}

/// Parses "QPSK@0.602".
inline Mcs mcs_from_string(std::string_view s) {
  const auto at = s.find('@');
  require(at != std::string_view::npos, "MCS must look like MODULATION@RATE");
  Mcs m;
  m.modulation = channel::modulation_from_string(s.substr(0, at));
  m.code_rate = std::stod(std::string(s.substr(at + 1)));
  require(m.code_rate > 0.0 && m.code_rate <= 1.0, "MCS code rate must lie in (0,1]");
  return m;
}

struct ExperimentConfig {
  std::size_t steps = 100000;
  double target_plr = 1e-5;
  std::vector<double> thresholds{0.05, 0.1, 0.2};
  double snr_lo_db = 0.0;
  double snr_hi_db = 60.0;
  double snr_tol_db = 0.25;
  std::vector<Mcs> mcs_list{{Modulation::BPSK, 0.5},
                            {Modulation::QPSK, 0.602},
                            {Modulation::QAM16, 0.5},
                            {Modulation::QAM16, 0.75}};
  std::vector<int> burst_lengths{1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t burst_period = 1000;
  double burst_snr_db = 30.0;
  std::vector<double> bandwidths_hz{5e6, 10e6, 20e6, 40e6};
  double capacity_snr_db = 14.0;
  double user_rate_bps = 256000.0;
  std::vector<double> sweep_thresholds{0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  double sweep_snr_db = 8.0;
  double p_star = 0.99;
  double coverage_d_max_m = 2000.0;
  double coverage_d_step_m = 10.0;
  std::size_t rolling_window = 5000;
  std::size_t rolling_stride = 100;

  void validate() const {
    require(steps >= 1, "experiments: steps must be >= 1");
    require(target_plr > 0.0 && target_plr < 1.0, "experiments: target_plr must lie in (0,1)");
    require(snr_lo_db < snr_hi_db, "experiments: snr bounds must be ordered");
    require(snr_tol_db > 0.0, "experiments: snr_tol must be > 0");
    require(!thresholds.empty(), "experiments: thresholds must be non-empty");
    for (double t : thresholds) require(t > 0.0, "experiments: thresholds must be > 0");
    for (int k : burst_lengths) require(k >= 1, "experiments: burst lengths must be >= 1");
    require(burst_period >= 2, "experiments: burst_period must be >= 2");
    for (double b : bandwidths_hz) require(b > 0.0, "experiments: bandwidths must be > 0");
    require(p_star > 0.0 && p_star < 1.0, "experiments: p_star must lie in (0,1)");
    require(rolling_window >= 1 && rolling_stride >= 1, "experiments: rolling window and stride must be >= 1");
    require(coverage_d_step_m > 0.0 && coverage_d_max_m >= link::kMinDistance,
            "experiments: coverage grid must be non-empty");
  }
};

// ---------------------------------------------------------------------------
// Models under evaluation

enum class ModelKind { None, HoldLast, Xhap, Oracle };

struct ModelRef {
  ModelKind kind = ModelKind::None;
  const estimator::XhapModel* xhap = nullptr;

  std::string name() const {
    switch (kind) {
      case ModelKind::None: return "none";
      case ModelKind::HoldLast: return "hold_last";
      case ModelKind::Xhap: return "xhap";
      case ModelKind::Oracle: return "oracle";
    }
    return "?";
  }
};

/// Restoration run for any model kind. The "none" model never restores.
inline RestorationStats restore(const ModelRef& model, const SequenceData& data,
                                const std::vector<bool>& mask, const RestorationConfig& cfg,
                                std::optional<std::size_t> max_unrestored = std::nullopt) {
  switch (model.kind) {
    case ModelKind::None: {
      require(mask.size() == data.size(), "restore: loss mask length differs from trace length");
      RestorationStats s;
      s.total = mask.size();
      for (bool b : mask) s.lost += b ? 1 : 0;
      return restoration::finalize(std::move(s));
    }
    case ModelKind::HoldLast:
      return restoration::run_restoration(data, mask, restoration::HoldLast{}, cfg, max_unrestored);
    case ModelKind::Xhap:
      require(model.xhap != nullptr, "restore: xhap model missing");
      return restoration::run_restoration(data, mask, restoration::XhapPredictor{model.xhap}, cfg,
                                          max_unrestored);
    case ModelKind::Oracle:
      return restoration::run_restoration(data, mask, restoration::OraclePredictor{&data}, cfg, max_unrestored);
  }
  return {};
}

/// Repeats (or truncates) a sequence to exactly n samples.
inline SequenceData tile_to_length(const SequenceData& src, std::size_t n) {
  require(src.size() >= 1, "tile_to_length: empty source");
  SequenceData out;
  out.activity = src.activity;
  out.force.resize(static_cast<Eigen::Index>(n), 3);
  out.op.resize(static_cast<Eigen::Index>(n), 6);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(i % src.size());
    out.force.row(static_cast<Eigen::Index>(i)) = src.force.row(j);
    out.op.row(static_cast<Eigen::Index>(i)) = src.op.row(j);
  }
  return out;
}

/// Evaluation stream of n samples: equal consecutive shares of each source
/// sequence, each tiled if it is too short.
inline SequenceData evaluation_stream(const std::vector<const SequenceData*>& sources, std::size_t n) {
  require(!sources.empty(), "evaluation_stream: no sources");
  SequenceData out;
  out.activity = sources.front()->activity;
  out.force.resize(static_cast<Eigen::Index>(n), 3);
  out.op.resize(static_cast<Eigen::Index>(n), 6);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const std::size_t share = n / sources.size() + (k < n % sources.size() ? 1 : 0);
    const SequenceData part = tile_to_length(*sources[k], share);
    out.force.middleRows(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(share)) = part.force;
    out.op.middleRows(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(share)) = part.op;
    pos += share;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    require(row.size() == columns.size(), "Table: row width differs from header in " + name);
    rows.push_back(std::move(row));
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
      out << '\n';
    }
  }
};

// ---------------------------------------------------------------------------
// Minimum SNR for a target effective PLR

struct MinSnrResult {
  bool reachable = false;
  double snr_db = 0.0;  ///< smallest feasible mean SNR found (valid when reachable)
  int evaluations = 0;
};

/// Effective PLR target check at one mean SNR. Stops restoration as soon as
/// the unrestored count alone exceeds the target.
inline bool meets_target(const ModelRef& model, const SequenceData& data, ChannelParams ch,
                         double mu_db, const RestorationConfig& rcfg, const ExperimentConfig& cfg) {
  ch.mu_db = mu_db;
  const auto loss = channel::simulate_losses(ch, cfg.steps);
  const auto budget = static_cast<std::size_t>(std::floor(cfg.target_plr * static_cast<double>(cfg.steps)));
  const auto s = restore(model, data, loss.mask, rcfg, budget);
  return !s.stopped_early && s.effective_plr <= cfg.target_plr;
}

/// Bisection on the mean SNR. Assumes feasibility is monotone in mu, which
/// the common-random-numbers loss draw makes exact for the no-restoration
/// model.
inline MinSnrResult min_snr_for_target(const ModelRef& model, const SequenceData& data,
                                       const ChannelParams& ch, const RestorationConfig& rcfg,
                                       const ExperimentConfig& cfg) {
  cfg.validate();
  require(data.size() == cfg.steps, "min_snr_for_target: evaluation stream length must equal steps");
  MinSnrResult r;
  auto feasible = [&](double mu) {
    ++r.evaluations;
    return meets_target(model, data, ch, mu, rcfg, cfg);
  };
  double lo = cfg.snr_lo_db, hi = cfg.snr_hi_db;
  if (feasible(lo)) return {true, lo, r.evaluations};
  if (!feasible(hi)) return {false, hi, r.evaluations};
  while (hi - lo > cfg.snr_tol_db) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  r.reachable = true;
  r.snr_db = hi;
  return r;
}

// ---------------------------------------------------------------------------
// Coverage

struct CoverageRow {
  double distance_m;
  double p_cov;
};

struct CoverageCurve {
  double snr_req_db = 0.0;
  double pl_max_db = 0.0;
  std::vector<CoverageRow> points;
  link::CoverageDistance d_max{link::CoverageOutcome::NoCoverage, 0.0};
};

inline CoverageCurve coverage_curve(double snr_req_db, const link::LinkBudgetParams& lp,
                                    const ExperimentConfig& cfg) {
  lp.validate();
  CoverageCurve c;
  c.snr_req_db = snr_req_db;
  c.pl_max_db = link::max_path_loss(snr_req_db, lp);
  for (double d = link::kMinDistance; d <= cfg.coverage_d_max_m + 1e-9; d += cfg.coverage_d_step_m)
    c.points.push_back({d, link::coverage_probability(d, c.pl_max_db, lp)});
  c.d_max = link::max_coverage_distance(cfg.p_star, c.pl_max_db, lp);
  return c;
}

inline std::string to_string(link::CoverageOutcome o) {
  switch (o) {
    case link::CoverageOutcome::Found: return "found";
    case link::CoverageOutcome::NoCoverage: return "no_coverage";
    case link::CoverageOutcome::FullRange: return "full_range";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Rolling MSE and force dynamics

/// Trailing-window mean: out[j] = mean(e[j .. j+w-1]), length n - w + 1.
inline std::vector<double> rolling_mse(const std::vector<double>& sq_errors, std::size_t window) {
  require(window >= 1, "rolling_mse: window must be >= 1");
  require(window <= sq_errors.size(), "rolling_mse: window longer than the error sequence");
  std::vector<double> out(sq_errors.size() - window + 1);
  // Kahan-compensated running sum, so long sequences do not drift.
  double sum = 0.0, comp = 0.0;
  auto add = [&](double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  };
  for (std::size_t i = 0; i < window; ++i) add(sq_errors[i]);
  out[0] = sum / static_cast<double>(window);
  for (std::size_t j = 1; j < out.size(); ++j) {
    add(sq_errors[j + window - 1]);
    add(-sq_errors[j - 1]);
    out[j] = sum / static_cast<double>(window);
  }
  return out;
}

/// Signed first difference of |f| (N/step); element 0 is 0.
inline std::vector<double> force_rate(const RowMatrix& force) {
  std::vector<double> r(static_cast<std::size_t>(force.rows()), 0.0);
  for (Eigen::Index i = 1; i < force.rows(); ++i)
    r[static_cast<std::size_t>(i)] = force.row(i).norm() - force.row(i - 1).norm();
  return r;
}

/// Signed second difference of |f| (N/step^2); elements 0 and 1 are 0.
inline std::vector<double> force_jerk(const RowMatrix& force) {
  std::vector<double> j(static_cast<std::size_t>(force.rows()), 0.0);
  for (Eigen::Index i = 2; i < force.rows(); ++i)
    j[static_cast<std::size_t>(i)] =
        force.row(i).norm() - 2.0 * force.row(i - 1).norm() + force.row(i - 2).norm();
  return j;
}

struct RegionFeatures {
  double mean_rate = 0.0;  ///< mean |rate|
  double mean_jerk = 0.0;  ///< mean |jerk|
  std::size_t steps = 0;
};

struct ForceDynamics {
  RegionFeatures easy, difficult;
  double split_mse = 0.0;  ///< 75th percentile of the rolling MSE
};

/// Splits steps into easy / difficult by whether the rolling MSE of the
/// window ending at that step exceeds its 75th percentile.
inline ForceDynamics force_dynamics(const RowMatrix& force, const std::vector<double>& sq_errors,
                                    std::size_t window) {
  require(static_cast<std::size_t>(force.rows()) == sq_errors.size(),
          "force_dynamics: force and error sequences must be aligned");
  const auto roll = rolling_mse(sq_errors, window);
  std::vector<double> sorted = roll;
  const std::size_t q = static_cast<std::size_t>(std::floor(0.75 * static_cast<double>(sorted.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(q), sorted.end());
  ForceDynamics fd;
  fd.split_mse = sorted[q];
  const auto rate = force_rate(force);
  const auto jerk = force_jerk(force);
  for (std::size_t j = 0; j < roll.size(); ++j) {
    const std::size_t step = j + window - 1;
    if (step < 2) continue;
    RegionFeatures& r = roll[j] > fd.split_mse ? fd.difficult : fd.easy;
    r.mean_rate += std::abs(rate[step]);
    r.mean_jerk += std::abs(jerk[step]);
    ++r.steps;
  }
  for (RegionFeatures* r : {&fd.easy, &fd.difficult}) {
    if (r->steps == 0) continue;
    r->mean_rate /= static_cast<double>(r->steps);
    r->mean_jerk /= static_cast<double>(r->steps);
  }
  return fd;
}

/// One-step squared prediction error (mean over channels) for every step
/// that has a full history; earlier steps get 0.
inline std::vector<double> one_step_sq_errors(const ModelRef& model, const SequenceData& data, int history_len) {
  std::vector<double> e(data.size(), 0.0);
  const auto len = static_cast<Eigen::Index>(history_len);
  for (Eigen::Index i = len; i < static_cast<Eigen::Index>(data.size()); ++i) {
    Vec3 y;
    const RowMatrix window = data.force.middleRows(i - len, len);
    switch (model.kind) {
      case ModelKind::None: y = Vec3::Zero(); break;
      case ModelKind::HoldLast: y = restoration::hold_last_predict(window); break;
      case ModelKind::Xhap: y = estimator::xhap_forward(*model.xhap, window, data.op.middleRows(i - len, len)); break;
      case ModelKind::Oracle: y = data.force.row(i).transpose(); break;
    }
    e[static_cast<std::size_t>(i)] = (y - data.force.row(i).transpose()).squaredNorm() / 3.0;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Burst losses

struct BurstRow {
  int burst_len = 0;
  std::size_t lost = 0;
  std::size_t restored = 0;
  double effective_plr = 0.0;
  bool meets_target = false;
};

/// Injects a burst of k consecutive losses every `burst_period` steps
/// (starting at step burst_period) on top of the channel losses at snr_db.
inline std::vector<bool> burst_mask(std::size_t n, int k, std::size_t period, const std::vector<bool>& base) {
  std::vector<bool> mask = base;
  for (std::size_t start = period; start < n; start += period)
    for (std::size_t j = start; j < std::min(n, start + static_cast<std::size_t>(k)); ++j) mask[j] = true;
  return mask;
}

inline std::vector<BurstRow> burst_experiment(const ModelRef& model, const SequenceData& data, ChannelParams ch,
                                              double snr_db, const RestorationConfig& rcfg,
                                              const ExperimentConfig& cfg) {
  ch.mu_db = snr_db;
  const auto base = channel::simulate_losses(ch, data.size());
  std::vector<BurstRow> rows;
  for (int k : cfg.burst_lengths) {
    const auto mask = burst_mask(data.size(), k, cfg.burst_period, base.mask);
    const auto s = restore(model, data, mask, rcfg);
    rows.push_back({k, s.lost, s.restored, s.effective_plr, s.effective_plr <= cfg.target_plr});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Network capacity

struct CapacityRow {
  double bandwidth_hz = 0.0;
  int rate_ceiling = 0;
  int capacity = 0;
};

/// Users share the bandwidth equally; user u (1-based) sees an independent
/// channel at snr_db seeded from (seed, u). n users are admitted when every
/// user 1..n meets the effective PLR target and receives goodput
/// eta * (B / n) * (1 - raw PLR) of at least user_rate_bps.
inline std::vector<CapacityRow> network_capacity(const ModelRef& model, const SequenceData& data,
                                                 const ChannelParams& base, double snr_db,
                                                 const RestorationConfig& rcfg, const ExperimentConfig& cfg) {
  const Mcs mcs{base.modulation, base.code_rate};
  const double eta = channel::bits_per_symbol(mcs.modulation) * mcs.code_rate;
  struct UserOutcome {
    bool reliable;
    double raw_plr;
  };
  std::vector<UserOutcome> users;  // index u-1
  const auto budget = static_cast<std::size_t>(std::floor(cfg.target_plr * static_cast<double>(data.size())));
  auto user = [&](int u) -> const UserOutcome& {
    while (static_cast<int>(users.size()) < u) {
      ChannelParams ch = base;
      ch.mu_db = snr_db;
      ch.seed = derive_seed(base.seed, static_cast<std::uint64_t>(users.size() + 1));
      const auto loss = channel::simulate_losses(ch, data.size());
      const auto s = restore(model, data, loss.mask, rcfg, budget);
      users.push_back({!s.stopped_early && s.effective_plr <= cfg.target_plr, loss.raw_plr});
    }
    return users[static_cast<std::size_t>(u - 1)];
  };

  std::vector<CapacityRow> rows;
  for (double b : cfg.bandwidths_hz) {
    CapacityRow r;
    r.bandwidth_hz = b;
    r.rate_ceiling = static_cast<int>(std::floor(eta * b / cfg.user_rate_bps));
    int n = 0;
    while (n < r.rate_ceiling) {
      const int next = n + 1;
      bool ok = true;
      for (int u = 1; u <= next && ok; ++u) {
        const auto& o = user(u);
        ok = o.reliable && eta * (b / next) * (1.0 - o.raw_plr) >= cfg.user_rate_bps;
      }
      if (!ok) break;
      n = next;
    }
    r.capacity = n;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Manifest

inline const std::map<std::string, std::string>& manifest_columns() {
  static const std::map<std::string, std::string> cols{
      {"min_snr.csv",
       "model,modulation,code_rate,threshold,min_snr_db,reachable: smallest mean SNR (dB) meeting the "
       "target effective PLR, per model, MCS and restoration threshold (N); reachable=0 means infeasible "
       "at the upper SNR bound"},
      {"coverage.csv",
       "model,snr_req_db,pl_max_db,distance_m,p_cov,d_max_m,d_max_status: coverage probability over the "
       "distance grid for each model's required SNR, with the largest distance meeting p_star"},
      {"threshold_sweep.csv",
       "sweep,model,modulation,code_rate,snr_db,threshold,raw_plr,effective_plr,restoration_rate: sweep="
       "threshold varies the restoration threshold at the default MCS; sweep=mcs varies the MCS at the "
       "default threshold"},
      {"rolling_mse.csv",
       "activity,model,step,rolling_mse: trailing-window mean of the one-step squared error (N^2), "
       "decimated by the configured stride; step is the window start"},
      {"force_dynamics.csv",
       "activity,model,region,mean_rate,mean_jerk,steps: mean |first| and |second| difference of the force "
       "magnitude (N/step, N/step^2) in easy and difficult regions"},
      {"burst.csv",
       "model,snr_db,threshold,burst_len,lost,restored,effective_plr,meets_target: periodic bursts of "
       "burst_len consecutive losses added to the channel losses"},
      {"capacity.csv",
       "model,snr_db,bandwidth_hz,rate_ceiling,capacity: admitted users under equal bandwidth sharing"},
  };
  return cols;
}

inline void write_manifest(const std::string& path, const std::vector<std::string>& files,
                           std::uint64_t config_hash, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char hash[20];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_hash));
  out << "config_hash " << hash << '\n' << "seed " << seed << '\n';
  for (const auto& f : files) {
    const auto it = manifest_columns().find(f);
    out << f << ": " << (it != manifest_columns().end() ? it->second : "") << '\n';
  }
}

}  // namespace xhap::experiments
