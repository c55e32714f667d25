#pragma once

// Runtime packet-loss restoration: a history buffer of the last L force
// vectors, a predictor queried on each loss once the buffer has filled, and
// an error criterion deciding whether the estimate counts as restored.

#include <concepts>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "xhap/channel_model.hpp"
#include "xhap/common.hpp"
#include "xhap/estimator.hpp"
#include "xhap/haptic_traces.hpp"

namespace xhap::restoration {

using traces::SequenceData;

enum class Criterion { Absolute, Relative };

inline std::string to_string(Criterion c) { return c == Criterion::Absolute ? "absolute" : "relative"; }

inline Criterion criterion_from_string(std::string_view s) {
  if (s == "absolute") return Criterion::Absolute;
  if (s == "relative") return Criterion::Relative;
  throw ContractViolation("unknown restoration criterion '" + std::string(s) + "'");
}

struct RestorationConfig {
  int history_len = 64;
  double threshold = 0.1;  ///< N for Absolute, a fraction for Relative
  Criterion criterion = Criterion::Absolute;
  double tau = 0.01;       ///< floor of the relative denominator (N)
  bool append_estimate_on_fail = false;

  void validate() const {
    require(history_len >= 1, "restoration: history_len must be >= 1");
    require(threshold > 0.0, "restoration: threshold must be > 0");
    require(tau > 0.0, "restoration: tau must be > 0");
  }
};

struct RestorationStats {
  std::size_t total = 0;
  std::size_t lost = 0;
  std::size_t restored = 0;
  double effective_plr = 0.0;
  double restoration_rate = 0.0;
  /// Per-packet estimation error (N): 0 for delivered packets, NaN for
  /// losses that occurred before the buffer filled.
  std::vector<double> error;
  /// Set when the run stopped because the unrestored budget was exceeded.
  bool stopped_early = false;

  std::size_t unrestored() const { return lost - restored; }
};

struct CriterionResult {
  double error;
  bool pass;
};

/// Mean absolute per-channel error and the pass decision (inclusive bound).
inline CriterionResult error_criterion(const Vec3& estimate, const Vec3& truth,
                                       const RestorationConfig& cfg) {
  require(estimate.allFinite() && truth.allFinite(), "error_criterion: non-finite input");
  const double e = (estimate - truth).cwiseAbs().sum() / 3.0;
  if (cfg.criterion == Criterion::Absolute) return {e, e <= cfg.threshold};
  const double scale = std::max(truth.cwiseAbs().sum() / 3.0, cfg.tau);
  return {e, e <= cfg.threshold * scale};
}

/// Baseline predictor: the most recent buffered force.
inline Vec3 hold_last_predict(const RowMatrix& buffer) {
  require(buffer.rows() >= 1 && buffer.cols() == 3, "hold_last_predict: buffer must be n x 3, n >= 1");
  return buffer.row(buffer.rows() - 1).transpose();
}

/// A predictor receives the last L buffered forces, the operator states of
/// the same L steps, and the index of the packet being estimated.
template <typename P>
concept Predictor = requires(P p, const RowMatrix& f, const RowMatrix& op, std::size_t i) {
  { p(f, op, i) } -> std::convertible_to<Vec3>;
};

struct HoldLast {
  Vec3 operator()(const RowMatrix& force, const RowMatrix&, std::size_t) const {
    return hold_last_predict(force);
  }
};

struct XhapPredictor {
  const estimator::XhapModel* model;
  Vec3 operator()(const RowMatrix& force, const RowMatrix& op, std::size_t) const {
    return estimator::xhap_forward(*model, force, op);
  }
};

/// Returns the true sample; an upper bound used in tests and sanity runs.
struct OraclePredictor {
  const SequenceData* data;
  Vec3 operator()(const RowMatrix&, const RowMatrix&, std::size_t i) const {
    return data->force.row(static_cast<Eigen::Index>(i)).transpose();
  }
};

inline RestorationStats finalize(RestorationStats s) {
  s.effective_plr = static_cast<double>(s.lost - s.restored) / static_cast<double>(std::max<std::size_t>(1, s.total));
  s.restoration_rate = s.lost > 0 ? static_cast<double>(s.restored) / static_cast<double>(s.lost) : 0.0;
  return s;
}

/// Runs the restoration loop over a trace and a loss mask of equal length.
/// When `max_unrestored` is given the run stops as soon as more packets than
/// that remain unrestored; counters then cover the processed prefix only.
template <Predictor P>
RestorationStats run_restoration(const SequenceData& data, const std::vector<bool>& lost_mask,
                                 P&& predictor, const RestorationConfig& cfg,
                                 std::optional<std::size_t> max_unrestored = std::nullopt) {
  cfg.validate();
  require(lost_mask.size() == data.size(), "run_restoration: loss mask length differs from trace length");
  const auto len = static_cast<Eigen::Index>(cfg.history_len);
  const std::size_t n = data.size();

  // Ring buffer of appended force vectors; `appended` counts all appends.
  RowMatrix ring = RowMatrix::Zero(len, 3);
  std::size_t appended = 0;
  bool filled = false;
  auto append = [&](const Vec3& v) {
    ring.row(static_cast<Eigen::Index>(appended % static_cast<std::size_t>(len))) = v.transpose();
    ++appended;
  };

  RestorationStats s;
  s.error.assign(n, 0.0);
  RowMatrix window(len, 3);
  for (std::size_t i = 0; i < n; ++i) {
    ++s.total;
    const Vec3 truth = data.force.row(static_cast<Eigen::Index>(i)).transpose();
    if (!lost_mask[i]) {
      append(truth);
      if (appended >= static_cast<std::size_t>(len)) filled = true;
      continue;
    }
    ++s.lost;
    if (!filled) {
      s.error[i] = std::numeric_limits<double>::quiet_NaN();
      append(Vec3::Zero());
      continue;
    }
    // Oldest-first view of the last L appended vectors.
    const auto head = static_cast<Eigen::Index>(appended % static_cast<std::size_t>(len));
    window.topRows(len - head) = ring.bottomRows(len - head);
    window.bottomRows(head) = ring.topRows(head);
    // One vector is appended per packet, so a filled buffer implies i >= L.
    const RowMatrix op_window = data.op.middleRows(static_cast<Eigen::Index>(i) - len, len);
    const Vec3 estimate = predictor(window, op_window, i);
    const CriterionResult c = error_criterion(estimate, truth, cfg);
    s.error[i] = c.error;
    if (c.pass) {
      ++s.restored;
      append(estimate);
    } else {
      append(cfg.append_estimate_on_fail ? estimate : Vec3::Zero());
      if (max_unrestored && s.lost - s.restored > *max_unrestored) {
        s.stopped_early = true;
        s.error.resize(i + 1);
        break;
      }
    }
  }
  return finalize(std::move(s));
}

/// Stats CSV header and one row.
inline constexpr const char* kStatsHeader =
    "total,lost,restored,effective_plr,restoration_rate,threshold,criterion,model";

inline std::string stats_row(const RestorationStats& s, const RestorationConfig& cfg,
                             const std::string& model) {
  return std::to_string(s.total) + ',' + std::to_string(s.lost) + ',' + std::to_string(s.restored) +
         ',' + fmt9(s.effective_plr) + ',' + fmt9(s.restoration_rate) + ',' + fmt9(cfg.threshold) +
         ',' + to_string(cfg.criterion) + ',' + model;
}

inline void write_stats_csv(const std::string& path, const RestorationStats& s,
                            const RestorationConfig& cfg, const std::string& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kStatsHeader << '\n' << stats_row(s, cfg, model) << '\n';
}

}  // namespace xhap::restoration
