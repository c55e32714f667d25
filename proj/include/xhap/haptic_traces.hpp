#pragma once

// Synthetic 1 kHz kinesthetic teleoperation traces, trimming and windowing,
// and the trace CSV format.
//
// The generator drives a tool mass through a spring-damper coupling towards
// a scripted operator trajectory. The tool meets a planar surface at z = 0;
// while it penetrates, the surface pushes back with k * depth + c * depth_rate
// along +z and Coulomb-like friction along x and y.

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xhap/common.hpp"

namespace xhap::traces {

enum class Activity { DynPush, DynTap, RBInter, RBPushHold, RBTap };

inline constexpr std::array<Activity, 5> kAllActivities = {
    Activity::DynPush, Activity::DynTap, Activity::RBInter, Activity::RBPushHold, Activity::RBTap};

inline std::string to_string(Activity a) {
  switch (a) {
    case Activity::DynPush: return "DynPush";
    case Activity::DynTap: return "DynTap";
    case Activity::RBInter: return "RBInter";
    case Activity::RBPushHold: return "RBPushHold";
    case Activity::RBTap: return "RBTap";
  }
  return "?";
}

inline Activity activity_from_string(std::string_view s) {
  for (Activity a : kAllActivities)
    if (to_string(a) == s) return a;
  throw ContractViolation("unknown activity '" + std::string(s) + "'");
}

inline bool is_rigid(Activity a) {
  return a == Activity::RBInter || a == Activity::RBPushHold || a == Activity::RBTap;
}

inline bool is_tap(Activity a) { return a == Activity::DynTap || a == Activity::RBTap; }

constexpr double kSampleRateHz = 1000.0;
constexpr std::size_t kTrimSamples = 10000;

struct HapticSample {
  long t = 0;
  Vec3 force = Vec3::Zero();
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

struct Trace {
  Activity activity = Activity::DynPush;
  std::vector<HapticSample> samples;
  double sample_rate_hz = kSampleRateHz;

  std::size_t size() const { return samples.size(); }
};

/// Contact and coupling constants of the generator.
struct ContactModel {
  double k_soft = 200.0;     ///< N/m
  double k_rigid = 2000.0;   ///< N/m
  double damping = 5.0;      ///< N s/m
  double tool_mass = 0.1;    ///< kg
  double coupling_k = 300.0; ///< operator-to-tool spring, N/m
  double coupling_c = 8.0;   ///< operator-to-tool damper, N s/m
  double friction = 0.3;
  double friction_v0 = 0.005;  ///< m/s, friction smoothing velocity
  double noise_sigma = 0.002;  ///< N, applied while in contact
  int substeps = 10;

  double stiffness(Activity a) const { return is_rigid(a) ? k_rigid : k_soft; }
  /// Steady-state contact force for an operator held `depth` below the surface.
  double static_force(Activity a, double depth) const {
    const double k = stiffness(a);
    return k * coupling_k * depth / (coupling_k + k);
  }
};

struct GeneratorOptions {
  ContactModel contact;
  double surface_offset_m = 0.0;  ///< lowers the surface; large values mean no contact
};

/// Extremes observed while generating, for sanity bounds.
struct GenerationInfo {
  double stiffness = 0.0;
  double max_penetration = 0.0;
  double max_penetration_rate = 0.0;
  double max_tool_speed = 0.0;
};

namespace detail {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Sum of a few slow sinusoids with random frequencies and phases, roughly
/// unit amplitude.
class SmoothNoise {
public:
  SmoothNoise(std::mt19937_64& rng, double f_lo, double f_hi) {
    std::uniform_real_distribution<double> f(f_lo, f_hi), ph(0.0, kTwoPi);
    for (auto& c : comps_) c = {f(rng), ph(rng)};
  }
  double operator()(double t) const {
    double s = 0.0;
    for (const auto& c : comps_) s += std::sin(kTwoPi * c[0] * t + c[1]);
    return s / 3.0;
  }

private:
  std::array<std::array<double, 2>, 3> comps_{};
};

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

/// Scripted operator trajectory for one activity; positions in meters,
/// surface at z = 0.
class OperatorScript {
public:
  OperatorScript(Activity a, std::mt19937_64& rng)
      : activity_(a), drift_x_(rng, 0.05, 0.25), drift_y_(rng, 0.05, 0.25), depth_(rng, 0.1, 0.6),
        fast_(rng, 0.8, 2.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    tap_hz_ = 2.0 + 3.0 * u(rng);
    tap_amp_ = 0.014 + 0.008 * u(rng);
    push_hz_ = 0.3 + 0.3 * u(rng);
    hold_period_ = 4.0 + 2.0 * u(rng);
    hold_depth_ = 0.006 + 0.006 * u(rng);
    phase_ = kTwoPi * u(rng);
  }

  Vec3 operator()(double t) const {
    Vec3 p;
    switch (activity_) {
      case Activity::DynPush: {
        p.x() = 0.03 * std::sin(kTwoPi * 0.2 * t + phase_) + 0.01 * drift_x_(t);
        p.y() = 0.02 * drift_y_(t);
        const double depth = 0.006 + 0.007 * std::sin(kTwoPi * push_hz_ * t + phase_) +
                             0.002 * depth_(t);
        p.z() = -depth;
        break;
      }
      case Activity::DynTap:
      case Activity::RBTap: {
        p.x() = 0.01 * drift_x_(t);
        p.y() = 0.01 * drift_y_(t);
        const double amp = tap_amp_ * (1.0 + 0.15 * depth_(t));
        p.z() = 0.004 - amp * (0.5 - 0.5 * std::cos(kTwoPi * tap_hz_ * t + phase_));
        break;
      }
      case Activity::RBPushHold: {
        p.x() = 0.005 * drift_x_(t);
        p.y() = 0.005 * drift_y_(t);
        const double cycle = std::fmod(t + phase_, hold_period_);
        // approach 1 s, hold, release 1 s, rest 0.5 s
        const double hold_end = hold_period_ - 1.5;
        double engage = 0.0;
        if (cycle < 1.0) {
          engage = smoothstep(cycle);
        } else if (cycle < hold_end) {
          engage = 1.0;
        } else if (cycle < hold_end + 1.0) {
          engage = 1.0 - smoothstep(cycle - hold_end);
        }
        p.z() = 0.01 - (0.01 + hold_depth_) * engage;
        break;
      }
      case Activity::RBInter: {
        p.x() = 0.04 * std::cos(kTwoPi * 0.25 * t + phase_) + 0.01 * drift_x_(t);
        p.y() = 0.04 * std::sin(kTwoPi * 0.25 * t + phase_) + 0.01 * drift_y_(t);
        p.z() = -(0.004 + 0.005 * depth_(t) + 0.003 * fast_(t));
        break;
      }
    }
    return p;
  }

private:
  Activity activity_;
  SmoothNoise drift_x_, drift_y_, depth_, fast_;
  double tap_hz_ = 3.0, tap_amp_ = 0.015, push_hz_ = 0.4, hold_period_ = 5.0,
         hold_depth_ = 0.008, phase_ = 0.0;
};

}  // namespace detail

/// Generates a trace and reports the extremes of the contact simulation.
inline Trace generate_trace(Activity activity, double duration_s, std::uint64_t seed,
                            const GeneratorOptions& opt, GenerationInfo* info) {
  require(duration_s >= 30.0, "generate_trace: duration_s must be >= 30");
  const auto& cm = opt.contact;
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(activity)));
  detail::OperatorScript script(activity, rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  const double k = cm.stiffness(activity);
  const double dt = 1.0 / kSampleRateHz;
  const double h = dt / cm.substeps;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRateHz));
  const double surface = -opt.surface_offset_m;

  Trace trace;
  trace.activity = activity;
  trace.samples.resize(n);

  Vec3 tool = script(0.0);
  Vec3 tool_v = Vec3::Zero();
  Vec3 prev_op = script(-dt);
  GenerationInfo stats;
  stats.stiffness = k;

  auto contact_force = [&](const Vec3& x, const Vec3& v, double* depth_out) {
    Vec3 f = Vec3::Zero();
    const double depth = surface - x.z();
    *depth_out = depth;
    if (depth <= 0.0) return f;
    const double fn = std::max(0.0, k * depth - cm.damping * v.z());
    f.z() = fn;
    f.x() = -cm.friction * fn * std::tanh(v.x() / cm.friction_v0);
    f.y() = -cm.friction * fn * std::tanh(v.y() / cm.friction_v0);
    return f;
  };

  for (std::size_t i = 0; i < n; ++i) {
    const double t0 = static_cast<double>(i) * dt;
    for (int s = 0; s < cm.substeps; ++s) {
      const double ts = t0 + s * h;
      const Vec3 op = script(ts);
      const Vec3 op_v = (script(ts + 0.5 * h) - script(ts - 0.5 * h)) / h;
      double depth = 0.0;
      const Vec3 fc = contact_force(tool, tool_v, &depth);
      const Vec3 accel = (cm.coupling_k * (op - tool) + cm.coupling_c * (op_v - tool_v) + fc) /
                         cm.tool_mass;
      tool_v += accel * h;
      tool += tool_v * h;
    }
    double depth = 0.0;
    Vec3 force = contact_force(tool, tool_v, &depth);
    if (depth > 0.0) {
      stats.max_penetration = std::max(stats.max_penetration, depth);
      stats.max_penetration_rate = std::max(stats.max_penetration_rate, std::abs(tool_v.z()));
      for (int c = 0; c < 3; ++c) force[c] += cm.noise_sigma * noise(rng);
    }
    stats.max_tool_speed = std::max(stats.max_tool_speed, tool_v.norm());

    const Vec3 op = script(t0 + dt);
    auto& smp = trace.samples[i];
    smp.t = static_cast<long>(i);
    smp.force = force;
    smp.position = op;
    smp.velocity = (op - prev_op) / dt;
    prev_op = op;
  }
  if (info) *info = stats;
  return trace;
}

inline Trace generate_trace(Activity activity, double duration_s, std::uint64_t seed) {
  return generate_trace(activity, duration_s, seed, GeneratorOptions{}, nullptr);
}

/// Drops the activation and shutdown artifacts at both ends.
inline Trace trim(const Trace& trace) {
  require(trace.size() > 2 * kTrimSamples, "trim: trace shorter than the trimmed margins");
  Trace out;
  out.activity = trace.activity;
  out.sample_rate_hz = trace.sample_rate_hz;
  out.samples.assign(trace.samples.begin() + static_cast<long>(kTrimSamples),
                     trace.samples.end() - static_cast<long>(kTrimSamples));
  return out;
}

/// Dense per-step arrays of a trace: force (N x 3) and operator state
/// position+velocity (N x 6).
struct SequenceData {
  Activity activity = Activity::DynPush;
  RowMatrix force;
  RowMatrix op;

  static SequenceData from_trace(const Trace& trace) {
    SequenceData d;
    d.activity = trace.activity;
    const auto n = static_cast<Eigen::Index>(trace.size());
    d.force.resize(n, 3);
    d.op.resize(n, 6);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = trace.samples[static_cast<std::size_t>(i)];
      d.force.row(i) = s.force.transpose();
      d.op.row(i).head<3>() = s.position.transpose();
      d.op.row(i).tail<3>() = s.velocity.transpose();
    }
    return d;
  }

  std::size_t size() const { return static_cast<std::size_t>(force.rows()); }
};

struct WindowedExample {
  RowMatrix x_top;  ///< L x 3, force at t-L+1 .. t
  RowMatrix x_op;   ///< L x 6, operator state at t-L+1 .. t
  Vec3 y;           ///< force at t+1
};

/// Stride-1 windows over a trimmed trace, materialized on access.
class WindowSet {
public:
  WindowSet(std::shared_ptr<const SequenceData> data, int history_len)
      : data_(std::move(data)), len_(history_len) {}

  std::size_t size() const {
    const auto n = data_->size();
    return n > static_cast<std::size_t>(len_) ? n - static_cast<std::size_t>(len_) : 0;
  }

  /// Trace index t of the last history row of window j.
  std::size_t last_index(std::size_t j) const { return j + static_cast<std::size_t>(len_) - 1; }

  WindowedExample operator[](std::size_t j) const {
    require(j < size(), "WindowSet: index out of range");
    const auto start = static_cast<Eigen::Index>(j);
    return {data_->force.block(start, 0, len_, 3), data_->op.block(start, 0, len_, 6),
            data_->force.row(start + len_).transpose()};
  }

  int history_len() const { return len_; }
  const SequenceData& data() const { return *data_; }

private:
  std::shared_ptr<const SequenceData> data_;
  int len_;
};

inline WindowSet trim_and_window(const Trace& trace, int history_len) {
  require(history_len >= 1, "trim_and_window: L must be >= 1");
  require(trace.size() > 2 * kTrimSamples + static_cast<std::size_t>(history_len) + 1,
          "trim_and_window: trace too short for trimming and one window");
  return WindowSet(std::make_shared<const SequenceData>(SequenceData::from_trace(trim(trace))),
                   history_len);
}

// ---------------------------------------------------------------------------
// CSV I/O

inline constexpr const char* kTraceHeader = "t,fx,fy,fz,px,py,pz,vx,vy,vz";

class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void write_trace_csv(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kTraceHeader << '\n';
  for (const auto& s : trace.samples) {
    out << s.t;
    for (const Vec3* v : {&s.force, &s.position, &s.velocity})
      for (int c = 0; c < 3; ++c) out << ',' << fmt9((*v)[c]);
    out << '\n';
  }
}

inline Trace read_trace_csv(const std::string& path, Activity activity) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": no samples");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader)
    throw ParseError(path + ":1: expected header '" + std::string(kTraceHeader) + "'");

  Trace trace;
  trace.activity = activity;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 10> v{};
    std::size_t col = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (col >= v.size())
        throw ParseError(path + ":" + std::to_string(lineno) + ": too many columns");
      try {
        std::size_t used = 0;
        v[col] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      ++col;
    }
    if (col != v.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 10 columns, got " +
                       std::to_string(col));
    HapticSample s;
    s.t = static_cast<long>(v[0]);
    s.force = Vec3(v[1], v[2], v[3]);
    s.position = Vec3(v[4], v[5], v[6]);
    s.velocity = Vec3(v[7], v[8], v[9]);
    if (!trace.samples.empty() && s.t <= trace.samples.back().t)
      throw ParseError(path + ":" + std::to_string(lineno) + ": t not strictly increasing");
    trace.samples.push_back(s);
  }
  if (trace.samples.empty()) throw ParseError(path + ": no samples");
  return trace;
}

}  // namespace xhap::traces
