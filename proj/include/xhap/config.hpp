#pragma once

// Run configuration: a registry of `section.key = value` entries over every
// tunable parameter, file parsing with `#` comments, command-line overrides
// and a canonical dump used for provenance.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xhap/channel_model.hpp"
#include "xhap/common.hpp"
#include "xhap/estimator.hpp"
#include "xhap/experiments.hpp"
#include "xhap/haptic_traces.hpp"
#include "xhap/link_budget.hpp"
#include "xhap/restoration.hpp"
#include "xhap/training.hpp"

namespace xhap::config {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TraceConfig {
  double duration_s = 120.0;
  std::vector<traces::Activity> activities{traces::kAllActivities.begin(), traces::kAllActivities.end()};
};

struct RunConfig {
  channel::ChannelParams channel;
  link::LinkBudgetParams link;
  estimator::ModelConfig model;
  training::TrainConfig train;
  restoration::RestorationConfig restore;
  experiments::ExperimentConfig experiments;
  TraceConfig traces;
  std::uint64_t seed = 1;

  /// Restoration always uses the model's history length.
  restoration::RestorationConfig restoration_config() const {
    restoration::RestorationConfig r = restore;
    r.history_len = model.history_len;
    return r;
  }
};

// ---------------------------------------------------------------------------
// Value codecs

inline std::string trim_ws(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim_ws(item);
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("expected a non-empty list");
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Registry

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;  // throws ConfigError
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline void check(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("out of range: must be ") + what);
}

template <typename M>
Key real(std::string name, M member, std::function<bool(double)> ok, const char* range) {
  return {std::move(name),
          [=](RunConfig& c, const std::string& v) {
            const double x = parse_double(v);
            check(ok(x), range);
            member(c) = x;
          },
          [=](const RunConfig& c) { return format_double(member(c)); }};
}

template <typename Int, typename M>
Key integer(std::string name, M member, std::function<bool(Int)> ok, const char* range) {
  return {std::move(name),
          [=](RunConfig& c, const std::string& v) {
            const Int x = parse_int<Int>(v);
            check(ok(x), range);
            member(c) = x;
          },
          [=](const RunConfig& c) { return std::to_string(member(c)); }};
}

inline bool positive(double x) { return x > 0.0; }
inline bool nonneg(double x) { return x >= 0.0; }
inline bool unit_open(double x) { return x > 0.0 && x < 1.0; }
inline bool any(double) { return true; }

template <typename Int>
bool at_least_one(Int x) {
  return x >= 1;
}

}  // namespace detail

#define XHAP_M(expr) [](auto& c) -> auto& { return expr; }

inline const std::vector<Key>& registry() {
  using namespace detail;
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back(integer<std::uint64_t>("run.seed", XHAP_M(c.seed), [](std::uint64_t) { return true; }, "any"));

    k.push_back(real("traces.duration_s", XHAP_M(c.traces.duration_s), [](double x) { return x >= 30.0; }, ">= 30"));
    k.push_back({"traces.activities",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<traces::Activity> a;
                   for (const auto& s : split_list(v)) {
                     try {
                       a.push_back(traces::activity_from_string(s));
                     } catch (const ContractViolation& e) {
                       throw ConfigError(e.what());
                     }
                   }
                   c.traces.activities = a;
                 },
                 [](const RunConfig& c) {
                   return join(c.traces.activities, [](traces::Activity a) { return traces::to_string(a); });
                 }});

    k.push_back(real("channel.mu_db", XHAP_M(c.channel.mu_db), any, "finite"));
    k.push_back(real("channel.sigma_sh_db", XHAP_M(c.channel.sigma_sh_db), nonneg, ">= 0"));
    k.push_back(real("channel.rho", XHAP_M(c.channel.rho), [](double x) { return x >= 0.0 && x < 1.0; }, "in [0,1)"));
    k.push_back(real("channel.code_rate", XHAP_M(c.channel.code_rate), [](double x) { return x > 0.0 && x <= 1.0; },
                     "in (0,1]"));
    k.push_back(integer<int>("channel.packet_bits", XHAP_M(c.channel.packet_bits), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("channel.diversity", XHAP_M(c.channel.diversity), at_least_one<int>, ">= 1"));
    k.push_back(real("channel.bandwidth_hz", XHAP_M(c.channel.bandwidth_hz), positive, "> 0"));
    k.push_back({"channel.modulation",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.channel.modulation = channel::modulation_from_string(v);
                   } catch (const ContractViolation& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return channel::to_string(c.channel.modulation); }});
    k.push_back(real("channel.fec_g0_db", XHAP_M(c.channel.fec_g0_db), nonneg, ">= 0"));
    k.push_back({"channel.fading", [](RunConfig& c, const std::string& v) { c.channel.fading = parse_bool(v); },
                 [](const RunConfig& c) { return std::string(c.channel.fading ? "true" : "false"); }});

    k.push_back(real("link.ptx_dbm", XHAP_M(c.link.ptx_dbm), any, "finite"));
    k.push_back(real("link.gtx_db", XHAP_M(c.link.gtx_db), any, "finite"));
    k.push_back(real("link.grx_db", XHAP_M(c.link.grx_db), any, "finite"));
    k.push_back(real("link.noise_floor_dbm", XHAP_M(c.link.noise_floor_dbm), any, "finite"));
    k.push_back(real("link.fc_ghz", XHAP_M(c.link.fc_ghz), [](double x) { return x >= 0.5 && x <= 100.0; },
                     "in [0.5,100]"));
    k.push_back(real("link.h_bs_m", XHAP_M(c.link.h_bs_m), positive, "> 0"));
    k.push_back(real("link.h_ut_m", XHAP_M(c.link.h_ut_m), positive, "> 0"));
    k.push_back(real("link.sigma_los_db", XHAP_M(c.link.sigma_los_db), positive, "> 0"));
    k.push_back(real("link.sigma_nlos_db", XHAP_M(c.link.sigma_nlos_db), positive, "> 0"));

    k.push_back(integer<int>("model.history_len", XHAP_M(c.model.history_len), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("model.latent", XHAP_M(c.model.latent), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("model.heads", XHAP_M(c.model.heads), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("model.hidden", XHAP_M(c.model.hidden), at_least_one<int>, ">= 1"));

    k.push_back(integer<int>("train.epochs", XHAP_M(c.train.epochs), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("train.batch_size", XHAP_M(c.train.batch_size), at_least_one<int>, ">= 1"));
    k.push_back(real("train.lr0", XHAP_M(c.train.lr0), positive, "> 0"));
    k.push_back(integer<int>("train.lr_step", XHAP_M(c.train.lr_step), at_least_one<int>, ">= 1"));
    k.push_back(real("train.lr_gamma", XHAP_M(c.train.lr_gamma), [](double x) { return x > 0.0 && x <= 1.0; },
                     "in (0,1]"));
    k.push_back(real("train.lambda_mse", XHAP_M(c.train.lambda_mse), nonneg, ">= 0"));
    k.push_back(real("train.lambda_rel", XHAP_M(c.train.lambda_rel), nonneg, ">= 0"));
    k.push_back(real("train.tau", XHAP_M(c.train.tau), positive, "> 0"));
    k.push_back(integer<int>("train.rollout_horizon", XHAP_M(c.train.rollout_horizon), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("train.windows_per_epoch", XHAP_M(c.train.windows_per_epoch), at_least_one<int>, ">= 1"));
    k.push_back(integer<int>("train.val_windows", XHAP_M(c.train.val_windows), at_least_one<int>, ">= 1"));
    k.push_back(real("train.adam_beta1", XHAP_M(c.train.adam_beta1), [](double x) { return x >= 0.0 && x < 1.0; },
                     "in [0,1)"));
    k.push_back(real("train.adam_beta2", XHAP_M(c.train.adam_beta2), [](double x) { return x >= 0.0 && x < 1.0; },
                     "in [0,1)"));
    k.push_back(real("train.adam_eps", XHAP_M(c.train.adam_eps), positive, "> 0"));

    k.push_back(real("restore.threshold", XHAP_M(c.restore.threshold), positive, "> 0"));
    k.push_back({"restore.criterion",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.restore.criterion = restoration::criterion_from_string(v);
                   } catch (const ContractViolation& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return restoration::to_string(c.restore.criterion); }});
    k.push_back(real("restore.tau", XHAP_M(c.restore.tau), positive, "> 0"));
    k.push_back({"restore.append_estimate_on_fail",
                 [](RunConfig& c, const std::string& v) { c.restore.append_estimate_on_fail = parse_bool(v); },
                 [](const RunConfig& c) { return std::string(c.restore.append_estimate_on_fail ? "true" : "false"); }});

    k.push_back(integer<std::size_t>("experiments.steps", XHAP_M(c.experiments.steps), at_least_one<std::size_t>, ">= 1"));
    k.push_back(real("experiments.target_plr", XHAP_M(c.experiments.target_plr), unit_open, "in (0,1)"));
    k.push_back({"experiments.thresholds",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> t;
                   for (const auto& s : split_list(v)) {
                     t.push_back(parse_double(s));
                     check(t.back() > 0.0, "> 0");
                   }
                   c.experiments.thresholds = t;
                 },
                 [](const RunConfig& c) { return join(c.experiments.thresholds, format_double); }});
    k.push_back(real("experiments.snr_lo_db", XHAP_M(c.experiments.snr_lo_db), any, "finite"));
    k.push_back(real("experiments.snr_hi_db", XHAP_M(c.experiments.snr_hi_db), any, "finite"));
    k.push_back(real("experiments.snr_tol_db", XHAP_M(c.experiments.snr_tol_db), positive, "> 0"));
    k.push_back({"experiments.mcs_list",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<experiments::Mcs> m;
                   for (const auto& s : split_list(v)) {
                     try {
                       m.push_back(experiments::mcs_from_string(s));
                     } catch (const std::exception& e) {
                       throw ConfigError(e.what());
                     }
                   }
                   c.experiments.mcs_list = m;
                 },
                 [](const RunConfig& c) {
                   return join(c.experiments.mcs_list, [](const experiments::Mcs& m) { return experiments::to_string(m); });
                 }});
    k.push_back({"experiments.burst_lengths",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<int> b;
                   for (const auto& s : split_list(v)) {
                     b.push_back(parse_int<int>(s));
                     check(b.back() >= 1, ">= 1");
                   }
                   c.experiments.burst_lengths = b;
                 },
                 [](const RunConfig& c) { return join(c.experiments.burst_lengths, [](int x) { return std::to_string(x); }); }});
    k.push_back(integer<std::size_t>("experiments.burst_period", XHAP_M(c.experiments.burst_period),
                                     [](std::size_t x) { return x >= 2; }, ">= 2"));
    k.push_back(real("experiments.burst_snr_db", XHAP_M(c.experiments.burst_snr_db), any, "finite"));
    k.push_back({"experiments.bandwidths_hz",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> b;
                   for (const auto& s : split_list(v)) {
                     b.push_back(parse_double(s));
                     check(b.back() > 0.0, "> 0");
                   }
                   c.experiments.bandwidths_hz = b;
                 },
                 [](const RunConfig& c) { return join(c.experiments.bandwidths_hz, format_double); }});
    k.push_back(real("experiments.capacity_snr_db", XHAP_M(c.experiments.capacity_snr_db), any, "finite"));
    k.push_back(real("experiments.user_rate_bps", XHAP_M(c.experiments.user_rate_bps), positive, "> 0"));
    k.push_back({"experiments.sweep_thresholds",
                 [](RunConfig& c, const std::string& v) {
                   std::vector<double> t;
                   for (const auto& s : split_list(v)) {
                     t.push_back(parse_double(s));
                     check(t.back() > 0.0, "> 0");
                   }
                   c.experiments.sweep_thresholds = t;
                 },
                 [](const RunConfig& c) { return join(c.experiments.sweep_thresholds, format_double); }});
    k.push_back(real("experiments.sweep_snr_db", XHAP_M(c.experiments.sweep_snr_db), any, "finite"));
    k.push_back(real("experiments.p_star", XHAP_M(c.experiments.p_star), unit_open, "in (0,1)"));
    k.push_back(real("experiments.coverage_d_max_m", XHAP_M(c.experiments.coverage_d_max_m),
                     [](double x) { return x >= link::kMinDistance; }, ">= 10"));
    k.push_back(real("experiments.coverage_d_step_m", XHAP_M(c.experiments.coverage_d_step_m), positive, "> 0"));
    k.push_back(integer<std::size_t>("experiments.rolling_window", XHAP_M(c.experiments.rolling_window),
                                     at_least_one<std::size_t>, ">= 1"));
    k.push_back(integer<std::size_t>("experiments.rolling_stride", XHAP_M(c.experiments.rolling_stride),
                                     at_least_one<std::size_t>, ">= 1"));
    return k;
  }();
  return keys;
}

#undef XHAP_M

inline const Key* find_key(std::string_view name) {
  for (const auto& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

/// Applies one `key = value` assignment; `where` prefixes any error.
inline void apply(RunConfig& c, const std::string& key, const std::string& value, const std::string& where) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError(where + ": unknown key '" + key + "'");
  try {
    k->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + key + ": " + e.what());
  }
}

/// Splits "key = value" (or "key=value"); returns false if there is no '='.
inline bool split_assignment(std::string_view line, std::string& key, std::string& value) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) return false;
  key = trim_ws(line.substr(0, eq));
  value = trim_ws(line.substr(eq + 1));
  return true;
}

/// Cross-field checks that no single key can enforce.
inline void validate(const RunConfig& c, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ": " + msg); };
  if (c.model.latent % c.model.heads != 0) fail("model.latent must be divisible by model.heads");
  if (c.experiments.snr_lo_db >= c.experiments.snr_hi_db)
    fail("experiments.snr_lo_db must be below experiments.snr_hi_db");
  if (c.traces.duration_s * traces::kSampleRateHz <= 20000.0 + c.model.history_len + 1)
    fail("traces.duration_s too short for model.history_len after trimming");
}

inline void parse_stream(std::istream& in, const std::string& name, RunConfig& c) {
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim_ws(line).empty()) continue;
    std::string key, value;
    const std::string where = name + ":" + std::to_string(n);
    if (!split_assignment(line, key, value)) throw ConfigError(where + ": expected 'section.key = value'");
    apply(c, key, value, where);
  }
}

/// File values override defaults; overrides ("key=value") override the file.
inline RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  RunConfig c;
  std::string origin = "defaults";
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    parse_stream(in, path, c);
    origin = path;
  }
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    std::string key, value;
    const std::string where = "--set #" + std::to_string(i + 1);
    if (!split_assignment(overrides[i], key, value)) throw ConfigError(where + ": expected key=value");
    apply(c, key, value, where);
  }
  validate(c, origin);
  return c;
}

/// Canonical dump, one `key = value` per line in registry order. Parsing it
/// back reproduces the configuration.
inline std::string dump(const RunConfig& c) {
  std::string s;
  for (const auto& k : registry()) s += k.name + " = " + k.get(c) + '\n';
  return s;
}

inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(dump(c)); }

inline void write_effective_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << dump(c);
}

}  // namespace xhap::config
