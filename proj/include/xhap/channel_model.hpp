#pragma once

// Link-level packet loss model: a temporally correlated SNR process with
// lognormal shadowing and Rayleigh fading, an FEC gain abstraction, union-bound
// BER expressions, and Bernoulli packet outcomes.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xhap/common.hpp"

namespace xhap::channel {

enum class Modulation { BPSK, QPSK, QAM16 };

constexpr int bits_per_symbol(Modulation m) {
  switch (m) {
    case Modulation::BPSK: return 1;
    case Modulation::QPSK: return 2;
    case Modulation::QAM16: return 4;
  }
  return 0;
}

inline std::string to_string(Modulation m) {
  switch (m) {
    case Modulation::BPSK: return "BPSK";
    case Modulation::QPSK: return "QPSK";
    case Modulation::QAM16: return "QAM16";
  }
  return "?";
}

inline Modulation modulation_from_string(std::string_view s) {
  if (s == "BPSK") return Modulation::BPSK;
  if (s == "QPSK") return Modulation::QPSK;
  if (s == "QAM16" || s == "16QAM") return Modulation::QAM16;
  throw ContractViolation("unknown modulation '" + std::string(s) + "'");
}

struct ChannelParams {
  double mu_db = 20.0;         ///< average SNR
  double sigma_sh_db = 4.0;    ///< shadowing standard deviation
  double rho = 0.95;           ///< AR(1) temporal correlation, [0, 1)
  double code_rate = 0.602;
  int packet_bits = 256;
  int diversity = 3;           ///< number of independently faded branches
  double bandwidth_hz = 20e6;
  Modulation modulation = Modulation::QPSK;
  double fec_g0_db = 8.0;      ///< coding gain scale at R -> 0
  bool fading = true;          ///< Rayleigh fading on/off
  std::uint64_t seed = 1;

  void validate() const {
    require(rho >= 0.0 && rho < 1.0, "channel: rho must lie in [0,1)");
    require(code_rate > 0.0 && code_rate <= 1.0, "channel: code_rate must lie in (0,1]");
    require(packet_bits >= 1, "channel: packet_bits must be >= 1");
    require(diversity >= 1, "channel: diversity must be >= 1");
    require(bandwidth_hz > 0.0, "channel: bandwidth_hz must be > 0");
    require(sigma_sh_db >= 0.0, "channel: sigma_sh_db must be >= 0");
  }
};

/// Evolving channel state. One AR(1) deviation per diversity branch: the
/// shadowing innovation is shared, the fading innovation is per branch.
struct LinkState {
  std::vector<double> deviation_db;
  std::mt19937_64 rng;

  static LinkState initial(const ChannelParams& p) {
    LinkState s;
    s.deviation_db.assign(static_cast<std::size_t>(std::max(1, p.diversity)), 0.0);
    s.rng.seed(p.seed);
    return s;
  }
};

struct SnrSample {
  double snr_db = 0.0;
  double snr_eff_db = 0.0;
  double gamma_lin = 0.0;
  double ber = 0.0;
  double per = 0.0;
};

struct LossSequence {
  std::vector<bool> mask;  ///< true = packet lost
  double raw_plr = 0.0;
  std::vector<SnrSample> per_step_snr;  ///< filled only when requested

  std::size_t lost_count() const {
    std::size_t n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }
};

/// Coding gain in dB: g0 * (1 - R), ramped in from -10 dB to 0 dB SNR.
inline double fec_gain(double code_rate, double snr_db, double g0_db) {
  require(code_rate > 0.0 && code_rate <= 1.0, "fec_gain: code_rate must lie in (0,1]");
  double ramp = 1.0;
  if (snr_db <= -10.0) {
    ramp = 0.0;
  } else if (snr_db < 0.0) {
    ramp = (snr_db + 10.0) / 10.0;
  }
  return g0_db * (1.0 - code_rate) * ramp;
}

inline double ber(Modulation m, double gamma_lin) {
  require(gamma_lin >= 0.0, "ber: gamma must be >= 0");
  switch (m) {
    case Modulation::BPSK:
    case Modulation::QPSK: return 0.5 * std::erfc(std::sqrt(gamma_lin));
    case Modulation::QAM16: return 0.375 * std::erfc(std::sqrt(0.4 * gamma_lin));
  }
  return 0.5;
}

inline double per(double bit_error, int packet_bits) {
  require(bit_error >= 0.0 && bit_error <= 1.0, "per: ber must lie in [0,1]");
  require(packet_bits >= 1, "per: packet_bits must be >= 1");
  // 1 - (1-b)^N, evaluated without cancellation for tiny b.
  if (bit_error >= 1.0) return 1.0;
  return -std::expm1(static_cast<double>(packet_bits) * std::log1p(-bit_error));
}

inline double diversity_combine(std::span<const double> gammas) {
  require(!gammas.empty(), "diversity_combine: empty branch set");
  double sum = 0.0;
  for (double g : gammas) {
    require(g >= 0.0, "diversity_combine: negative branch SNR");
    sum += g;
  }
  return sum / static_cast<double>(gammas.size());
}

struct Goodput {
  double spectral_efficiency;  ///< b(M) * R
  double coded_rate_bps;       ///< eta * B
  double goodput_bps;          ///< eta * B * (1 - PER)
};

inline Goodput goodput(Modulation m, double code_rate, double bandwidth_hz, double packet_error) {
  require(packet_error >= 0.0 && packet_error <= 1.0, "goodput: per must lie in [0,1]");
  const double eta = bits_per_symbol(m) * code_rate;
  const double rc = eta * bandwidth_hz;
  return {eta, rc, rc * (1.0 - packet_error)};
}

namespace detail {

inline double standard_normal(std::mt19937_64& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline double unit_uniform(std::mt19937_64& rng) {
  return std::generate_canonical<double, 53>(rng);
}

/// Unit-mean exponential power gain (Rayleigh envelope squared).
inline double rayleigh_power(std::mt19937_64& rng) {
  return -std::log1p(-unit_uniform(rng));
}

}  // namespace detail

/// Advances the state one step in place and returns the step's SNR sample.
/// Draw order per step: shadowing, then one fading draw per branch.
inline SnrSample advance(LinkState& state, const ChannelParams& p) {
  const double shadow = p.sigma_sh_db * detail::standard_normal(state.rng);
  const auto branches = state.deviation_db.size();
  double snr_db = 0.0;
  if (branches == 1) {
    const double g = detail::rayleigh_power(state.rng);
    const double fade_db = p.fading ? linear_to_db(g) : 0.0;
    double& x = state.deviation_db[0];
    x = p.rho * x + (1.0 - p.rho) * (shadow + fade_db);
    snr_db = p.mu_db + x;
  } else {
    double sum = 0.0;
    for (double& x : state.deviation_db) {
      const double g = detail::rayleigh_power(state.rng);
      const double fade_db = p.fading ? linear_to_db(g) : 0.0;
      x = p.rho * x + (1.0 - p.rho) * (shadow + fade_db);
      sum += db_to_linear(x);
    }
    // Combined relative to mu so that identical zero deviations give mu exactly.
    snr_db = p.mu_db + linear_to_db(sum / static_cast<double>(branches));
  }

  SnrSample s;
  s.snr_db = snr_db;
  s.snr_eff_db = snr_db + fec_gain(p.code_rate, snr_db, p.fec_g0_db);
  s.gamma_lin = db_to_linear(s.snr_eff_db);
  s.ber = ber(p.modulation, s.gamma_lin);
  s.per = per(s.ber, p.packet_bits);
  return s;
}

/// Pure form of advance(): returns the successor state and the sample.
inline std::pair<LinkState, SnrSample> step_snr(const LinkState& state, const ChannelParams& p) {
  LinkState next = state;
  SnrSample s = advance(next, p);
  return {std::move(next), s};
}

/// Runs the channel for `steps` packets. The Bernoulli draw for each packet
/// follows that step's SNR draws on the same stream, so for a fixed seed the
/// set of lost packets shrinks monotonically as mu_db grows.
inline LossSequence simulate_losses(const ChannelParams& p, std::size_t steps,
                                    bool record_snr = false) {
  p.validate();
  require(steps >= 1, "simulate_losses: steps must be >= 1");
  LinkState state = LinkState::initial(p);
  LossSequence out;
  out.mask.resize(steps);
  if (record_snr) out.per_step_snr.reserve(steps);
  std::size_t lost = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const SnrSample s = advance(state, p);
    const bool is_lost = detail::unit_uniform(state.rng) < s.per;
    out.mask[t] = is_lost;
    lost += is_lost ? 1 : 0;
    if (record_snr) out.per_step_snr.push_back(s);
  }
  out.raw_plr = static_cast<double>(lost) / static_cast<double>(steps);
  return out;
}

/// Writes `step,snr_db,snr_eff_db,ber,per,lost`. Requires a sequence recorded
/// with record_snr = true.
inline void write_snr_csv(const std::string& path, const LossSequence& seq) {
  require(seq.per_step_snr.size() == seq.mask.size(),
          "write_snr_csv: loss sequence was simulated without SNR recording");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,snr_db,snr_eff_db,ber,per,lost\n";
  for (std::size_t t = 0; t < seq.mask.size(); ++t) {
    const auto& s = seq.per_step_snr[t];
    out << t << ',' << fmt9(s.snr_db) << ',' << fmt9(s.snr_eff_db) << ',' << fmt9(s.ber) << ','
        << fmt9(s.per) << ',' << (seq.mask[t] ? 1 : 0) << '\n';
  }
}

}  // namespace xhap::channel
