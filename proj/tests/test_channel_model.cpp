#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "xhap/channel_model.hpp"

using namespace xhap;
using namespace xhap::channel;

namespace {

ChannelParams static_channel(double mu_db, Modulation m = Modulation::QPSK) {
  ChannelParams p;
  p.mu_db = mu_db;
  p.sigma_sh_db = 0.0;
  p.fading = false;
  p.fec_g0_db = 0.0;
  p.diversity = 1;
  p.rho = 0.0;
  p.modulation = m;
  return p;
}

}  // namespace

TEST(Modulation, BitsPerSymbol) {
  EXPECT_EQ(bits_per_symbol(Modulation::BPSK), 1);
  EXPECT_EQ(bits_per_symbol(Modulation::QPSK), 2);
  EXPECT_EQ(bits_per_symbol(Modulation::QAM16), 4);
  EXPECT_EQ(modulation_from_string("QAM16"), Modulation::QAM16);
  EXPECT_THROW(modulation_from_string("64QAM"), ContractViolation);
}

TEST(FecGain, Examples) {
  EXPECT_DOUBLE_EQ(fec_gain(1.0, 10.0, 8.0), 0.0);
  EXPECT_NEAR(fec_gain(0.602, 10.0, 8.0), 3.184, 1e-12);
  EXPECT_DOUBLE_EQ(fec_gain(0.5, -10.0, 8.0), 0.0);
  EXPECT_NEAR(fec_gain(0.5, -5.0, 8.0), 2.0, 1e-12);
  EXPECT_THROW(fec_gain(0.0, 1.0, 8.0), ContractViolation);
}

TEST(FecGain, NonincreasingInRateAndSaturated) {
  for (double snr = -20.0; snr <= 20.0; snr += 0.5) {
    double prev = 1e9;
    for (double r = 0.05; r <= 1.0; r += 0.05) {
      const double g = fec_gain(r, snr, 8.0);
      EXPECT_LE(g, prev);
      prev = g;
    }
  }
  EXPECT_DOUBLE_EQ(fec_gain(0.3, -30.0, 8.0), fec_gain(0.3, -10.0, 8.0));
  EXPECT_DOUBLE_EQ(fec_gain(0.3, 0.0, 8.0), fec_gain(0.3, 45.0, 8.0));
}

TEST(Ber, Examples) {
  EXPECT_DOUBLE_EQ(ber(Modulation::QPSK, 0.0), 0.5);
  EXPECT_NEAR(ber(Modulation::QPSK, 1.0), 0.0786496035251425653, 1e-15);
  EXPECT_NEAR(ber(Modulation::QAM16, 1.0), 0.139160013571011585, 1e-15);
  EXPECT_THROW(ber(Modulation::QPSK, -1.0), ContractViolation);
}

TEST(Ber, MonotoneAndOrdered) {
  for (Modulation m : {Modulation::BPSK, Modulation::QPSK, Modulation::QAM16}) {
    double prev = 1.0;
    for (double g = 0.0; g < 60.0; g += 0.1) {
      const double b = ber(m, g);
      EXPECT_LE(b, prev);
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 0.5);
      prev = b;
    }
  }
  // The two expressions cross at gamma ~= 0.2223; above it QPSK is never worse.
  for (double g = 0.2223; g < 60.0; g += 0.01) EXPECT_LE(ber(Modulation::QPSK, g), ber(Modulation::QAM16, g));
  EXPECT_GT(ber(Modulation::QPSK, 0.2), ber(Modulation::QAM16, 0.2));
}

TEST(Per, Examples) {
  EXPECT_DOUBLE_EQ(per(0.0, 256), 0.0);
  EXPECT_DOUBLE_EQ(per(1.0, 256), 1.0);
  EXPECT_NEAR(per(1e-3, 256), 0.22595718113949172, 1e-14);
  EXPECT_THROW(per(1.5, 256), ContractViolation);
  EXPECT_THROW(per(0.1, 0), ContractViolation);
}

TEST(Per, MonotoneAndSingleBit) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double b = u(rng);
    EXPECT_NEAR(per(b, 1), b, 1e-15);
    EXPECT_LE(per(b, 10), per(b, 11));
    EXPECT_LE(per(b * 0.9, 64), per(b, 64));
  }
}

TEST(DiversityCombine, Examples) {
  const std::vector<double> a{1, 1, 1}, b{0, 0, 3}, empty;
  EXPECT_DOUBLE_EQ(diversity_combine(a), 1.0);
  EXPECT_DOUBLE_EQ(diversity_combine(b), 1.0);
  EXPECT_THROW(diversity_combine(empty), ContractViolation);
}

TEST(DiversityCombine, VarianceOfMeanOfRayleighBranches) {
  std::mt19937_64 rng(11);
  const int n = 1000000;
  double s1 = 0, q1 = 0, s3 = 0, q3 = 0;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> g{detail::rayleigh_power(rng), detail::rayleigh_power(rng),
                                detail::rayleigh_power(rng)};
    const double c = diversity_combine(g);
    s1 += g[0];
    q1 += g[0] * g[0];
    s3 += c;
    q3 += c * c;
  }
  const double v1 = q1 / n - (s1 / n) * (s1 / n);
  const double v3 = q3 / n - (s3 / n) * (s3 / n);
  EXPECT_NEAR(v3 / v1, 1.0 / 3.0, 0.01);
}

TEST(Goodput, Examples) {
  const auto g = goodput(Modulation::QPSK, 0.602, 20e6, 0.0);
  EXPECT_NEAR(g.goodput_bps, 24.08e6, 1e-6);
  EXPECT_NEAR(g.spectral_efficiency, 1.204, 1e-12);
  EXPECT_DOUBLE_EQ(goodput(Modulation::BPSK, 0.3, 5e6, 1.0).goodput_bps, 0.0);
  EXPECT_NEAR(goodput(Modulation::QAM16, 0.5, 1.0, 0.5).goodput_bps, 1.0, 1e-15);
}

TEST(StepSnr, AllRandomnessOffGivesMu) {
  for (int div : {1, 3}) {
    ChannelParams p;
    p.rho = 0.0;
    p.sigma_sh_db = 0.0;
    p.fading = false;
    p.diversity = div;
    LinkState s = LinkState::initial(p);
    for (int t = 0; t < 1000; ++t) {
      auto [next, smp] = step_snr(s, p);
      EXPECT_EQ(smp.snr_db, 20.0);
      EXPECT_NEAR(smp.gamma_lin, std::pow(10.0, smp.snr_eff_db / 10.0), 1e-12 * smp.gamma_lin);
      s = std::move(next);
    }
  }
}

TEST(StepSnr, HomogeneousDecay) {
  ChannelParams p;
  p.sigma_sh_db = 0.0;
  p.fading = false;
  p.diversity = 1;
  LinkState s = LinkState::initial(p);
  s.deviation_db[0] = 4.0;
  for (int t = 1; t <= 50; ++t) {
    auto [next, smp] = step_snr(s, p);
    EXPECT_NEAR(next.deviation_db[0], 4.0 * std::pow(0.95, t), 1e-12);
    EXPECT_NEAR(smp.snr_db, 20.0 + 4.0 * std::pow(0.95, t), 1e-12);
    s = std::move(next);
  }
}

TEST(StepSnr, StationaryStdMatchesClosedForm) {
  // Innovation Z = S + F with S ~ N(0, 16) and F = 10 log10(Exp(1)),
  // Var(F) = (10 / ln 10)^2 * pi^2 / 6.
  ChannelParams p;
  p.diversity = 1;
  LinkState s = LinkState::initial(p);
  const int n = 1000000;
  double sum = 0, sq = 0;
  for (int t = 0; t < n; ++t) {
    advance(s, p);
    const double x = s.deviation_db[0];
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double c = 10.0 / std::log(10.0);
  const double var_z = 16.0 + c * c * M_PI * M_PI / 6.0;
  const double expected = std::sqrt(var_z * (1.0 - 0.95) / (1.0 + 0.95));
  EXPECT_NEAR(sd, expected, 0.02 * expected);
  // Mean offset of the Rayleigh term, -gamma_E * 10 / ln 10 dB.
  EXPECT_NEAR(mean, -0.5772156649 * c, 0.05);
}

TEST(StepSnr, DiversityReducesDeviationSpread) {
  auto spread = [](int div) {
    ChannelParams p;
    p.diversity = div;
    p.sigma_sh_db = 0.0;
    LinkState s = LinkState::initial(p);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int t = 0; t < n; ++t) {
      const double v = advance(s, p).snr_db;
      sum += v;
      sq += v * v;
    }
    return std::sqrt(sq / n - (sum / n) * (sum / n));
  };
  EXPECT_LT(spread(3), spread(1));
}

TEST(SimulateLosses, Extremes) {
  EXPECT_EQ(simulate_losses(static_channel(60.0), 100000).raw_plr, 0.0);
  EXPECT_EQ(simulate_losses(static_channel(-20.0), 100000).raw_plr, 1.0);
  EXPECT_THROW(simulate_losses(static_channel(10.0), 0), ContractViolation);
}

TEST(SimulateLosses, RawPlrIsExactFraction) {
  ChannelParams p;
  p.mu_db = 8.0;
  const auto seq = simulate_losses(p, 12345);
  EXPECT_EQ(seq.mask.size(), 12345u);
  EXPECT_DOUBLE_EQ(seq.raw_plr, static_cast<double>(seq.lost_count()) / 12345.0);
}

TEST(SimulateLosses, BitReproducible) {
  ChannelParams p;
  p.mu_db = 9.0;
  p.seed = 99;
  const auto a = simulate_losses(p, 50000, true);
  const auto b = simulate_losses(p, 50000, true);
  EXPECT_EQ(a.mask, b.mask);
  for (std::size_t i = 0; i < a.per_step_snr.size(); ++i)
    ASSERT_EQ(a.per_step_snr[i].snr_db, b.per_step_snr[i].snr_db);
  p.seed = 100;
  EXPECT_NE(simulate_losses(p, 50000).mask, a.mask);
}

TEST(SimulateLosses, LossSetShrinksAsMuGrows) {
  ChannelParams p;
  p.mu_db = 6.0;
  const auto low = simulate_losses(p, 20000);
  p.mu_db = 7.5;
  const auto high = simulate_losses(p, 20000);
  for (std::size_t i = 0; i < low.mask.size(); ++i)
    if (high.mask[i]) {
      ASSERT_TRUE(low.mask[i]) << i;
    }
}

TEST(SimulateLosses, EmpiricalRateMatchesAnalyticPer) {
  for (Modulation m : {Modulation::QPSK, Modulation::QAM16}) {
    for (double gamma : {5.0, 10.0}) {
      const auto p = static_channel(linear_to_db(gamma), m);
      const double pe = per(ber(m, gamma), 256);
      const double n = 100000;
      const double sigma = std::sqrt(pe * (1.0 - pe) / n);
      const auto seq = simulate_losses(p, 100000);
      EXPECT_LE(std::abs(seq.raw_plr - pe), 3.0 * sigma + 1e-12) << to_string(m) << " " << gamma;
    }
  }
}

TEST(SimulateLosses, SnrDumpCsv) {
  ChannelParams p;
  const auto seq = simulate_losses(p, 10, true);
  const std::string path = ::testing::TempDir() + "snr.csv";
  write_snr_csv(path, seq);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,snr_db,snr_eff_db,ber,per,lost");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 10);
  EXPECT_THROW(write_snr_csv(path, simulate_losses(p, 10)), ContractViolation);
}
