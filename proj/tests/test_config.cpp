#include <gtest/gtest.h>

#include <fstream>

#include "xhap/config.hpp"

using namespace xhap;
using namespace xhap::config;

namespace {

std::string write_file(const std::string& name, const std::string& text) {
  const std::string path = ::testing::TempDir() + name;
  std::ofstream(path) << text;
  return path;
}

std::string error_of(const std::string& path, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(path, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const RunConfig c = parse_config(write_file("empty.cfg", ""));
  EXPECT_EQ(c.channel.rho, 0.95);
  EXPECT_EQ(c.channel.packet_bits, 256);
  EXPECT_EQ(c.restore.threshold, 0.1);
  EXPECT_EQ(c.experiments.target_plr, 1e-5);
  EXPECT_EQ(c.channel.modulation, channel::Modulation::QPSK);
  EXPECT_EQ(c.channel.code_rate, 0.602);
  EXPECT_EQ(c.train.epochs, 50);
  EXPECT_EQ(c.model.history_len, 64);
  EXPECT_EQ(dump(c), dump(RunConfig{}));
}

TEST(Config, CommentsAndWhitespace) {
  const auto path = write_file("c.cfg",
                               "# header\n\n  channel.mu_db = 12.5   # trailing\n"
                               "experiments.thresholds=0.05, 0.2\ntraces.activities = RBTap,DynTap\n");
  const RunConfig c = parse_config(path);
  EXPECT_EQ(c.channel.mu_db, 12.5);
  EXPECT_EQ(c.experiments.thresholds, (std::vector<double>{0.05, 0.2}));
  ASSERT_EQ(c.traces.activities.size(), 2u);
  EXPECT_EQ(c.traces.activities[0], traces::Activity::RBTap);
}

TEST(Config, RangeErrorNamesKeyAndLine) {
  const auto path = write_file("rho.cfg", "# ok\nchannel.rho = 1.5\n");
  const std::string e = error_of(path);
  EXPECT_NE(e.find("channel.rho"), std::string::npos) << e;
  EXPECT_NE(e.find(":2:"), std::string::npos) << e;
  EXPECT_NE(e.find("range"), std::string::npos) << e;
}

TEST(Config, UnknownKeyAndTypeErrors) {
  std::string e = error_of(write_file("u.cfg", "channel.mu = 3\n"));
  EXPECT_NE(e.find("unknown key 'channel.mu'"), std::string::npos) << e;
  EXPECT_NE(e.find(":1:"), std::string::npos) << e;
  e = error_of(write_file("t.cfg", "\n\n\ntrain.epochs = ten\n"));
  EXPECT_NE(e.find("train.epochs"), std::string::npos) << e;
  EXPECT_NE(e.find(":4:"), std::string::npos) << e;
  e = error_of(write_file("f.cfg", "channel.fading = maybe\n"));
  EXPECT_NE(e.find("channel.fading"), std::string::npos) << e;
  e = error_of(write_file("m.cfg", "channel.modulation = QAM64\n"));
  EXPECT_NE(e.find("channel.modulation"), std::string::npos) << e;
  e = error_of(write_file("n.cfg", "channel.mu_db\n"));
  EXPECT_NE(e.find("section.key = value"), std::string::npos) << e;
  e = error_of(write_file("i.cfg", "experiments.steps = 1.5\n"));
  EXPECT_NE(e.find("experiments.steps"), std::string::npos) << e;
  e = error_of(write_file("x.cfg", "model.latent = 30\nmodel.heads = 8\n"));
  EXPECT_NE(e.find("divisible"), std::string::npos) << e;
  EXPECT_THROW(parse_config("/nonexistent/file.cfg"), ConfigError);
}

TEST(Config, OverridesWinOverFile) {
  const auto path = write_file("o.cfg", "experiments.steps = 5000\n");
  EXPECT_EQ(parse_config(path).experiments.steps, 5000u);
  const RunConfig c = parse_config(path, {"experiments.steps=100000"});
  EXPECT_EQ(c.experiments.steps, 100000u);
  const std::string e = error_of(path, {"experiments.steps=0"});
  EXPECT_NE(e.find("--set #1"), std::string::npos) << e;
  EXPECT_NE(e.find("experiments.steps"), std::string::npos) << e;
  EXPECT_NE(error_of(path, {"nonsense"}).find("key=value"), std::string::npos);
}

TEST(Config, DumpRoundTrips) {
  const RunConfig c = parse_config("", {"channel.mu_db=0.1", "link.fc_ghz=3.5", "train.lr0=0.0003",
                                        "experiments.mcs_list=QAM16@0.75, BPSK@0.3", "restore.criterion=relative",
                                        "experiments.bandwidths_hz=5e6,1.25e7", "run.seed=18446744073709551615"});
  const std::string text = dump(c);
  EXPECT_NE(text.find("channel.mu_db = 0.1\n"), std::string::npos);
  const RunConfig back = parse_config(write_file("rt.cfg", text));
  EXPECT_EQ(back.experiments.bandwidths_hz, (std::vector<double>{5e6, 1.25e7}));
  EXPECT_EQ(dump(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_NE(config_hash(c), config_hash(RunConfig{}));
  EXPECT_EQ(back.seed, 18446744073709551615ull);
}

TEST(Config, EveryKeyIsListedOnce) {
  const auto& keys = registry();
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t j = i + 1; j < keys.size(); ++j) EXPECT_NE(keys[i].name, keys[j].name);
  EXPECT_GE(keys.size(), 30u);
}
