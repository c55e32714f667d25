#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "xhap/training.hpp"

using namespace xhap;
using namespace xhap::training;
using estimator::ModelConfig;

namespace {

ModelConfig small_config(int latent, int heads, int len, int hidden) {
  ModelConfig c;
  c.latent = latent;
  c.heads = heads;
  c.history_len = len;
  c.hidden = hidden;
  return c;
}

// Random smooth-ish sequence with some force entries near zero so the
// relative-loss selection is exercised.
std::shared_ptr<const SequenceData> random_sequence(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto d = std::make_shared<SequenceData>();
  d->force.resize(static_cast<Eigen::Index>(n), 3);
  d->op.resize(static_cast<Eigen::Index>(n), 6);
  for (Eigen::Index i = 0; i < d->force.rows(); ++i) {
    for (int c = 0; c < 3; ++c) d->force(i, c) = (c == 1 && i % 3 == 0) ? 0.001 * g(rng) : 0.8 * g(rng);
    for (int c = 0; c < 6; ++c) d->op(i, c) = 0.05 * g(rng);
  }
  return d;
}

XhapModel tiny_model(std::uint64_t seed) {
  XhapModel m = XhapModel::initialize(small_config(8, 2, 4, 6), seed);
  // Scale up so gradients are not vanishingly small and the ReLU layer has
  // both active and inactive units.
  for (auto& t : m.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] *= 2.0;
  m.norm.force_mean = Vec3(0.1, -0.05, 0.2);
  m.norm.force_std = Vec3(0.9, 0.7, 1.3);
  m.norm.op_mean.setConstant(0.01);
  m.norm.op_std.setConstant(0.06);
  return m;
}

double batch_loss(const XhapModel& m, const std::vector<Segment>& batch,
                  const std::vector<TeacherMask>& masks, int horizon, const LossWeights& w) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += rollout_loss_and_gradient(m, batch[i], masks[i], horizon, w, 1.0, nullptr).total;
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST(CompositeLoss, Examples) {
  const LossWeights w;
  RowMatrix truth(1, 3), pred(1, 3);
  truth << 1.0, 0.0, 0.0;
  pred << 1.1, 0.0, 0.0;
  const auto r = composite_loss(pred, truth, w);
  EXPECT_NEAR(r.parts.mse, 0.01 / 3.0, 1e-15);
  EXPECT_NEAR(r.parts.rel, 0.1, 1e-15);
  EXPECT_NEAR(r.parts.total, 0.0516666666666667, 1e-12);
  EXPECT_EQ(composite_loss(truth, truth, w).parts.total, 0.0);

  RowMatrix small(2, 3);
  small << 0.005, -0.01, 0.0, 0.002, 0.0, -0.003;
  RowMatrix p2 = small.array() + 0.5;
  const auto s = composite_loss(p2, small, w);
  EXPECT_EQ(s.parts.rel, 0.0);
  EXPECT_DOUBLE_EQ(s.parts.total, 0.5 * s.parts.mse);
}

TEST(CompositeLoss, DecompositionAndExclusion) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  const LossWeights w{0.3, 0.7, 0.05};
  for (int k = 0; k < 100; ++k) {
    RowMatrix truth(5, 3), pred(5, 3);
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
      truth.data()[i] = (i % 4 == 0) ? 0.01 * g(rng) : g(rng);
      pred.data()[i] = g(rng);
    }
    const auto r = composite_loss(pred, truth, w);
    EXPECT_NEAR(r.parts.total, w.lambda_mse * r.parts.mse + w.lambda_rel * r.parts.rel, 1e-12);
    RowMatrix perturbed = truth;
    for (Eigen::Index i = 0; i < perturbed.size(); ++i)
      if (std::abs(perturbed.data()[i]) <= w.tau) perturbed.data()[i] = w.tau * 0.5 * g(rng) / 4.0;
    for (Eigen::Index i = 0; i < perturbed.size(); ++i)
      if (std::abs(perturbed.data()[i]) > w.tau && std::abs(truth.data()[i]) <= w.tau)
        perturbed.data()[i] = truth.data()[i];
    EXPECT_DOUBLE_EQ(composite_loss(pred, perturbed, w).parts.rel, r.parts.rel);
  }
}

TEST(CompositeLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix truth(4, 3), pred(4, 3);
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    truth.data()[i] = g(rng);
    pred.data()[i] = g(rng);
  }
  const LossWeights w;
  const auto r = composite_loss(pred, truth, w);
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    RowMatrix a = pred, b = pred;
    a.data()[i] += 1e-6;
    b.data()[i] -= 1e-6;
    const double fd = (composite_loss(a, truth, w).parts.total - composite_loss(b, truth, w).parts.total) / 2e-6;
    EXPECT_NEAR(r.grad.data()[i], fd, 1e-7);
  }
}

TEST(TeacherForcing, LinearDecay) {
  EXPECT_EQ(teacher_forcing_prob(0, 50), 1.0);
  EXPECT_EQ(teacher_forcing_prob(50, 50), 0.0);
  EXPECT_EQ(teacher_forcing_prob(25, 50), 0.5);
  EXPECT_THROW(teacher_forcing_prob(51, 50), ContractViolation);
}

TEST(LearningRate, StepSchedule) {
  const TrainConfig c;
  EXPECT_EQ(learning_rate(c, 0), 1e-3);
  EXPECT_EQ(learning_rate(c, 9), 1e-3);
  EXPECT_EQ(learning_rate(c, 10), 5e-4);
  EXPECT_EQ(learning_rate(c, 25), 1e-3 * 0.25);
  EXPECT_EQ(learning_rate(c, 49), 1e-3 / 16.0);
}

TEST(Gradient, MatchesCentralFiniteDifferences) {
  const XhapModel m = tiny_model(5);
  const auto data = random_sequence(40, 9);
  const int horizon = 3;
  const std::vector<Segment> batch{{data.get(), 5}, {data.get(), 17}, {data.get(), 30}};
  const std::vector<TeacherMask> masks{{0, 0}, {1, 0}, {0, 1}};
  const LossWeights w;
  const BatchResult br = batch_gradient(m, batch, masks, horizon, w);
  EXPECT_NEAR(br.loss.total, batch_loss(m, batch, masks, horizon, w), 1e-13);

  XhapModel probe = m;
  auto params = probe.tensors();
  const auto grads = br.grad.tensors();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].size(); ++i) {
      double& x = params[k].data[i];
      const double saved = x;
      x = saved + h;
      const double up = batch_loss(probe, batch, masks, horizon, w);
      x = saved - h;
      const double down = batch_loss(probe, batch, masks, horizon, w);
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads[k].data[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
      EXPECT_LE(rel, 1e-4) << params[k].name << "[" << i << "] analytic " << an << " fd " << fd;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Gradient, ZeroLossGivesZeroOutputBiasGradient) {
  XhapModel m = tiny_model(6);
  m.head.w2.setZero();
  m.head.b2 = Vec3(0.4, -0.2, 0.1);
  auto data = std::make_shared<SequenceData>(*random_sequence(20, 1));
  const Vec3 target = (m.head.b2.array() * m.norm.force_std.array() + m.norm.force_mean.array()).matrix();
  data->force.row(8) = target.transpose();
  const std::vector<Segment> batch{{data.get(), 7}};
  const std::vector<TeacherMask> masks{{}};
  const BatchResult br = batch_gradient(m, batch, masks, 1, LossWeights{});
  EXPECT_LT(br.loss.total, 1e-24);
  EXPECT_LT(br.grad.head.b2.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradient, LinearInMseWeight) {
  const XhapModel m = tiny_model(7);
  const auto data = random_sequence(30, 2);
  const std::vector<Segment> batch{{data.get(), 6}, {data.get(), 20}};
  const std::vector<TeacherMask> masks{{0}, {1}};
  const BatchResult one = batch_gradient(m, batch, masks, 2, LossWeights{0.5, 0.5, 1e9});
  const BatchResult two = batch_gradient(m, batch, masks, 2, LossWeights{1.0, 0.5, 1e9});
  const auto a = one.grad.tensors();
  const auto b = two.grad.tensors();
  for (std::size_t k = 0; k < a.size(); ++k)
    for (Eigen::Index i = 0; i < a[k].size(); ++i)
      EXPECT_NEAR(b[k].data[i], 2.0 * a[k].data[i], 1e-12 * std::max(1.0, std::abs(a[k].data[i])));
}

TEST(Gradient, NonFiniteNamesTensor) {
  XhapModel m = tiny_model(8);
  m.head.w1(0, 0) = std::numeric_limits<double>::infinity();
  const auto data = random_sequence(20, 3);
  const std::vector<Segment> batch{{data.get(), 6}};
  const std::vector<TeacherMask> masks{{}};
  EXPECT_THROW(batch_gradient(m, batch, masks, 1, LossWeights{}), TrainingError);
  EXPECT_THROW(batch_gradient(m, {}, {}, 1, LossWeights{}), ContractViolation);
}

TEST(Gradient, NonFiniteGradientNamesTensor) {
  XhapModel m = tiny_model(8);
  const auto data = random_sequence(20, 3);
  const std::vector<Segment> batch{{data.get(), 6}};
  const std::vector<TeacherMask> masks{{}};
  m.attention.w_o(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    batch_gradient(m, batch, masks, 1, LossWeights{});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Train, SingleStepDecreasesLossForMostSeeds) {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const XhapModel m = tiny_model(seed);
    const auto data = random_sequence(200, seed + 50);
    std::vector<Segment> batch;
    for (std::size_t t = 10; t < 190; t += 12) batch.push_back({data.get(), t});
    const std::vector<TeacherMask> masks(batch.size(), TeacherMask(4, 1));
    const LossWeights w;
    const BatchResult br = batch_gradient(m, batch, masks, 5, w);
    XhapModel next = m;
    Adam adam(next, 0.9, 0.999, 1e-8);
    adam.step(next, br.grad, 1e-3);
    if (batch_loss(next, batch, masks, 5, w) < br.loss.total) ++improved;
  }
  EXPECT_GE(improved, 3);
}

TEST(Train, HistoryScheduleAndDeterminism) {
  const std::vector<std::shared_ptr<const SequenceData>> tr{random_sequence(300, 1), random_sequence(300, 2)};
  const std::vector<std::shared_ptr<const SequenceData>> va{random_sequence(200, 3)};
  XhapModel init = XhapModel::initialize(small_config(8, 2, 8, 6), 4);
  init.norm = compute_normalization(tr);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 8;
  cfg.windows_per_epoch = 32;
  cfg.val_windows = 50;
  cfg.rollout_horizon = 3;
  cfg.seed = 11;
  const auto [m1, h1] = train(init, tr, va, cfg);
  const auto [m2, h2] = train(init, tr, va, cfg);
  ASSERT_EQ(h1.epochs.size(), 12u);
  for (const auto& r : h1.epochs) {
    EXPECT_EQ(r.eps, teacher_forcing_prob(r.epoch, 12));
    EXPECT_EQ(r.lr, learning_rate(cfg, r.epoch));
  }
  EXPECT_EQ(h1.epochs[10].lr, 5e-4);
  EXPECT_EQ(h1.adam_beta2, 0.999);
  double best = 1e300;
  for (const auto& r : h1.epochs) best = std::min(best, r.val_mse);
  EXPECT_EQ(h1.epochs[static_cast<std::size_t>(h1.best_epoch)].val_mse, best);

  const std::string a = ::testing::TempDir() + "d1.ckpt", b = ::testing::TempDir() + "d2.ckpt";
  estimator::save_checkpoint(a, m1);
  estimator::save_checkpoint(b, m2);
  std::ifstream fa(a), fb(b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Train, NormalizationUsesTrainingSplit) {
  const std::vector<std::shared_ptr<const SequenceData>> tr{random_sequence(5000, 1)};
  const auto n = compute_normalization(tr);
  EXPECT_NEAR(n.force_std[0], 0.8, 0.05);
  EXPECT_NEAR(n.op_std[3], 0.05, 0.005);
  EXPECT_NEAR(n.force_mean[2], 0.0, 0.05);
}

TEST(Train, LogCsv) {
  TrainHistory h;
  h.epochs.push_back({0, 1.5, 0.25, 1.0, 1e-3});
  const std::string path = ::testing::TempDir() + "log.csv";
  write_train_log_csv(path, h);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,train_loss,val_mse,eps,lr");
  EXPECT_EQ(row, "0,1.5,0.25,1,0.001");
}
