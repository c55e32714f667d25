#pragma once

// Training of the cross-attention estimator: composite MSE + relative loss
// over an H-step teacher-forced rollout, reverse-mode gradients, Adam and a
// step learning-rate schedule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xhap/common.hpp"
#include "xhap/estimator.hpp"
#include "xhap/haptic_traces.hpp"

namespace xhap::training {

using estimator::ForwardCache;
using estimator::GruCache;
using estimator::GruParams;
using estimator::XhapModel;
using traces::SequenceData;

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double lambda_mse = 0.5;
  double lambda_rel = 0.5;
  double tau = 0.01;
};

struct LossParts {
  double total = 0.0;
  double mse = 0.0;
  double rel = 0.0;
};

struct LossResult {
  LossParts parts;
  RowMatrix grad;  ///< d total / d pred, same shape as pred
};

/// lambda_mse * mean squared error + lambda_rel * mean relative error over
/// the entries whose true magnitude exceeds tau (zero when there are none).
inline LossResult composite_loss(const RowMatrix& pred, const RowMatrix& truth,
                                 const LossWeights& w) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(),
          "composite_loss: shape mismatch");
  require(w.tau > 0.0, "composite_loss: tau must be > 0");
  const double count = static_cast<double>(pred.size());
  LossResult res{{}, RowMatrix::Zero(pred.rows(), pred.cols())};
  std::size_t selected = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j)
      if (std::abs(truth(i, j)) > w.tau) ++selected;

  double sq = 0.0, rel = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const double diff = pred(i, j) - truth(i, j);
      sq += diff * diff;
      res.grad(i, j) = w.lambda_mse * 2.0 * diff / count;
      if (std::abs(truth(i, j)) > w.tau) {
        const double mag = std::abs(truth(i, j));
        rel += std::abs(diff) / mag;
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        res.grad(i, j) += w.lambda_rel * sign / (mag * static_cast<double>(selected));
      }
    }
  }
  res.parts.mse = sq / count;
  res.parts.rel = selected > 0 ? rel / static_cast<double>(selected) : 0.0;
  res.parts.total = w.lambda_mse * res.parts.mse + w.lambda_rel * res.parts.rel;
  return res;
}

/// Linear teacher-forcing decay 1 - e/E.
inline double teacher_forcing_prob(int epoch, int total_epochs) {
  require(total_epochs >= 1 && epoch >= 0 && epoch <= total_epochs,
          "teacher_forcing_prob: epoch outside [0, E]");
  return 1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs);
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Backpropagates d loss / d h_t (rows of dh_out) through the GRU. Adds the
/// parameter gradients to `g`; writes d loss / d x into `dx` when given.
inline void gru_backward(const GruParams& p, const GruCache& c, const RowMatrix& dh_out,
                         GruParams& g, RowMatrix* dx) {
  const Eigen::Index len = c.z.rows();
  const Eigen::Index d = c.z.cols();
  RowMatrix a_in(len, 3 * d), a_hid(len, 3 * d);
  Vector dh_next = Vector::Zero(d);
  for (Eigen::Index t = len - 1; t >= 0; --t) {
    const Eigen::ArrayXd dh = dh_out.row(t).transpose().array() + dh_next.array();
    const Eigen::ArrayXd z = c.z.row(t).transpose().array();
    const Eigen::ArrayXd r = c.r.row(t).transpose().array();
    const Eigen::ArrayXd n = c.n.row(t).transpose().array();
    const Eigen::ArrayXd hn = c.hn.row(t).transpose().array();
    const Eigen::ArrayXd h_prev = c.h.row(t).transpose().array();

    const Eigen::ArrayXd dn_pre = dh * (1.0 - z) * (1.0 - n * n);
    const Eigen::ArrayXd dz_pre = dh * (h_prev - n) * z * (1.0 - z);
    const Eigen::ArrayXd dr_pre = dn_pre * hn * r * (1.0 - r);

    a_in.row(t).segment(0, d) = dz_pre.transpose();
    a_in.row(t).segment(d, d) = dr_pre.transpose();
    a_in.row(t).segment(2 * d, d) = dn_pre.transpose();
    a_hid.row(t).segment(0, d) = dz_pre.transpose();
    a_hid.row(t).segment(d, d) = dr_pre.transpose();
    a_hid.row(t).segment(2 * d, d) = (dn_pre * r).transpose();

    dh_next = (dh * z).matrix();
    dh_next.noalias() += p.w_hid.transpose() * a_hid.row(t).transpose();
  }
  g.w_in.noalias() += a_in.transpose() * c.x;
  g.b_in += a_in.colwise().sum().transpose();
  g.w_hid.noalias() += a_hid.transpose() * c.h.topRows(len);
  g.b_hid += a_hid.colwise().sum().transpose();
  if (dx) *dx = a_in * p.w_in;
}

/// Reverse pass of one forward_normalized() call. `dy` is d loss / d output
/// in normalized units. Optionally returns d loss / d x_top (normalized).
inline void backward_normalized(const XhapModel& m, const ForwardCache& c, const Vec3& dy,
                                XhapModel& g, RowMatrix* dx_top) {
  const auto& head = m.head;
  const Eigen::Index d = m.config.latent;

  // Prediction head.
  const Vector v = c.u.cwiseMax(0.0);
  g.head.w2.noalias() += dy * v.transpose();
  g.head.b2 += dy;
  Vector du = head.w2.transpose() * dy;
  for (Eigen::Index i = 0; i < du.size(); ++i)
    if (c.u(i) <= 0.0) du(i) = 0.0;
  g.head.w1.noalias() += du * c.z.transpose();
  g.head.b1 += du;
  const Vector dz = head.w1.transpose() * du;
  Vector dr_top = dz.head(d);
  const Vector da = dz.tail(d);

  // Attention.
  const auto& ap = m.attention;
  const auto& ac = c.attn;
  const Eigen::Index dh = d / ap.heads;
  const Eigen::Index len = ac.k.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.attention.w_o.noalias() += da * ac.concat.transpose();
  const Vector dc = ap.w_o.transpose() * da;
  Vector dq(d);
  RowMatrix dk(len, d), dv(len, d);
  for (int i = 0; i < ap.heads; ++i) {
    const Eigen::Index off = i * dh;
    const Vector alpha = ac.alpha.row(i).transpose();
    const Vector dai = dc.segment(off, dh);
    dv.middleCols(off, dh).noalias() = alpha * dai.transpose();
    const Vector dalpha = ac.v.middleCols(off, dh) * dai;
    const Vector ds = (alpha.array() * (dalpha.array() - alpha.dot(dalpha))).matrix();
    dq.segment(off, dh) = ac.k.middleCols(off, dh).transpose() * ds * scale;
    dk.middleCols(off, dh).noalias() = ds * ac.q.segment(off, dh).transpose() * scale;
  }
  g.attention.w_q.noalias() += dq * ac.query_in.transpose();
  dr_top.noalias() += ap.w_q.transpose() * dq;
  g.attention.w_k.noalias() += dk.transpose() * ac.keys_in;
  g.attention.w_v.noalias() += dv.transpose() * ac.keys_in;
  RowMatrix ds_op = dk * ap.w_k;
  ds_op.noalias() += dv * ap.w_v;

  // Encoders.
  gru_backward(m.gru_op, c.op, ds_op, g.gru_op, nullptr);
  RowMatrix ds_top = RowMatrix::Zero(c.top.z.rows(), d);
  ds_top.row(ds_top.rows() - 1) = dr_top.transpose();
  gru_backward(m.gru_top, c.top, ds_top, g.gru_top, dx_top);
}

// ---------------------------------------------------------------------------
// Rollout loss on trace segments

/// A training example: the history ends at trace index `t`; the rollout
/// predicts forces t+1 .. t+H.
struct Segment {
  const SequenceData* data = nullptr;
  std::size_t t = 0;
};

/// Teacher-forcing decisions for one example: entry k says whether the
/// force fed back after rollout step k is the ground truth (true) or the
/// model's own estimate (false). Size H-1.
using TeacherMask = std::vector<std::uint8_t>;

/// Forward + reverse pass of one H-step rollout. Gradients are scaled by
/// `scale` and added to `grad`. Gradients flow through fed-back estimates.
inline LossParts rollout_loss_and_gradient(const XhapModel& m, const Segment& seg,
                                           const TeacherMask& mask, int horizon,
                                           const LossWeights& w, double scale, XhapModel* grad) {
  const int len = m.config.history_len;
  const auto& data = *seg.data;
  require(horizon >= 1, "rollout: horizon must be >= 1");
  require(mask.size() + 1 >= static_cast<std::size_t>(horizon), "rollout: teacher mask too short");
  require(seg.t + 1 >= static_cast<std::size_t>(len) &&
              seg.t + static_cast<std::size_t>(horizon) < data.size(),
          "rollout: segment outside the trace");
  const auto& nm = m.norm;
  const auto start = static_cast<Eigen::Index>(seg.t) - len + 1;

  // Extended force history: L truth rows followed by H-1 fed-back rows.
  RowMatrix ext(len + horizon - 1, 3);
  ext.topRows(len) = data.force.middleRows(start, len);
  RowMatrix pred(horizon, 3);
  const RowMatrix truth = data.force.middleRows(start + len, horizon);
  std::vector<ForwardCache> caches(grad ? static_cast<std::size_t>(horizon) : 0);

  for (int k = 0; k < horizon; ++k) {
    const RowMatrix xt = estimator::normalize_force(nm, ext.middleRows(k, len));
    const RowMatrix xo = estimator::normalize_op(nm, data.op.middleRows(start + k, len));
    const Vec3 yn = estimator::forward_normalized(m, xt, xo, grad ? &caches[k] : nullptr);
    const Vec3 y = (yn.array() * nm.force_std.array() + nm.force_mean.array()).matrix();
    pred.row(k) = y.transpose();
    if (k + 1 < horizon) {
      if (mask[k]) {
        ext.row(len + k) = truth.row(k);
      } else {
        ext.row(len + k) = pred.row(k);
      }
    }
  }

  LossResult loss = composite_loss(pred, truth, w);
  if (!grad) return loss.parts;

  RowMatrix dext = RowMatrix::Zero(ext.rows(), 3);
  for (int k = horizon - 1; k >= 0; --k) {
    Vec3 dy = loss.grad.row(k).transpose() * scale;
    if (k + 1 < horizon && !mask[k]) dy += dext.row(len + k).transpose();
    const Vec3 dyn = (dy.array() * nm.force_std.array()).matrix();
    const bool need_dx = k > 0;
    RowMatrix dxt;
    backward_normalized(m, caches[k], dyn, *grad, need_dx ? &dxt : nullptr);
    if (need_dx) {
      for (int c = 0; c < 3; ++c) dxt.col(c) /= nm.force_std[c];
      dext.middleRows(k, len) += dxt;
    }
  }
  return loss.parts;
}

struct BatchResult {
  LossParts loss;  ///< mean over the batch
  XhapModel grad;  ///< gradient of the mean loss
};

/// Mean loss and its exact gradient over a batch; examples are reduced in
/// order, so the result does not depend on scheduling.
inline BatchResult batch_gradient(const XhapModel& m, std::span<const Segment> batch,
                                  std::span<const TeacherMask> masks, int horizon,
                                  const LossWeights& w) {
  require(!batch.empty(), "gradient: empty batch");
  require(batch.size() == masks.size(), "gradient: one teacher mask per example required");
  BatchResult res{{}, XhapModel::zeros(m.config)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LossParts p = rollout_loss_and_gradient(m, batch[i], masks[i], horizon, w, scale, &res.grad);
    res.loss.total += p.total * scale;
    res.loss.mse += p.mse * scale;
    res.loss.rel += p.rel * scale;
  }
  if (!std::isfinite(res.loss.total)) throw TrainingError("non-finite training loss");
  for (const auto& t : res.grad.tensors()) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      if (!std::isfinite(t.data[i])) throw TrainingError("non-finite gradient in tensor " + t.name);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Configuration, optimizer and the training loop

struct TrainConfig {
  int epochs = 50;
  int batch_size = 64;
  double lr0 = 1e-3;
  int lr_step = 10;
  double lr_gamma = 0.5;
  double lambda_mse = 0.5;
  double lambda_rel = 0.5;
  double tau = 0.01;
  int rollout_horizon = 5;
  std::uint64_t seed = 1;
  int windows_per_epoch = 4096;  ///< training windows sampled per epoch
  int val_windows = 2048;        ///< validation windows, evenly spaced
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_loss = 1e6;

  LossWeights weights() const { return {lambda_mse, lambda_rel, tau}; }

  void validate() const {
    require(epochs >= 1, "train: epochs must be >= 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(lr0 > 0.0, "train: lr0 must be > 0");
    require(lr_step >= 1, "train: lr_step must be >= 1");
    require(lr_gamma > 0.0 && lr_gamma <= 1.0, "train: lr_gamma must lie in (0,1]");
    require(tau > 0.0, "train: tau must be > 0");
    require(rollout_horizon >= 1, "train: rollout_horizon must be >= 1");
    require(windows_per_epoch >= 1 && val_windows >= 1, "train: window counts must be >= 1");
  }
};

/// Step schedule: lr0 * gamma^floor(epoch / step).
inline double learning_rate(const TrainConfig& c, int epoch) {
  return c.lr0 * std::pow(c.lr_gamma, epoch / c.lr_step);
}

class Adam {
public:
  Adam(const XhapModel& like, double beta1, double beta2, double eps)
      : m_(XhapModel::zeros(like.config)), v_(XhapModel::zeros(like.config)), beta1_(beta1),
        beta2_(beta2), eps_(eps) {}

  void step(XhapModel& params, const XhapModel& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto p = params.tensors();
    const auto g = grad.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (Eigen::Index i = 0; i < p[k].size(); ++i) {
        const double gi = g[k].data[i];
        m[k].data[i] = beta1_ * m[k].data[i] + (1.0 - beta1_) * gi;
        v[k].data[i] = beta2_ * v[k].data[i] + (1.0 - beta2_) * gi * gi;
        p[k].data[i] -= lr * (m[k].data[i] / c1) / (std::sqrt(v[k].data[i] / c2) + eps_);
      }
    }
  }

private:
  XhapModel m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Per-channel z-score statistics of the training split.
inline estimator::Normalization compute_normalization(
    std::span<const std::shared_ptr<const SequenceData>> train) {
  estimator::Normalization n;
  Eigen::Matrix<double, 1, 9> sum = Eigen::Matrix<double, 1, 9>::Zero();
  Eigen::Matrix<double, 1, 9> sq = Eigen::Matrix<double, 1, 9>::Zero();
  double count = 0.0;
  for (const auto& d : train) {
    for (Eigen::Index i = 0; i < d->force.rows(); ++i) {
      Eigen::Matrix<double, 1, 9> row;
      row << d->force.row(i), d->op.row(i);
      sum += row;
      sq += row.cwiseProduct(row);
    }
    count += static_cast<double>(d->force.rows());
  }
  require(count > 1.0, "compute_normalization: empty training split");
  const Eigen::Matrix<double, 1, 9> mean = sum / count;
  Eigen::Matrix<double, 1, 9> var = sq / count - mean.cwiseProduct(mean);
  for (int c = 0; c < 9; ++c) {
    const double s = var[c] > 1e-12 ? std::sqrt(var[c]) : 1.0;
    if (c < 3) {
      n.force_mean[c] = mean[c];
      n.force_std[c] = s;
    } else {
      n.op_mean[c - 3] = mean[c];
      n.op_std[c - 3] = s;
    }
  }
  return n;
}

/// All admissible rollout starts of a set of traces.
inline std::vector<Segment> make_segments(std::span<const std::shared_ptr<const SequenceData>> set,
                                          int history_len, int horizon) {
  std::vector<Segment> out;
  for (const auto& d : set) {
    const std::size_t lo = static_cast<std::size_t>(history_len) - 1;
    for (std::size_t t = lo; t + static_cast<std::size_t>(horizon) < d->size(); ++t)
      out.push_back({d.get(), t});
  }
  return out;
}

/// Evenly spaced subset of `n` elements.
inline std::vector<Segment> spaced_subset(const std::vector<Segment>& all, std::size_t n) {
  if (all.size() <= n) return all;
  std::vector<Segment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(all[i * all.size() / n]);
  return out;
}

/// One-step mean squared error (N^2) over channels and windows.
inline double one_step_mse(const XhapModel& m, std::span<const Segment> windows) {
  require(!windows.empty(), "one_step_mse: no windows");
  const int len = m.config.history_len;
  double sum = 0.0;
  for (const auto& s : windows) {
    const auto start = static_cast<Eigen::Index>(s.t) - len + 1;
    const Vec3 y = estimator::xhap_forward(m, s.data->force.middleRows(start, len),
                                           s.data->op.middleRows(start, len));
    sum += (y - s.data->force.row(start + len).transpose()).squaredNorm() / 3.0;
  }
  return sum / static_cast<double>(windows.size());
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double eps = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double initial_val_mse = 0.0;
  int best_epoch = -1;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
};

inline std::vector<TeacherMask> draw_teacher_masks(std::size_t count, int horizon, double eps,
                                                   std::mt19937_64& rng) {
  std::bernoulli_distribution coin(std::clamp(eps, 0.0, 1.0));
  std::vector<TeacherMask> masks(count, TeacherMask(static_cast<std::size_t>(std::max(0, horizon - 1))));
  for (auto& mk : masks)
    for (auto& b : mk) b = coin(rng) ? 1 : 0;
  return masks;
}

/// Batch gradient with teacher-forcing decisions drawn for `epoch`.
inline BatchResult gradient(const XhapModel& m, std::span<const Segment> batch,
                            const TrainConfig& cfg, int epoch, std::mt19937_64& rng) {
  const double eps = teacher_forcing_prob(epoch, cfg.epochs);
  const auto masks = draw_teacher_masks(batch.size(), cfg.rollout_horizon, eps, rng);
  return batch_gradient(m, batch, masks, cfg.rollout_horizon, cfg.weights());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from `init` (normalization must already be set) and returns the
/// parameters of the epoch with the lowest validation MSE.
inline std::pair<XhapModel, TrainHistory> train(
    const XhapModel& init, std::span<const std::shared_ptr<const SequenceData>> train_set,
    std::span<const std::shared_ptr<const SequenceData>> val_set, const TrainConfig& cfg,
    const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const int len = init.config.history_len;
  const auto train_segments = make_segments(train_set, len, cfg.rollout_horizon);
  const auto val_segments =
      spaced_subset(make_segments(val_set, len, 1), static_cast<std::size_t>(cfg.val_windows));
  require(!train_segments.empty(), "train: no admissible training windows");
  require(!val_segments.empty(), "train: no admissible validation windows");

  XhapModel model = init;
  XhapModel best = init;
  TrainHistory hist;
  hist.adam_beta1 = cfg.adam_beta1;
  hist.adam_beta2 = cfg.adam_beta2;
  hist.adam_eps = cfg.adam_eps;
  hist.initial_val_mse = one_step_mse(model, val_segments);
  double best_val = std::numeric_limits<double>::infinity();

  Adam adam(model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_segments.size());
  const std::size_t per_epoch =
      std::min(order.size(), static_cast<std::size_t>(cfg.windows_per_epoch));

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = learning_rate(cfg, e);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first per_epoch entries become a uniform sample.
    for (std::size_t i = 0; i < per_epoch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<Segment> batch;
    for (std::size_t i = 0; i < per_epoch; i += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t j = i; j < std::min(per_epoch, i + static_cast<std::size_t>(cfg.batch_size)); ++j)
        batch.push_back(train_segments[order[j]]);
      BatchResult br = gradient(model, batch, cfg, e, rng);
      if (br.loss.total > cfg.divergence_loss)
        throw TrainingError("training diverged: loss " + fmt9(br.loss.total) + " at epoch " +
                            std::to_string(e));
      adam.step(model, br.grad, lr);
      loss_sum += br.loss.total;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
    rec.val_mse = one_step_mse(model, val_segments);
    rec.eps = teacher_forcing_prob(e, cfg.epochs);
    rec.lr = lr;
    hist.epochs.push_back(rec);
    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      best = model;
      hist.best_epoch = e;
    }
    if (on_epoch) on_epoch(rec);
  }
  return {best, hist};
}

inline void write_train_log_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,val_mse,eps,lr\n";
  for (const auto& r : h.epochs)
    out << r.epoch << ',' << fmt9(r.train_loss) << ',' << fmt9(r.val_mse) << ',' << fmt9(r.eps)
        << ',' << fmt9(r.lr) << '\n';
}

}  // namespace xhap::training
