#pragma once

// Cross-attention GRU force estimator: two GRU encoders (teleoperator force
// history, operator motion), multi-head attention with the final force
// encoding as the single query, and a two-layer ReLU head.
//
// The forward pass keeps optional caches so that training.hpp can run the
// reverse pass without recomputation.

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xhap/common.hpp"

namespace xhap::estimator {

struct ModelConfig {
  int history_len = 64;
  int d_top = 3;
  int d_op = 6;
  int latent = 128;
  int heads = 8;
  int hidden = 32;

  int head_dim() const { return latent / heads; }

  void validate() const {
    require(history_len >= 1, "model: history_len must be >= 1");
    require(d_top == 3, "model: d_top must be 3");
    require(d_op == 6, "model: d_op must be 6");
    require(latent >= 1 && heads >= 1 && latent % heads == 0,
            "model: latent must be a positive multiple of heads");
    require(hidden >= 1, "model: hidden must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// GRU weights; gate blocks are stacked in the order update (z), reset (r),
/// candidate (n).
struct GruParams {
  Matrix w_in;   ///< 3D x d_in
  Matrix w_hid;  ///< 3D x D
  Vector b_in;   ///< 3D
  Vector b_hid;  ///< 3D

  static GruParams zeros(int d_in, int d) {
    return {Matrix::Zero(3 * d, d_in), Matrix::Zero(3 * d, d), Vector::Zero(3 * d),
            Vector::Zero(3 * d)};
  }
  int input_width() const { return static_cast<int>(w_in.cols()); }
  int hidden_width() const { return static_cast<int>(w_hid.cols()); }
};

/// Per-head projections are the row blocks [i*d_h, (i+1)*d_h) of w_q, w_k
/// and w_v.
struct AttentionParams {
  Matrix w_q;  ///< D x D
  Matrix w_k;  ///< D x D
  Matrix w_v;  ///< D x D
  Matrix w_o;  ///< D x D
  int heads = 1;
};

struct HeadParams {
  Matrix w1;  ///< hidden x 2D
  Vector b1;
  Matrix w2;  ///< 3 x hidden
  Vector b2;
};

/// Per-channel z-score statistics; forward() accepts raw SI inputs.
struct Normalization {
  Vec3 force_mean = Vec3::Zero();
  Vec3 force_std = Vec3::Ones();
  Vec6 op_mean = Vec6::Zero();
  Vec6 op_std = Vec6::Ones();
};

/// Flat view of one learnable tensor (Eigen column-major storage).
template <typename T>
struct TensorView {
  std::string name;
  T* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

struct XhapModel {
  ModelConfig config;
  GruParams gru_top;
  GruParams gru_op;
  AttentionParams attention;
  HeadParams head;
  Normalization norm;

  /// Same shapes, all parameters zero (used for gradients and optimizer moments).
  static XhapModel zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.latent;
    XhapModel m;
    m.config = cfg;
    m.gru_top = GruParams::zeros(cfg.d_top, d);
    m.gru_op = GruParams::zeros(cfg.d_op, d);
    m.attention = {Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d),
                   cfg.heads};
    m.head = {Matrix::Zero(cfg.hidden, 2 * d), Vector::Zero(cfg.hidden),
              Matrix::Zero(cfg.d_top, cfg.hidden), Vector::Zero(cfg.d_top)};
    return m;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per matrix; biases use the
  /// bound of the matrix they are added to.
  static XhapModel initialize(const ModelConfig& cfg, std::uint64_t seed) {
    XhapModel m = zeros(cfg);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& t, double fan_in) {
      const double b = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> u(-b, b);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
    };
    const double d = cfg.latent;
    for (GruParams* g : {&m.gru_top, &m.gru_op}) {
      fill(g->w_in, g->input_width());
      fill(g->w_hid, d);
      fill(g->b_in, g->input_width());
      fill(g->b_hid, d);
    }
    fill(m.attention.w_q, d);
    fill(m.attention.w_k, d);
    fill(m.attention.w_v, d);
    fill(m.attention.w_o, d);
    fill(m.head.w1, 2 * d);
    fill(m.head.b1, 2 * d);
    fill(m.head.w2, cfg.hidden);
    fill(m.head.b2, cfg.hidden);
    return m;
  }

  template <typename Self>
  static auto tensors_of(Self& self) {
    using T = std::conditional_t<std::is_const_v<Self>, const double, double>;
    std::vector<TensorView<T>> out;
    auto add = [&](const char* name, auto& t) {
      out.push_back({name, t.data(), t.rows(), t.cols()});
    };
    add("gru_top.w_in", self.gru_top.w_in);
    add("gru_top.w_hid", self.gru_top.w_hid);
    add("gru_top.b_in", self.gru_top.b_in);
    add("gru_top.b_hid", self.gru_top.b_hid);
    add("gru_op.w_in", self.gru_op.w_in);
    add("gru_op.w_hid", self.gru_op.w_hid);
    add("gru_op.b_in", self.gru_op.b_in);
    add("gru_op.b_hid", self.gru_op.b_hid);
    add("attn.w_q", self.attention.w_q);
    add("attn.w_k", self.attention.w_k);
    add("attn.w_v", self.attention.w_v);
    add("attn.w_o", self.attention.w_o);
    add("head.w1", self.head.w1);
    add("head.b1", self.head.b1);
    add("head.w2", self.head.w2);
    add("head.b2", self.head.b2);
    return out;
  }

  std::vector<TensorView<double>> tensors() { return tensors_of(*this); }
  std::vector<TensorView<const double>> tensors() const { return tensors_of(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.size());
    return n;
  }
};

// ---------------------------------------------------------------------------
// Forward pass

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GruCache {
  RowMatrix x;       ///< L x d_in inputs
  RowMatrix h;       ///< (L+1) x D, row 0 is the zero initial state
  RowMatrix z, r, n; ///< L x D gate activations
  RowMatrix hn;      ///< L x D, W_hn h_{t-1} + b_hn
};

/// Runs the GRU from a zero state and returns all L hidden states (L x D).
inline RowMatrix gru_forward(const GruParams& p, const RowMatrix& x, GruCache* cache = nullptr) {
  require(x.rows() >= 1, "gru_forward: empty input sequence");
  require(x.cols() == p.input_width(), "gru_forward: input width does not match parameters");
  require(x.allFinite(), "gru_forward: non-finite input");
  const Eigen::Index len = x.rows();
  const Eigen::Index d = p.hidden_width();

  // Input-side projections for all steps at once: L x 3D.
  RowMatrix xi = x * p.w_in.transpose();
  xi.rowwise() += p.b_in.transpose();

  RowMatrix out(len, d);
  if (cache) {
    cache->x = x;
    cache->h.setZero(len + 1, d);
    cache->z.resize(len, d);
    cache->r.resize(len, d);
    cache->n.resize(len, d);
    cache->hn.resize(len, d);
  }
  Vector h = Vector::Zero(d);
  Vector hh(3 * d);
  Eigen::ArrayXd z(d), r(d), n(d);
  for (Eigen::Index t = 0; t < len; ++t) {
    hh.noalias() = p.w_hid * h;
    hh += p.b_hid;
    const auto xrow = xi.row(t).transpose().array();
    z = 1.0 / (1.0 + (-(xrow.head(d) + hh.head(d).array())).exp());
    r = 1.0 / (1.0 + (-(xrow.segment(d, d) + hh.segment(d, d).array())).exp());
    // tanh via the vectorized exponential: tanh(x) = 2 / (1 + e^{-2x}) - 1
    n = 2.0 / (1.0 + (-2.0 * (xrow.tail(d) + r * hh.tail(d).array())).exp()) - 1.0;
    if (cache) {
      cache->z.row(t) = z.transpose();
      cache->r.row(t) = r.transpose();
      cache->n.row(t) = n.transpose();
      cache->hn.row(t) = hh.tail(d).transpose();
    }
    h = ((1.0 - z) * n + z * h.array()).matrix();
    out.row(t) = h.transpose();
    if (cache) cache->h.row(t + 1) = h.transpose();
  }
  return out;
}

struct AttentionCache {
  Vector query_in;  ///< r_top
  RowMatrix keys_in;  ///< S_op, L x D
  Vector q;         ///< D
  RowMatrix k, v;   ///< L x D
  RowMatrix alpha;  ///< heads x L
  Vector concat;    ///< D, [a_1; ...; a_h]
};

/// Multi-head scaled dot-product attention with one query vector. Returns
/// W_O [a_1; ...; a_h].
inline Vector cross_attention_fuse(const Vector& r_top, const RowMatrix& s_op,
                                   const AttentionParams& p, AttentionCache* cache = nullptr) {
  const Eigen::Index d = p.w_q.rows();
  require(r_top.size() == d && s_op.cols() == d, "cross_attention_fuse: width mismatch");
  require(s_op.rows() >= 1, "cross_attention_fuse: empty key sequence");
  require(p.heads >= 1 && d % p.heads == 0, "cross_attention_fuse: heads must divide D");
  const Eigen::Index dh = d / p.heads;
  const Eigen::Index len = s_op.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Vector q = p.w_q * r_top;
  RowMatrix k = s_op * p.w_k.transpose();
  RowMatrix v = s_op * p.w_v.transpose();
  RowMatrix alpha(p.heads, len);
  Vector concat(d);
  for (int i = 0; i < p.heads; ++i) {
    const Eigen::Index off = i * dh;
    Vector scores = k.middleCols(off, dh) * q.segment(off, dh) * scale;
    const double mx = scores.maxCoeff();
    Vector e = (scores.array() - mx).exp();
    e /= e.sum();
    alpha.row(i) = e.transpose();
    concat.segment(off, dh) = v.middleCols(off, dh).transpose() * e;
  }
  Vector a = p.w_o * concat;
  if (cache) {
    cache->query_in = r_top;
    cache->keys_in = s_op;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->alpha = std::move(alpha);
    cache->concat = std::move(concat);
  }
  return a;
}

struct ForwardCache {
  GruCache top, op;
  AttentionCache attn;
  Vector z;  ///< [r_top; a]
  Vector u;  ///< pre-activation of the hidden layer
};

inline RowMatrix normalize_force(const Normalization& n, const RowMatrix& x) {
  RowMatrix out = x;
  for (int c = 0; c < 3; ++c) out.col(c) = (out.col(c).array() - n.force_mean[c]) / n.force_std[c];
  return out;
}

inline RowMatrix normalize_op(const Normalization& n, const RowMatrix& x) {
  RowMatrix out = x;
  for (int c = 0; c < 6; ++c) out.col(c) = (out.col(c).array() - n.op_mean[c]) / n.op_std[c];
  return out;
}

/// Forward pass in normalized units.
inline Vec3 forward_normalized(const XhapModel& m, const RowMatrix& x_top, const RowMatrix& x_op,
                               ForwardCache* cache = nullptr) {
  require(x_top.rows() == x_op.rows(), "xhap_forward: history lengths differ");
  const RowMatrix s_top = gru_forward(m.gru_top, x_top, cache ? &cache->top : nullptr);
  const RowMatrix s_op = gru_forward(m.gru_op, x_op, cache ? &cache->op : nullptr);
  const Vector r_top = s_top.row(s_top.rows() - 1).transpose();
  const Vector a = cross_attention_fuse(r_top, s_op, m.attention, cache ? &cache->attn : nullptr);
  const Eigen::Index d = r_top.size();
  Vector z(2 * d);
  z << r_top, a;
  Vector u = m.head.w1 * z + m.head.b1;
  Vec3 y = m.head.w2 * u.cwiseMax(0.0) + m.head.b2;
  if (cache) {
    cache->z = std::move(z);
    cache->u = std::move(u);
  }
  return y;
}

/// Predicts the next force sample (N) from raw L x 3 force history and raw
/// L x 6 operator history.
inline Vec3 xhap_forward(const XhapModel& m, const RowMatrix& x_top, const RowMatrix& x_op) {
  require(x_top.cols() == 3 && x_op.cols() == 6, "xhap_forward: expected L x 3 and L x 6 inputs");
  require(x_top.allFinite() && x_op.allFinite(), "xhap_forward: non-finite input");
  const Vec3 y = forward_normalized(m, normalize_force(m.norm, x_top), normalize_op(m.norm, x_op));
  return (y.array() * m.norm.force_std.array() + m.norm.force_mean.array()).matrix();
}

/// Summary of the operator encoding (last hidden state). Not used by the
/// prediction; exposed for diagnostics.
inline Vector operator_summary(const XhapModel& m, const RowMatrix& x_op) {
  const RowMatrix s = gru_forward(m.gru_op, normalize_op(m.norm, x_op));
  return s.row(s.rows() - 1).transpose();
}

struct RolloutResult {
  RowMatrix predictions;   ///< H x 3
  RowMatrix force_buffer;  ///< L x 3 after the last append
  RowMatrix op_window;     ///< L x 6 after the last consumed operator vector
};

/// Autoregressive prediction: each estimate is appended to the force window
/// and the next operator vector from `op_stream` is appended to the operator
/// window before the following step.
inline RolloutResult autoregressive_rollout(const XhapModel& m, const RowMatrix& force_buffer,
                                            const RowMatrix& op_window, const RowMatrix& op_stream,
                                            int horizon) {
  require(horizon >= 1, "autoregressive_rollout: horizon must be >= 1");
  require(op_stream.rows() >= horizon, "autoregressive_rollout: operator stream exhausted");
  require(op_stream.cols() == 6, "autoregressive_rollout: operator stream must be H x 6");
  RolloutResult res{RowMatrix(horizon, 3), force_buffer, op_window};
  const Eigen::Index len = force_buffer.rows();
  for (int k = 0; k < horizon; ++k) {
    const Vec3 y = xhap_forward(m, res.force_buffer, res.op_window);
    res.predictions.row(k) = y.transpose();
    if (len > 1) {
      res.force_buffer.topRows(len - 1) = res.force_buffer.bottomRows(len - 1).eval();
      res.op_window.topRows(len - 1) = res.op_window.bottomRows(len - 1).eval();
    }
    res.force_buffer.row(len - 1) = y.transpose();
    res.op_window.row(len - 1) = op_stream.row(k);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O: versioned text, one record per tensor with row-major values.

inline constexpr const char* kCheckpointHeader = "xhap-ckpt v1";

namespace detail {

template <typename T>
void write_record(std::ostream& out, const std::string& name, const T* data, Eigen::Index rows,
                  Eigen::Index cols, bool is_vector) {
  out << name << ' ';
  if (is_vector)
    out << rows;
  else
    out << rows << 'x' << cols;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out << ' ' << fmt9(data[c * rows + r]);
  out << '\n';
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const XhapModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const auto& c = m.config;
  out << kCheckpointHeader << '\n';
  out << "config history_len=" << c.history_len << " d_top=" << c.d_top << " d_op=" << c.d_op
      << " latent=" << c.latent << " heads=" << c.heads << " hidden=" << c.hidden << '\n';
  detail::write_record(out, "norm.force_mean", m.norm.force_mean.data(), 3, 1, true);
  detail::write_record(out, "norm.force_std", m.norm.force_std.data(), 3, 1, true);
  detail::write_record(out, "norm.op_mean", m.norm.op_mean.data(), 6, 1, true);
  detail::write_record(out, "norm.op_std", m.norm.op_std.data(), 6, 1, true);
  for (const auto& t : m.tensors())
    detail::write_record(out, t.name, t.data, t.rows, t.cols, t.name.find(".b") != std::string::npos);
}

inline XhapModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  auto fail = [&](std::size_t line, const std::string& why) -> std::runtime_error {
    return std::runtime_error(path + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader)
    throw fail(1, "missing '" + std::string(kCheckpointHeader) + "' header");
  if (!std::getline(in, line)) throw fail(2, "missing config line");
  ModelConfig cfg;
  {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word != "config") throw fail(2, "expected config line");
    std::map<std::string, int*> fields = {{"history_len", &cfg.history_len}, {"d_top", &cfg.d_top},
                                          {"d_op", &cfg.d_op},   {"latent", &cfg.latent},
                                          {"heads", &cfg.heads}, {"hidden", &cfg.hidden}};
    while (ss >> word) {
      const auto eq = word.find('=');
      if (eq == std::string::npos || !fields.count(word.substr(0, eq)))
        throw fail(2, "bad config entry '" + word + "'");
      *fields[word.substr(0, eq)] = std::stoi(word.substr(eq + 1));
    }
  }
  XhapModel m = XhapModel::zeros(cfg);

  std::map<std::string, TensorView<double>> slots;
  slots.emplace("norm.force_mean", TensorView<double>{"", m.norm.force_mean.data(), 3, 1});
  slots.emplace("norm.force_std", TensorView<double>{"", m.norm.force_std.data(), 3, 1});
  slots.emplace("norm.op_mean", TensorView<double>{"", m.norm.op_mean.data(), 6, 1});
  slots.emplace("norm.op_std", TensorView<double>{"", m.norm.op_std.data(), 6, 1});
  for (auto& t : m.tensors()) slots.emplace(t.name, t);

  std::size_t lineno = 2;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, shape;
    ss >> name >> shape;
    auto it = slots.find(name);
    if (it == slots.end()) throw fail(lineno, "unknown tensor '" + name + "'");
    auto& t = it->second;
    Eigen::Index rows = 0, cols = 1;
    const auto x = shape.find('x');
    try {
      rows = std::stol(shape.substr(0, x));
      if (x != std::string::npos) cols = std::stol(shape.substr(x + 1));
    } catch (const std::exception&) {
      throw fail(lineno, "bad shape '" + shape + "'");
    }
    if (rows != t.rows || cols != t.cols) throw fail(lineno, "shape mismatch for " + name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        if (!(ss >> t.data[c * rows + r])) throw fail(lineno, "too few values for " + name);
    std::string extra;
    if (ss >> extra) throw fail(lineno, "too many values for " + name);
    ++seen;
  }
  if (seen != slots.size()) throw fail(lineno, "checkpoint is missing tensors");
  return m;
}

}  // namespace xhap::estimator
