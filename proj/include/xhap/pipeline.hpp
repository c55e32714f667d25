#pragma once

// Pipeline stages behind the command-line tool. Each stage reads its inputs
// from and writes its artifacts to one output directory.
//
//   traces/<split>_<Activity>.csv   gen-traces (splits: train, val, test)
//   model.ckpt, train_log.csv       train
//   evaluation.csv                  evaluate
//   restoration_<Activity>.csv      restore
//   <experiment>.csv, MANIFEST.txt  experiment
//   effective_config.txt            every stage

#include <array>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xhap/config.hpp"
#include "xhap/experiments.hpp"
#include "xhap/training.hpp"

namespace xhap::pipeline {

namespace fs = std::filesystem;
using config::RunConfig;
using experiments::ModelKind;
using experiments::ModelRef;
using experiments::Table;
using traces::Activity;
using traces::SequenceData;

/// A stage was invoked before the stage that produces its inputs.
class MissingPrerequisite : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train = 0, Val = 1, Test = 2 };
inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

// Independent seed streams derived from the run seed.
namespace seeds {
inline std::uint64_t trace(std::uint64_t run, Split s, Activity a) {
  return derive_seed(run, 1000 + 16 * static_cast<std::uint64_t>(s) + static_cast<std::uint64_t>(a));
}
inline std::uint64_t model_init(std::uint64_t run) { return derive_seed(run, 1); }
inline std::uint64_t training(std::uint64_t run) { return derive_seed(run, 2); }
inline std::uint64_t channel(std::uint64_t run) { return derive_seed(run, 3); }
}  // namespace seeds

inline fs::path trace_path(const fs::path& out, Split s, Activity a) {
  return out / "traces" / (to_string(s) + "_" + traces::to_string(a) + ".csv");
}
inline fs::path checkpoint_path(const fs::path& out) { return out / "model.ckpt"; }

inline void prepare(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  config::write_effective_config((out / "effective_config.txt").string(), cfg);
}

// ---------------------------------------------------------------------------
// Stages

inline void gen_traces(const RunConfig& cfg, const fs::path& out) {
  prepare(cfg, out);
  fs::create_directories(out / "traces");
  for (Split s : kAllSplits)
    for (Activity a : cfg.traces.activities)
      traces::write_trace_csv(trace_path(out, s, a).string(),
                              traces::generate_trace(a, cfg.traces.duration_s, seeds::trace(cfg.seed, s, a)));
}

using DataSet = std::vector<std::shared_ptr<const SequenceData>>;

inline DataSet load_split(const RunConfig& cfg, const fs::path& out, Split s) {
  DataSet d;
  for (Activity a : cfg.traces.activities) {
    const fs::path p = trace_path(out, s, a);
    if (!fs::exists(p)) throw MissingPrerequisite("missing " + p.string() + ": run gen-traces first");
    d.push_back(std::make_shared<SequenceData>(
        SequenceData::from_trace(traces::trim(traces::read_trace_csv(p.string(), a)))));
  }
  return d;
}

inline training::TrainConfig train_config(const RunConfig& cfg) {
  training::TrainConfig t = cfg.train;
  t.seed = seeds::training(cfg.seed);
  return t;
}

inline training::TrainHistory train(const RunConfig& cfg, const fs::path& out, std::ostream* log = nullptr) {
  const DataSet tr = load_split(cfg, out, Split::Train);
  const DataSet va = load_split(cfg, out, Split::Val);
  prepare(cfg, out);
  auto init = estimator::XhapModel::initialize(cfg.model, seeds::model_init(cfg.seed));
  init.norm = training::compute_normalization(tr);
  auto [model, hist] = training::train(init, tr, va, train_config(cfg), [&](const training::EpochRecord& r) {
    if (log) *log << "epoch " << r.epoch << " train_loss " << fmt9(r.train_loss) << " val_mse " << fmt9(r.val_mse) << '\n';
  });
  estimator::save_checkpoint(checkpoint_path(out).string(), model);
  training::write_train_log_csv((out / "train_log.csv").string(), hist);
  return hist;
}

inline estimator::XhapModel load_model(const RunConfig& cfg, const fs::path& out) {
  const fs::path p = checkpoint_path(out);
  if (!fs::exists(p)) throw MissingPrerequisite("missing " + p.string() + ": run train first");
  auto m = estimator::load_checkpoint(p.string());
  if (m.config.history_len != cfg.model.history_len || m.config.latent != cfg.model.latent ||
      m.config.heads != cfg.model.heads || m.config.hidden != cfg.model.hidden)
    throw MissingPrerequisite("checkpoint " + p.string() + " was trained with a different model.* config: run train first");
  return m;
}

/// Channel parameters for experiments: the configured channel with the
/// derived channel seed.
inline channel::ChannelParams channel_params(const RunConfig& cfg) {
  channel::ChannelParams p = cfg.channel;
  p.seed = seeds::channel(cfg.seed);
  return p;
}

inline std::vector<ModelRef> restoring_models(const estimator::XhapModel& m) {
  return {ModelRef{ModelKind::HoldLast}, ModelRef{ModelKind::Xhap, &m}};
}

inline std::vector<ModelRef> all_models(const estimator::XhapModel& m) {
  return {ModelRef{ModelKind::None}, ModelRef{ModelKind::HoldLast}, ModelRef{ModelKind::Xhap, &m}};
}

/// One-step MSE and restoration at the configured channel, per test trace.
inline Table evaluate(const RunConfig& cfg, const fs::path& out) {
  const DataSet test = load_split(cfg, out, Split::Test);
  const auto model = load_model(cfg, out);
  prepare(cfg, out);
  const auto rc = cfg.restoration_config();
  Table t{"evaluation",
          {"activity", "model", "one_step_mse", "raw_plr", "effective_plr", "restoration_rate"},
          {}};
  for (const auto& d : test) {
    const auto loss = channel::simulate_losses(channel_params(cfg), d->size());
    for (const auto& m : restoring_models(model)) {
      const auto err = experiments::one_step_sq_errors(m, *d, rc.history_len);
      double sum = 0.0;
      for (std::size_t i = static_cast<std::size_t>(rc.history_len); i < err.size(); ++i) sum += err[i];
      const double mse = sum / static_cast<double>(err.size() - static_cast<std::size_t>(rc.history_len));
      const auto s = experiments::restore(m, *d, loss.mask, rc);
      t.add({traces::to_string(d->activity), m.name(), fmt9(mse), fmt9(loss.raw_plr), fmt9(s.effective_plr),
             fmt9(s.restoration_rate)});
    }
  }
  t.write_csv((out / "evaluation.csv").string());
  return t;
}

/// Restoration stats per test trace at the configured channel; optionally
/// dumps the per-step SNR series next to them.
inline void restore(const RunConfig& cfg, const fs::path& out, bool dump_snr) {
  const DataSet test = load_split(cfg, out, Split::Test);
  const auto model = load_model(cfg, out);
  prepare(cfg, out);
  const auto rc = cfg.restoration_config();
  for (const auto& d : test) {
    const std::string act = traces::to_string(d->activity);
    const auto loss = channel::simulate_losses(channel_params(cfg), d->size(), dump_snr);
    if (dump_snr) channel::write_snr_csv((out / ("snr_" + act + ".csv")).string(), loss);
    std::ofstream f(out / ("restoration_" + act + ".csv"));
    if (!f) throw std::runtime_error("cannot write restoration_" + act + ".csv");
    f << restoration::kStatsHeader << '\n';
    for (const auto& m : all_models(model))
      f << restoration::stats_row(experiments::restore(m, *d, loss.mask, rc), rc, m.name()) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiments

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"min_snr",      "coverage",       "threshold_sweep", "rolling_mse",
                                              "force_dynamics", "burst",        "capacity"};
  return names;
}

/// Inputs shared by the experiments of one run.
struct ExperimentContext {
  RunConfig cfg;
  estimator::XhapModel model;
  DataSet test;
  SequenceData stream;  ///< evaluation stream of experiments.steps samples
  /// One-step squared errors per (activity, model name), filled on demand.
  std::map<std::pair<std::string, std::string>, std::vector<double>> sq_errors;

  const std::vector<double>& errors(const SequenceData& d, const ModelRef& m) {
    const auto key = std::make_pair(traces::to_string(d.activity), m.name());
    auto it = sq_errors.find(key);
    if (it == sq_errors.end())
      it = sq_errors.emplace(key, experiments::one_step_sq_errors(m, d, cfg.model.history_len)).first;
    return it->second;
  }
};

inline ExperimentContext make_context(const RunConfig& cfg, const fs::path& out) {
  ExperimentContext c{cfg, load_model(cfg, out), load_split(cfg, out, Split::Test), {}, {}};
  std::vector<const SequenceData*> src;
  for (const auto& d : c.test) src.push_back(d.get());
  c.stream = experiments::evaluation_stream(src, cfg.experiments.steps);
  return c;
}

inline channel::ChannelParams with_mcs(channel::ChannelParams p, const experiments::Mcs& m) {
  p.modulation = m.modulation;
  p.code_rate = m.code_rate;
  return p;
}

inline std::string fmt_bool(bool b) { return b ? "1" : "0"; }

inline Table min_snr_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"min_snr", {"model", "modulation", "code_rate", "threshold", "min_snr_db", "reachable"}, {}};
  for (const auto& m : all_models(c.model))
    for (const auto& mcs : e.mcs_list) {
      const auto ch = with_mcs(channel_params(c.cfg), mcs);
      std::optional<experiments::MinSnrResult> r;
      for (double thr : e.thresholds) {
        auto rc = c.cfg.restoration_config();
        rc.threshold = thr;
        // Without restoration the threshold plays no role.
        if (!r || m.kind != ModelKind::None) r = experiments::min_snr_for_target(m, c.stream, ch, rc, e);
        t.add({m.name(), channel::to_string(mcs.modulation), fmt9(mcs.code_rate), fmt9(thr), fmt9(r->snr_db),
               fmt_bool(r->reachable)});
      }
    }
  return t;
}

inline Table coverage_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"coverage", {"model", "snr_req_db", "pl_max_db", "distance_m", "p_cov", "d_max_m", "d_max_status"}, {}};
  const auto rc = c.cfg.restoration_config();
  for (const auto& m : all_models(c.model)) {
    const auto r = experiments::min_snr_for_target(m, c.stream, channel_params(c.cfg), rc, e);
    if (!r.reachable) continue;
    const auto curve = experiments::coverage_curve(r.snr_db, c.cfg.link, e);
    for (const auto& p : curve.points)
      t.add({m.name(), fmt9(r.snr_db), fmt9(curve.pl_max_db), fmt9(p.distance_m), fmt9(p.p_cov),
             fmt9(curve.d_max.distance_m), experiments::to_string(curve.d_max.outcome)});
  }
  return t;
}

inline Table threshold_sweep_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"threshold_sweep",
          {"sweep", "model", "modulation", "code_rate", "snr_db", "threshold", "raw_plr", "effective_plr",
           "restoration_rate"},
          {}};
  auto ch = channel_params(c.cfg);
  ch.mu_db = e.sweep_snr_db;
  const auto loss = channel::simulate_losses(ch, c.stream.size());
  for (const auto& m : restoring_models(c.model))
    for (double thr : e.sweep_thresholds) {
      auto rc = c.cfg.restoration_config();
      rc.threshold = thr;
      const auto s = experiments::restore(m, c.stream, loss.mask, rc);
      t.add({"threshold", m.name(), channel::to_string(ch.modulation), fmt9(ch.code_rate), fmt9(ch.mu_db),
             fmt9(thr), fmt9(loss.raw_plr), fmt9(s.effective_plr), fmt9(s.restoration_rate)});
    }
  const auto rc = c.cfg.restoration_config();
  for (const auto& mcs : e.mcs_list) {
    const auto mch = with_mcs(ch, mcs);
    const auto mloss = channel::simulate_losses(mch, c.stream.size());
    for (const auto& m : all_models(c.model)) {
      const auto s = experiments::restore(m, c.stream, mloss.mask, rc);
      t.add({"mcs", m.name(), channel::to_string(mcs.modulation), fmt9(mcs.code_rate), fmt9(mch.mu_db),
             fmt9(rc.threshold), fmt9(mloss.raw_plr), fmt9(s.effective_plr), fmt9(s.restoration_rate)});
    }
  }
  return t;
}

inline Table rolling_mse_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"rolling_mse", {"activity", "model", "step", "rolling_mse"}, {}};
  const auto len = static_cast<std::size_t>(c.cfg.model.history_len);
  for (const auto& d : c.test)
    for (const auto& m : restoring_models(c.model)) {
      const auto& err = c.errors(*d, m);
      // Steps before the first full history carry no prediction.
      const std::vector<double> valid(err.begin() + static_cast<long>(len), err.end());
      if (valid.size() < e.rolling_window) continue;
      const auto roll = experiments::rolling_mse(valid, e.rolling_window);
      for (std::size_t j = 0; j < roll.size(); j += e.rolling_stride)
        t.add({traces::to_string(d->activity), m.name(), std::to_string(j + len), fmt9(roll[j])});
    }
  return t;
}

inline Table force_dynamics_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"force_dynamics", {"activity", "model", "region", "mean_rate", "mean_jerk", "steps"}, {}};
  const auto len = static_cast<Eigen::Index>(c.cfg.model.history_len);
  for (const auto& d : c.test)
    for (const auto& m : restoring_models(c.model)) {
      const auto& err = c.errors(*d, m);
      const std::vector<double> valid(err.begin() + len, err.end());
      if (valid.size() < e.rolling_window) continue;
      const RowMatrix force = d->force.bottomRows(d->force.rows() - len);
      const auto fd = experiments::force_dynamics(force, valid, e.rolling_window);
      for (const auto& [name, r] : {std::pair{"easy", fd.easy}, std::pair{"difficult", fd.difficult}})
        t.add({traces::to_string(d->activity), m.name(), name, fmt9(r.mean_rate), fmt9(r.mean_jerk),
               std::to_string(r.steps)});
    }
  return t;
}

inline Table burst_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"burst", {"model", "snr_db", "threshold", "burst_len", "lost", "restored", "effective_plr", "meets_target"}, {}};
  const auto rc = c.cfg.restoration_config();
  for (const auto& m : restoring_models(c.model))
    for (const auto& r : experiments::burst_experiment(m, c.stream, channel_params(c.cfg), e.burst_snr_db, rc, e))
      t.add({m.name(), fmt9(e.burst_snr_db), fmt9(rc.threshold), std::to_string(r.burst_len), std::to_string(r.lost),
             std::to_string(r.restored), fmt9(r.effective_plr), fmt_bool(r.meets_target)});
  return t;
}

inline Table capacity_table(ExperimentContext& c) {
  const auto& e = c.cfg.experiments;
  Table t{"capacity", {"model", "snr_db", "bandwidth_hz", "rate_ceiling", "capacity"}, {}};
  // Capacity is evaluated at QPSK, rate 0.602.
  const auto ch = with_mcs(channel_params(c.cfg), experiments::Mcs{channel::Modulation::QPSK, 0.602});
  const auto rc = c.cfg.restoration_config();
  for (const auto& m : all_models(c.model))
    for (const auto& r : experiments::network_capacity(m, c.stream, ch, e.capacity_snr_db, rc, e))
      t.add({m.name(), fmt9(e.capacity_snr_db), fmt9(r.bandwidth_hz), std::to_string(r.rate_ceiling),
             std::to_string(r.capacity)});
  return t;
}

inline Table run_experiment_table(const std::string& name, ExperimentContext& c) {
  if (name == "min_snr") return min_snr_table(c);
  if (name == "coverage") return coverage_table(c);
  if (name == "threshold_sweep") return threshold_sweep_table(c);
  if (name == "rolling_mse") return rolling_mse_table(c);
  if (name == "force_dynamics") return force_dynamics_table(c);
  if (name == "burst") return burst_table(c);
  if (name == "capacity") return capacity_table(c);
  throw ContractViolation("unknown experiment '" + name + "'");
}

/// Rewrites MANIFEST.txt over the experiment CSVs present in `out`.
inline void update_manifest(const RunConfig& cfg, const fs::path& out) {
  std::vector<std::string> present;
  for (const auto& n : experiment_names())
    if (fs::exists(out / (n + ".csv"))) present.push_back(n + ".csv");
  experiments::write_manifest((out / "MANIFEST.txt").string(), present, config::config_hash(cfg), cfg.seed);
}

inline void run_experiments(const RunConfig& cfg, const fs::path& out, const std::vector<std::string>& names,
                            std::ostream* log = nullptr) {
  for (const auto& n : names)
    if (std::find(experiment_names().begin(), experiment_names().end(), n) == experiment_names().end())
      throw ContractViolation("unknown experiment '" + n + "'");
  ExperimentContext c = make_context(cfg, out);
  prepare(cfg, out);
  for (const auto& n : names) {
    if (log) *log << "experiment " << n << '\n';
    run_experiment_table(n, c).write_csv((out / (n + ".csv")).string());
    update_manifest(cfg, out);
  }
}

inline void run_all(const RunConfig& cfg, const fs::path& out, std::ostream* log = nullptr) {
  gen_traces(cfg, out);
  train(cfg, out, log);
  evaluate(cfg, out);
  restore(cfg, out, false);
  run_experiments(cfg, out, experiment_names(), log);
}

}  // namespace xhap::pipeline
