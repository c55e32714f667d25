// xhap: command-line entry point for trace generation, training,
// restoration runs and the evaluation experiments.

#include <CLI11.hpp>

#include <iostream>

#include "xhap/pipeline.hpp"

using namespace xhap;

int main(int argc, char** argv) {
  CLI::App app{"Haptic packet-loss restoration over a simulated wireless link"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "configuration file (section.key = value)")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override one key, e.g. --set experiments.steps=100000")->take_all();
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "run seed (overrides run.seed)");

  auto* gen = app.add_subcommand("gen-traces", "generate train/val/test traces per activity");
  auto* trn = app.add_subcommand("train", "train the estimator on the train/val traces");
  auto* evl = app.add_subcommand("evaluate", "one-step MSE and restoration on the test traces");
  auto* rst = app.add_subcommand("restore", "restoration stats per test trace at the configured channel");
  bool dump_snr = false;
  rst->add_flag("--dump-snr", dump_snr, "also write the per-step SNR series");
  auto* exp = app.add_subcommand("experiment", "run one or more experiments");
  std::vector<std::string> names;
  exp->add_option("name", names, "experiment name or 'all'")
      ->required()
      ->check(CLI::IsMember([] {
        auto n = pipeline::experiment_names();
        n.push_back("all");
        return n;
      }()));
  auto* all = app.add_subcommand("all", "run every stage in order");
  for (auto* sub : {gen, trn, evl, rst, exp, all}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (seed) overrides.push_back("run.seed=" + std::to_string(*seed));
    const auto cfg = config::parse_config(config_path, overrides);
    const std::filesystem::path out(out_dir);
    if (*gen) pipeline::gen_traces(cfg, out);
    if (*trn) {
      const auto h = pipeline::train(cfg, out, &std::cerr);
      std::cerr << "best epoch " << h.best_epoch << " val_mse " << fmt9(h.epochs[h.best_epoch].val_mse)
                << " (untrained " << fmt9(h.initial_val_mse) << ")\n";
    }
    if (*evl) pipeline::evaluate(cfg, out);
    if (*rst) pipeline::restore(cfg, out, dump_snr);
    if (*exp) {
      if (std::find(names.begin(), names.end(), "all") != names.end()) names = pipeline::experiment_names();
      pipeline::run_experiments(cfg, out, names, &std::cerr);
    }
    if (*all) pipeline::run_all(cfg, out, &std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "xhap: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
