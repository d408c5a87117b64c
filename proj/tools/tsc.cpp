// tsc — traffic-signal control workbench.
//
//   tsc gen-flow --network 3x3 --vehicles 600 --pattern rush --out runs/demo
//   tsc baseline --network 3x3 --flow runs/demo/flow.csv --controller max_pressure --out runs/mp
//   tsc train    --config train.json --out runs/train1 --seed 1
//   tsc eval     --config eval.json --checkpoint runs/train1/checkpoint.ckpt --out runs/eval1
//   tsc report   --config eval.json --checkpoint runs/train1/checkpoint.ckpt \
//                --ledger runs/train1/ledger.csv --out runs/report1
//
// A JSON run config (--config) carries the full setup; individual flags
// override single fields on top of it. Every command writes a manifest with
// the complete effective configuration, so a run can be reproduced exactly.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsc/config_json.hpp"
#include "tsc/harness.hpp"

namespace {

using tsc::harness::RunConfig;

struct CommonArgs {
  std::string config;
  std::string network;
  std::string flow;
  std::string out;
  std::string controller;
  std::string checkpoint;
  std::string ledger;
  std::optional<std::uint64_t> seed;
};

void add_common_flags(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "run config JSON file");
  cmd->add_option("--network", a.network, "network spec file or ROWSxCOLS[:LANE_LENGTH_M]");
  cmd->add_option("--flow", a.flow, "flow schedule CSV");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--controller", a.controller,
                  "controller: fixed_time | max_pressure | efficient_mp | advanced_mp");
  cmd->add_option("--checkpoint", a.checkpoint, "policy checkpoint file");
  cmd->add_option("--ledger", a.ledger, "reward ledger CSV");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&a](std::uint64_t v) { a.seed = v; }, "run seed (overrides the config)");
}

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = tsc::harness::load_run_config(a.config);
  if (!a.network.empty()) cfg.network = tsc::harness::parse_network_arg(a.network);
  if (!a.flow.empty()) {
    cfg.flow_path = a.flow;
    cfg.flow_synthesis.reset();  // an explicit flow file replaces any synthesis spec
  }
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (!a.controller.empty()) {
    tsc::ControllerConfig cc = cfg.controller.value_or(tsc::ControllerConfig{});
    cc.kind = tsc::controller_from_name(a.controller);
    cfg.controller = cc;
  }
  if (!a.checkpoint.empty()) cfg.checkpoint = a.checkpoint;
  if (!a.ledger.empty()) cfg.ledger = a.ledger;
  if (a.seed) cfg.seed = a.seed;
  return cfg;
}

int cmd_gen_flow(const CommonArgs& a, const tsc::FlowSynthesisSpec& flags, bool has_vehicles) {
  RunConfig cfg = resolve_config(a);
  if (has_vehicles || !cfg.flow_synthesis) cfg.flow_synthesis = flags;
  if (a.seed) cfg.flow_synthesis->seed = *a.seed;
  auto res = tsc::harness::run_gen_flow(cfg);
  std::printf("wrote %zu vehicles (%d base + %d fluctuation copies) to %s\n",
              res.synth.flow.entries.size(), res.synth.base_count, res.synth.copies,
              res.flow_path.c_str());
  std::printf("flow stats (%ds bins): mean %.3f  std %.3f  ->  mean %.3f  std %.3f\n",
              res.synth.base_stats.bin_seconds, res.synth.base_stats.mean,
              res.synth.base_stats.stddev, res.synth.final_stats.mean,
              res.synth.final_stats.stddev);
  return 0;
}

int cmd_baseline(const CommonArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (!cfg.controller) cfg.controller = tsc::ControllerConfig{};  // fixed_time default
  auto rep = tsc::harness::run_baseline(cfg);
  if (rep.metrics.avg_travel_time_s) {
    std::printf("%s: avg travel time %.2f s", rep.controller.c_str(),
                *rep.metrics.avg_travel_time_s);
  } else {
    std::printf("%s: avg travel time undefined (no vehicle completed)", rep.controller.c_str());
  }
  std::printf("  throughput %d  unserved %d\n", rep.metrics.departed, rep.metrics.unserved);
  std::printf("report: %s\n", rep.report_path.c_str());
  return 0;
}

int cmd_train(const CommonArgs& a) {
  RunConfig cfg = resolve_config(a);
  auto rep = tsc::harness::run_training(cfg, [](const tsc::rl::IterationStats& s) {
    std::printf("iter %4d  policy %.5f  value %.5f  clip %.3f  eval_tt %.2f  value_err %.5f\n",
                s.iteration, s.policy_loss, s.value_loss, s.clip_frac, s.eval_travel_time,
                s.value_error);
    std::fflush(stdout);
  });
  std::printf("final metric (mean eval travel time, last 10 iters): %.3f s\n", rep.final_metric);
  std::printf("checkpoint: %s\n", rep.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  RunConfig cfg = resolve_config(a);
  auto rep = tsc::harness::run_eval(cfg);
  std::printf("%-22s %10s %10s %12s %9s\n", "method", "mean_tt", "std_tt", "throughput",
              "unserved");
  for (const auto& row : rep.rows) {
    std::printf("%-22s %10.2f %10.2f %12.1f %9d\n", row.method.c_str(), row.mean_travel_time,
                row.std_travel_time, row.mean_throughput, row.total_unserved);
  }
  std::printf("table: %s\n", rep.table_path.c_str());
  return 0;
}

int cmd_report(const CommonArgs& a) {
  RunConfig cfg = resolve_config(a);
  auto res = tsc::harness::export_reports(cfg);
  if (!res.correlation_path.empty()) std::printf("correlations: %s\n", res.correlation_path.c_str());
  if (!res.curves_path.empty()) std::printf("curves: %s\n", res.curves_path.c_str());
  for (const auto& p : res.weight_paths) std::printf("weights: %s\n", p.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traffic-signal control workbench: simulate, train, evaluate, report"};
  app.require_subcommand(1);

  CommonArgs gen_args, base_args, train_args, eval_args, report_args;
  tsc::FlowSynthesisSpec gen_spec;
  std::string gen_pattern = "uniform";

  CLI::App* gen = app.add_subcommand("gen-flow", "synthesize a flow schedule CSV");
  add_common_flags(gen, gen_args);
  gen->add_option("--vehicles", gen_spec.total_vehicles, "number of base vehicles");
  gen->add_option("--duration", gen_spec.duration_s, "schedule duration in seconds");
  gen->add_option("--pattern", gen_pattern, "uniform | peaked | rush");
  gen->add_option("--resample-fraction", gen_spec.resample_fraction,
                  "fraction of vehicles cloned into the fluctuation window");
  gen->add_option("--fluctuation-factor", gen_spec.fluctuation_factor,
                  "multiplier on the cloned-vehicle count");

  CLI::App* base = app.add_subcommand("baseline", "run one classic-controller episode");
  add_common_flags(base, base_args);
  CLI::App* train = app.add_subcommand("train", "train a policy with clipped policy updates");
  add_common_flags(train, train_args);
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint against baselines");
  add_common_flags(evalc, eval_args);
  CLI::App* report = app.add_subcommand("report", "export correlation/curve/weight reports");
  add_common_flags(report, report_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      gen_spec.pattern = tsc::flow_pattern_from_name(gen_pattern);
      bool has_vehicles = gen->count("--vehicles") > 0 || gen->count("--duration") > 0 ||
                          gen->count("--pattern") > 0 || gen->count("--resample-fraction") > 0 ||
                          gen->count("--fluctuation-factor") > 0;
      return cmd_gen_flow(gen_args, gen_spec, has_vehicles);
    }
    if (base->parsed()) return cmd_baseline(base_args);
    if (train->parsed()) return cmd_train(train_args);
    if (evalc->parsed()) return cmd_eval(eval_args);
    if (report->parsed()) return cmd_report(report_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
