#pragma once

// Run orchestration: a RunConfig names a network, a traffic flow (file or
// synthesis spec), and exactly one decision method (classic controller or
// trainable policy), and the run_* entry points turn it into simulations,
// training runs, evaluations, and report files.
//
// Every run writes a metadata manifest carrying the complete configuration,
// all seeds, and the library version, so any artifact can be reproduced
// byte-identically from its manifest. All emitted JSON/CSV is deterministic:
// fixed field order, no timestamps, doubles printed with %.17g (which
// round-trips exactly).
//
// Output layout (inside the configured output directory):
//   gen-flow   <flow>.csv, <flow>.stats.json, <flow>.manifest.json
//   baseline   baseline_<kind>.json, baseline_<kind>_rewards.csv,
//              baseline_<kind>_ledger.csv, baseline_<kind>_manifest.json
//   train      checkpoint.ckpt, curves.csv, value_error.csv, ledger.csv,
//              train_summary.json, train_manifest.json
//   eval       eval_table.csv, eval.json, eval_manifest.json
//   report     reward_correlation.csv, curves.csv, value_error.csv,
//              w_policy_round<r>.csv, w_value_round<r>.csv,
//              report_manifest.json

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tsc/controllers.hpp"
#include "tsc/episode.hpp"
#include "tsc/flowgen.hpp"
#include "tsc/ppo.hpp"

namespace tsc::harness {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Deterministic JSON emission (insertion-ordered, compact, no NaN/Inf).

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(ch) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", ch);
          out += buf;
        } else {
          out += ch;
        }
    }
  }
  return out;
}

inline std::string json_number(double v) {
  if (!std::isfinite(v)) return "null";  // JSON has no NaN/Inf
  return rl::fmt_g17(v);
}

class JsonArray;

class JsonObject {
 public:
  JsonObject& put(const std::string& k, const std::string& v) {
    key(k);
    body_ += '"' + json_escape(v) + '"';
    return *this;
  }
  JsonObject& put(const std::string& k, const char* v) { return put(k, std::string(v)); }
  JsonObject& put(const std::string& k, double v) {
    key(k);
    body_ += json_number(v);
    return *this;
  }
  JsonObject& put(const std::string& k, bool v) {
    key(k);
    body_ += v ? "true" : "false";
    return *this;
  }
  JsonObject& put(const std::string& k, int v) {
    key(k);
    body_ += std::to_string(v);
    return *this;
  }
  JsonObject& put(const std::string& k, long long v) {
    key(k);
    body_ += std::to_string(v);
    return *this;
  }
  JsonObject& put(const std::string& k, std::uint64_t v) {
    key(k);
    body_ += std::to_string(v);
    return *this;
  }
  JsonObject& put_null(const std::string& k) {
    key(k);
    body_ += "null";
    return *this;
  }
  JsonObject& put_raw(const std::string& k, const std::string& encoded) {
    key(k);
    body_ += encoded;
    return *this;
  }
  std::string str() const { return "{" + body_ + "}"; }

 private:
  void key(const std::string& k) {
    if (!body_.empty()) body_ += ',';
    body_ += '"' + json_escape(k) + "\":";
  }
  std::string body_;
};

class JsonArray {
 public:
  JsonArray& push_raw(const std::string& encoded) {
    if (!body_.empty()) body_ += ',';
    body_ += encoded;
    return *this;
  }
  JsonArray& push(const std::string& v) { return push_raw('"' + json_escape(v) + '"'); }
  JsonArray& push(double v) { return push_raw(json_number(v)); }
  JsonArray& push(int v) { return push_raw(std::to_string(v)); }
  std::string str() const { return "[" + body_ + "]"; }

 private:
  std::string body_;
};

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  if (!out.good()) throw std::runtime_error("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------
// Run configuration

struct GridSpec {
  int rows = 0;
  int cols = 0;
  double lane_length_m = 300.0;
};

struct NetworkSource {
  std::string path;               // network spec file, or
  std::optional<GridSpec> grid;   // inline grid dimensions

  void validate() const {
    if (path.empty() == !grid.has_value()) {
      throw std::invalid_argument("network: give exactly one of a spec file path or grid dims");
    }
    if (!path.empty() && !std::filesystem::exists(path)) {
      throw std::invalid_argument("network spec file '" + path + "' does not exist");
    }
    if (grid && (grid->rows <= 0 || grid->cols <= 0 || grid->lane_length_m <= 0.0)) {
      throw std::invalid_argument("network grid needs positive rows, cols, and lane length");
    }
  }
};

struct LearnerConfig {
  rl::PPOConfig ppo;
  int hidden = 64;
  int rounds = 2;
  int m_rank = 0;                     // 0: full rank (M = number of intersections)
  double head_gain = 0.01;
  std::string weight_mode = "learned";  // learned | softmax | fixed
  int fixed_hops = 1;                   // neighborhood radius for fixed mode
};

enum class RunMode { GenFlow, Baseline, Train, Eval, Report };

struct RunConfig {
  NetworkSource network;
  std::string flow_path;                           // existing schedule, or
  std::optional<FlowSynthesisSpec> flow_synthesis; // generate one
  SimConfig sim;
  std::optional<ControllerConfig> controller;
  std::optional<LearnerConfig> learner;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;  // run seed; overrides the learner seed
  int eval_episodes = 1;
  bool eval_resample_flow = true;  // fresh flow seed per eval episode (synthesis only)
  std::string checkpoint;
  std::string ledger;
  std::vector<std::string> baselines;  // extra controllers for head-to-head eval
  bool write_ledger = true;

  void validate(RunMode mode) const {
    if (mode != RunMode::Report) network.validate();
    const bool needs_flow = mode != RunMode::Report || !checkpoint.empty();
    if (needs_flow) {
      if (flow_path.empty() == !flow_synthesis.has_value()) {
        throw std::invalid_argument("give exactly one of a flow file and a flow synthesis spec");
      }
      if (!flow_path.empty() && !std::filesystem::exists(flow_path)) {
        throw std::invalid_argument("flow file '" + flow_path + "' does not exist");
      }
      if (flow_synthesis) flow_synthesis->validate();
    }
    sim.validate();
    switch (mode) {
      case RunMode::GenFlow:
        if (!flow_synthesis) throw std::invalid_argument("gen-flow needs a flow synthesis spec");
        break;
      case RunMode::Baseline:
        if (!controller || learner) {
          throw std::invalid_argument(
              "a baseline run selects exactly one method: a controller, not a learner");
        }
        break;
      case RunMode::Train:
        if (!learner || controller) {
          throw std::invalid_argument(
              "a training run selects exactly one method: a learner, not a controller");
        }
        learner->ppo.validate();
        break;
      case RunMode::Eval:
        if (checkpoint.empty()) throw std::invalid_argument("eval needs a checkpoint path");
        if (!std::filesystem::exists(checkpoint)) {
          throw std::invalid_argument("checkpoint '" + checkpoint + "' does not exist");
        }
        if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
        for (const std::string& b : baselines) controller_from_name(b);  // throws on unknown
        break;
      case RunMode::Report:
        if (checkpoint.empty() && ledger.empty()) {
          throw std::invalid_argument("report needs a checkpoint and/or a reward ledger");
        }
        if (!checkpoint.empty()) {
          network.validate();
          if (!std::filesystem::exists(checkpoint)) {
            throw std::invalid_argument("checkpoint '" + checkpoint + "' does not exist");
          }
        }
        if (!ledger.empty() && !std::filesystem::exists(ledger)) {
          throw std::invalid_argument("ledger '" + ledger + "' does not exist");
        }
        break;
    }
  }
};

inline RoadNetwork build_network(const NetworkSource& src) {
  src.validate();
  if (!src.path.empty()) return load_network_spec(src.path);
  return build_grid_network(src.grid->rows, src.grid->cols, src.grid->lane_length_m);
}

struct ResolvedFlow {
  FlowSchedule flow;
  std::optional<SynthesizedFlow> synthesis;  // set when generated on the fly
  std::string source;                        // file path or "synthesized"
};

inline ResolvedFlow resolve_flow(const RunConfig& cfg, const RoadNetwork& net,
                                 std::optional<std::uint64_t> seed_override = {}) {
  ResolvedFlow out;
  if (!cfg.flow_path.empty()) {
    out.flow = load_flow_csv(cfg.flow_path);
    out.source = cfg.flow_path;
  } else {
    FlowSynthesisSpec spec = *cfg.flow_synthesis;
    if (seed_override) spec.seed = *seed_override;
    out.synthesis = synthesize_flow(net, spec);
    out.flow = out.synthesis->flow;
    out.source = "synthesized";
  }
  validate_flow(net, out.flow);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string sim_json(const SimConfig& s) {
  return JsonObject()
      .put("v_max_mps", s.v_max_mps)
      .put("vehicle_len_m", s.vehicle_len_m)
      .put("min_gap_m", s.min_gap_m)
      .put("t_phase_s", s.t_phase_s)
      .put("yellow_s", s.yellow_s)
      .put("t_tsc_s", s.t_tsc_s)
      .put("seed", s.seed)
      .put("travel_time_from_scheduled", s.travel_time_from_scheduled)
      .str();
}

inline std::string synthesis_json(const FlowSynthesisSpec& f) {
  return JsonObject()
      .put("pattern", flow_pattern_name(f.pattern))
      .put("total_vehicles", f.total_vehicles)
      .put("duration_s", f.duration_s)
      .put("resample_fraction", f.resample_fraction)
      .put("fluctuation_factor", f.fluctuation_factor)
      .put("peak_weight", f.peak_weight)
      .put("window_start_s", f.window_start_s)
      .put("window_end_s", f.window_end_s)
      .put("seed", f.seed)
      .str();
}

inline std::string controller_json(const ControllerConfig& c) {
  JsonArray cycle;
  for (int p : c.fixed_cycle) cycle.push(p);
  return JsonObject()
      .put("kind", controller_name(c.kind))
      .put_raw("fixed_cycle", cycle.str())
      .put("range_m", c.range_m)
      .put("advanced_running_all", c.advanced_running_all)
      .str();
}

inline std::string ppo_json(const rl::PPOConfig& p) {
  return JsonObject()
      .put("iterations", p.iterations)
      .put("episodes_per_iter", p.episodes_per_iter)
      .put("epochs", p.epochs)
      .put("minibatch_steps", p.minibatch_steps)
      .put("gamma", p.gamma)
      .put("gae_lambda", p.gae_lambda)
      .put("clip_eps", p.clip_eps)
      .put("lr", p.lr)
      .put("lr_decay_linear", p.lr_decay_linear)
      .put("value_coef", p.value_coef)
      .put("entropy_coef", p.entropy_coef)
      .put("reward_scale", p.reward_scale)
      .put("reward", rl::reward_kind_name(p.reward))
      .put("eval_sampled", p.eval_sampled)
      .put("seed", p.seed)
      .str();
}

inline std::string learner_json(const LearnerConfig& l) {
  return JsonObject()
      .put_raw("ppo", ppo_json(l.ppo))
      .put_raw("policy", JsonObject()
                             .put("hidden", l.hidden)
                             .put("rounds", l.rounds)
                             .put("m_rank", l.m_rank)
                             .put("head_gain", l.head_gain)
                             .put("weight_mode", l.weight_mode)
                             .put("fixed_hops", l.fixed_hops)
                             .str())
      .str();
}

inline std::string flow_stats_json(const FlowStats& st) {
  return JsonObject()
      .put("bin_seconds", st.bin_seconds)
      .put("bins", st.bins)
      .put("mean", st.mean)
      .put("stddev", st.stddev)
      .put("max", st.max)
      .put("min", st.min)
      .str();
}

// The complete configuration of a run: enough to reproduce it bit-exactly.
inline std::string run_manifest_json(const RunConfig& cfg, const std::string& command) {
  JsonObject network;
  if (!cfg.network.path.empty()) {
    network.put("path", cfg.network.path);
  } else if (cfg.network.grid) {
    network.put("rows", cfg.network.grid->rows)
        .put("cols", cfg.network.grid->cols)
        .put("lane_length_m", cfg.network.grid->lane_length_m);
  }
  JsonObject m;
  m.put("version", kVersion).put("command", command).put_raw("network", network.str());
  if (!cfg.flow_path.empty()) m.put("flow", cfg.flow_path);
  if (cfg.flow_synthesis) m.put_raw("flow_synthesis", synthesis_json(*cfg.flow_synthesis));
  m.put_raw("sim", sim_json(cfg.sim));
  if (cfg.controller) m.put_raw("controller", controller_json(*cfg.controller));
  if (cfg.learner) m.put_raw("learner", learner_json(*cfg.learner));
  m.put("out_dir", cfg.out_dir);
  if (cfg.seed) m.put("seed", *cfg.seed);
  m.put("eval_episodes", cfg.eval_episodes).put("eval_resample_flow", cfg.eval_resample_flow);
  if (!cfg.checkpoint.empty()) m.put("checkpoint", cfg.checkpoint);
  if (!cfg.ledger.empty()) m.put("ledger", cfg.ledger);
  JsonArray baselines;
  for (const std::string& b : cfg.baselines) baselines.push(b);
  m.put_raw("baselines", baselines.str());
  m.put("write_ledger", cfg.write_ledger);
  return m.str() + "\n";
}

inline std::string out_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// gen-flow

struct GenFlowResult {
  SynthesizedFlow synth;
  std::string flow_path;
  std::string stats_path;
  std::string manifest_path;
};

inline GenFlowResult run_gen_flow(const RunConfig& cfg, std::string flow_csv_path = "") {
  cfg.validate(RunMode::GenFlow);
  RoadNetwork net = build_network(cfg.network);
  GenFlowResult res;
  res.synth = synthesize_flow(net, *cfg.flow_synthesis);
  res.flow_path = flow_csv_path.empty() ? out_path(cfg, "flow.csv") : std::move(flow_csv_path);
  save_flow_csv(res.synth.flow, res.flow_path);

  JsonObject stats;
  stats.put("version", kVersion)
      .put_raw("synthesis", synthesis_json(*cfg.flow_synthesis))
      .put("vehicles", static_cast<int>(res.synth.flow.entries.size()))
      .put("base_count", res.synth.base_count)
      .put("copies", res.synth.copies)
      .put_raw("base_stats", flow_stats_json(res.synth.base_stats))
      .put_raw("final_stats", flow_stats_json(res.synth.final_stats));
  res.stats_path = res.flow_path + ".stats.json";
  write_text_file(res.stats_path, stats.str() + "\n");
  res.manifest_path = res.flow_path + ".manifest.json";
  write_text_file(res.manifest_path, run_manifest_json(cfg, "gen-flow"));
  return res;
}

// ---------------------------------------------------------------------------
// baseline

struct IntersectionSums {
  int intersection = 0;
  double r_ifdg = 0, r_stt = 0, r_queue = 0, r_pressure = 0, r_timeloss = 0;
};

inline std::vector<IntersectionSums> per_intersection_sums(const RewardLedger& ledger, int n) {
  std::vector<IntersectionSums> sums(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) sums[static_cast<size_t>(i)].intersection = i;
  for (const RewardRow& r : ledger.rows) {
    IntersectionSums& s = sums.at(static_cast<size_t>(r.intersection));
    s.r_ifdg += r.r_ifdg;
    s.r_stt += r.r_stt;
    s.r_queue += r.r_queue;
    s.r_pressure += r.r_pressure;
    s.r_timeloss += r.r_timeloss;
  }
  return sums;
}

inline void save_intersection_sums(const std::vector<IntersectionSums>& sums,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "intersection,r_ifdg,r_stt,r_queue,r_pressure,r_timeloss\n";
  for (const IntersectionSums& s : sums) {
    out << s.intersection << ',' << rl::fmt_g17(s.r_ifdg) << ',' << rl::fmt_g17(s.r_stt) << ','
        << rl::fmt_g17(s.r_queue) << ',' << rl::fmt_g17(s.r_pressure) << ','
        << rl::fmt_g17(s.r_timeloss) << '\n';
  }
}

inline std::string metrics_json(const EpisodeMetrics& m) {
  JsonObject j;
  if (m.avg_travel_time_s) {
    j.put("avg_travel_time_s", *m.avg_travel_time_s);
  } else {
    j.put_null("avg_travel_time_s");
  }
  j.put("travel_time_defined", m.avg_travel_time_s.has_value())
      .put("inserted", m.inserted)
      .put("departed", m.departed)
      .put("throughput", m.departed)
      .put("active", m.active)
      .put("unserved", m.unserved)
      .put("total_distance_m", m.total_distance_m)
      .put("total_time_s", static_cast<long long>(m.total_time_s));
  return j.str();
}

struct BaselineReport {
  std::string controller;
  EpisodeMetrics metrics;
  std::vector<IntersectionSums> per_intersection;
  std::string report_path, rewards_path, ledger_path, manifest_path;
};

inline BaselineReport run_baseline(const RunConfig& cfg) {
  cfg.validate(RunMode::Baseline);
  RoadNetwork net = build_network(cfg.network);
  ResolvedFlow flow = resolve_flow(cfg, net);
  DecideFn decide = make_controller(*cfg.controller);
  EpisodeResult res = run_episode(net, cfg.sim, flow.flow, decide);

  BaselineReport rep;
  rep.controller = controller_name(cfg.controller->kind);
  rep.metrics = res.metrics;
  rep.per_intersection = per_intersection_sums(res.ledger, net.num_intersections());

  const std::string stem = "baseline_" + rep.controller;
  JsonObject j;
  j.put("version", kVersion)
      .put("controller", rep.controller)
      .put("flow_source", flow.source)
      .put("vehicles_scheduled", static_cast<int>(flow.flow.entries.size()))
      .put_raw("metrics", metrics_json(res.metrics));
  if (flow.synthesis) {
    j.put_raw("flow_base_stats", flow_stats_json(flow.synthesis->base_stats))
        .put_raw("flow_final_stats", flow_stats_json(flow.synthesis->final_stats));
  }
  rep.report_path = out_path(cfg, stem + ".json");
  write_text_file(rep.report_path, j.str() + "\n");

  rep.rewards_path = out_path(cfg, stem + "_rewards.csv");
  save_intersection_sums(rep.per_intersection, rep.rewards_path);
  if (cfg.write_ledger) {
    rep.ledger_path = out_path(cfg, stem + "_ledger.csv");
    save_reward_ledger(res.ledger, rep.ledger_path);
  }
  rep.manifest_path = out_path(cfg, stem + "_manifest.json");
  write_text_file(rep.manifest_path, run_manifest_json(cfg, "baseline"));
  return rep;
}

// ---------------------------------------------------------------------------
// train

inline nn::NltscSpec policy_spec_from(const LearnerConfig& lc, const RoadNetwork& net) {
  nn::NltscSpec spec;
  spec.n = net.num_intersections();
  spec.in_dim = kAugObsDim;
  spec.hidden = lc.hidden;
  spec.out_dim = kNumPhases;
  spec.rounds = lc.rounds;
  spec.m_rank = lc.m_rank;
  spec.head_gain = lc.head_gain;
  if (lc.weight_mode == "learned") {
    spec.mode = nn::WeightMode::Learned;
  } else if (lc.weight_mode == "softmax") {
    spec.mode = nn::WeightMode::Softmax;
  } else if (lc.weight_mode == "fixed") {
    spec.mode = nn::WeightMode::Fixed;
    spec.fixed_w = nn::fixed_hop_weights(net, lc.fixed_hops);
  } else if (lc.weight_mode == "zero") {
    // Ablation: no cross-intersection mixing at all; each agent stays local.
    spec.mode = nn::WeightMode::Fixed;
    spec.fixed_w = nn::Mat::Zero(spec.n, spec.n);
  } else {
    throw std::invalid_argument("unknown weight mode '" + lc.weight_mode + "'");
  }
  return spec;
}

struct TrainReport {
  std::vector<rl::IterationStats> history;
  double final_metric = std::numeric_limits<double>::quiet_NaN();
  std::string checkpoint_path, curves_path, value_error_path, ledger_path, summary_path,
      manifest_path;
};

using IterationCallback = std::function<void(const rl::IterationStats&)>;

inline TrainReport run_training(const RunConfig& cfg, const IterationCallback& on_iteration = {}) {
  cfg.validate(RunMode::Train);
  RoadNetwork net = build_network(cfg.network);
  ResolvedFlow flow = resolve_flow(cfg, net);
  LearnerConfig lc = *cfg.learner;
  if (cfg.seed) lc.ppo.seed = *cfg.seed;
  nn::NltscSpec spec = policy_spec_from(lc, net);

  rl::Trainer tr(net, cfg.sim, flow.flow, spec, lc.ppo);
  if (!cfg.checkpoint.empty() && std::filesystem::exists(cfg.checkpoint)) {
    tr.load_checkpoint(cfg.checkpoint);  // resume
  }
  while (tr.iteration() < tr.config().iterations) {
    rl::IterationStats s = tr.iterate();
    if (on_iteration) on_iteration(s);
  }

  TrainReport rep;
  rep.history = tr.history();
  rep.final_metric = tr.final_metric();
  rep.checkpoint_path = out_path(cfg, "checkpoint.ckpt");
  tr.save_checkpoint(rep.checkpoint_path);
  rep.curves_path = out_path(cfg, "curves.csv");
  rl::save_training_curves(rep.curves_path, rep.history);
  rep.value_error_path = out_path(cfg, "value_error.csv");
  rl::save_value_error_curve(rep.value_error_path, rep.history);

  if (cfg.write_ledger) {
    EpisodeResult ev = run_episode(net, cfg.sim, flow.flow, tr.greedy_controller());
    rep.ledger_path = out_path(cfg, "ledger.csv");
    save_reward_ledger(ev.ledger, rep.ledger_path);
  }

  JsonObject summary;
  summary.put("version", kVersion)
      .put("iterations", static_cast<int>(rep.history.size()))
      .put("final_metric_mean_last10", rep.final_metric)
      .put("final_eval_travel_time",
           rep.history.empty() ? std::numeric_limits<double>::quiet_NaN()
                               : rep.history.back().eval_travel_time)
      .put("final_value_error", rep.history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                    : rep.history.back().value_error)
      .put("checkpoint", rep.checkpoint_path);
  rep.summary_path = out_path(cfg, "train_summary.json");
  write_text_file(rep.summary_path, summary.str() + "\n");
  rep.manifest_path = out_path(cfg, "train_manifest.json");
  write_text_file(rep.manifest_path, run_manifest_json(cfg, "train"));
  return rep;
}

// ---------------------------------------------------------------------------
// eval

struct EvalMethodRow {
  std::string method;
  std::vector<double> travel_times;  // defined episodes only
  std::vector<int> throughputs;
  int undefined_episodes = 0;
  int total_unserved = 0;
  double mean_travel_time = std::numeric_limits<double>::quiet_NaN();
  double std_travel_time = std::numeric_limits<double>::quiet_NaN();  // population
  double mean_throughput = 0.0;
};

struct EvalReport {
  int episodes = 0;
  std::vector<EvalMethodRow> rows;
  std::string table_path, json_path, manifest_path;
};

inline void finish_row(EvalMethodRow& row) {
  if (!row.travel_times.empty()) {
    double s = 0.0;
    for (double t : row.travel_times) s += t;
    row.mean_travel_time = s / static_cast<double>(row.travel_times.size());
    double sq = 0.0;
    for (double t : row.travel_times) {
      sq += (t - row.mean_travel_time) * (t - row.mean_travel_time);
    }
    row.std_travel_time = std::sqrt(sq / static_cast<double>(row.travel_times.size()));
  }
  double tp = 0.0;
  for (int t : row.throughputs) tp += t;
  row.mean_throughput = row.throughputs.empty() ? 0.0 : tp / static_cast<double>(row.throughputs.size());
}

inline EvalReport run_eval(const RunConfig& cfg) {
  cfg.validate(RunMode::Eval);
  RoadNetwork net = build_network(cfg.network);

  // One flow per episode: fresh synthesis seeds when requested and possible,
  // otherwise the same schedule each time (deterministic repeats).
  std::vector<FlowSchedule> flows;
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    std::optional<std::uint64_t> seed;
    if (cfg.flow_synthesis && cfg.eval_resample_flow) {
      seed = cfg.flow_synthesis->seed + static_cast<std::uint64_t>(e);
    }
    if (e > 0 && !seed) {
      flows.push_back(flows.front());
      continue;
    }
    flows.push_back(resolve_flow(cfg, net, seed).flow);
  }

  // The trained policy: construct a shape-compatible trainer, then let the
  // checkpoint replace specs, parameters, and optimizer state.
  LearnerConfig lc = cfg.learner.value_or(LearnerConfig{});
  rl::Trainer tr(net, cfg.sim, flows.front(), policy_spec_from(lc, net), lc.ppo);
  tr.load_checkpoint(cfg.checkpoint);

  EvalReport rep;
  rep.episodes = cfg.eval_episodes;

  auto run_method = [&](const std::string& name, const DecideFn& decide) {
    EvalMethodRow row;
    row.method = name;
    for (const FlowSchedule& flow : flows) {
      EpisodeResult res = run_episode(net, cfg.sim, flow, decide, {.record_ledger = false});
      if (res.metrics.avg_travel_time_s) {
        row.travel_times.push_back(*res.metrics.avg_travel_time_s);
      } else {
        ++row.undefined_episodes;
      }
      row.throughputs.push_back(res.metrics.departed);
      row.total_unserved += res.metrics.unserved;
    }
    finish_row(row);
    rep.rows.push_back(std::move(row));
  };

  run_method("nltsc_" + nn::weight_mode_name(tr.policy().spec.mode), tr.greedy_controller());
  for (const std::string& name : cfg.baselines) {
    ControllerConfig cc;
    cc.kind = controller_from_name(name);
    run_method(name, make_controller(cc));
  }

  std::ostringstream table;
  table << "method,episodes,defined_episodes,mean_travel_time_s,std_travel_time_s,"
           "mean_throughput,total_unserved\n";
  for (const EvalMethodRow& row : rep.rows) {
    table << row.method << ',' << rep.episodes << ','
          << (rep.episodes - row.undefined_episodes) << ','
          << rl::fmt_g17(row.mean_travel_time) << ',' << rl::fmt_g17(row.std_travel_time) << ','
          << rl::fmt_g17(row.mean_throughput) << ',' << row.total_unserved << '\n';
  }
  rep.table_path = out_path(cfg, "eval_table.csv");
  write_text_file(rep.table_path, table.str());

  JsonArray methods;
  for (const EvalMethodRow& row : rep.rows) {
    JsonArray tts, tps;
    for (double t : row.travel_times) tts.push(t);
    for (int t : row.throughputs) tps.push(t);
    methods.push_raw(JsonObject()
                         .put("method", row.method)
                         .put("mean_travel_time_s", row.mean_travel_time)
                         .put("std_travel_time_s", row.std_travel_time)
                         .put("mean_throughput", row.mean_throughput)
                         .put("undefined_episodes", row.undefined_episodes)
                         .put("total_unserved", row.total_unserved)
                         .put_raw("travel_times_s", tts.str())
                         .put_raw("throughputs", tps.str())
                         .str());
  }
  JsonObject j;
  j.put("version", kVersion)
      .put("checkpoint", cfg.checkpoint)
      .put("episodes", rep.episodes)
      .put_raw("methods", methods.str());
  rep.json_path = out_path(cfg, "eval.json");
  write_text_file(rep.json_path, j.str() + "\n");
  rep.manifest_path = out_path(cfg, "eval_manifest.json");
  write_text_file(rep.manifest_path, run_manifest_json(cfg, "eval"));
  return rep;
}

// ---------------------------------------------------------------------------
// report

inline void save_weight_matrix(const nn::Mat& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  for (int r = 0; r < w.rows(); ++r) {
    for (int c = 0; c < w.cols(); ++c) out << (c ? "," : "") << rl::fmt_g17(w(r, c));
    out << '\n';
  }
}

struct ReportResult {
  std::string correlation_path;
  std::vector<std::string> weight_paths;
  std::string curves_path, value_error_path, manifest_path;
};

inline ReportResult export_reports(const RunConfig& cfg) {
  cfg.validate(RunMode::Report);
  ReportResult res;

  if (!cfg.ledger.empty()) {
    CorrelationReport rep = reward_correlations(load_reward_ledger(cfg.ledger));
    res.correlation_path = out_path(cfg, "reward_correlation.csv");
    save_correlation_report(rep, res.correlation_path);
  }

  if (!cfg.checkpoint.empty()) {
    RoadNetwork net = build_network(cfg.network);
    ResolvedFlow flow = resolve_flow(cfg, net);
    LearnerConfig lc = cfg.learner.value_or(LearnerConfig{});
    rl::Trainer tr(net, cfg.sim, flow.flow, policy_spec_from(lc, net), lc.ppo);
    tr.load_checkpoint(cfg.checkpoint);

    res.curves_path = out_path(cfg, "curves.csv");
    rl::save_training_curves(res.curves_path, tr.history());
    res.value_error_path = out_path(cfg, "value_error.csv");
    rl::save_value_error_curve(res.value_error_path, tr.history());

    for (int r = 0; r < tr.policy().spec.rounds; ++r) {
      std::string p = out_path(cfg, "w_policy_round" + std::to_string(r) + ".csv");
      save_weight_matrix(tr.policy().effective_w(r), p);
      res.weight_paths.push_back(std::move(p));
    }
    for (int r = 0; r < tr.value().spec.rounds; ++r) {
      std::string p = out_path(cfg, "w_value_round" + std::to_string(r) + ".csv");
      save_weight_matrix(tr.value().effective_w(r), p);
      res.weight_paths.push_back(std::move(p));
    }
  }

  res.manifest_path = out_path(cfg, "report_manifest.json");
  write_text_file(res.manifest_path, run_manifest_json(cfg, "report"));
  return res;
}

}  // namespace tsc::harness
