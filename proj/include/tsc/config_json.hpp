#pragma once

// RunConfig parsing from JSON files. Kept separate from harness.hpp so the
// orchestration layer has no third-party dependency; only code that loads
// configuration files (the CLI, integration tests) pays for the JSON parser.
//
// The schema is strict: unknown keys and wrong types are errors, so a typoed
// hyperparameter can never be silently ignored.

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tsc/harness.hpp"

namespace tsc::harness {

namespace cfg_detail {

using nlohmann::json;

inline void expect_keys(const json& j, const std::string& where,
                        std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("bad value for '" + std::string(key) + "' in " + where + ": " +
                                e.what());
  }
}

inline void parse_sim(const json& j, SimConfig& sim) {
  expect_keys(j, "sim", {"v_max_mps", "vehicle_len_m", "min_gap_m", "t_phase_s", "yellow_s",
                         "t_tsc_s", "seed", "travel_time_from_scheduled"});
  read_if(j, "v_max_mps", sim.v_max_mps, "sim");
  read_if(j, "vehicle_len_m", sim.vehicle_len_m, "sim");
  read_if(j, "min_gap_m", sim.min_gap_m, "sim");
  read_if(j, "t_phase_s", sim.t_phase_s, "sim");
  read_if(j, "yellow_s", sim.yellow_s, "sim");
  read_if(j, "t_tsc_s", sim.t_tsc_s, "sim");
  read_if(j, "seed", sim.seed, "sim");
  read_if(j, "travel_time_from_scheduled", sim.travel_time_from_scheduled, "sim");
}

inline FlowSynthesisSpec parse_synthesis(const json& j) {
  expect_keys(j, "flow_synthesis",
              {"pattern", "total_vehicles", "duration_s", "resample_fraction",
               "fluctuation_factor", "peak_weight", "window_start_s", "window_end_s", "seed"});
  FlowSynthesisSpec f;
  std::string pattern = flow_pattern_name(f.pattern);
  read_if(j, "pattern", pattern, "flow_synthesis");
  f.pattern = flow_pattern_from_name(pattern);
  read_if(j, "total_vehicles", f.total_vehicles, "flow_synthesis");
  read_if(j, "duration_s", f.duration_s, "flow_synthesis");
  read_if(j, "resample_fraction", f.resample_fraction, "flow_synthesis");
  read_if(j, "fluctuation_factor", f.fluctuation_factor, "flow_synthesis");
  read_if(j, "peak_weight", f.peak_weight, "flow_synthesis");
  read_if(j, "window_start_s", f.window_start_s, "flow_synthesis");
  read_if(j, "window_end_s", f.window_end_s, "flow_synthesis");
  read_if(j, "seed", f.seed, "flow_synthesis");
  return f;
}

inline ControllerConfig parse_controller(const json& j) {
  expect_keys(j, "controller", {"kind", "fixed_cycle", "range_m", "advanced_running_all"});
  ControllerConfig c;
  std::string kind = controller_name(c.kind);
  read_if(j, "kind", kind, "controller");
  c.kind = controller_from_name(kind);
  if (j.contains("fixed_cycle")) {
    const json& cyc = j.at("fixed_cycle");
    if (!cyc.is_array() || cyc.size() != c.fixed_cycle.size()) {
      throw std::invalid_argument("controller.fixed_cycle must list " +
                                  std::to_string(c.fixed_cycle.size()) + " phase indices");
    }
    for (size_t i = 0; i < c.fixed_cycle.size(); ++i) c.fixed_cycle[i] = cyc.at(i).get<int>();
  }
  read_if(j, "range_m", c.range_m, "controller");
  read_if(j, "advanced_running_all", c.advanced_running_all, "controller");
  return c;
}

inline LearnerConfig parse_learner(const json& j) {
  expect_keys(j, "learner", {"ppo", "policy"});
  LearnerConfig l;
  if (j.contains("ppo")) {
    const json& p = j.at("ppo");
    expect_keys(p, "learner.ppo",
                {"iterations", "episodes_per_iter", "epochs", "minibatch_steps", "gamma",
                 "gae_lambda", "clip_eps", "lr", "lr_decay_linear", "value_coef", "entropy_coef",
                 "reward_scale", "reward", "eval_sampled", "seed"});
    read_if(p, "iterations", l.ppo.iterations, "learner.ppo");
    read_if(p, "episodes_per_iter", l.ppo.episodes_per_iter, "learner.ppo");
    read_if(p, "epochs", l.ppo.epochs, "learner.ppo");
    read_if(p, "minibatch_steps", l.ppo.minibatch_steps, "learner.ppo");
    read_if(p, "gamma", l.ppo.gamma, "learner.ppo");
    read_if(p, "gae_lambda", l.ppo.gae_lambda, "learner.ppo");
    read_if(p, "clip_eps", l.ppo.clip_eps, "learner.ppo");
    read_if(p, "lr", l.ppo.lr, "learner.ppo");
    read_if(p, "lr_decay_linear", l.ppo.lr_decay_linear, "learner.ppo");
    read_if(p, "value_coef", l.ppo.value_coef, "learner.ppo");
    read_if(p, "entropy_coef", l.ppo.entropy_coef, "learner.ppo");
    read_if(p, "reward_scale", l.ppo.reward_scale, "learner.ppo");
    std::string reward = rl::reward_kind_name(l.ppo.reward);
    read_if(p, "reward", reward, "learner.ppo");
    l.ppo.reward = rl::reward_kind_from_name(reward);
    read_if(p, "eval_sampled", l.ppo.eval_sampled, "learner.ppo");
    read_if(p, "seed", l.ppo.seed, "learner.ppo");
  }
  if (j.contains("policy")) {
    const json& p = j.at("policy");
    expect_keys(p, "learner.policy",
                {"hidden", "rounds", "m_rank", "head_gain", "weight_mode", "fixed_hops"});
    read_if(p, "hidden", l.hidden, "learner.policy");
    read_if(p, "rounds", l.rounds, "learner.policy");
    read_if(p, "m_rank", l.m_rank, "learner.policy");
    read_if(p, "head_gain", l.head_gain, "learner.policy");
    read_if(p, "weight_mode", l.weight_mode, "learner.policy");
    read_if(p, "fixed_hops", l.fixed_hops, "learner.policy");
  }
  return l;
}

inline NetworkSource parse_network(const json& j) {
  NetworkSource n;
  if (j.is_string()) {
    n.path = j.get<std::string>();
    return n;
  }
  expect_keys(j, "network", {"rows", "cols", "lane_length_m"});
  GridSpec g;
  read_if(j, "rows", g.rows, "network");
  read_if(j, "cols", g.cols, "network");
  read_if(j, "lane_length_m", g.lane_length_m, "network");
  n.grid = g;
  return n;
}

}  // namespace cfg_detail

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::string& origin) {
  using cfg_detail::read_if;
  cfg_detail::expect_keys(
      j, origin,
      {"network", "flow", "flow_synthesis", "sim", "controller", "learner", "out_dir", "seed",
       "eval_episodes", "eval_resample_flow", "checkpoint", "ledger", "baselines", "write_ledger"});
  RunConfig cfg;
  if (j.contains("network")) cfg.network = cfg_detail::parse_network(j.at("network"));
  read_if(j, "flow", cfg.flow_path, origin);
  if (j.contains("flow_synthesis")) {
    cfg.flow_synthesis = cfg_detail::parse_synthesis(j.at("flow_synthesis"));
  }
  if (j.contains("sim")) cfg_detail::parse_sim(j.at("sim"), cfg.sim);
  if (j.contains("controller")) cfg.controller = cfg_detail::parse_controller(j.at("controller"));
  if (j.contains("learner")) cfg.learner = cfg_detail::parse_learner(j.at("learner"));
  read_if(j, "out_dir", cfg.out_dir, origin);
  if (j.contains("seed")) {
    std::uint64_t seed = 0;
    read_if(j, "seed", seed, origin);
    cfg.seed = seed;
  }
  read_if(j, "eval_episodes", cfg.eval_episodes, origin);
  read_if(j, "eval_resample_flow", cfg.eval_resample_flow, origin);
  read_if(j, "checkpoint", cfg.checkpoint, origin);
  read_if(j, "ledger", cfg.ledger, origin);
  read_if(j, "baselines", cfg.baselines, origin);
  read_if(j, "write_ledger", cfg.write_ledger, origin);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open run config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("run config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path);
}

// Grid shorthand for the command line: "3x3" or "3x4:250" (rows x cols[:lane length]).
inline NetworkSource parse_network_arg(const std::string& arg) {
  NetworkSource n;
  size_t x = arg.find('x');
  bool grid_like = !arg.empty() && x != std::string::npos && x > 0;
  for (size_t i = 0; grid_like && i < x; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(arg[i]))) grid_like = false;
  }
  if (!grid_like || std::filesystem::exists(arg)) {
    n.path = arg;  // treat as a spec file path
    return n;
  }
  GridSpec g;
  try {
    size_t used = 0;
    g.rows = std::stoi(arg.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("rows");
    size_t colon = arg.find(':', x + 1);
    std::string cols = arg.substr(x + 1, colon == std::string::npos ? std::string::npos
                                                                    : colon - (x + 1));
    g.cols = std::stoi(cols, &used);
    if (used != cols.size() || cols.empty()) throw std::invalid_argument("cols");
    if (colon != std::string::npos) {
      std::string len = arg.substr(colon + 1);
      g.lane_length_m = std::stod(len, &used);
      if (used != len.size() || len.empty()) throw std::invalid_argument("length");
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse network '" + arg +
                                "': expected a spec file path or ROWSxCOLS[:LANE_LENGTH_M]");
  }
  n.grid = g;
  return n;
}

}  // namespace tsc::harness
