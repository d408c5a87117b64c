#pragma once

// Runs one full control episode and assembles the per-step reward ledger.

#include <vector>

#include "tsc/controllers.hpp"
#include "tsc/rewards.hpp"
#include "tsc/simulator.hpp"

namespace tsc {

struct EpisodeOptions {
  bool record_ledger = true;
  std::vector<TraceRow>* trace = nullptr;
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  RewardLedger ledger;
};

inline EpisodeResult run_episode(const RoadNetwork& net, const SimConfig& cfg,
                                 const FlowSchedule& flow, const DecideFn& decide,
                                 const EpisodeOptions& opts = {}) {
  SimState state(net, cfg, flow);
  if (opts.trace) state.set_trace_sink(opts.trace);
  EpisodeResult res;
  const int steps = cfg.decision_steps();
  const int n = net.num_intersections();
  for (int d = 0; d < steps; ++d) {
    std::vector<int> joint = decide(state, d);
    StepRecord rec = state.run_decision_step(joint);
    if (opts.record_ledger) {
      for (int i = 0; i < n; ++i) {
        RewardRow row;
        row.d = d;
        row.intersection = i;
        row.r_ifdg = ifdg_reward(rec, i, cfg.v_max_mps);
        row.r_stt = stt_reward(rec, i);
        // Instantaneous signals are sampled at the end of the interval, so
        // the row reflects the state the decision produced.
        row.r_queue = queue_reward(state, i);
        row.r_pressure = pressure_reward(state, i);
        row.r_timeloss = timeloss_reward(state, i);
        res.ledger.rows.push_back(row);
      }
    }
  }
  res.metrics = state.metrics();
  return res;
}

}  // namespace tsc
