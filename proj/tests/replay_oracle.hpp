#pragma once

// Test oracle: recomputes per-(step, intersection) rewards and episode
// totals directly from an exported vehicle trace, independently of the
// simulator's internal bookkeeping.

#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tsc/network.hpp"
#include "tsc/simulator.hpp"

struct ReplayRewards {
  std::map<std::pair<int, int>, double> ifdg;  // (d, intersection) -> reward
  std::map<std::pair<int, int>, double> stt;
  double total_distance = 0.0;
  long long total_time = 0;
};

inline ReplayRewards replay_from_trace(const std::vector<tsc::TraceRow>& rows,
                                       const tsc::RoadNetwork& net, double v_max, int t_phase,
                                       int horizon) {
  ReplayRewards out;
  std::map<int, std::vector<tsc::TraceRow>> per_vehicle;
  for (const tsc::TraceRow& r : rows) {
    int d = r.tick / t_phase;
    int i = net.jurisdiction_of(r.lane);
    out.ifdg[{d, i}] -= v_max - r.speed;
    out.total_distance += r.speed;
    per_vehicle[r.vehicle].push_back(r);
  }
  for (auto& [vid, vr] : per_vehicle) {
    for (size_t k = 0; k + 1 < vr.size(); ++k) {
      if (vr[k + 1].tick != vr[k].tick + 1) {
        throw std::logic_error("trace has a tick gap for vehicle " + std::to_string(vid));
      }
    }
    const int x_e = vr.front().tick;
    const int x_l = vr.back().tick + 1;  // horizon-truncated vehicles end at `horizon`
    out.total_time += x_l - x_e;
    // Contiguous runs of one jurisdiction -> stays; spread each stay's
    // seconds across the decision windows it overlaps.
    size_t k = 0;
    while (k < vr.size()) {
      int jur = net.jurisdiction_of(vr[k].lane);
      size_t e = k;
      while (e < vr.size() && net.jurisdiction_of(vr[e].lane) == jur) ++e;
      const int stay_start = vr[k].tick;
      const int stay_end = vr[e - 1].tick + 1;
      for (int d = stay_start / t_phase; d * t_phase < stay_end && d * t_phase < horizon; ++d) {
        int w0 = d * t_phase, w1 = (d + 1) * t_phase;
        int overlap = std::min(stay_end, w1) - std::max(stay_start, w0);
        if (overlap > 0) out.stt[{d, jur}] -= overlap;
      }
      k = e;
    }
  }
  return out;
}
