#pragma once

// Classical signal controllers. All of them pick one of the four standard
// phases per intersection at each decision boundary.
//
// Tie-breaking is deterministic everywhere: keep the currently selected
// phase when it ties for the best score, otherwise take the lowest phase id.

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/features.hpp"
#include "tsc/simulator.hpp"

namespace tsc {

inline int fixed_time_phase(const std::array<int, 4>& cycle, int d) {
  return cycle[static_cast<size_t>(d % 4)];
}

namespace detail {
inline int argmax_phase(const std::array<double, 4>& score, int current) {
  int best = 0;
  for (int p = 1; p < 4; ++p) {
    if (score[static_cast<size_t>(p)] > score[static_cast<size_t>(best)]) best = p;
  }
  if (score[static_cast<size_t>(current)] == score[static_cast<size_t>(best)]) return current;
  return best;
}
}  // namespace detail

// Classic max-pressure: phase score is the summed upstream-minus-downstream
// queue over the phase's movements.
inline int max_pressure_phase(const SimState& state, int intersection) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  std::array<double, 4> score{};
  for (const Phase& p : x.phases) {
    for (int slot : p.movements) {
      const Movement& m = x.movements[static_cast<size_t>(slot)];
      score[static_cast<size_t>(p.id)] +=
          lane_waiting_count(state, m.from_lane) - lane_waiting_count(state, m.to_lane);
    }
  }
  return detail::argmax_phase(score, state.signal(intersection).selected_phase);
}

// Efficient max-pressure: per-lane-normalized pressure. With dedicated
// single lanes per movement this coincides numerically with max-pressure;
// it is kept as a distinct controller for reporting.
inline int efficient_mp_phase(const SimState& state, int intersection) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  std::array<double, 4> score{};
  for (const Phase& p : x.phases) {
    for (int slot : p.movements) {
      score[static_cast<size_t>(p.id)] +=
          movement_efficient_pressure(state, x.movements[static_cast<size_t>(slot)]);
    }
  }
  return detail::argmax_phase(score, state.signal(intersection).selected_phase);
}

// Advanced max-pressure: adds near-stop-line running vehicles as demand.
// By default running vehicles count toward the currently green phase only
// (they discharge within the interval if it stays green); with
// running_all_phases they count as demand for their phase unconditionally.
inline int advanced_mp_phase(const SimState& state, int intersection, double range_m,
                             bool running_all_phases = false) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  const int current = state.signal(intersection).selected_phase;
  std::array<double, 4> score{};
  for (const Phase& p : x.phases) {
    for (int slot : p.movements) {
      const Movement& m = x.movements[static_cast<size_t>(slot)];
      score[static_cast<size_t>(p.id)] += movement_efficient_pressure(state, m);
      if (running_all_phases || p.id == current) {
        score[static_cast<size_t>(p.id)] += lane_running_in_range(state, m.from_lane, range_m);
      }
    }
  }
  return detail::argmax_phase(score, current);
}

enum class ControllerKind { FixedTime, MaxPressure, EfficientMP, AdvancedMP };

inline ControllerKind controller_from_name(const std::string& name) {
  if (name == "fixed_time") return ControllerKind::FixedTime;
  if (name == "max_pressure") return ControllerKind::MaxPressure;
  if (name == "efficient_mp") return ControllerKind::EfficientMP;
  if (name == "advanced_mp") return ControllerKind::AdvancedMP;
  throw std::invalid_argument("unknown controller: " + name);
}

inline std::string controller_name(ControllerKind k) {
  switch (k) {
    case ControllerKind::FixedTime: return "fixed_time";
    case ControllerKind::MaxPressure: return "max_pressure";
    case ControllerKind::EfficientMP: return "efficient_mp";
    case ControllerKind::AdvancedMP: return "advanced_mp";
  }
  throw std::logic_error("bad controller kind");
}

struct ControllerConfig {
  ControllerKind kind = ControllerKind::FixedTime;
  std::array<int, 4> fixed_cycle{0, 1, 2, 3};
  double range_m = -1.0;  // < 0: use the config's effective range
  bool advanced_running_all = false;
};

// A decision rule: joint phase command for decision index d.
using DecideFn = std::function<std::vector<int>(const SimState&, int)>;

inline DecideFn make_controller(const ControllerConfig& cfg) {
  return [cfg](const SimState& state, int d) {
    const int n = state.network().num_intersections();
    double range = cfg.range_m > 0 ? cfg.range_m : state.config().effective_range_m();
    std::vector<int> joint(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      switch (cfg.kind) {
        case ControllerKind::FixedTime:
          joint[static_cast<size_t>(i)] = fixed_time_phase(cfg.fixed_cycle, d);
          break;
        case ControllerKind::MaxPressure:
          joint[static_cast<size_t>(i)] = max_pressure_phase(state, i);
          break;
        case ControllerKind::EfficientMP:
          joint[static_cast<size_t>(i)] = efficient_mp_phase(state, i);
          break;
        case ControllerKind::AdvancedMP:
          joint[static_cast<size_t>(i)] =
              advanced_mp_phase(state, i, range, cfg.advanced_running_all);
          break;
      }
    }
    return joint;
  };
}

}  // namespace tsc
