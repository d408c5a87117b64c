#pragma once

// Synthetic traffic-flow generation for grid networks.
//
// A flow is a list of (enter time, full lane route) entries. Routes connect
// sampled boundary entry/exit points along shortest grid paths (BFS over
// (intersection, heading) states, no U-turns). Base temporal/spatial
// patterns:
//   uniform  - uniform OD endpoints, uniform enter times
//   peaked   - OD endpoints weighted toward a NW-entry/SE-exit hotspot,
//              uniform enter times
//   rush     - uniform OD endpoints, triangular enter-time ramp peaking at
//              the episode midpoint
//
// Fluctuation re-samples a share of the generated vehicles and adds copies
// back with re-assigned enter times drawn from a concentrated window
// (default: the middle third of the horizon), raising arrival-rate variance
// without changing the route population.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/network.hpp"
#include "tsc/rand.hpp"
#include "tsc/simulator.hpp"

namespace tsc {

// ---------------------------------------------------------------------------
// Boundary endpoints

// side North, index c = the entry/exit at the top of column c; side West,
// index r = the left end of row r; and so on. Entering vehicles travel
// opposite(side); exiting vehicles travel toward side.
struct BoundaryPoint {
  Dir side = Dir::North;
  int index = 0;

  bool operator==(const BoundaryPoint& o) const { return side == o.side && index == o.index; }
};

inline const char* side_name(Dir d) {
  static const char* names[4] = {"north", "east", "south", "west"};
  return names[static_cast<int>(d)];
}

inline Dir side_from_name(const std::string& s) {
  for (int d = 0; d < 4; ++d) {
    if (s == side_name(static_cast<Dir>(d))) return static_cast<Dir>(d);
  }
  throw std::invalid_argument("unknown grid side '" + s + "'");
}

inline std::string to_string(const BoundaryPoint& p) {
  return std::string(side_name(p.side)) + ":" + std::to_string(p.index);
}

// Parses "side:index", e.g. "north:2".
inline BoundaryPoint parse_boundary_point(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("boundary point '" + s + "' must look like side:index");
  }
  BoundaryPoint p;
  p.side = side_from_name(s.substr(0, colon));
  try {
    p.index = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("boundary point '" + s + "' has a bad index");
  }
  return p;
}

inline std::vector<BoundaryPoint> boundary_points(const RoadNetwork& net) {
  std::vector<BoundaryPoint> pts;
  for (int c = 0; c < net.cols; ++c) pts.push_back({Dir::North, c});
  for (int c = 0; c < net.cols; ++c) pts.push_back({Dir::South, c});
  for (int r = 0; r < net.rows; ++r) pts.push_back({Dir::West, r});
  for (int r = 0; r < net.rows; ++r) pts.push_back({Dir::East, r});
  return pts;
}

inline int boundary_intersection(const RoadNetwork& net, const BoundaryPoint& p) {
  switch (p.side) {
    case Dir::North:
      if (p.index < 0 || p.index >= net.cols) break;
      return net.intersection_at(0, p.index);
    case Dir::South:
      if (p.index < 0 || p.index >= net.cols) break;
      return net.intersection_at(net.rows - 1, p.index);
    case Dir::West:
      if (p.index < 0 || p.index >= net.rows) break;
      return net.intersection_at(p.index, 0);
    case Dir::East:
      if (p.index < 0 || p.index >= net.rows) break;
      return net.intersection_at(p.index, net.cols - 1);
  }
  throw std::invalid_argument("boundary point " + to_string(p) + " is outside the grid");
}

// Shortest lane route entering at `entry` and leaving at `exit`. Paths are
// found by BFS over (intersection, incoming heading) with {through, left,
// right} transitions. Same-point pairs are rejected up front: they carry no
// origin-destination demand, even where a loop around a block would be
// drivable. Throws with both endpoints named when no route exists.
inline std::vector<int> route_between(const RoadNetwork& net, const BoundaryPoint& entry,
                                      const BoundaryPoint& exit) {
  const int a = boundary_intersection(net, entry);
  const int b = boundary_intersection(net, exit);
  if (entry == exit) {
    throw std::invalid_argument("no route from " + to_string(entry) + " to " + to_string(exit) +
                                ": a vehicle cannot leave where it entered");
  }
  const Dir h0 = opposite(entry.side);  // travel direction when entering
  const Dir h1 = exit.side;             // travel direction when leaving

  const int n = net.num_intersections();
  auto state_id = [&](int x, Dir h) { return x * 4 + static_cast<int>(h); };
  std::vector<int> prev_state(static_cast<size_t>(n * 4), -1);
  std::vector<Turn> turn_taken(static_cast<size_t>(n * 4), Turn::Through);
  std::vector<bool> seen(static_cast<size_t>(n * 4), false);

  auto neighbor = [&](int x, Dir h) -> int {  // -1: off the grid
    const Intersection& xi = net.intersections[static_cast<size_t>(x)];
    int r = xi.row, c = xi.col;
    switch (h) {
      case Dir::North: --r; break;
      case Dir::South: ++r; break;
      case Dir::East: ++c; break;
      case Dir::West: --c; break;
    }
    if (r < 0 || r >= net.rows || c < 0 || c >= net.cols) return -1;
    return net.intersection_at(r, c);
  };

  const int start = state_id(a, h0);
  seen[static_cast<size_t>(start)] = true;
  std::deque<int> queue{start};
  int goal_state = -1;
  Turn exit_turn = Turn::Through;
  static constexpr Turn kTurnOrder[3] = {Turn::Through, Turn::Left, Turn::Right};
  while (!queue.empty() && goal_state < 0) {
    const int s = queue.front();
    queue.pop_front();
    const int x = s / 4;
    const Dir h = static_cast<Dir>(s % 4);
    for (Turn t : kTurnOrder) {
      const Dir h2 = heading_after(h, t);
      const int y = neighbor(x, h2);
      if (y < 0) {
        if (x == b && h2 == h1) {  // leaves the grid exactly at the exit point
          goal_state = s;
          exit_turn = t;
          break;
        }
        continue;
      }
      const int s2 = state_id(y, h2);
      if (seen[static_cast<size_t>(s2)]) continue;
      seen[static_cast<size_t>(s2)] = true;
      prev_state[static_cast<size_t>(s2)] = s;
      turn_taken[static_cast<size_t>(s2)] = t;
      queue.push_back(s2);
    }
  }
  if (goal_state < 0) {
    throw std::invalid_argument("no route from " + to_string(entry) + " to " + to_string(exit));
  }

  // Turns at each intersection along the path, in travel order.
  std::vector<Turn> turns{exit_turn};
  for (int s = goal_state; s != start; s = prev_state[static_cast<size_t>(s)]) {
    turns.push_back(turn_taken[static_cast<size_t>(s)]);
  }
  std::reverse(turns.begin(), turns.end());

  const Intersection& ai = net.intersections[static_cast<size_t>(a)];
  const Road& in = net.roads[static_cast<size_t>(ai.in_road[static_cast<int>(entry.side)])];
  const int first_lane = in.lanes[static_cast<size_t>(turns.front())];
  return route_via_kinds(net, first_lane, {turns.begin() + 1, turns.end()});
}

// ---------------------------------------------------------------------------
// Synthesis spec and arrival statistics

enum class FlowPattern { Uniform, Peaked, Rush };

inline std::string flow_pattern_name(FlowPattern p) {
  switch (p) {
    case FlowPattern::Uniform: return "uniform";
    case FlowPattern::Peaked: return "peaked";
    case FlowPattern::Rush: return "rush";
  }
  throw std::logic_error("bad flow pattern");
}

inline FlowPattern flow_pattern_from_name(const std::string& s) {
  if (s == "uniform") return FlowPattern::Uniform;
  if (s == "peaked") return FlowPattern::Peaked;
  if (s == "rush") return FlowPattern::Rush;
  throw std::invalid_argument("unknown flow pattern '" + s + "'");
}

struct FlowSynthesisSpec {
  FlowPattern pattern = FlowPattern::Uniform;
  int total_vehicles = 0;
  int duration_s = 3600;          // enter times fall in [0, duration)
  double resample_fraction = 0.0; // share of base vehicles copied back
  double fluctuation_factor = 1.0;// multiplier on the number of copies
  double peak_weight = 4.0;       // hotspot weight for the peaked pattern
  int window_start_s = -1;        // re-assigned enter-time window; -1 -> the
  int window_end_s = -1;          //   middle third of [0, duration)
  std::uint64_t seed = 0;

  void validate() const {
    if (total_vehicles <= 0) throw std::invalid_argument("total_vehicles must be positive");
    if (duration_s <= 0) throw std::invalid_argument("duration_s must be positive");
    if (resample_fraction < 0.0 || resample_fraction > 1.0) {
      throw std::invalid_argument("resample_fraction must be in [0, 1]");
    }
    if (fluctuation_factor < 0.0) {
      throw std::invalid_argument("fluctuation_factor must be non-negative");
    }
    if (peak_weight <= 0.0) throw std::invalid_argument("peak_weight must be positive");
    const bool has_window = window_start_s >= 0 || window_end_s >= 0;
    if (has_window &&
        !(window_start_s >= 0 && window_end_s > window_start_s && window_end_s <= duration_s)) {
      throw std::invalid_argument("fluctuation window must satisfy 0 <= start < end <= duration");
    }
  }
};

struct FlowStats {
  int bin_seconds = 300;
  int bins = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  int max = 0;
  int min = 0;
};

inline FlowStats compute_flow_stats(const FlowSchedule& flow, int duration_s,
                                    int bin_seconds = 300) {
  if (duration_s <= 0 || bin_seconds <= 0) {
    throw std::invalid_argument("flow stats need positive duration and bin size");
  }
  FlowStats st;
  st.bin_seconds = bin_seconds;
  st.bins = (duration_s + bin_seconds - 1) / bin_seconds;
  std::vector<int> counts(static_cast<size_t>(st.bins), 0);
  for (const FlowEntry& e : flow.entries) {
    if (e.enter_s < 0 || e.enter_s >= duration_s) continue;
    ++counts[static_cast<size_t>(e.enter_s / bin_seconds)];
  }
  double sum = 0.0, sq = 0.0;
  int mx = std::numeric_limits<int>::min(), mn = std::numeric_limits<int>::max();
  for (int c : counts) {
    sum += c;
    sq += static_cast<double>(c) * c;
    mx = std::max(mx, c);
    mn = std::min(mn, c);
  }
  st.mean = sum / st.bins;
  st.stddev = std::sqrt(std::max(0.0, sq / st.bins - st.mean * st.mean));
  st.max = mx;
  st.min = mn;
  return st;
}

struct SynthesizedFlow {
  FlowSchedule flow;
  FlowStats base_stats;   // before fluctuation
  FlowStats final_stats;  // after fluctuation
  int base_count = 0;
  int copies = 0;
};

// ---------------------------------------------------------------------------
// Generator

namespace detail {

// Symmetric triangular ramp on [0, 1) peaking at 1/2, via inverse CDF.
inline double triangular_ramp(double u) {
  return u < 0.5 ? std::sqrt(u / 2.0) : 1.0 - std::sqrt((1.0 - u) / 2.0);
}

inline int sample_enter_time(FlowPattern pattern, int duration_s, std::mt19937_64& rng) {
  const double u = canonical_double(rng);
  const double x = pattern == FlowPattern::Rush ? triangular_ramp(u) : u;
  return std::min(duration_s - 1, static_cast<int>(x * duration_s));
}

// Hotspot weighting: entries favor the north/west edges, exits the
// south/east edges, creating a dominant NW -> SE drift.
inline std::vector<double> endpoint_weights(const std::vector<BoundaryPoint>& pts,
                                            FlowPattern pattern, double peak_weight,
                                            bool for_entry) {
  std::vector<double> w(pts.size(), 1.0);
  if (pattern != FlowPattern::Peaked) return w;
  for (size_t i = 0; i < pts.size(); ++i) {
    const Dir s = pts[i].side;
    const bool hot = for_entry ? (s == Dir::North || s == Dir::West)
                               : (s == Dir::South || s == Dir::East);
    if (hot) w[i] = peak_weight;
  }
  return w;
}

}  // namespace detail

inline SynthesizedFlow synthesize_flow(const RoadNetwork& net, const FlowSynthesisSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::vector<BoundaryPoint> pts = boundary_points(net);
  const std::vector<double> entry_w =
      detail::endpoint_weights(pts, spec.pattern, spec.peak_weight, true);
  const std::vector<double> exit_w =
      detail::endpoint_weights(pts, spec.pattern, spec.peak_weight, false);

  SynthesizedFlow out;
  out.flow.entries.reserve(static_cast<size_t>(spec.total_vehicles));
  for (int v = 0; v < spec.total_vehicles; ++v) {
    BoundaryPoint entry, exit;
    int attempts = 0;
    for (;;) {
      entry = pts[static_cast<size_t>(sample_weighted(entry_w, canonical_double(rng)))];
      exit = pts[static_cast<size_t>(sample_weighted(exit_w, canonical_double(rng)))];
      if (!(entry == exit)) break;
      if (++attempts > 1000) {
        throw std::runtime_error("OD sampling failed: could not avoid the U-turn pair " +
                                 to_string(entry) + " -> " + to_string(exit));
      }
    }
    FlowEntry e;
    e.enter_s = detail::sample_enter_time(spec.pattern, spec.duration_s, rng);
    e.route = route_between(net, entry, exit);
    out.flow.entries.push_back(std::move(e));
  }
  out.base_count = spec.total_vehicles;
  out.base_stats = compute_flow_stats(out.flow, spec.duration_s);

  // Fluctuation: clone sampled vehicles into a concentrated window.
  const int copies = static_cast<int>(std::llround(
      spec.total_vehicles * spec.resample_fraction * spec.fluctuation_factor));
  int w0 = spec.window_start_s, w1 = spec.window_end_s;
  if (w0 < 0 && w1 < 0) {
    w0 = spec.duration_s / 3;
    w1 = 2 * spec.duration_s / 3;
  }
  for (int k = 0; k < copies; ++k) {
    const size_t pick = static_cast<size_t>(bounded_u64(rng, static_cast<std::uint64_t>(spec.total_vehicles)));
    FlowEntry e;
    e.route = out.flow.entries[pick].route;
    e.enter_s = w0 + static_cast<int>(bounded_u64(rng, static_cast<std::uint64_t>(w1 - w0)));
    out.flow.entries.push_back(std::move(e));
  }
  out.copies = copies;

  std::stable_sort(out.flow.entries.begin(), out.flow.entries.end(),
                   [](const FlowEntry& x, const FlowEntry& y) { return x.enter_s < y.enter_s; });
  out.final_stats = compute_flow_stats(out.flow, spec.duration_s);
  return out;
}

}  // namespace tsc
