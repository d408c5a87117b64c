#pragma once

// Observation features for signal controllers and the learned policy.
//
// Per intersection the raw observation is 28-dimensional:
//   [0..3]   one-hot of the most recently selected phase
//   [4..15]  efficient pressure per movement slot (approach x turn)
//   [16..27] running vehicles within the effective range per movement slot
//
// The learner consumes a spatial-temporal augmentation: the current raw
// observation, the previous decision's raw observation (zeros at the first
// decision), and a fixed 2-D sinusoidal encoding of the intersection's grid
// coordinates.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsc/network.hpp"
#include "tsc/simulator.hpp"

namespace tsc {

// Below this speed a vehicle counts as queued/waiting.
constexpr double kWaitingSpeedMps = 0.1;

constexpr int kRawObsDim = 28;
constexpr int kPosEncodingDim = 16;
constexpr int kAugObsDim = 2 * kRawObsDim + kPosEncodingDim;  // 72

inline int lane_waiting_count(const SimState& state, int lane) {
  int n = 0;
  for (int vid : state.lane_queue(lane)) {
    if (state.vehicle(vid).speed_mps < kWaitingSpeedMps) ++n;
  }
  return n;
}

// Moving vehicles whose remaining distance to the stop line is at most
// range_m (vehicles that could plausibly arrive within one interval).
inline int lane_running_in_range(const SimState& state, int lane, double range_m) {
  const double len = state.network().lane(lane).length_m;
  int n = 0;
  for (int vid : state.lane_queue(lane)) {
    const Vehicle& v = state.vehicle(vid);
    if (v.speed_mps >= kWaitingSpeedMps && len - v.pos_m <= range_m) ++n;
  }
  return n;
}

// Queued vehicles upstream minus queued vehicles downstream of one movement.
// Lanes here are dedicated (one upstream, one downstream lane per movement),
// so this is the per-lane-normalized form as well.
inline int movement_efficient_pressure(const SimState& state, const Movement& m) {
  return lane_waiting_count(state, m.from_lane) - lane_waiting_count(state, m.to_lane);
}

// Total queued vehicles over the intersection's entering lanes.
inline int queue_length(const SimState& state, int intersection) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  int n = 0;
  for (int lane : x.entering_lanes) n += lane_waiting_count(state, lane);
  return n;
}

// Net imbalance between upstream and downstream queues across all movements.
inline int intersection_pressure(const SimState& state, int intersection) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  int p = 0;
  for (const Movement& m : x.movements) p += movement_efficient_pressure(state, m);
  return p;
}

struct RawObservation {
  std::array<double, 4> phase_onehot{};
  std::array<double, kMovementsPerIntersection> efficient_pressure{};
  std::array<double, kMovementsPerIntersection> running_in_range{};

  void write_to(double* dst) const {
    for (int i = 0; i < 4; ++i) dst[i] = phase_onehot[static_cast<size_t>(i)];
    for (int i = 0; i < kMovementsPerIntersection; ++i) {
      dst[4 + i] = efficient_pressure[static_cast<size_t>(i)];
      dst[16 + i] = running_in_range[static_cast<size_t>(i)];
    }
  }
};

inline RawObservation raw_observation(const SimState& state, int intersection, double range_m) {
  const Intersection& x = state.network().intersections.at(static_cast<size_t>(intersection));
  RawObservation obs;
  int sel = state.signal(intersection).selected_phase;
  obs.phase_onehot[static_cast<size_t>(sel)] = 1.0;
  for (int slot = 0; slot < kMovementsPerIntersection; ++slot) {
    const Movement& m = x.movements[static_cast<size_t>(slot)];
    obs.efficient_pressure[static_cast<size_t>(slot)] = movement_efficient_pressure(state, m);
    obs.running_in_range[static_cast<size_t>(slot)] =
        lane_running_in_range(state, m.from_lane, range_m);
  }
  return obs;
}

inline std::vector<RawObservation> observe_all(const SimState& state, double range_m) {
  std::vector<RawObservation> out;
  out.reserve(static_cast<size_t>(state.network().num_intersections()));
  for (int i = 0; i < state.network().num_intersections(); ++i) {
    out.push_back(raw_observation(state, i, range_m));
  }
  return out;
}

// Fixed 2-D sinusoidal position encoding of the grid coordinates: the first
// half encodes the row, the second half the column, each as interleaved
// sin/cos pairs at geometrically spaced frequencies.
inline std::vector<double> position_encoding(int row, int col, int dim = kPosEncodingDim) {
  if (dim % 4 != 0) throw std::invalid_argument("position encoding dim must be divisible by 4");
  std::vector<double> enc(static_cast<size_t>(dim));
  const int half = dim / 2;
  const int pairs = half / 2;
  auto fill = [&](int offset, double p) {
    for (int i = 0; i < pairs; ++i) {
      double omega = std::pow(10000.0, -static_cast<double>(i) / pairs);
      enc[static_cast<size_t>(offset + 2 * i)] = std::sin(p * omega);
      enc[static_cast<size_t>(offset + 2 * i + 1)] = std::cos(p * omega);
    }
  };
  fill(0, static_cast<double>(row));
  fill(half, static_cast<double>(col));
  return enc;
}

inline std::vector<std::vector<double>> grid_position_encodings(const RoadNetwork& net,
                                                                int dim = kPosEncodingDim) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(net.num_intersections()));
  for (const Intersection& x : net.intersections) {
    out.push_back(position_encoding(x.row, x.col, dim));
  }
  return out;
}

struct AugmentedObservation {
  std::array<double, kAugObsDim> values{};
};

// Concatenates [current | previous-or-zero | position encoding].
inline std::vector<AugmentedObservation> augment_observations(
    const std::vector<RawObservation>& current, const std::vector<RawObservation>* previous,
    const std::vector<std::vector<double>>& encodings) {
  if (previous && previous->size() != current.size()) {
    throw std::invalid_argument("previous observation count mismatch");
  }
  if (encodings.size() != current.size()) {
    throw std::invalid_argument("encoding count mismatch");
  }
  std::vector<AugmentedObservation> out(current.size());
  for (size_t i = 0; i < current.size(); ++i) {
    if (encodings[i].size() != kPosEncodingDim) {
      throw std::invalid_argument("encoding dim mismatch");
    }
    AugmentedObservation& a = out[i];
    current[i].write_to(a.values.data());
    if (previous) (*previous)[i].write_to(a.values.data() + kRawObsDim);
    for (int k = 0; k < kPosEncodingDim; ++k) {
      a.values[static_cast<size_t>(2 * kRawObsDim + k)] = encodings[i][static_cast<size_t>(k)];
    }
  }
  return out;
}

}  // namespace tsc
