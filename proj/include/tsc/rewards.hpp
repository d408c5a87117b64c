#pragma once

// Per-intersection reward signals over one decision interval, plus the
// audit identities that pin their bookkeeping down exactly.
//
// The dense in-flow/out-flow gap reward (IFDG) charges every vehicle-tick
// attributed to an intersection the speed shortfall (v_max - v) * 1s.
// Summed over all intersections and the whole episode it telescopes to
//   total distance driven - v_max * total time in network,
// which is -v_max times the episode's total travel time up to the constant
// total-distance term. The step travel time reward (STT) charges each
// intersection the seconds vehicles spent in its jurisdiction during the
// interval; accumulated, it telescopes to the exact total travel time.

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/features.hpp"
#include "tsc/simulator.hpp"

namespace tsc {

// Eq-style: r = -sum over attributed vehicle-ticks of (v_max - v_t).
inline double ifdg_reward(const StepRecord& rec, int intersection, double v_max) {
  double r = 0.0;
  for (const TickSample& s : rec.samples.at(static_cast<size_t>(intersection))) {
    r -= v_max - s.speed;
  }
  return r;
}

// r = -[ sum over leavers (x_l - max(t_d, x_e)) + sum over stayers (t_{d+1} - max(t_d, x_e)) ]
// where x_e/x_l are jurisdiction entry/exit times and the window is [t_d, t_{d+1}).
inline double stt_reward(const StepRecord& rec, int intersection) {
  long long total = 0;
  for (const JurisdictionStay& s : rec.stays) {
    if (s.intersection != intersection) continue;
    int start = std::max(rec.t_start, s.enter_s);
    int end = s.leave_s >= 0 ? s.leave_s : rec.t_end;
    if (end > start) total += end - start;
  }
  return -static_cast<double>(total);
}

// Queued vehicles over entering lanes, negated (sampled at an instant).
inline double queue_reward(const SimState& state, int intersection) {
  return -static_cast<double>(queue_length(state, intersection));
}

// Absolute up/downstream queue imbalance, negated (sampled at an instant).
inline double pressure_reward(const SimState& state, int intersection) {
  return -std::abs(static_cast<double>(intersection_pressure(state, intersection)));
}

// Instantaneous time-loss rate: each vehicle on the intersection's lanes
// contributes its fractional speed shortfall 1 - v/v_max.
inline double timeloss_reward(const SimState& state, int intersection) {
  double r = 0.0;
  const RoadNetwork& net = state.network();
  for (const Lane& l : net.lanes) {
    if (l.jurisdiction != intersection) continue;
    for (int vid : state.lane_queue(l.id)) {
      r -= 1.0 - state.vehicle(vid).speed_mps / state.config().v_max_mps;
    }
  }
  return r;
}

// --- reward ledger -----------------------------------------------------------

struct RewardRow {
  int d = 0;
  int intersection = 0;
  double r_ifdg = 0, r_stt = 0, r_queue = 0, r_pressure = 0, r_timeloss = 0;
};

struct RewardLedger {
  std::vector<RewardRow> rows;

  double total(double RewardRow::* field) const {
    double s = 0;
    for (const RewardRow& r : rows) s += r.*field;
    return s;
  }
};

inline void save_reward_ledger(const RewardLedger& ledger, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ledger: " + path);
  out.precision(17);
  out << "d,intersection,r_ifdg,r_stt,r_queue,r_pressure,r_timeloss\n";
  for (const RewardRow& r : ledger.rows) {
    out << r.d << "," << r.intersection << "," << r.r_ifdg << "," << r.r_stt << "," << r.r_queue
        << "," << r.r_pressure << "," << r.r_timeloss << "\n";
  }
}

inline RewardLedger load_reward_ledger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ledger: " + path);
  RewardLedger ledger;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.rfind("d,", 0) == 0) continue;  // header
    }
    std::istringstream ls(line);
    RewardRow r;
    char c;
    if (!(ls >> r.d >> c >> r.intersection >> c >> r.r_ifdg >> c >> r.r_stt >> c >> r.r_queue >>
          c >> r.r_pressure >> c >> r.r_timeloss)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad ledger row");
    }
    ledger.rows.push_back(r);
  }
  return ledger;
}

// --- audit identities --------------------------------------------------------

struct IdentityCheck {
  double lhs = 0, rhs = 0;
  double abs_err = 0;
  bool holds(double tol) const { return abs_err <= tol; }
};

// Accumulated IFDG vs. total distance - v_max * total in-network time.
inline IdentityCheck ifdg_identity(double sum_ifdg, double total_distance_m,
                                   long long total_time_s, double v_max) {
  IdentityCheck c;
  c.lhs = sum_ifdg;
  c.rhs = total_distance_m - v_max * static_cast<double>(total_time_s);
  c.abs_err = std::abs(c.lhs - c.rhs);
  return c;
}

// Accumulated STT vs. total in-network time (exact in integer seconds).
inline IdentityCheck stt_identity(double sum_stt, long long total_time_s) {
  IdentityCheck c;
  c.lhs = -sum_stt;
  c.rhs = static_cast<double>(total_time_s);
  c.abs_err = std::abs(c.lhs - c.rhs);
  return c;
}

// --- correlation report ------------------------------------------------------

struct CorrelationReport {
  std::vector<std::string> names;
  std::vector<std::vector<double>> r;  // pearson, NaN when a series is constant
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("pearson: size mismatch or empty");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

// Pairwise correlation of the reward series, pooled over (d, intersection).
inline CorrelationReport reward_correlations(const RewardLedger& ledger) {
  CorrelationReport rep;
  rep.names = {"r_ifdg", "r_stt", "r_queue", "r_pressure", "r_timeloss"};
  std::vector<std::vector<double>> series(5);
  for (const RewardRow& row : ledger.rows) {
    series[0].push_back(row.r_ifdg);
    series[1].push_back(row.r_stt);
    series[2].push_back(row.r_queue);
    series[3].push_back(row.r_pressure);
    series[4].push_back(row.r_timeloss);
  }
  rep.r.assign(5, std::vector<double>(5, 1.0));
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      rep.r[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          i == j ? 1.0 : pearson(series[static_cast<size_t>(i)], series[static_cast<size_t>(j)]);
    }
  }
  return rep;
}

inline void save_correlation_report(const CorrelationReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write correlation report: " + path);
  out.precision(10);
  out << "reward";
  for (const auto& n : rep.names) out << "," << n;
  out << "\n";
  for (size_t i = 0; i < rep.names.size(); ++i) {
    out << rep.names[i];
    for (size_t j = 0; j < rep.names.size(); ++j) out << "," << rep.r[i][j];
    out << "\n";
  }
}

}  // namespace tsc
