#pragma once

// Deterministic microscopic traffic simulation on a grid network.
//
// Discrete 1-second ticks. Vehicles adjust speed instantaneously up to
// v_max, keep min_gap behind a leader, stop at the stop line when their
// movement is red (or the landing lane is full), and cross onto the next
// lane of their route otherwise. Signals switch phases only at decision
// boundaries (every t_phase_s seconds); changing phase inserts an
// all-red yellow interval of yellow_s seconds for the gated movements.
//
// Bookkeeping is organized for per-intersection reward attribution: every
// vehicle-tick is attributed to the jurisdiction of the lane the vehicle
// occupied at the start of the tick, and contiguous runs of ticks spent in
// one jurisdiction form "stays" with entry/exit timestamps.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/network.hpp"

namespace tsc {

struct SimConfig {
  double v_max_mps = 11.11;
  double vehicle_len_m = 5.0;
  double min_gap_m = 2.5;
  int t_phase_s = 15;   // decision interval
  int yellow_s = 3;
  int t_tsc_s = 3600;   // episode horizon
  std::uint64_t seed = 0;
  // When set, travel time is measured from the scheduled entry instead of
  // the realized (possibly delayed) network entry.
  bool travel_time_from_scheduled = false;

  double headway_m() const { return vehicle_len_m + min_gap_m; }
  // Distance a vehicle can cover in one decision interval at full speed;
  // used as the default "in range" horizon for observations.
  double effective_range_m() const { return v_max_mps * t_phase_s; }
  int decision_steps() const { return t_tsc_s / t_phase_s; }

  void validate() const {
    if (!(v_max_mps > 0)) throw std::invalid_argument("v_max_mps must be positive");
    if (!(vehicle_len_m > 0) || min_gap_m < 0) throw std::invalid_argument("bad vehicle geometry");
    if (t_phase_s <= 0) throw std::invalid_argument("t_phase_s must be positive");
    if (yellow_s < 0 || yellow_s >= t_phase_s) {
      throw std::invalid_argument("yellow_s must lie inside the decision interval");
    }
    if (t_tsc_s <= 0 || t_tsc_s % t_phase_s != 0) {
      throw std::invalid_argument("t_tsc_s must be a positive multiple of t_phase_s");
    }
  }
};

// --- flow schedule -----------------------------------------------------------

struct FlowEntry {
  int enter_s = 0;
  std::vector<int> route;  // lane ids, boundary entry -> boundary exit
};

struct FlowSchedule {
  std::vector<FlowEntry> entries;
};

// Rows: enter_s,lane0;lane1;...;laneK   ('#' starts a comment line)
inline FlowSchedule parse_flow_csv(std::istream& in, const std::string& origin) {
  FlowSchedule flow;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected enter_s,route");
    }
    FlowEntry e;
    try {
      e.enter_s = std::stoi(line.substr(0, comma));
    } catch (const std::exception&) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad enter_s");
    }
    std::istringstream rs(line.substr(comma + 1));
    std::string tok;
    while (std::getline(rs, tok, ';')) {
      if (tok.empty()) continue;
      try {
        e.route.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad lane id '" + tok + "'");
      }
    }
    if (e.route.empty()) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty route");
    }
    flow.entries.push_back(std::move(e));
  }
  return flow;
}

inline FlowSchedule load_flow_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open flow file: " + path);
  return parse_flow_csv(in, path);
}

inline void save_flow_csv(const FlowSchedule& flow, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write flow file: " + path);
  for (const FlowEntry& e : flow.entries) {
    out << e.enter_s << ",";
    for (size_t i = 0; i < e.route.size(); ++i) {
      if (i) out << ";";
      out << e.route[i];
    }
    out << "\n";
  }
}

// Every route must start at a boundary entry, end at a boundary exit, and
// follow legal turn movements in between.
inline void validate_flow(const RoadNetwork& net, const FlowSchedule& flow) {
  for (size_t idx = 0; idx < flow.entries.size(); ++idx) {
    const FlowEntry& e = flow.entries[idx];
    auto fail = [&](const std::string& what) {
      throw std::invalid_argument("flow entry " + std::to_string(idx) + ": " + what);
    };
    if (e.enter_s < 0) fail("negative enter_s");
    if (e.route.empty()) fail("empty route");
    for (int lane : e.route) {
      if (lane < 0 || lane >= net.num_lanes()) fail("lane " + std::to_string(lane) + " not in network");
    }
    if (!net.lane(e.route.front()).boundary_entry()) fail("route must start at a boundary entry lane");
    if (!net.lane(e.route.back()).boundary_exit()) fail("route must end at a boundary exit lane");
    for (size_t i = 0; i + 1 < e.route.size(); ++i) {
      if (!net.movement_exists(e.route[i], e.route[i + 1])) {
        fail("no movement from lane " + std::to_string(e.route[i]) + " to lane " +
             std::to_string(e.route[i + 1]));
      }
    }
  }
}

// --- simulation state --------------------------------------------------------

struct Vehicle {
  int id = -1;
  std::vector<int> route;
  int route_pos = 0;           // index of current lane in route
  double pos_m = 0.0;          // front-bumper offset from lane start
  double speed_mps = 0.0;      // speed chosen on the most recent tick
  double distance_m = 0.0;     // odometer: sum of per-tick speeds
  int scheduled_enter_s = 0;
  int enter_s = -1;            // realized entry (x_e); -1 before spawning
  int leave_s = -1;            // departure (x_l); -1 while in network
  int jur_enter_s = -1;        // entry into the current jurisdiction
  int last_processed_tick = -1;

  bool spawned() const { return enter_s >= 0; }
  bool in_network() const { return enter_s >= 0 && leave_s < 0; }
  int current_lane() const { return route[static_cast<size_t>(route_pos)]; }
};

struct SignalState {
  int active_phase = 0;    // phase whose movements may cross (when no yellow)
  int selected_phase = 0;  // most recently commanded phase
  int yellow_left = 0;     // remaining all-red ticks for gated movements
};

struct TickSample {
  int tick = 0;
  int vehicle = -1;
  double speed = 0.0;
};

// Maximal run of ticks a vehicle spends inside one jurisdiction.
// leave_s == -1 means the stay is still open at the end of the record.
struct JurisdictionStay {
  int vehicle = -1;
  int intersection = -1;
  int enter_s = 0;
  int leave_s = -1;
};

struct StepRecord {
  int t_start = 0;
  int t_end = 0;
  std::vector<std::vector<TickSample>> samples;  // per intersection
  std::vector<JurisdictionStay> stays;           // closed in window, plus open ones
};

struct TraceRow {
  int tick = 0;
  int vehicle = -1;
  int lane = -1;    // lane occupied at the start of the tick
  double pos = 0;   // offset from that lane's origin after the move
  double speed = 0;
};

struct EpisodeMetrics {
  std::optional<double> avg_travel_time_s;
  int inserted = 0;
  int departed = 0;
  int active = 0;    // still in network at measurement time
  int unserved = 0;  // scheduled but never entered
  double total_distance_m = 0.0;
  long long total_time_s = 0;  // sum of (x_l - x_e), open trips closed at the horizon
};

struct VehicleRecord {
  int id = -1;
  int scheduled_enter_s = 0;
  int enter_s = -1;
  int leave_s = -1;  // -1: still in network
  double distance_m = 0.0;
};

class SimState {
 public:
  SimState(const RoadNetwork& net, const SimConfig& cfg, const FlowSchedule& flow)
      : net_(&net), cfg_(cfg) {
    cfg_.validate();
    validate_flow(net, flow);
    headway_ = cfg_.headway_m();
    lane_queues_.resize(static_cast<size_t>(net.num_lanes()));
    signals_.resize(static_cast<size_t>(net.num_intersections()));
    sample_buf_.resize(static_cast<size_t>(net.num_intersections()));
    vehicles_.reserve(flow.entries.size());
    for (size_t i = 0; i < flow.entries.size(); ++i) {
      Vehicle v;
      v.id = static_cast<int>(i);
      v.route = flow.entries[i].route;
      v.scheduled_enter_s = flow.entries[i].enter_s;
      vehicles_.push_back(std::move(v));
      pending_.push_back(static_cast<int>(i));
    }
    std::stable_sort(pending_.begin(), pending_.end(), [&](int a, int b) {
      return vehicles_[static_cast<size_t>(a)].scheduled_enter_s <
             vehicles_[static_cast<size_t>(b)].scheduled_enter_s;
    });
    lane_order_ = compute_lane_order(net);
  }

  const RoadNetwork& network() const { return *net_; }
  const SimConfig& config() const { return cfg_; }
  int clock() const { return clock_; }
  int decision_index() const { return clock_ / cfg_.t_phase_s; }
  bool finished() const { return clock_ >= cfg_.t_tsc_s; }

  const SignalState& signal(int i) const { return signals_.at(static_cast<size_t>(i)); }
  const std::vector<int>& lane_queue(int lane) const {
    return lane_queues_.at(static_cast<size_t>(lane));
  }
  const Vehicle& vehicle(int id) const { return vehicles_.at(static_cast<size_t>(id)); }
  int num_vehicles() const { return static_cast<int>(vehicles_.size()); }
  int inserted_count() const { return inserted_; }
  int departed_count() const { return departed_; }

  void set_trace_sink(std::vector<TraceRow>* sink) { trace_ = sink; }

  // Commands a phase for the upcoming decision interval. Allowed only at
  // decision boundaries; commanding a different phase starts the yellow.
  void set_phase(int intersection, int phase) {
    if (clock_ % cfg_.t_phase_s != 0) {
      throw std::logic_error("set_phase outside a decision boundary");
    }
    if (phase < 0 || phase >= kNumPhases) {
      throw std::invalid_argument("phase must be in [0,4)");
    }
    SignalState& s = signals_.at(static_cast<size_t>(intersection));
    if (phase != s.selected_phase) {
      s.selected_phase = phase;
      s.yellow_left = cfg_.yellow_s;
      if (cfg_.yellow_s == 0) s.active_phase = phase;
    }
  }

  // Runs one decision interval under the given joint phase command and
  // returns the attribution record for the window [t, t + t_phase_s).
  StepRecord run_decision_step(const std::vector<int>& joint_phases) {
    if (clock_ % cfg_.t_phase_s != 0) {
      throw std::logic_error("run_decision_step must start at a decision boundary");
    }
    if (static_cast<int>(joint_phases.size()) != net_->num_intersections()) {
      throw std::invalid_argument("joint_phases size mismatch");
    }
    for (size_t i = 0; i < joint_phases.size(); ++i) {
      set_phase(static_cast<int>(i), joint_phases[i]);
    }
    StepRecord rec;
    rec.t_start = clock_;
    for (auto& s : sample_buf_) s.clear();
    closed_stays_.clear();
    for (int k = 0; k < cfg_.t_phase_s; ++k) advance_tick();
    rec.t_end = clock_;
    rec.samples = sample_buf_;
    rec.stays = closed_stays_;
    for (const Vehicle& v : vehicles_) {
      if (v.in_network()) {
        rec.stays.push_back({v.id, net_->jurisdiction_of(v.current_lane()), v.jur_enter_s, -1});
      }
    }
    return rec;
  }

  // Advances the simulation by one tick. Order: spawns, vehicle motion in
  // downstream-first lane order, yellow countdown.
  void advance_tick() {
    const int t = clock_;
    do_spawns(t);
    for (int lane_id : lane_order_) {
      if (!lane_queues_[static_cast<size_t>(lane_id)].empty()) process_lane(lane_id, t);
    }
    for (SignalState& s : signals_) {
      if (s.yellow_left > 0 && --s.yellow_left == 0) s.active_phase = s.selected_phase;
    }
    ++clock_;
  }

  // True when the movement leaving `lane` may cross right now.
  bool movement_allowed(int lane_id) const {
    const Lane& l = net_->lane(lane_id);
    if (l.kind == Turn::Right) return true;  // right turns are never gated
    if (l.to_intersection < 0) return true;
    const SignalState& s = signals_[static_cast<size_t>(l.to_intersection)];
    if (s.yellow_left > 0) return false;
    return phase_releases(s.active_phase, movement_slot(l.approach(), l.kind));
  }

  // Inserts a vehicle directly into the network (scenario/test setup).
  // route_tail lists the lanes to follow after `lane`; empty means the
  // vehicle departs at the end of `lane`.
  int place_vehicle(int lane, double pos, double speed, std::vector<int> route_tail = {}) {
    const Lane& l = net_->lane(lane);
    if (pos < 0 || pos > l.length_m) throw std::invalid_argument("position outside lane");
    std::vector<int> route{lane};
    for (int next : route_tail) route.push_back(next);
    for (size_t i = 0; i + 1 < route.size(); ++i) {
      if (!net_->movement_exists(route[i], route[i + 1])) {
        throw std::invalid_argument("route tail breaks movement connectivity");
      }
    }
    auto& q = lane_queues_[static_cast<size_t>(lane)];
    size_t at = 0;
    while (at < q.size() && vehicles_[static_cast<size_t>(q[at])].pos_m > pos) ++at;
    if (at > 0 && vehicles_[static_cast<size_t>(q[at - 1])].pos_m - pos < headway_) {
      throw std::invalid_argument("violates headway to leader");
    }
    if (at < q.size() && pos - vehicles_[static_cast<size_t>(q[at])].pos_m < headway_) {
      throw std::invalid_argument("violates headway to follower");
    }
    Vehicle v;
    v.id = static_cast<int>(vehicles_.size());
    v.route = std::move(route);
    v.pos_m = pos;
    v.speed_mps = speed;
    v.scheduled_enter_s = clock_;
    v.enter_s = clock_;
    v.jur_enter_s = clock_;
    vehicles_.push_back(std::move(v));
    q.insert(q.begin() + static_cast<std::ptrdiff_t>(at), vehicles_.back().id);
    ++inserted_;
    return vehicles_.back().id;
  }

  // Invariant check used by property tests: queues sorted by position and
  // spaced by at least the headway.
  void check_queue_invariants() const {
    for (size_t lane = 0; lane < lane_queues_.size(); ++lane) {
      const auto& q = lane_queues_[lane];
      for (size_t i = 0; i + 1 < q.size(); ++i) {
        double gap = vehicles_[static_cast<size_t>(q[i])].pos_m -
                     vehicles_[static_cast<size_t>(q[i + 1])].pos_m;
        if (gap < headway_ - 1e-9) {
          throw std::logic_error("headway violated on lane " + std::to_string(lane));
        }
      }
      int count = 0;
      for (const Vehicle& v : vehicles_) {
        if (v.in_network() && v.current_lane() == static_cast<int>(lane)) ++count;
      }
      if (count != static_cast<int>(q.size())) {
        throw std::logic_error("queue membership mismatch on lane " + std::to_string(lane));
      }
    }
    if (inserted_ != departed_ + active_count()) {
      throw std::logic_error("vehicle conservation violated");
    }
  }

  int active_count() const {
    int n = 0;
    for (const Vehicle& v : vehicles_) n += v.in_network() ? 1 : 0;
    return n;
  }

  EpisodeMetrics metrics() const {
    EpisodeMetrics m;
    m.inserted = inserted_;
    m.departed = departed_;
    double tt_sum = 0.0;
    int tt_count = 0;
    for (const Vehicle& v : vehicles_) {
      if (!v.spawned()) {
        if (v.scheduled_enter_s < cfg_.t_tsc_s) ++m.unserved;
        continue;
      }
      int start = cfg_.travel_time_from_scheduled ? v.scheduled_enter_s : v.enter_s;
      int end = v.leave_s >= 0 ? v.leave_s : clock_;
      tt_sum += end - start;
      ++tt_count;
      m.total_time_s += end - v.enter_s;
      m.total_distance_m += v.distance_m;
      if (v.leave_s < 0) ++m.active;
    }
    if (tt_count > 0) m.avg_travel_time_s = tt_sum / tt_count;
    return m;
  }

  std::vector<VehicleRecord> vehicle_records() const {
    std::vector<VehicleRecord> out;
    out.reserve(vehicles_.size());
    for (const Vehicle& v : vehicles_) {
      if (!v.spawned()) continue;
      out.push_back({v.id, v.scheduled_enter_s, v.enter_s, v.leave_s, v.distance_m});
    }
    return out;
  }

 private:
  static std::vector<int> compute_lane_order(const RoadNetwork& net) {
    // Distance (in lanes) to the nearest boundary exit, following the
    // forward turn graph; lanes closer to an exit move first so space
    // opens downstream within the same tick.
    constexpr int kInf = std::numeric_limits<int>::max();
    std::vector<int> dist(static_cast<size_t>(net.num_lanes()), kInf);
    std::vector<std::vector<int>> preds(static_cast<size_t>(net.num_lanes()));
    std::vector<int> frontier;
    for (const Lane& l : net.lanes) {
      if (l.boundary_exit()) {
        dist[static_cast<size_t>(l.id)] = 0;
        frontier.push_back(l.id);
      } else {
        Dir exit_side = heading_after(l.direction, l.kind);
        const Intersection& x = net.intersections[static_cast<size_t>(l.to_intersection)];
        const Road& out = net.roads[static_cast<size_t>(x.out_road[static_cast<int>(exit_side)])];
        for (int succ : out.lanes) preds[static_cast<size_t>(succ)].push_back(l.id);
      }
    }
    while (!frontier.empty()) {
      std::vector<int> next;
      for (int cur : frontier) {
        for (int p : preds[static_cast<size_t>(cur)]) {
          if (dist[static_cast<size_t>(p)] == kInf) {
            dist[static_cast<size_t>(p)] = dist[static_cast<size_t>(cur)] + 1;
            next.push_back(p);
          }
        }
      }
      frontier = std::move(next);
    }
    for (int d : dist) {
      if (d == kInf) throw std::logic_error("lane cannot reach a boundary exit");
    }
    std::vector<int> order(static_cast<size_t>(net.num_lanes()));
    for (int i = 0; i < net.num_lanes(); ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      int da = dist[static_cast<size_t>(a)], db = dist[static_cast<size_t>(b)];
      return da != db ? da < db : a < b;
    });
    return order;
  }

  void do_spawns(int t) {
    size_t i = 0;
    std::vector<int> blocked;
    for (; i < pending_.size(); ++i) {
      int vid = pending_[i];
      Vehicle& v = vehicles_[static_cast<size_t>(vid)];
      if (v.scheduled_enter_s > t) break;
      auto& q = lane_queues_[static_cast<size_t>(v.route[0])];
      bool clear = q.empty() || vehicles_[static_cast<size_t>(q.back())].pos_m >= headway_;
      if (!clear) {
        blocked.push_back(vid);
        continue;
      }
      v.enter_s = t;
      v.jur_enter_s = t;
      v.pos_m = 0.0;
      v.speed_mps = 0.0;
      q.push_back(vid);
      ++inserted_;
    }
    if (i > 0) {
      blocked.insert(blocked.end(), pending_.begin() + static_cast<std::ptrdiff_t>(i),
                     pending_.end());
      pending_ = std::move(blocked);
    }
  }

  void process_lane(int lane_id, int t) {
    auto& q = lane_queues_[static_cast<size_t>(lane_id)];
    const Lane& l = net_->lane(lane_id);
    scratch_.clear();
    double lead_pos = 0.0;
    bool has_lead = false;
    for (int vid : q) {
      Vehicle& v = vehicles_[static_cast<size_t>(vid)];
      if (v.last_processed_tick == t) {  // landed here earlier this tick
        scratch_.push_back(vid);
        lead_pos = v.pos_m;
        has_lead = true;
        continue;
      }
      v.last_processed_tick = t;
      const double start_pos = v.pos_m;
      double max_move = cfg_.v_max_mps;
      if (has_lead) max_move = std::min(max_move, lead_pos - headway_ - start_pos);
      max_move = std::max(max_move, 0.0);
      double target = start_pos + max_move;
      double speed = 0.0;
      bool stays_here = true;
      if (target >= l.length_m) {
        bool at_last = v.route_pos + 1 == static_cast<int>(v.route.size());
        if (at_last) {
          // End of the route: the vehicle leaves the network at full pace.
          speed = max_move;
          finish_vehicle(v, t);
          stays_here = false;
        } else {
          int next_lane = v.route[static_cast<size_t>(v.route_pos) + 1];
          auto& tq = lane_queues_[static_cast<size_t>(next_lane)];
          double back_pos = tq.empty() ? std::numeric_limits<double>::infinity()
                                       : vehicles_[static_cast<size_t>(tq.back())].pos_m;
          if (movement_allowed(lane_id) && back_pos >= headway_) {
            double overflow = std::min(target - l.length_m, back_pos - headway_);
            speed = (l.length_m - start_pos) + overflow;
            v.route_pos += 1;
            v.pos_m = overflow;
            tq.push_back(vid);
            int j_old = l.jurisdiction;
            int j_new = net_->lane(next_lane).jurisdiction;
            if (j_new != j_old) {
              closed_stays_.push_back({vid, j_old, v.jur_enter_s, t + 1});
              v.jur_enter_s = t + 1;
            }
            stays_here = false;
          } else {
            speed = std::min(max_move, l.length_m - start_pos);
            v.pos_m = start_pos + speed;
          }
        }
      } else {
        speed = max_move;
        v.pos_m = target;
      }
      v.speed_mps = speed;
      v.distance_m += speed;
      sample_buf_[static_cast<size_t>(l.jurisdiction)].push_back({t, vid, speed});
      if (trace_) trace_->push_back({t, vid, lane_id, start_pos + speed, speed});
      if (stays_here) {
        scratch_.push_back(vid);
        lead_pos = v.pos_m;
        has_lead = true;
      }
    }
    q.swap(scratch_);
  }

  void finish_vehicle(Vehicle& v, int t) {
    v.leave_s = t + 1;
    closed_stays_.push_back(
        {v.id, net_->jurisdiction_of(v.current_lane()), v.jur_enter_s, t + 1});
    ++departed_;
  }

  const RoadNetwork* net_;
  SimConfig cfg_;
  double headway_ = 7.5;
  int clock_ = 0;
  int inserted_ = 0;
  int departed_ = 0;
  std::vector<Vehicle> vehicles_;
  std::vector<int> pending_;  // vehicle ids, sorted by (scheduled_enter_s, id)
  std::vector<std::vector<int>> lane_queues_;  // front of lane first
  std::vector<int> lane_order_;
  std::vector<SignalState> signals_;
  std::vector<std::vector<TickSample>> sample_buf_;
  std::vector<JurisdictionStay> closed_stays_;
  std::vector<int> scratch_;
  std::vector<TraceRow>* trace_ = nullptr;
};

// --- trace io ----------------------------------------------------------------

inline void save_trace_csv(const std::vector<TraceRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  out.precision(17);
  for (const TraceRow& r : rows) {
    out << r.tick << "," << r.vehicle << "," << r.lane << "," << r.pos << "," << r.speed << "\n";
  }
}

inline std::vector<TraceRow> load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<TraceRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TraceRow r;
    char c1, c2, c3, c4;
    if (!(ls >> r.tick >> c1 >> r.vehicle >> c2 >> r.lane >> c3 >> r.pos >> c4 >> r.speed) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad trace row");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace tsc
