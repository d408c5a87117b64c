#pragma once

// Grid road network: intersections, directed 3-lane roads, turn movements,
// signal phases, and the lane -> intersection jurisdiction partition.

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsc {

// Compass directions; also used as "side of an intersection".
// Row 0 is the northern row, column 0 the western column.
enum class Dir : int { North = 0, East = 1, South = 2, West = 3 };

enum class Turn : int { Left = 0, Through = 1, Right = 2 };

inline Dir opposite(Dir d) { return Dir((static_cast<int>(d) + 2) % 4); }

// Heading of a vehicle after completing a turn, given its approach heading.
inline Dir heading_after(Dir travel, Turn t) {
  switch (t) {
    case Turn::Left: return Dir((static_cast<int>(travel) + 3) % 4);
    case Turn::Through: return travel;
    case Turn::Right: return Dir((static_cast<int>(travel) + 1) % 4);
  }
  throw std::logic_error("heading_after: bad turn");
}

inline const char* dir_name(Dir d) {
  static const char* names[4] = {"N", "E", "S", "W"};
  return names[static_cast<int>(d)];
}

inline const char* turn_name(Turn t) {
  static const char* names[3] = {"L", "T", "R"};
  return names[static_cast<int>(t)];
}

struct Lane {
  int id = -1;
  int road = -1;
  double length_m = 0.0;
  Turn kind = Turn::Through;     // dedicated movement this lane feeds
  int from_intersection = -1;    // -1: begins at the grid boundary
  int to_intersection = -1;      // -1: ends at the grid boundary
  Dir direction = Dir::North;    // heading of travel along the lane
  int jurisdiction = -1;         // owning intersection (unique per lane)

  bool boundary_entry() const { return from_intersection < 0; }
  bool boundary_exit() const { return to_intersection < 0; }
  // Side of to_intersection this lane arrives at (only when it has one).
  Dir approach() const { return opposite(direction); }
};

// One direction of a street segment; bundle of 3 parallel dedicated lanes.
struct Road {
  int id = -1;
  int from_intersection = -1;
  int to_intersection = -1;
  Dir direction = Dir::North;
  std::array<int, 3> lanes{};  // indexed by Turn: [left, through, right]
};

struct Movement {
  int from_lane = -1;
  int to_lane = -1;
  Turn kind = Turn::Through;
};

// A phase releases a fixed pair of non-conflicting movements.
// Movement entries index into Intersection::movements.
struct Phase {
  int id = -1;
  std::array<int, 2> movements{};
};

constexpr int kNumPhases = 4;
constexpr int kMovementsPerIntersection = 12;

// movement slot = approach*3 + kind
inline int movement_slot(Dir approach, Turn kind) {
  return static_cast<int>(approach) * 3 + static_cast<int>(kind);
}

// Fixed signal plan shared by every intersection:
//   0 N/S through, 1 N/S left, 2 E/W through, 3 E/W left.
// Right turns are never signal-controlled.
inline const std::array<Phase, kNumPhases>& standard_phase_table() {
  static const std::array<Phase, kNumPhases> table = {{
      {0, {movement_slot(Dir::North, Turn::Through), movement_slot(Dir::South, Turn::Through)}},
      {1, {movement_slot(Dir::North, Turn::Left), movement_slot(Dir::South, Turn::Left)}},
      {2, {movement_slot(Dir::East, Turn::Through), movement_slot(Dir::West, Turn::Through)}},
      {3, {movement_slot(Dir::East, Turn::Left), movement_slot(Dir::West, Turn::Left)}},
  }};
  return table;
}

// phase -> movement-slot green mask, shared by all intersections.
inline bool phase_releases(int phase, int slot) {
  const auto& table = standard_phase_table();
  return table[phase].movements[0] == slot || table[phase].movements[1] == slot;
}

struct Intersection {
  int id = -1;
  int row = -1, col = -1;
  std::array<int, 4> in_road{-1, -1, -1, -1};   // road arriving at side d
  std::array<int, 4> out_road{-1, -1, -1, -1};  // road departing toward side d
  // entering_lanes[movement_slot(approach, kind)]
  std::array<int, kMovementsPerIntersection> entering_lanes{};
  // exiting_lanes[side*3 + kind]
  std::array<int, kMovementsPerIntersection> exiting_lanes{};
  std::array<Movement, kMovementsPerIntersection> movements{};
  std::array<Phase, kNumPhases> phases{};
};

class RoadNetwork {
 public:
  int rows = 0;
  int cols = 0;
  double lane_length_m = 0.0;
  std::vector<Intersection> intersections;
  std::vector<Road> roads;
  std::vector<Lane> lanes;

  int intersection_at(int r, int c) const { return r * cols + c; }
  int num_intersections() const { return static_cast<int>(intersections.size()); }
  int num_lanes() const { return static_cast<int>(lanes.size()); }

  const Lane& lane(int id) const {
    if (id < 0 || id >= num_lanes()) {
      throw std::out_of_range("lane id " + std::to_string(id) + " not in network");
    }
    return lanes[static_cast<size_t>(id)];
  }

  // Every lane belongs to exactly one intersection's jurisdiction.
  int jurisdiction_of(int lane_id) const { return lane(lane_id).jurisdiction; }

  const Movement& movement_for_lane(int lane_id) const {
    const Lane& l = lane(lane_id);
    if (l.to_intersection < 0) {
      throw std::invalid_argument("lane " + std::to_string(lane_id) +
                                  " exits the grid; it has no movement");
    }
    const Intersection& x = intersections[static_cast<size_t>(l.to_intersection)];
    return x.movements[static_cast<size_t>(movement_slot(l.approach(), l.kind))];
  }

  // True when `to` is a legal continuation of `from` through an intersection.
  bool movement_exists(int from, int to) const {
    const Lane& lf = lane(from);
    if (lf.to_intersection < 0) return false;
    const Lane& lt = lane(to);
    if (lt.from_intersection != lf.to_intersection) return false;
    // Any lane of the exit road in the turn's direction is a legal landing.
    Dir exit_side = heading_after(lf.direction, lf.kind);
    const Intersection& x = intersections[static_cast<size_t>(lf.to_intersection)];
    return roads[static_cast<size_t>(x.out_road[static_cast<int>(exit_side)])].id == lt.road;
  }
};

// Builds a rows x cols signalized grid. Every street is dual-directed and
// every directed segment carries dedicated left/through/right lanes, so each
// intersection has 12 entering and 12 exiting lanes. Boundary sides get an
// entry road (from outside) and an exit road (to outside). Lane jurisdiction
// goes to the downstream intersection; lanes draining off the grid belong to
// the intersection they leave.
inline RoadNetwork build_grid_network(int rows, int cols, double lane_length_m) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("grid dimensions must be positive");
  }
  if (!(lane_length_m > 0.0)) {
    throw std::invalid_argument("lane length must be positive");
  }
  RoadNetwork net;
  net.rows = rows;
  net.cols = cols;
  net.lane_length_m = lane_length_m;
  net.intersections.resize(static_cast<size_t>(rows) * static_cast<size_t>(cols));

  auto neighbor = [&](int r, int c, Dir d) -> int {
    int nr = r, nc = c;
    switch (d) {
      case Dir::North: nr -= 1; break;
      case Dir::South: nr += 1; break;
      case Dir::East: nc += 1; break;
      case Dir::West: nc -= 1; break;
    }
    if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) return -1;
    return net.intersection_at(nr, nc);
  };

  auto add_road = [&](int from, int to, Dir direction) -> int {
    Road road;
    road.id = static_cast<int>(net.roads.size());
    road.from_intersection = from;
    road.to_intersection = to;
    road.direction = direction;
    for (int k = 0; k < 3; ++k) {
      Lane l;
      l.id = static_cast<int>(net.lanes.size());
      l.road = road.id;
      l.length_m = lane_length_m;
      l.kind = Turn(k);
      l.from_intersection = from;
      l.to_intersection = to;
      l.direction = direction;
      l.jurisdiction = to >= 0 ? to : from;
      road.lanes[static_cast<size_t>(k)] = l.id;
      net.lanes.push_back(l);
    }
    net.roads.push_back(road);
    return road.id;
  };

  // Pass 1: roads. Each intersection owns its four outbound roads; boundary
  // sides additionally get the inbound road from outside.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      int id = net.intersection_at(r, c);
      Intersection& x = net.intersections[static_cast<size_t>(id)];
      x.id = id;
      x.row = r;
      x.col = c;
      for (int d = 0; d < 4; ++d) {
        Dir side = Dir(d);
        int nb = neighbor(r, c, side);
        x.out_road[d] = add_road(id, nb, side);
        if (nb < 0) {
          x.in_road[d] = add_road(-1, id, opposite(side));
        }
      }
    }
  }

  // Pass 2: interior inbound roads come from the neighbor's outbound side.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      int id = net.intersection_at(r, c);
      Intersection& x = net.intersections[static_cast<size_t>(id)];
      for (int d = 0; d < 4; ++d) {
        int nb = neighbor(r, c, Dir(d));
        if (nb >= 0) {
          const Intersection& other = net.intersections[static_cast<size_t>(nb)];
          x.in_road[d] = other.out_road[static_cast<int>(opposite(Dir(d)))];
        }
      }
    }
  }

  // Pass 3: movements and phases.
  for (Intersection& x : net.intersections) {
    for (int a = 0; a < 4; ++a) {
      const Road& in = net.roads[static_cast<size_t>(x.in_road[a])];
      for (int k = 0; k < 3; ++k) {
        x.entering_lanes[static_cast<size_t>(a * 3 + k)] = in.lanes[static_cast<size_t>(k)];
      }
      const Road& out = net.roads[static_cast<size_t>(x.out_road[a])];
      for (int k = 0; k < 3; ++k) {
        x.exiting_lanes[static_cast<size_t>(a * 3 + k)] = out.lanes[static_cast<size_t>(k)];
      }
    }
    for (int a = 0; a < 4; ++a) {
      Dir approach = Dir(a);
      Dir travel = opposite(approach);
      for (int k = 0; k < 3; ++k) {
        Turn kind = Turn(k);
        Dir exit_side = heading_after(travel, kind);
        Movement m;
        m.kind = kind;
        m.from_lane = x.entering_lanes[static_cast<size_t>(movement_slot(approach, kind))];
        const Road& out = net.roads[static_cast<size_t>(x.out_road[static_cast<int>(exit_side)])];
        m.to_lane = out.lanes[static_cast<size_t>(k)];
        x.movements[static_cast<size_t>(movement_slot(approach, kind))] = m;
      }
    }
    x.phases = standard_phase_table();
  }
  return net;
}

// Expands a route starting on `first_lane`, landing on the lane of kind
// turn_kinds[j] at the j-th crossing (Through once the list is exhausted),
// until the route drains off the grid. The landing kind at step j is what
// the vehicle will do at the *next* intersection; the turn executed at a
// crossing is fixed by the lane it is leaving.
inline std::vector<int> route_via_kinds(const RoadNetwork& net, int first_lane,
                                        const std::vector<Turn>& turn_kinds) {
  std::vector<int> route{first_lane};
  size_t j = 0;
  const size_t max_len = static_cast<size_t>(net.num_lanes()) + 2;
  while (!net.lane(route.back()).boundary_exit()) {
    if (route.size() > max_len) {
      throw std::invalid_argument("route_via_kinds: turn sequence never leaves the grid");
    }
    const Lane& cur = net.lane(route.back());
    const Intersection& x = net.intersections[static_cast<size_t>(cur.to_intersection)];
    Dir exit_side = heading_after(cur.direction, cur.kind);
    const Road& out = net.roads[static_cast<size_t>(x.out_road[static_cast<int>(exit_side)])];
    Turn next_kind = j < turn_kinds.size() ? turn_kinds[j] : Turn::Through;
    route.push_back(out.lanes[static_cast<size_t>(next_kind)]);
    ++j;
  }
  return route;
}

// --- network spec file ------------------------------------------------------
//
//   # comment
//   grid <rows> <cols> <lane_length_m>

inline RoadNetwork parse_network_spec(std::istream& in, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string directive;
    if (!(ls >> directive) || directive[0] == '#') continue;
    if (directive == "grid") {
      int rows = 0, cols = 0;
      double length = 0.0;
      if (!(ls >> rows >> cols >> length)) {
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": grid directive needs <rows> <cols> <lane_length_m>");
      }
      std::string extra;
      if (ls >> extra) {
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": trailing tokens after grid directive");
      }
      return build_grid_network(rows, cols, length);
    }
    throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                             ": unknown directive '" + directive + "'");
  }
  throw std::runtime_error(origin + ": no network directive found");
}

inline RoadNetwork load_network_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open network spec: " + path);
  return parse_network_spec(in, path);
}

inline void save_network_spec(const RoadNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write network spec: " + path);
  out << "grid " << net.rows << " " << net.cols << " " << net.lane_length_m << "\n";
}

}  // namespace tsc
