#pragma once

// Shared domain types: trajectory frames, tracks, scenes, neighbor contexts
// and the lane adjacency table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lcsa {

inline constexpr double kFrameRate = 10.0;  // Hz
inline constexpr double kDt = 0.1;          // seconds per frame
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kFeetToMeters = 0.3048;

inline int seconds_to_frames(double seconds) {
  return static_cast<int>(seconds * kFrameRate + 0.5);
}

// ---------------------------------------------------------------------------
// Errors

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// A requested entity (vehicle, frame) does not exist.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
/// The request is well-formed but has no answer in this domain, e.g. asking
/// for the left target lane of the leftmost lane.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
/// Caller broke a precondition (shape mismatch, wrong argument count).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MetricError : std::domain_error {
  using std::domain_error::domain_error;
};

// ---------------------------------------------------------------------------
// Enums

enum class Side : std::uint8_t { Left, Right };

inline std::string_view to_string(Side s) { return s == Side::Left ? "left" : "right"; }

inline Side parse_side(std::string_view s) {
  if (s == "left" || s == "l") return Side::Left;
  if (s == "right" || s == "r") return Side::Right;
  throw ParseError("unknown side '" + std::string(s) + "'");
}

enum class Label : std::int8_t { Ignore = -1, Negative = 0, Positive = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

inline Label label_from_int(int v) {
  switch (v) {
    case 1: return Label::Positive;
    case 0: return Label::Negative;
    case -1: return Label::Ignore;
    default: throw ParseError("label must be 1, 0 or -1, got " + std::to_string(v));
  }
}

// ---------------------------------------------------------------------------
// Trajectories

/// One vehicle at one 10 Hz tick, SI units.
struct TrajectoryFrame {
  int vehicle_id = 0;
  int frame_id = 0;
  int lane_id = 0;
  double longitudinal_pos = 0.0;  // along-lane coordinate, front of vehicle
  double lateral_pos = 0.0;       // offset from the left road edge
  double speed = 0.0;
  double length = 4.5;

  friend bool operator==(const TrajectoryFrame&, const TrajectoryFrame&) = default;
};

struct Track {
  int vehicle_id = 0;
  std::vector<TrajectoryFrame> frames;  // contiguous frame ids

  bool empty() const { return frames.empty(); }
  int first_frame() const { return frames.front().frame_id; }
  int last_frame() const { return frames.back().frame_id; }
  bool covers(int frame_id) const {
    return !frames.empty() && frame_id >= first_frame() && frame_id <= last_frame();
  }
  const TrajectoryFrame& at_frame(int frame_id) const {
    if (!covers(frame_id))
      throw LookupError("vehicle " + std::to_string(vehicle_id) + " has no frame " +
                        std::to_string(frame_id));
    return frames[static_cast<std::size_t>(frame_id - first_frame())];
  }
};

/// Vehicles present at one tick. The per-lane index holds vehicle ids
/// ordered by longitudinal position, then vehicle id.
struct Scene {
  int frame_id = 0;
  std::map<int, TrajectoryFrame> entries;
  std::map<int, std::vector<int>> lanes;

  void index_lanes();
  const TrajectoryFrame* find(int vehicle_id) const {
    auto it = entries.find(vehicle_id);
    return it == entries.end() ? nullptr : &it->second;
  }
};

inline void Scene::index_lanes() {
  lanes.clear();
  for (const auto& [id, f] : entries) lanes[f.lane_id].push_back(id);
  for (auto& [lane, ids] : lanes) {
    std::stable_sort(ids.begin(), ids.end(), [this](int a, int b) {
      const double xa = entries.at(a).longitudinal_pos;
      const double xb = entries.at(b).longitudinal_pos;
      return xa != xb ? xa < xb : a < b;
    });
  }
}

using SceneMap = std::map<int, Scene>;

// ---------------------------------------------------------------------------
// Lanes

/// Which lanes may serve as lane-change targets. Lane ids grow from the
/// leftmost lane (1) to the right; ramps are valid source lanes but are left
/// out of `highway` so they never become targets.
struct LaneTable {
  std::set<int> highway;

  static LaneTable range(int first, int last) {
    LaneTable t;
    for (int l = first; l <= last; ++l) t.highway.insert(l);
    return t;
  }
  static LaneTable ngsim_default() { return range(1, 6); }

  std::optional<int> target_lane(int lane_id, Side side) const {
    const int candidate = side == Side::Left ? lane_id - 1 : lane_id + 1;
    if (!highway.contains(candidate)) return std::nullopt;
    return candidate;
  }
};

// ---------------------------------------------------------------------------
// Neighbor context

enum class Role : std::uint8_t { PV = 0, RV = 1, PLV = 2, PFV = 3 };
inline constexpr int kNumRoles = 4;

inline bool is_ahead(Role r) { return r == Role::PV || r == Role::PLV; }

/// Ego plus the four decision-relevant neighbors at one tick. Quantities are
/// indexed by Role. Absent neighbors carry distance +inf and relative speed 0.
struct NeighborContext {
  int frame_id = 0;
  TrajectoryFrame ego;
  Side target_side = Side::Left;
  int target_lane = 0;
  std::optional<TrajectoryFrame> neighbor[kNumRoles];
  double d[kNumRoles] = {kInf, kInf, kInf, kInf};
  double v[kNumRoles] = {0, 0, 0, 0};  // v'_ego - v'_neighbor
  double t[kNumRoles] = {kInf, kInf, kInf, kInf};  // closing time

  bool has(Role r) const { return neighbor[static_cast<int>(r)].has_value(); }
  double dist(Role r) const { return d[static_cast<int>(r)]; }
  double rel_speed(Role r) const { return v[static_cast<int>(r)]; }
  double closing_time(Role r) const { return t[static_cast<int>(r)]; }
  bool all_present() const {
    for (const auto& n : neighbor)
      if (!n) return false;
    return true;
  }
};

/// Closing time toward a neighbor: gap over closing speed, +inf when the gap
/// is not shrinking. Vehicles ahead close when ego is faster, vehicles behind
/// close when they are faster.
inline double closing_time(Role role, double distance, double ego_speed, double other_speed) {
  const double closing = is_ahead(role) ? ego_speed - other_speed : other_speed - ego_speed;
  if (!(closing > 0.0) || distance == kInf) return kInf;
  return distance / closing;
}

/// Fill a context from explicitly chosen neighbor frames.
inline NeighborContext make_context(const TrajectoryFrame& ego, Side side, int target_lane,
                                    const std::optional<TrajectoryFrame> (&nb)[kNumRoles]) {
  NeighborContext ctx;
  ctx.frame_id = ego.frame_id;
  ctx.ego = ego;
  ctx.target_side = side;
  ctx.target_lane = target_lane;
  for (int r = 0; r < kNumRoles; ++r) {
    ctx.neighbor[r] = nb[r];
    if (!nb[r]) continue;
    ctx.d[r] = std::abs(ego.longitudinal_pos - nb[r]->longitudinal_pos);
    ctx.v[r] = ego.speed - nb[r]->speed;
    ctx.t[r] = closing_time(static_cast<Role>(r), ctx.d[r], ego.speed, nb[r]->speed);
  }
  return ctx;
}

/// A run of frames with per-frame labels. Contexts loaded from a sequence
/// file carry only d/v/t values, not the underlying frames.
struct LabeledFrame {
  NeighborContext ctx;
  Label label = Label::Ignore;
};

struct LabeledSequence {
  int vehicle_id = 0;
  Side target_side = Side::Left;
  std::vector<LabeledFrame> frames;

  int first_frame() const { return frames.front().ctx.frame_id; }
  int last_frame() const { return frames.back().ctx.frame_id; }
};

}  // namespace lcsa
