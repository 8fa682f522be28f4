#pragma once

// Intelligent Driver Model car following and the five-vehicle rollout used to
// predict neighbor contexts into the near future.

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lcsa/core.hpp"

namespace lcsa {

struct IdmParams {
  double v0 = 30.0;    // desired speed, m/s
  double s0 = 2.0;     // minimum spacing, m
  double T = 1.5;      // desired time headway, s
  double a = 1.4;      // maximal acceleration, m/s^2
  double b = 2.0;      // comfortable braking, m/s^2
  double delta = 4.0;  // free-road exponent

  void validate() const {
    if (!(v0 > 0 && s0 > 0 && T > 0 && a > 0 && b > 0 && delta > 0))
      throw ContractError("IDM parameters must be strictly positive");
  }
};

/// Parameter policy for observed vehicles whose intent is unknown: the
/// desired speed is derived from the current speed.
struct IdmDefaults {
  double s0 = 2.0;
  double T = 1.5;
  double a = 1.4;
  double b = 2.0;
  double delta = 4.0;
  double v0_scale = 1.1;
  double v0_floor = 10.0;
  double min_speed = 0.1;

  IdmParams for_speed(double speed) const {
    IdmParams p{0.0, s0, T, a, b, delta};
    p.v0 = std::max(v0_floor, v0_scale * std::max(speed, min_speed));
    return p;
  }
};

struct LeaderState {
  double pos = 0.0;
  double speed = 0.0;
  double length = 0.0;
};

inline double idm_desired_gap(double speed, double approach_rate, const IdmParams& p) {
  const double s = p.s0 + speed * p.T + speed * approach_rate / (2.0 * std::sqrt(p.a * p.b));
  return std::max(0.0, s);
}

/// IDM acceleration of a follower. Without a leader the interaction term
/// vanishes. Returns nullopt for a non-positive bumper gap.
inline std::optional<double> idm_accel(double pos, double speed, const std::optional<LeaderState>& leader,
                                       const IdmParams& p) {
  const double free_term = std::pow(speed / p.v0, p.delta);
  if (!leader) return p.a * (1.0 - free_term);
  const double gap = leader->pos - pos - leader->length;
  if (!(gap > 0.0)) return std::nullopt;
  const double ratio = idm_desired_gap(speed, speed - leader->speed, p) / gap;
  return p.a * (1.0 - free_term - ratio * ratio);
}

/// Gap at which a follower at `speed` behind an equally fast leader has zero
/// acceleration.
inline double idm_equilibrium_gap(double speed, const IdmParams& p) {
  return (p.s0 + speed * p.T) / std::sqrt(1.0 - std::pow(speed / p.v0, p.delta));
}

// ---------------------------------------------------------------------------
// Scene stepping

struct SimVehicle {
  int id = 0;
  double pos = 0.0;
  double speed = 0.0;
  double length = 4.5;
  IdmParams params;
  int leader = -1;  // index into the vehicle list, -1 for free road
  bool constant_velocity = false;
};

inline constexpr double kClampGap = 0.1;

namespace detail {

/// Indices ordered so every leader precedes its followers.
inline std::vector<std::size_t> leaders_first(std::span<const SimVehicle> vs) {
  const std::size_t n = vs.size();
  std::vector<int> depth(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    int d = 0;
    std::size_t guard = 0;
    for (int j = vs[i].leader; j >= 0; j = vs[static_cast<std::size_t>(j)].leader) {
      if (++guard > n) throw ContractError("leader graph contains a cycle");
      ++d;
    }
    depth[i] = d;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return depth[a] < depth[b]; });
  return order;
}

}  // namespace detail

/// One semi-implicit Euler step for every vehicle. Accelerations are taken
/// from the current states; a follower that would end at a non-positive gap
/// is placed `kClampGap` behind its leader at the leader's speed.
inline std::vector<SimVehicle> step_scene(std::span<const SimVehicle> vehicles, double dt) {
  if (!(dt > 0)) throw ContractError("step_scene: dt must be positive");
  std::vector<SimVehicle> next(vehicles.begin(), vehicles.end());
  std::vector<bool> degenerate(vehicles.size(), false);
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    auto& n = next[i];
    if (v.constant_velocity) {
      n.pos = v.pos + v.speed * dt;
      continue;
    }
    std::optional<LeaderState> leader;
    if (v.leader >= 0) {
      const auto& l = vehicles[static_cast<std::size_t>(v.leader)];
      leader = LeaderState{l.pos, l.speed, l.length};
    }
    const auto acc = idm_accel(v.pos, v.speed, leader, v.params);
    if (!acc) {
      degenerate[i] = true;
      continue;
    }
    n.speed = std::max(0.0, v.speed + *acc * dt);
    n.pos = v.pos + n.speed * dt;
  }
  for (std::size_t i : detail::leaders_first(vehicles)) {
    auto& n = next[i];
    if (n.constant_velocity || n.leader < 0) continue;
    const auto& l = next[static_cast<std::size_t>(n.leader)];
    if (degenerate[i] || !(l.pos - l.length - n.pos > 0.0)) {
      n.speed = l.speed;
      n.pos = l.pos - l.length - kClampGap;
    }
  }
  return next;
}

// ---------------------------------------------------------------------------
// Rollout

/// Predicted contexts for future offsets 1..H (0.1 s apart).
struct PredictedScene {
  std::vector<NeighborContext> contexts;
};

/// Roll the ego and its four neighbors forward with a frozen leader graph:
/// EGO follows PV, RV follows EGO, PFV follows PLV, and PV / PLV follow their
/// currently observed leaders, which keep constant velocity.
inline PredictedScene rollout(const NeighborContext& ctx, const std::optional<TrajectoryFrame>& pv_leader,
                              const std::optional<TrajectoryFrame>& plv_leader, const IdmDefaults& idm,
                              int horizon_frames) {
  enum Slot { kEgo, kPv, kRv, kPlv, kPfv, kPvLeader, kPlvLeader, kSlots };
  std::optional<TrajectoryFrame> base[kSlots];
  base[kEgo] = ctx.ego;
  base[kPv] = ctx.neighbor[static_cast<int>(Role::PV)];
  base[kRv] = ctx.neighbor[static_cast<int>(Role::RV)];
  base[kPlv] = ctx.neighbor[static_cast<int>(Role::PLV)];
  base[kPfv] = ctx.neighbor[static_cast<int>(Role::PFV)];
  if (base[kPv]) base[kPvLeader] = pv_leader;
  if (base[kPlv]) base[kPlvLeader] = plv_leader;

  constexpr int kFollows[kSlots] = {kPv, kPvLeader, kEgo, kPlvLeader, kPlv, -1, -1};

  std::vector<SimVehicle> sim;
  int index[kSlots];
  for (int s = 0; s < kSlots; ++s) {
    index[s] = -1;
    if (!base[s]) continue;
    index[s] = static_cast<int>(sim.size());
    SimVehicle v;
    v.id = base[s]->vehicle_id;
    v.pos = base[s]->longitudinal_pos;
    v.speed = std::max(0.0, base[s]->speed);
    v.length = base[s]->length;
    v.params = idm.for_speed(v.speed);
    v.constant_velocity = s == kPvLeader || s == kPlvLeader;
    sim.push_back(v);
  }
  for (int s = 0; s < kSlots; ++s)
    if (index[s] >= 0 && kFollows[s] >= 0) sim[static_cast<std::size_t>(index[s])].leader = index[kFollows[s]];

  PredictedScene out;
  out.contexts.reserve(static_cast<std::size_t>(std::max(0, horizon_frames)));
  for (int k = 1; k <= horizon_frames; ++k) {
    sim = step_scene(sim, kDt);
    auto frame_of = [&](int s) {
      TrajectoryFrame f = *base[s];
      const auto& v = sim[static_cast<std::size_t>(index[s])];
      f.frame_id = ctx.frame_id + k;
      f.longitudinal_pos = v.pos;
      f.speed = v.speed;
      return f;
    };
    std::optional<TrajectoryFrame> nb[kNumRoles];
    constexpr int kRoleSlot[kNumRoles] = {kPv, kRv, kPlv, kPfv};
    for (int r = 0; r < kNumRoles; ++r)
      if (index[kRoleSlot[r]] >= 0) nb[r] = frame_of(kRoleSlot[r]);
    out.contexts.push_back(make_context(frame_of(kEgo), ctx.target_side, ctx.target_lane, nb));
  }
  return out;
}

/// What an online consumer sees at one tick: the real context, plus the
/// observed leaders of PV and PLV that the rollout needs.
struct OnlineFrame {
  NeighborContext ctx;
  std::optional<TrajectoryFrame> pv_leader;
  std::optional<TrajectoryFrame> plv_leader;
};

/// Predicted contexts for the `steps` ticks following the given frame.
using FuturePredictor = std::function<std::vector<NeighborContext>(const OnlineFrame&, int steps)>;

inline FuturePredictor idm_predictor(const IdmDefaults& idm = {}) {
  return [idm](const OnlineFrame& f, int steps) {
    return rollout(f.ctx, f.pv_leader, f.plv_leader, idm, steps).contexts;
  };
}

}  // namespace lcsa
