#pragma once

// Seeded two-lane traffic generator. The ego lane is IDM traffic behind a
// steady lead vehicle. In the adjacent lane a scripted leader brakes in
// periodic dips and the IDM vehicles behind it, beside the ego, follow, so
// the target-lane gaps close in a regular rhythm. Each scenario occupies its
// own frame range and vehicle ids.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include "lcsa/core.hpp"
#include "lcsa/idm.hpp"

namespace lcsa {

struct SyntheticConfig {
  int scenarios = 2000;
  std::uint64_t seed = 7;
  int warmup_frames = 150;  // simulated before recording starts
  int record_frames = 130;  // recorded frames per scenario
  double speed_min = 20.0;
  double speed_max = 28.0;
  double dip_depth_min = 20.0;  // m/s, speed lost by the target-lane leader
  double dip_depth_max = 28.0;
  double dip_duration_min = 3.0;  // s
  double dip_duration_max = 4.0;
  double dip_period_min = 6.0;  // s between dip onsets
  double dip_period_max = 8.0;
  double plv_lead_min = 5.0;  // m, largest lead of the vehicle beside the ego during the recording
  double plv_lead_max = 20.0;
  int ego_lane = 2;
  int target_lane = 1;
};

struct SyntheticData {
  std::vector<Track> tracks;
  std::set<int> egos;
  LaneTable lanes;
};

namespace detail {

inline constexpr int kScenarioFrames = 1000;
inline constexpr int kScenarioVehicles = 100;
inline constexpr double kLaneWidth = 3.7;

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.record_frames + cfg.warmup_frames <= 0 || cfg.record_frames > detail::kScenarioFrames)
    throw ContractError("synthetic: frame counts out of range");
  SyntheticData out;
  out.lanes.highway = {cfg.target_lane, cfg.ego_lane};
  std::mt19937_64 rng(cfg.seed);
  using U = std::uniform_real_distribution<double>;

  for (int k = 0; k < cfg.scenarios; ++k) {
    const int vid0 = 1 + k * detail::kScenarioVehicles;
    const int fid0 = k * detail::kScenarioFrames;
    const double v = U(cfg.speed_min, cfg.speed_max)(rng);
    const double depth = U(cfg.dip_depth_min, cfg.dip_depth_max)(rng);
    const double duration = U(cfg.dip_duration_min, cfg.dip_duration_max)(rng);
    const double period = U(std::max(cfg.dip_period_min, duration), std::max(cfg.dip_period_max, duration))(rng);
    const double phase = U(0, period)(rng);
    // The leader runs slightly faster between dips so its mean speed is v.
    const double base = v + depth * duration / (2.0 * period);

    auto idm_params = [&](double v0) {
      IdmParams p;
      p.v0 = v0;
      p.T = U(0.8, 1.4)(rng);
      p.s0 = U(1.5, 2.5)(rng);
      return p;
    };
    auto vehicle = [&](int id, double pos, double speed, IdmParams p, int leader, bool constant) {
      SimVehicle s;
      s.id = id;
      s.pos = pos;
      s.speed = speed;
      s.length = U(4.2, 4.8)(rng);
      s.params = p;
      s.leader = leader;
      s.constant_velocity = constant;
      return s;
    };

    // Target lane: scripted leader and three IDM followers. The lanes do not
    // interact, so this lane is simulated first.
    std::vector<SimVehicle> lane;
    lane.push_back(vehicle(vid0 + 3, 0.0, base, idm_params(base), -1, true));
    for (int i = 1; i <= 3; ++i) {
      auto follower = vehicle(vid0 + 3 + i, 0.0, base, idm_params(base * 1.15), i - 1, false);
      const auto& ahead = lane.back();
      follower.pos = ahead.pos - ahead.length - idm_equilibrium_gap(base, follower.params);
      lane.push_back(follower);
    }
    const int total = cfg.warmup_frames + cfg.record_frames;
    std::vector<std::vector<SimVehicle>> states;
    for (int f = 0; f < total; ++f) {
      if (f >= cfg.warmup_frames) states.push_back(lane);
      const double tau = std::fmod((f + 1) * kDt + phase, period);
      const double dip = tau < duration ? 0.5 * depth * (1.0 - std::cos(2.0 * std::numbers::pi * tau / duration)) : 0.0;
      lane[0].speed = std::max(0.0, base - dip);
      lane = step_scene(lane, kDt);
    }

    // Ego lane at constant speed v, placed so the first follower's largest
    // lead over the ego during the recording is the drawn value.
    double top = -kInf;
    for (std::size_t f = 0; f < states.size(); ++f)
      top = std::max(top, states[f][1].pos - v * kDt * static_cast<double>(f));
    const double ego0 = top - U(cfg.plv_lead_min, cfg.plv_lead_max)(rng);
    std::vector<SimVehicle> ego_lane;
    const auto ego_p = idm_params(v * 1.1);
    ego_lane.push_back(vehicle(vid0, 0.0, v, idm_params(v), -1, true));
    ego_lane.push_back(vehicle(vid0 + 1, 0.0, v, ego_p, 0, false));
    ego_lane.push_back(vehicle(vid0 + 2, 0.0, v, idm_params(v * 1.1), 1, false));
    ego_lane[1].pos = ego0;
    ego_lane[0].pos = ego0 + ego_lane[0].length + idm_equilibrium_gap(v, ego_lane[1].params);
    ego_lane[2].pos = ego0 - ego_lane[1].length - idm_equilibrium_gap(v, ego_lane[2].params);

    std::vector<Track> tracks(7);
    for (std::size_t f = 0; f < states.size(); ++f) {
      const int fid = fid0 + static_cast<int>(f);
      auto record = [&](Track& t, const SimVehicle& s, int lane_id) {
        t.vehicle_id = s.id;
        t.frames.push_back({s.id, fid, lane_id, s.pos, detail::kLaneWidth * (lane_id - 0.5), s.speed, s.length});
      };
      for (std::size_t i = 0; i < 3; ++i) record(tracks[i], ego_lane[i], cfg.ego_lane);
      for (std::size_t i = 0; i < 4; ++i) record(tracks[3 + i], states[f][i], cfg.target_lane);
      ego_lane = step_scene(ego_lane, kDt);
    }
    for (auto& t : tracks) out.tracks.push_back(std::move(t));
    out.egos.insert(vid0 + 1);
  }
  return out;
}

}  // namespace lcsa
