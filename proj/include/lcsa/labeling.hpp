#pragma once

// Lane-change suitability labels: the action-based scheme around observed lane
// changes (with the situation-change filter), the automatic future-time-gap
// scheme, scheme agreement, sequence augmentation and the sequence file format.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "lcsa/core.hpp"
#include "lcsa/ngsim.hpp"

namespace lcsa {

struct LaneChangeEvent {
  int vehicle_id = 0;
  int t_start = 0;  // maneuver onset
  int t_cross = 0;  // first frame in the new lane
  Side direction = Side::Left;
  int source_lane = 0;
  int target_lane = 0;
};

struct FilterParams {
  double gamma = 2.0;
  double beta = 1.8;  // seconds
  double rel_change_min = 0.35;
  double min_label_gap = 1.0;  // seconds

  void validate() const {
    if (!(gamma > 0 && beta > 0 && rel_change_min > 0 && min_label_gap > 0))
      throw ContractError("filter parameters must be strictly positive");
  }
};

struct LabelingConfig {
  FilterParams filter;
  double negative_window = 5.0;  // seconds
  double horizon = 3.0;          // seconds
  double min_time_gap = 1.0;     // seconds
  double lateral_speed_threshold = 0.213;  // m/s
  int min_sequence_frames = 10;
};

// ---------------------------------------------------------------------------
// Lane change detection

/// Lateral speed at frame index i from the three samples i-1, i, i+1
/// (one-sided at track ends).
inline double lateral_velocity(const Track& track, std::size_t i) {
  const auto& f = track.frames;
  if (f.size() < 2) return 0.0;
  const std::size_t lo = i == 0 ? 0 : i - 1;
  const std::size_t hi = std::min(f.size() - 1, i + 1);
  return (f[hi].lateral_pos - f[lo].lateral_pos) / (static_cast<double>(hi - lo) * kDt);
}

/// One event per lane transition whose approach to the boundary is steady:
/// walking back from the crossing, the lateral speed must point at the target
/// lane with at least `threshold` m/s. Transitions with no such approach are
/// dropped.
inline std::vector<LaneChangeEvent> detect_lane_changes(const Track& track, double threshold = 0.213) {
  std::vector<LaneChangeEvent> events;
  const auto& f = track.frames;
  for (std::size_t c = 1; c < f.size(); ++c) {
    if (f[c].lane_id == f[c - 1].lane_id) continue;
    LaneChangeEvent e;
    e.vehicle_id = track.vehicle_id;
    e.t_cross = f[c].frame_id;
    e.source_lane = f[c - 1].lane_id;
    e.target_lane = f[c].lane_id;
    e.direction = e.target_lane < e.source_lane ? Side::Left : Side::Right;
    const double toward = e.direction == Side::Left ? -1.0 : 1.0;
    std::size_t start = c;
    while (start > 0 && f[start - 1].lane_id == e.source_lane &&
           toward * lateral_velocity(track, start - 1) >= threshold)
      --start;
    if (start == c) continue;
    e.t_start = f[start].frame_id;
    events.push_back(e);
  }
  return events;
}

// ---------------------------------------------------------------------------
// Situation-change filter

struct SituationScore {
  double ad = 0.0;  // weighted distances plus weighted absolute relative speeds
  double sd = 0.0;  // signed suitability
};

/// Distances and relative speeds in role order PV, RV, PLV, PFV.
inline SituationScore eq4_from(const double (&d)[kNumRoles], const double (&v)[kNumRoles],
                               const FilterParams& p) {
  enum { PV, RV, PLV, PFV };
  SituationScore s;
  s.ad = d[PV] + p.gamma * d[PLV] + d[RV] + p.gamma * d[PFV] +
         p.beta * (std::abs(v[PV]) + p.gamma * std::abs(v[PLV]) + std::abs(v[RV]) +
                   p.gamma * std::abs(v[PFV]));
  s.sd = v[PV] + p.gamma * v[PLV] - v[RV] - p.gamma * v[PFV] - s.ad;
  return s;
}

/// nullopt when a neighbor is absent.
inline std::optional<SituationScore> eq4_quantities(const NeighborContext& ctx, const FilterParams& p) {
  if (!ctx.all_present()) return std::nullopt;
  return eq4_from(ctx.d, ctx.v, p);
}

/// nullopt when the negative score cannot normalize (ad <= 0).
inline std::optional<bool> filter_scores(const SituationScore& n, const SituationScore& pos,
                                         const FilterParams& p) {
  if (!(n.ad > 0.0)) return std::nullopt;
  return std::abs(n.ad - pos.ad) / n.ad >= p.rel_change_min && n.sd >= pos.sd;
}

inline std::optional<bool> filter_pair(const NeighborContext& ctx_n, const NeighborContext& ctx_p,
                                       const FilterParams& p) {
  const auto n = eq4_quantities(ctx_n, p);
  const auto pos = eq4_quantities(ctx_p, p);
  if (!n || !pos) return std::nullopt;
  return filter_scores(*n, *pos, p);
}

// ---------------------------------------------------------------------------
// Action-based labeling

struct ActionLabelStats {
  std::size_t events = 0;
  std::size_t kept = 0;
  std::size_t skipped_history = 0;    // negative window leaves the track or source lane
  std::size_t skipped_target = 0;     // target lane not an adjacent highway lane
  std::size_t missing_neighbors = 0;  // filter cannot be evaluated
  std::size_t filtered = 0;           // filter rejected the pair
};

struct ActionLabelResult {
  std::vector<LabeledSequence> sequences;
  ActionLabelStats stats;
};

/// Per event: T_N negative frames, then an ignore gap, then T_P positive
/// frames up to (excluding) the crossing. The filter compares the last
/// negative frame with the first positive frame.
inline ActionLabelResult action_based_label(const std::vector<LaneChangeEvent>& events, const SceneMap& scenes,
                                            const LaneTable& lanes, const LabelingConfig& cfg) {
  cfg.filter.validate();
  ActionLabelResult res;
  const int gap = seconds_to_frames(cfg.filter.min_label_gap);
  const int window = seconds_to_frames(cfg.negative_window);
  for (const auto& e : events) {
    ++res.stats.events;
    const auto target = lanes.target_lane(e.source_lane, e.direction);
    if (!target || *target != e.target_lane) {
      ++res.stats.skipped_target;
      continue;
    }
    const int neg_start = e.t_start - gap - window;
    const int neg_end = e.t_start - gap;  // exclusive
    LabeledSequence seq{e.vehicle_id, e.direction, {}};
    bool ok = true;
    for (int fid = neg_start; fid < e.t_cross && ok; ++fid) {
      auto sit = scenes.find(fid);
      const TrajectoryFrame* ego = sit == scenes.end() ? nullptr : sit->second.find(e.vehicle_id);
      if (!ego || ego->lane_id != e.source_lane) {
        ok = false;
        break;
      }
      const Label l = fid < neg_end ? Label::Negative : fid < e.t_start ? Label::Ignore : Label::Positive;
      seq.frames.push_back({context_in_lanes(sit->second, *ego, e.source_lane, e.target_lane, e.direction), l});
    }
    if (!ok) {
      ++res.stats.skipped_history;
      continue;
    }
    const auto& ctx_n = seq.frames[static_cast<std::size_t>(window - 1)].ctx;
    const auto& ctx_p = seq.frames[static_cast<std::size_t>(window + gap)].ctx;
    const auto pass = filter_pair(ctx_n, ctx_p, cfg.filter);
    if (!pass) {
      ++res.stats.missing_neighbors;
      continue;
    }
    if (!*pass) {
      ++res.stats.filtered;
      continue;
    }
    ++res.stats.kept;
    res.sequences.push_back(std::move(seq));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Automatic labeling

/// True when both target-lane closing times meet the minimum gap.
inline bool target_gaps_ok(const NeighborContext& ctx, double min_time_gap) {
  return ctx.closing_time(Role::PLV) >= min_time_gap && ctx.closing_time(Role::PFV) >= min_time_gap;
}

namespace detail {

/// Per-frame gap check of a track against a fixed target lane, computed lazily.
class GapCache {
 public:
  GapCache(const Track& track, const SceneMap& scenes, Side side, double min_gap)
      : track_(track), scenes_(scenes), side_(side), min_gap_(min_gap) {}

  bool ok(std::size_t i, int target_lane) {
    auto& v = cache_[target_lane];
    if (v.empty()) v.assign(track_.frames.size(), -1);
    if (v[i] < 0) {
      const auto& ego = track_.frames[i];
      const auto& scene = scenes_.at(ego.frame_id);
      v[i] = target_gaps_ok(context_in_lanes(scene, ego, ego.lane_id, target_lane, side_), min_gap_) ? 1 : 0;
    }
    return v[i] == 1;
  }

 private:
  const Track& track_;
  const SceneMap& scenes_;
  Side side_;
  double min_gap_;
  std::unordered_map<int, std::vector<std::int8_t>> cache_;
};

}  // namespace detail

/// Label frame t positive iff at every future frame in (t, t + horizon] both
/// target-lane closing times are at least `min_time_gap`. The target lane is
/// fixed by the ego lane at t. Frames without a target lane or without the full
/// future horizon get no label.
inline std::vector<std::pair<int, Label>> automatic_label(const Track& track, const SceneMap& scenes, Side side,
                                                          const LaneTable& lanes, double horizon = 3.0,
                                                          double min_time_gap = 1.0) {
  std::vector<std::pair<int, Label>> out;
  const int h = seconds_to_frames(horizon);
  const auto n = track.frames.size();
  detail::GapCache cache(track, scenes, side, min_time_gap);
  for (std::size_t i = 0; i + static_cast<std::size_t>(h) < n; ++i) {
    const auto target = lanes.target_lane(track.frames[i].lane_id, side);
    if (!target) continue;
    bool positive = true;
    for (int k = 1; k <= h && positive; ++k) positive = cache.ok(i + static_cast<std::size_t>(k), *target);
    out.emplace_back(track.frames[i].frame_id, positive ? Label::Positive : Label::Negative);
  }
  return out;
}

/// Automatic labels packed into contiguous sequences of at most
/// `window_frames` frames, each carrying its context at the labeled tick.
inline std::vector<LabeledSequence> automatic_sequences(const Track& track, const SceneMap& scenes, Side side,
                                                        const LaneTable& lanes, const LabelingConfig& cfg,
                                                        int window_frames) {
  std::vector<LabeledSequence> out;
  const auto labels = automatic_label(track, scenes, side, lanes, cfg.horizon, cfg.min_time_gap);
  LabeledSequence cur{track.vehicle_id, side, {}};
  auto flush = [&] {
    if (static_cast<int>(cur.frames.size()) >= cfg.min_sequence_frames) out.push_back(cur);
    cur.frames.clear();
  };
  int prev = 0;
  int lane = 0;
  for (const auto& [fid, label] : labels) {
    const auto& ego = track.at_frame(fid);
    if (!cur.frames.empty() &&
        (fid != prev + 1 || ego.lane_id != lane || static_cast<int>(cur.frames.size()) >= window_frames))
      flush();
    const int target = *lanes.target_lane(ego.lane_id, side);
    cur.frames.push_back({context_in_lanes(scenes.at(fid), ego, ego.lane_id, target, side), label});
    prev = fid;
    lane = ego.lane_id;
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Agreement

struct FrameKey {
  int vehicle_id = 0;
  int frame_id = 0;
  Side side = Side::Left;
  friend auto operator<=>(const FrameKey&, const FrameKey&) = default;
};

using LabelMap = std::map<FrameKey, Label>;

inline LabelMap label_map(const std::vector<LabeledSequence>& seqs) {
  LabelMap m;
  for (const auto& s : seqs)
    for (const auto& f : s.frames) m[{s.vehicle_id, f.ctx.frame_id, s.target_side}] = f.label;
  return m;
}

/// Fraction of frames labeled (non-ignore) by both schemes whose labels match.
inline double agreement(const LabelMap& a, const LabelMap& b) {
  std::size_t shared = 0;
  std::size_t same = 0;
  for (const auto& [key, la] : a) {
    if (la == Label::Ignore) continue;
    auto it = b.find(key);
    if (it == b.end() || it->second == Label::Ignore) continue;
    ++shared;
    same += la == it->second;
  }
  if (shared == 0) throw MetricError("agreement: the label maps share no labeled frame");
  return static_cast<double>(same) / static_cast<double>(shared);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double max_shift = 5.0;        // seconds, each window end independently
  double min_stretch = 2.0;      // seconds, shortest single-label window
  double pure_probability = 0.5; // chance to add one single-label window per input
};

/// Where augmentation finds contexts for frames outside the original window,
/// and the automatic labels to give them.
struct AugmentSource {
  const SceneMap* scenes = nullptr;
  const LaneTable* lanes = nullptr;
  const LabelMap* auto_labels = nullptr;
};

namespace detail {

inline std::optional<LabeledFrame> context_at(const AugmentSource& src, const LabeledSequence& seq, int fid,
                                              int ego_lane, int target_lane) {
  if (!src.scenes) return std::nullopt;
  auto sit = src.scenes->find(fid);
  if (sit == src.scenes->end()) return std::nullopt;
  const TrajectoryFrame* ego = sit->second.find(seq.vehicle_id);
  if (!ego || ego->lane_id != ego_lane) return std::nullopt;
  LabeledFrame lf{context_in_lanes(sit->second, *ego, ego_lane, target_lane, seq.target_side), Label::Ignore};
  if (src.auto_labels) {
    auto it = src.auto_labels->find({seq.vehicle_id, fid, seq.target_side});
    if (it != src.auto_labels->end()) lf.label = it->second;
  }
  return lf;
}

inline bool has_label(const LabeledSequence& s) {
  return std::any_of(s.frames.begin(), s.frames.end(), [](const auto& f) { return f.label != Label::Ignore; });
}

}  // namespace detail

/// Originals, plus per input at most one window with randomly shifted ends and
/// at most one single-label window cut from a long same-label stretch. Output
/// size is between n and 3n.
inline std::vector<LabeledSequence> augment(const std::vector<LabeledSequence>& sequences, const AugmentSource& src,
                                            std::uint64_t seed, const AugmentConfig& cfg = {}) {
  std::vector<LabeledSequence> out(sequences.begin(), sequences.end());
  std::mt19937_64 rng(seed);
  const int max_shift = seconds_to_frames(cfg.max_shift);
  const int min_stretch = std::max(1, seconds_to_frames(cfg.min_stretch));
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  std::bernoulli_distribution coin(cfg.pure_probability);
  std::bernoulli_distribution pick_positive(0.5);

  for (const auto& seq : sequences) {
    if (seq.frames.empty()) continue;
    const int first = seq.first_frame();
    const int last = seq.last_frame();
    const int ego_lane = seq.frames.front().ctx.ego.lane_id;
    const int target_lane = seq.frames.front().ctx.target_lane;
    const int new_first = first + shift(rng);
    const int new_last = last + shift(rng);

    LabeledSequence variant{seq.vehicle_id, seq.target_side, {}};
    if (new_first <= new_last) {
      std::vector<LabeledFrame> before;
      for (int fid = first - 1; fid >= new_first; --fid) {
        auto lf = detail::context_at(src, seq, fid, ego_lane, target_lane);
        if (!lf) break;
        before.push_back(*lf);
      }
      std::reverse(before.begin(), before.end());
      variant.frames = std::move(before);
      for (const auto& f : seq.frames)
        if (f.ctx.frame_id >= new_first && f.ctx.frame_id <= new_last) variant.frames.push_back(f);
      for (int fid = last + 1; fid <= new_last; ++fid) {
        auto lf = detail::context_at(src, seq, fid, ego_lane, target_lane);
        if (!lf) break;
        variant.frames.push_back(*lf);
      }
    }
    const bool have_variant = detail::has_label(variant);
    if (have_variant) out.push_back(variant);

    if (!coin(rng)) continue;
    const Label want = pick_positive(rng) ? Label::Positive : Label::Negative;
    const auto& base = have_variant ? variant : seq;
    std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end)
    for (std::size_t i = 0; i < base.frames.size();) {
      if (base.frames[i].label != want) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < base.frames.size() && base.frames[j].label == want) ++j;
      if (static_cast<int>(j - i) >= min_stretch) runs.emplace_back(i, j);
      i = j;
    }
    if (runs.empty()) continue;
    const auto [rb, re] = runs[std::uniform_int_distribution<std::size_t>(0, runs.size() - 1)(rng)];
    const int len = std::uniform_int_distribution<int>(min_stretch, static_cast<int>(re - rb))(rng);
    const auto off = std::uniform_int_distribution<std::size_t>(0, re - rb - static_cast<std::size_t>(len))(rng);
    LabeledSequence pure{seq.vehicle_id, seq.target_side, {}};
    pure.frames.assign(base.frames.begin() + static_cast<std::ptrdiff_t>(rb + off),
                       base.frames.begin() + static_cast<std::ptrdiff_t>(rb + off + static_cast<std::size_t>(len)));
    out.push_back(std::move(pure));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence files. One frame per line:
//   seq_id,vehicle_id,frame_id,target_side,d_pv,d_rv,d_plv,d_pfv,
//   v_pv,v_rv,v_plv,v_pfv,label,predicted
// Absent neighbors are written as distance "inf". Consecutive lines sharing a
// seq_id form one sequence.

inline constexpr std::string_view kSequenceHeader =
    "seq_id,vehicle_id,frame_id,target_side,d_pv,d_rv,d_plv,d_pfv,v_pv,v_rv,v_plv,v_pfv,label,predicted";

inline void write_context_row(std::ostream& out, std::size_t seq_id, int vehicle_id, const NeighborContext& c,
                              Label label, bool predicted) {
  out << seq_id << ',' << vehicle_id << ',' << c.frame_id << ',' << to_string(c.target_side);
  for (double d : c.d) out << ',' << (d == kInf ? std::string("inf") : format_double(d));
  for (double v : c.v) out << ',' << format_double(v);
  out << ',' << to_int(label) << ',' << (predicted ? 1 : 0) << '\n';
}

inline void write_sequences(std::ostream& out, const std::vector<LabeledSequence>& seqs) {
  out << kSequenceHeader << '\n';
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (const auto& f : seqs[s].frames) write_context_row(out, s, seqs[s].vehicle_id, f.ctx, f.label, false);
}

/// Contexts rebuilt from a sequence file carry distances, relative speeds and
/// closing times but no neighbor frames.
inline std::vector<LabeledSequence> read_sequences(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSequenceHeader) throw ParseError("not a labeled-sequence file");
  std::vector<LabeledSequence> out;
  std::vector<std::string_view> fields;
  long long current = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    detail::split_fields(line, fields);
    int seq_id = 0, vid = 0, fid = 0, label = 0, predicted = 0;
    bool ok = fields.size() == 14 && detail::parse_int(fields[0], seq_id) && detail::parse_int(fields[1], vid) &&
              detail::parse_int(fields[2], fid) && detail::parse_int(fields[12], label) &&
              detail::parse_int(fields[13], predicted);
    if (!ok) throw ParseError("sequence file line " + std::to_string(lineno) + " is malformed");
    NeighborContext c;
    c.frame_id = fid;
    c.ego.vehicle_id = vid;
    c.ego.frame_id = fid;
    c.target_side = parse_side(fields[3]);
    for (int r = 0; r < kNumRoles; ++r) {
      ok = ok && detail::parse_double(fields[4 + static_cast<std::size_t>(r)], c.d[r]) &&
           detail::parse_double(fields[8 + static_cast<std::size_t>(r)], c.v[r]);
      const double closing = is_ahead(static_cast<Role>(r)) ? c.v[r] : -c.v[r];
      c.t[r] = closing > 0 && c.d[r] != kInf ? c.d[r] / closing : kInf;
    }
    if (!ok) throw ParseError("sequence file line " + std::to_string(lineno) + " has bad numbers");
    if (seq_id != current) {
      out.push_back({vid, c.target_side, {}});
      current = seq_id;
    }
    out.back().frames.push_back({c, label_from_int(label)});
  }
  return out;
}

}  // namespace lcsa
