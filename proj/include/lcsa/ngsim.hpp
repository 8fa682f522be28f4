#pragma once

// NGSIM trajectory ingestion, scene reconstruction and neighbor lookup.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcsa/core.hpp"

namespace lcsa {

enum class Units { Feet, Meters };

inline Units parse_units(std::string_view s) {
  if (s == "feet" || s == "ft") return Units::Feet;
  if (s == "meters" || s == "m") return Units::Meters;
  throw ParseError("unknown units '" + std::string(s) + "'");
}

struct ParseResult {
  std::vector<Track> tracks;
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;    // non-finite or negative speed / non-positive length
  std::size_t rows_duplicate = 0;  // repeated (vehicle, frame)
  std::size_t gap_splits = 0;
};

namespace detail {

inline constexpr std::array<std::string_view, 18> kNgsimColumns = {
    "Vehicle_ID", "Frame_ID", "Total_Frames", "Global_Time", "Local_X",  "Local_Y",
    "Global_X",   "Global_Y", "v_Length",     "v_Width",     "v_Class",  "v_Vel",
    "v_Acc",      "Lane_ID",  "Preceding",    "Following",   "Space_Headway",
    "Time_Headway"};

inline constexpr std::array<std::string_view, 7> kRequiredColumns = {
    "Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Vel", "v_Length", "Lane_ID"};

inline void split_fields(std::string_view line, std::vector<std::string_view>& out) {
  out.clear();
  const bool comma = line.find(',') != std::string_view::npos;
  std::size_t i = 0;
  while (i <= line.size()) {
    if (comma) {
      const std::size_t j = std::min(line.find(',', i), line.size());
      std::string_view f = line.substr(i, j - i);
      while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front()))) f.remove_prefix(1);
      while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back()))) f.remove_suffix(1);
      out.push_back(f);
      i = j + 1;
    } else {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && p == s.data() + s.size()) return true;
  // from_chars rejects "inf"/"nan" spellings some exporters use
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end != tmp.c_str() && *end == '\0';
}

inline bool parse_int(std::string_view s, int& out) {
  double d = 0;
  if (!parse_double(s, d) || !std::isfinite(d)) return false;
  out = static_cast<int>(d);
  return static_cast<double>(out) == d;
}

inline bool looks_numeric(std::string_view s) {
  double d = 0;
  return parse_double(s, d);
}

/// Sort, drop duplicates, split at frame gaps.
inline void assemble_tracks(std::vector<TrajectoryFrame>& rows, ParseResult& res) {
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.vehicle_id != b.vehicle_id ? a.vehicle_id < b.vehicle_id : a.frame_id < b.frame_id;
  });
  Track cur;
  for (const auto& r : rows) {
    if (!cur.frames.empty() && cur.vehicle_id == r.vehicle_id) {
      const int delta = r.frame_id - cur.frames.back().frame_id;
      if (delta == 0) {
        ++res.rows_duplicate;
        continue;
      }
      if (delta == 1) {
        cur.frames.push_back(r);
        continue;
      }
      ++res.gap_splits;
    }
    if (!cur.frames.empty()) res.tracks.push_back(std::move(cur));
    cur = Track{r.vehicle_id, {r}};
  }
  if (!cur.frames.empty()) res.tracks.push_back(std::move(cur));
}

}  // namespace detail

/// Parse an NGSIM trajectory table. A header row is optional; without one the
/// 18 columns of the public release are assumed in their published order.
inline ParseResult parse_ngsim(std::istream& in, Units units) {
  ParseResult res;
  const double scale = units == Units::Feet ? kFeetToMeters : 1.0;

  std::string line;
  std::vector<std::string_view> fields;
  std::unordered_map<std::string_view, std::size_t> col;
  std::array<std::size_t, detail::kRequiredColumns.size()> idx{};
  bool have_layout = false;
  std::vector<TrajectoryFrame> rows;

  auto resolve = [&](bool from_header) {
    for (std::size_t k = 0; k < detail::kRequiredColumns.size(); ++k) {
      const auto name = detail::kRequiredColumns[k];
      if (from_header) {
        auto it = std::find_if(col.begin(), col.end(),
                               [&](const auto& kv) { return detail::iequals(kv.first, name); });
        if (it == col.end()) throw ParseError("NGSIM header is missing column '" + std::string(name) + "'");
        idx[k] = it->second;
      } else {
        idx[k] = static_cast<std::size_t>(
            std::find(detail::kNgsimColumns.begin(), detail::kNgsimColumns.end(), name) -
            detail::kNgsimColumns.begin());
      }
    }
    have_layout = true;
  };

  std::string header_line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    detail::split_fields(line, fields);
    if (fields.empty() || (fields.size() == 1 && fields[0].empty())) continue;
    if (!have_layout) {
      if (!detail::looks_numeric(fields[0])) {
        header_line = line;  // keep storage alive for the string_views in col
        detail::split_fields(header_line, fields);
        for (std::size_t i = 0; i < fields.size(); ++i) col.emplace(fields[i], i);
        resolve(true);
        continue;
      }
      resolve(false);
    }
    ++res.rows_read;
    std::size_t need = 0;
    for (auto i : idx) need = std::max(need, i + 1);
    if (fields.size() < need) {
      ++res.rows_dropped;
      continue;
    }
    TrajectoryFrame f;
    double vals[7];
    bool ok = true;
    for (std::size_t k = 0; k < 7 && ok; ++k) ok = detail::parse_double(fields[idx[k]], vals[k]);
    ok = ok && detail::parse_int(fields[idx[0]], f.vehicle_id) &&
         detail::parse_int(fields[idx[1]], f.frame_id) && detail::parse_int(fields[idx[6]], f.lane_id);
    for (double v : vals) ok = ok && std::isfinite(v);
    if (!ok || vals[4] < 0.0 || vals[5] <= 0.0) {
      ++res.rows_dropped;
      continue;
    }
    f.lateral_pos = vals[2] * scale;
    f.longitudinal_pos = vals[3] * scale;
    f.speed = vals[4] * scale;
    f.length = vals[5] * scale;
    rows.push_back(f);
  }
  detail::assemble_tracks(rows, res);
  return res;
}

inline ParseResult parse_ngsim(const std::string& text, Units units) {
  std::istringstream in(text);
  return parse_ngsim(in, units);
}

/// Offset ids so tracks from several recordings can share one scene map.
inline void offset_ids(std::vector<Track>& tracks, int vehicle_offset, int frame_offset) {
  for (auto& t : tracks) {
    t.vehicle_id += vehicle_offset;
    for (auto& f : t.frames) {
      f.vehicle_id += vehicle_offset;
      f.frame_id += frame_offset;
    }
  }
}

inline SceneMap build_scenes(const std::vector<Track>& tracks) {
  SceneMap scenes;
  for (const auto& t : tracks)
    for (const auto& f : t.frames) {
      auto& s = scenes[f.frame_id];
      s.frame_id = f.frame_id;
      s.entries[f.vehicle_id] = f;
    }
  for (auto& [id, s] : scenes) s.index_lanes();
  return scenes;
}

/// All frames of all scenes, ordered by (vehicle_id, frame_id).
inline std::vector<TrajectoryFrame> flatten(const SceneMap& scenes) {
  std::vector<TrajectoryFrame> out;
  for (const auto& [fid, s] : scenes)
    for (const auto& [vid, f] : s.entries) out.push_back(f);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.vehicle_id != b.vehicle_id ? a.vehicle_id < b.vehicle_id : a.frame_id < b.frame_id;
  });
  return out;
}

/// Nearest vehicle in `lane` ahead of (pos >= x) or behind (pos < x) the
/// reference position, excluding `self_id`. Ties go to the lower vehicle id.
inline const TrajectoryFrame* nearest_in_lane(const Scene& scene, int lane, double x, int self_id,
                                              bool ahead) {
  auto it = scene.lanes.find(lane);
  if (it == scene.lanes.end()) return nullptr;
  const auto& ids = it->second;
  auto pos = [&](int id) { return scene.entries.at(id).longitudinal_pos; };
  auto first_ge = std::partition_point(ids.begin(), ids.end(), [&](int id) { return pos(id) < x; });
  if (ahead) {
    for (auto i = first_ge; i != ids.end(); ++i)
      if (*i != self_id) return &scene.entries.at(*i);
    return nullptr;
  }
  if (first_ge == ids.begin()) return nullptr;
  auto last = std::prev(first_ge);
  const double xb = pos(*last);
  auto run = last;
  while (run != ids.begin() && pos(*std::prev(run)) == xb) --run;
  return &scene.entries.at(*run);
}

/// Neighbor context with explicitly fixed ego and target lanes, ignoring the
/// ego's recorded lane at this tick.
inline NeighborContext context_in_lanes(const Scene& scene, const TrajectoryFrame& ego, int ego_lane,
                                        int target_lane, Side side) {
  const double x = ego.longitudinal_pos;
  std::optional<TrajectoryFrame> nb[kNumRoles];
  auto put = [&](Role r, const TrajectoryFrame* f) {
    if (f) nb[static_cast<int>(r)] = *f;
  };
  put(Role::PV, nearest_in_lane(scene, ego_lane, x, ego.vehicle_id, true));
  put(Role::RV, nearest_in_lane(scene, ego_lane, x, ego.vehicle_id, false));
  put(Role::PLV, nearest_in_lane(scene, target_lane, x, ego.vehicle_id, true));
  put(Role::PFV, nearest_in_lane(scene, target_lane, x, ego.vehicle_id, false));
  return make_context(ego, side, target_lane, nb);
}

inline NeighborContext identify_neighbors(const Scene& scene, int ego_id, Side side,
                                          const LaneTable& lanes) {
  const TrajectoryFrame* ego = scene.find(ego_id);
  if (!ego)
    throw LookupError("vehicle " + std::to_string(ego_id) + " not in scene " +
                      std::to_string(scene.frame_id));
  const auto target = lanes.target_lane(ego->lane_id, side);
  if (!target)
    throw DomainError("lane " + std::to_string(ego->lane_id) + " has no " +
                      std::string(to_string(side)) + " target lane");
  return context_in_lanes(scene, *ego, ego->lane_id, *target, side);
}

/// Observed leader of a vehicle in its own lane, if any.
inline std::optional<TrajectoryFrame> leader_of(const Scene& scene, const TrajectoryFrame& f) {
  const TrajectoryFrame* l = nearest_in_lane(scene, f.lane_id, f.longitudinal_pos, f.vehicle_id, true);
  if (!l) return std::nullopt;
  return *l;
}

// ---------------------------------------------------------------------------
// Normalized track store: one frame per line, SI units.
//   vehicle_id,frame_id,lane_id,longitudinal_pos,lateral_pos,speed,length

inline constexpr std::string_view kTrackStoreHeader = "# lcsa-tracks v1";

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline void write_track_store(std::ostream& out, const std::vector<Track>& tracks) {
  out << kTrackStoreHeader << '\n';
  for (const auto& t : tracks)
    for (const auto& f : t.frames)
      out << f.vehicle_id << ',' << f.frame_id << ',' << f.lane_id << ','
          << format_double(f.longitudinal_pos) << ',' << format_double(f.lateral_pos) << ','
          << format_double(f.speed) << ',' << format_double(f.length) << '\n';
}

inline std::vector<Track> read_track_store(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTrackStoreHeader)
    throw ParseError("not a track store (expected '" + std::string(kTrackStoreHeader) + "')");
  std::vector<TrajectoryFrame> rows;
  std::vector<std::string_view> fields;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    detail::split_fields(line, fields);
    TrajectoryFrame f;
    bool ok = fields.size() == 7 && detail::parse_int(fields[0], f.vehicle_id) &&
              detail::parse_int(fields[1], f.frame_id) && detail::parse_int(fields[2], f.lane_id) &&
              detail::parse_double(fields[3], f.longitudinal_pos) &&
              detail::parse_double(fields[4], f.lateral_pos) &&
              detail::parse_double(fields[5], f.speed) && detail::parse_double(fields[6], f.length);
    if (!ok) throw ParseError("track store line " + std::to_string(lineno) + " is malformed");
    rows.push_back(f);
  }
  ParseResult res;
  detail::assemble_tracks(rows, res);
  return std::move(res.tracks);
}

}  // namespace lcsa
