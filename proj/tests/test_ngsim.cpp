#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lcsa/ngsim.hpp"
#include "test_support.hpp"

namespace lcsa {
namespace {

const char* kHeader =
    "Vehicle_ID,Frame_ID,Total_Frames,Global_Time,Local_X,Local_Y,Global_X,Global_Y,v_Length,v_Width,"
    "v_Class,v_Vel,v_Acc,Lane_ID,Preceding,Following,Space_Headway,Time_Headway\n";

std::string row(int vid, int fid, double x, double y, double vel, double len, int lane) {
  std::ostringstream s;
  s << vid << ',' << fid << ",100,0," << x << ',' << y << ",0,0," << len << ",6,2," << vel << ",0," << lane
    << ",0,0,0,0\n";
  return s.str();
}

TEST(ParseNgsim, ConvertsFeetToMeters) {
  const auto res = parse_ngsim(std::string(kHeader) + row(1, 10, 12.0, 100.0, 50.0, 15.0, 2), Units::Feet);
  ASSERT_EQ(res.tracks.size(), 1u);
  const auto& f = res.tracks[0].frames[0];
  EXPECT_DOUBLE_EQ(f.longitudinal_pos, 30.48);
  EXPECT_DOUBLE_EQ(f.lateral_pos, 12.0 * 0.3048);
  EXPECT_DOUBLE_EQ(f.speed, 50.0 * 0.3048);
  EXPECT_DOUBLE_EQ(f.length, 15.0 * 0.3048);
  EXPECT_EQ(f.lane_id, 2);
}

TEST(ParseNgsim, GroupsInterleavedVehicles) {
  std::string text = kHeader;
  for (int f = 1; f <= 5; ++f) {
    text += row(7, f, 10, 10.0 * f, 30, 15, 1);
    text += row(3, 6 - f, 20, 5.0 * f, 30, 15, 2);
  }
  const auto res = parse_ngsim(text, Units::Meters);
  ASSERT_EQ(res.tracks.size(), 2u);
  EXPECT_EQ(res.tracks[0].vehicle_id, 3);
  EXPECT_EQ(res.tracks[1].vehicle_id, 7);
  for (const auto& t : res.tracks)
    for (std::size_t i = 1; i < t.frames.size(); ++i) EXPECT_EQ(t.frames[i].frame_id, t.frames[i - 1].frame_id + 1);
}

TEST(ParseNgsim, SplitsTracksAtFrameGaps) {
  std::string text = kHeader;
  std::vector<int> frames = {1, 2, 3, 4, 8, 9, 10};  // gap of 3 missing frames
  for (int f : frames) text += row(5, f, 0, f, 10, 15, 1);
  const auto res = parse_ngsim(text, Units::Meters);

  // Oracle: split wherever consecutive frame ids differ by more than one.
  std::vector<std::vector<int>> expected{{}};
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && frames[i] - frames[i - 1] > 1) expected.emplace_back();
    expected.back().push_back(frames[i]);
  }
  ASSERT_EQ(res.tracks.size(), expected.size());
  EXPECT_EQ(res.gap_splits, 1u);
  for (std::size_t k = 0; k < expected.size(); ++k) {
    ASSERT_EQ(res.tracks[k].frames.size(), expected[k].size());
    EXPECT_EQ(res.tracks[k].first_frame(), expected[k].front());
  }
}

TEST(ParseNgsim, DropsBadRowsWithCount) {
  std::string text = kHeader;
  text += row(1, 1, 0, 1, 10, 15, 1);
  text += row(1, 2, 0, 2, -3, 15, 1);  // negative speed
  text += "1,3,100,0,0,nan,0,0,15,6,2,10,0,1,0,0,0,0\n";
  text += row(1, 4, 0, 4, 10, 15, 1);
  const auto res = parse_ngsim(text, Units::Meters);
  EXPECT_EQ(res.rows_dropped, 2u);
  EXPECT_EQ(res.rows_read, 4u);
}

TEST(ParseNgsim, MissingColumnNamesTheColumn) {
  const std::string text = "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,Lane_ID\n1,1,0,0,0,1\n";
  try {
    parse_ngsim(text, Units::Feet);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("v_Length"), std::string::npos);
  }
}

TEST(ParseNgsim, EmptyInputIsEmpty) {
  EXPECT_TRUE(parse_ngsim(std::string(), Units::Feet).tracks.empty());
  EXPECT_TRUE(parse_ngsim(std::string(kHeader), Units::Feet).tracks.empty());
}

TEST(ParseNgsim, HeaderlessWhitespaceRelease) {
  // The raw .txt releases have no header and use whitespace.
  const std::string text =
      "   11   20  500 1113433135300  16.467  35.381 6451137.641 1873344.962 14.5 4.9 2 40.00 0.00 2 0 0 0.00 0.00\n"
      "   11   21  500 1113433135400  16.447  39.381 6451137.641 1873344.962 14.5 4.9 2 40.00 0.00 2 0 0 0.00 0.00\n";
  const auto res = parse_ngsim(text, Units::Feet);
  ASSERT_EQ(res.tracks.size(), 1u);
  EXPECT_EQ(res.tracks[0].frames.size(), 2u);
  EXPECT_DOUBLE_EQ(res.tracks[0].frames[1].longitudinal_pos, 39.381 * 0.3048);
}

TEST(ParseNgsim, FeetAndMetersDifferByExactRatio) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  std::string text = kHeader;
  for (int f = 1; f <= 50; ++f) text += row(1 + f % 3, f, u(rng), u(rng), u(rng) / 10, 5 + u(rng) / 50, 1 + f % 4);
  const auto ft = parse_ngsim(text, Units::Feet);
  const auto m = parse_ngsim(text, Units::Meters);
  ASSERT_EQ(ft.tracks.size(), m.tracks.size());
  for (std::size_t t = 0; t < ft.tracks.size(); ++t)
    for (std::size_t i = 0; i < ft.tracks[t].frames.size(); ++i) {
      const auto& a = ft.tracks[t].frames[i];
      const auto& b = m.tracks[t].frames[i];
      EXPECT_EQ(a.longitudinal_pos, b.longitudinal_pos * kFeetToMeters);
      EXPECT_EQ(a.lateral_pos, b.lateral_pos * kFeetToMeters);
      EXPECT_EQ(a.speed, b.speed * kFeetToMeters);
      EXPECT_EQ(a.length, b.length * kFeetToMeters);
    }
}

TEST(BuildScenes, OverlappingTracks) {
  std::vector<Track> tracks{testing_support::straight_track(1, 1, 10, 1, 0, 10),
                            testing_support::straight_track(2, 5, 15, 1, 50, 10)};
  const auto scenes = build_scenes(tracks);
  EXPECT_EQ(scenes.at(7).entries.size(), 2u);
  EXPECT_EQ(scenes.at(2).entries.size(), 1u);
  EXPECT_EQ(scenes.at(15).entries.size(), 1u);
  for (const auto& [fid, s] : scenes)
    for (const auto& [vid, f] : s.entries) EXPECT_EQ(f.frame_id, fid);
}

TEST(BuildScenes, DisjointAndEmpty) {
  std::vector<Track> tracks{testing_support::straight_track(1, 1, 5, 1, 0, 10),
                            testing_support::straight_track(2, 10, 15, 1, 0, 10)};
  for (const auto& [fid, s] : build_scenes(tracks)) EXPECT_EQ(s.entries.size(), 1u);
  EXPECT_TRUE(build_scenes({}).empty());
}

TEST(BuildScenes, FlattenRoundTripsAndStoreIsLossless) {
  std::mt19937 rng(9);
  std::vector<Track> tracks;
  for (int v = 1; v <= 6; ++v) {
    Track t{v, {}};
    const int start = static_cast<int>(rng() % 20);
    for (int f = start; f < start + 30; ++f)
      t.frames.push_back({v, f, 1 + v % 3, std::uniform_real_distribution<>(0, 400)(rng),
                          std::uniform_real_distribution<>(0, 20)(rng), std::uniform_real_distribution<>(0, 30)(rng),
                          4.0 + v * 0.1});
    tracks.push_back(t);
  }
  std::vector<TrajectoryFrame> all;
  for (const auto& t : tracks) all.insert(all.end(), t.frames.begin(), t.frames.end());
  EXPECT_EQ(flatten(build_scenes(tracks)), all);

  std::stringstream io;
  write_track_store(io, tracks);
  const auto back = read_track_store(io);
  ASSERT_EQ(back.size(), tracks.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i].frames, tracks[i].frames);
}

// ---------------------------------------------------------------------------

TEST(IdentifyNeighbors, NearestAhead) {
  Scene s = testing_support::scene_of(0, {{1, 2, 100, 20}, {2, 2, 150, 20}, {3, 2, 170, 20}});
  const auto ctx = identify_neighbors(s, 1, Side::Left, LaneTable::range(1, 3));
  ASSERT_TRUE(ctx.has(Role::PV));
  EXPECT_EQ(ctx.neighbor[0]->vehicle_id, 2);
  EXPECT_DOUBLE_EQ(ctx.dist(Role::PV), 50.0);
  EXPECT_FALSE(ctx.has(Role::RV));
}

TEST(IdentifyNeighbors, EmptyTargetLaneUsesSentinels) {
  Scene s = testing_support::scene_of(0, {{1, 2, 100, 20}, {2, 2, 150, 20}, {3, 3, 120, 20}});
  const auto ctx = identify_neighbors(s, 1, Side::Left, LaneTable::range(1, 3));
  EXPECT_FALSE(ctx.has(Role::PLV));
  EXPECT_FALSE(ctx.has(Role::PFV));
  EXPECT_EQ(ctx.dist(Role::PLV), kInf);
  EXPECT_EQ(ctx.dist(Role::PFV), kInf);
  EXPECT_EQ(ctx.rel_speed(Role::PLV), 0.0);
}

TEST(IdentifyNeighbors, OpeningGapHasInfiniteClosingTime) {
  Scene s = testing_support::scene_of(0, {{1, 2, 100, 20}, {2, 2, 140, 25}});
  const auto ctx = identify_neighbors(s, 1, Side::Right, LaneTable::range(1, 3));
  EXPECT_DOUBLE_EQ(ctx.dist(Role::PV), 40.0);
  EXPECT_DOUBLE_EQ(ctx.rel_speed(Role::PV), -5.0);
  EXPECT_EQ(ctx.closing_time(Role::PV), kInf);
}

TEST(IdentifyNeighbors, ClosingTimesFollowRole) {
  Scene s = testing_support::scene_of(0, {{1, 2, 100, 20}, {2, 2, 140, 15}, {3, 2, 80, 30}, {4, 1, 110, 10},
                                          {5, 1, 70, 26}});
  const auto ctx = identify_neighbors(s, 1, Side::Left, LaneTable::range(1, 3));
  EXPECT_DOUBLE_EQ(ctx.closing_time(Role::PV), 40.0 / 5.0);
  EXPECT_DOUBLE_EQ(ctx.closing_time(Role::RV), 20.0 / 10.0);
  EXPECT_DOUBLE_EQ(ctx.closing_time(Role::PLV), 10.0 / 10.0);
  EXPECT_DOUBLE_EQ(ctx.closing_time(Role::PFV), 30.0 / 6.0);
}

TEST(IdentifyNeighbors, TiesGoToLowerId) {
  Scene s = testing_support::scene_of(0, {{5, 2, 100, 20}, {9, 2, 130, 20}, {4, 2, 130, 20}, {8, 2, 90, 20},
                                          {3, 2, 90, 20}});
  const auto ctx = identify_neighbors(s, 5, Side::Left, LaneTable::range(1, 3));
  EXPECT_EQ(ctx.neighbor[0]->vehicle_id, 4);
  EXPECT_EQ(ctx.neighbor[1]->vehicle_id, 3);
}

TEST(IdentifyNeighbors, Errors) {
  Scene s = testing_support::scene_of(0, {{1, 1, 100, 20}});
  EXPECT_THROW(identify_neighbors(s, 42, Side::Left, LaneTable::range(1, 3)), LookupError);
  EXPECT_THROW(identify_neighbors(s, 1, Side::Left, LaneTable::range(1, 3)), DomainError);
  EXPECT_NO_THROW(identify_neighbors(s, 1, Side::Right, LaneTable::range(1, 3)));
}

TEST(IdentifyNeighbors, RampIsNeverATarget) {
  Scene s = testing_support::scene_of(0, {{1, 6, 100, 20}, {2, 7, 100, 20}});
  const auto lanes = LaneTable::range(1, 6);
  EXPECT_THROW(identify_neighbors(s, 1, Side::Right, lanes), DomainError);
  EXPECT_NO_THROW(identify_neighbors(s, 2, Side::Left, lanes));  // ramp as source lane
}

TEST(IdentifyNeighbors, NothingBetweenEgoAndChosenNeighbors) {
  std::mt19937 rng(17);
  const auto lanes = LaneTable::range(1, 4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<testing_support::Placed> cars;
    const int n = 2 + static_cast<int>(rng() % 25);
    for (int v = 1; v <= n; ++v)
      cars.push_back({v, 1 + static_cast<int>(rng() % 4), std::floor(std::uniform_real_distribution<>(0, 300)(rng)),
                      std::uniform_real_distribution<>(0, 30)(rng)});
    const Scene s = testing_support::scene_of(trial, cars);
    const int ego_id = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
    const Side side = rng() % 2 ? Side::Left : Side::Right;
    const auto& ego = *s.find(ego_id);
    if (!lanes.target_lane(ego.lane_id, side)) continue;
    const auto ctx = identify_neighbors(s, ego_id, side, lanes);
    const auto oracle = testing_support::brute_force_context(s, ego_id, side, lanes);
    for (int r = 0; r < kNumRoles; ++r) {
      ASSERT_EQ(ctx.neighbor[r].has_value(), oracle.neighbor[r].has_value());
      if (ctx.neighbor[r]) {
        EXPECT_EQ(ctx.neighbor[r]->vehicle_id, oracle.neighbor[r]->vehicle_id);
        EXPECT_GE(ctx.d[r], 0.0);
      }
    }
  }
}

}  // namespace
}  // namespace lcsa
