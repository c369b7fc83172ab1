#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "support/oracles.hpp"
#include "wildtraj/resample.hpp"

using namespace wildtraj;

namespace {

const UnixSeconds kDay = *make_utc(2020, 3, 1);

UnixSeconds at(int h, int m = 0) { return kDay + h * 3600 + m * 60; }

AnimalTrack track_of(std::vector<std::tuple<UnixSeconds, double, double>> fixes) {
  AnimalTrack t{"a", "s", "sp", {}};
  for (auto [ts, lat, lon] : fixes) t.fixes.push_back({"a", "s", "sp", ts, lat, lon});
  return t;
}

}  // namespace

TEST(RoundToGrid, NearestWithHalfUp) {
  const auto h = Resolution::hourly();
  EXPECT_EQ(round_to_grid(at(10, 20), h), at(10));
  EXPECT_EQ(round_to_grid(at(10, 40), h), at(11));
  EXPECT_EQ(round_to_grid(at(10, 30), h), at(11));
  EXPECT_EQ(round_to_grid(at(10, 15), Resolution::half_hourly()), at(10, 30));
  EXPECT_EQ(round_to_grid(-1800, 3600), 0);   // half-up before the epoch
  EXPECT_EQ(round_to_grid(-1801, 3600), -3600);
}

TEST(SnapAndSelect, MinimalDistanceThenEarlier) {
  auto sel = snap_and_select(track_of({{at(9, 55), 1, 1}, {at(10, 20), 2, 2}}), Resolution::hourly());
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel.at(at(10)).timestamp, at(9, 55));
  sel = snap_and_select(track_of({{at(9, 50), 1, 1}, {at(10, 10), 2, 2}}), Resolution::hourly());
  EXPECT_EQ(sel.at(at(10)).timestamp, at(9, 50));
  sel = snap_and_select(track_of({{at(1), 1, 1}, {at(2), 2, 2}, {at(3), 3, 3}}), Resolution::hourly());
  EXPECT_EQ(sel.size(), 3u);
}

TEST(FillSingleGaps, MidpointOnlyForSingleHoles) {
  auto g = fill_single_gaps(build_grid(track_of({{at(1), 10, 20}, {at(3), 12, 24}}), Resolution::hourly()));
  ASSERT_EQ(g.entries.size(), 3u);
  ASSERT_TRUE(g.entries[1]);
  EXPECT_EQ(*g.entries[1], (GridEntry{11, 22, Origin::interpolated}));

  g = fill_single_gaps(build_grid(track_of({{at(1), 10, 20}, {at(4), 12, 24}}), Resolution::hourly()));
  EXPECT_FALSE(g.entries[1]);
  EXPECT_FALSE(g.entries[2]);

  const auto full = build_grid(track_of({{at(1), 1, 1}, {at(2), 2, 2}, {at(3), 3, 3}}), Resolution::hourly());
  EXPECT_EQ(fill_single_gaps(full), full);
}

TEST(FillSingleGaps, AntimeridianPairStaysUndefined) {
  ResampleDiagnostics diag;
  auto g = fill_single_gaps(build_grid(track_of({{at(1), 0, 179.5}, {at(3), 0, -179.5}}), Resolution::hourly()), &diag);
  EXPECT_FALSE(g.entries[1]);
  ASSERT_EQ(diag.antimeridian_gaps.size(), 1u);
  EXPECT_EQ(diag.antimeridian_gaps[0], at(2));
}

TEST(SegmentDays, CoverageThresholds) {
  auto day_with = [](Resolution res, std::size_t defined) {
    std::vector<std::tuple<UnixSeconds, double, double>> fixes;
    for (std::size_t k = 0; k < defined; ++k) fixes.emplace_back(kDay + static_cast<UnixSeconds>(k) * res.seconds(), 1.0, 2.0);
    return segment_days(fill_single_gaps(build_grid(track_of(fixes), res)));
  };
  auto kept = day_with(Resolution::hourly(), 12);
  EXPECT_EQ(kept.days.size(), 1u);
  EXPECT_EQ(kept.dropped, 0u);
  auto dropped = day_with(Resolution::hourly(), 11);
  EXPECT_EQ(dropped.days.size(), 0u);
  EXPECT_EQ(dropped.dropped, 1u);
  auto full = day_with(Resolution::half_hourly(), 48);
  ASSERT_EQ(full.days.size(), 1u);
  EXPECT_EQ(full.days[0].observed(), 48u);
  EXPECT_EQ(day_with(Resolution::half_hourly(), 25).days.size(), 1u);
  EXPECT_EQ(day_with(Resolution::half_hourly(), 24).days.size(), 0u);
}

TEST(SegmentDays, InterpolatedSlotsCountTowardCoverage) {
  std::vector<std::tuple<UnixSeconds, double, double>> fixes;
  for (int h = 0; h <= 20; h += 2) fixes.emplace_back(at(h), 1.0, 1.0);  // 11 observed, 10 fills
  auto r = segment_days(fill_single_gaps(build_grid(track_of(fixes), Resolution::hourly())));
  ASSERT_EQ(r.days.size(), 1u);
  EXPECT_EQ(r.days[0].observed(), 21u);
}

TEST(ResampleProperty, MatchesBruteForceOracle) {
  std::mt19937_64 rng(20240517);
  for (int trial = 0; trial < 500; ++trial) {
    const auto res = trial % 2 ? Resolution::hourly() : Resolution::half_hourly();
    const auto track = oracle::random_track(rng, res);
    const auto fast = fill_single_gaps(build_grid(dedup_same_timestamp(track), res));
    const auto slow = oracle::brute_force_grid(dedup_same_timestamp(track), res);
    ASSERT_EQ(fast, slow) << "trial " << trial;
  }
}

TEST(ResampleProperty, GridInvariantsAndConservation) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto res = trial % 3 ? Resolution::hourly() : Resolution::half_hourly();
    const auto track = dedup_same_timestamp(oracle::random_track(rng, res));
    for (const auto& [grid_time, fix] : snap_and_select(track, res)) {
      EXPECT_LE(std::llabs(grid_time - fix.timestamp), res.seconds() / 2);
      EXPECT_EQ(grid_time % res.seconds(), 0);
    }
    const auto g = fill_single_gaps(build_grid(track, res));
    if (!g.entries.empty()) {
      EXPECT_TRUE(g.entries.front());
      EXPECT_TRUE(g.entries.back());
    }
    std::set<std::int64_t> touched;
    for (std::size_t k = 0; k < g.entries.size(); ++k) {
      if (!g.entries[k]) continue;
      touched.insert(day_of(g.time_at(k)));
      if (g.entries[k]->origin != Origin::interpolated) continue;
      ASSERT_TRUE(k > 0 && k + 1 < g.entries.size());
      EXPECT_EQ(g.entries[k - 1]->origin, Origin::observed);
      EXPECT_EQ(g.entries[k + 1]->origin, Origin::observed);
    }
    const auto seg = segment_days(g);
    EXPECT_EQ(seg.days.size() + seg.dropped, touched.size());
    for (const auto& d : seg.days) {
      EXPECT_EQ(d.positions.size(), res.slots_per_day());
      EXPECT_GE(d.observed(), res.coverage_threshold());
      for (std::size_t t = 0; t < d.obs_mask.size(); ++t) {
        EXPECT_EQ(d.obs_mask[t] == 1, d.positions[t].has_value());
        if (d.movement_valid[t]) {
          EXPECT_TRUE(t > 0 && d.obs_mask[t] && d.obs_mask[t - 1]);
        }
      }
    }
  }
}

TEST(DaysCsv, RoundTrip) {
  std::vector<std::tuple<UnixSeconds, double, double>> fixes;
  for (int h = 0; h < 30; ++h)
    if (h != 5 && h != 6) fixes.emplace_back(at(h), 0.5 * h, 30.0 + 0.25 * h);
  auto r = resample_track(track_of(fixes), Resolution::hourly());
  ASSERT_FALSE(r.days.empty());
  std::stringstream s;
  write_days_csv(s, r.days, Resolution::hourly());
  Resolution res = Resolution::half_hourly();
  const auto back = read_days_csv(s, &res);
  EXPECT_EQ(res, Resolution::hourly());
  ASSERT_EQ(back.size(), r.days.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].positions, r.days[i].positions);
    EXPECT_EQ(back[i].movement_valid, r.days[i].movement_valid);
  }
}

TEST(GridCsv, OmitsUndefinedAndFlagsOrigin) {
  auto g = fill_single_gaps(build_grid(track_of({{at(1), 10, 20}, {at(3), 12, 24}, {at(6), 1, 1}}), Resolution::hourly()));
  std::ostringstream out;
  write_grid_csv(out, g);
  EXPECT_EQ(out.str(),
            "grid_time_iso,lat,lon,origin\n2020-03-01T01:00:00Z,10,20,O\n2020-03-01T02:00:00Z,11,22,I\n"
            "2020-03-01T03:00:00Z,12,24,O\n2020-03-01T06:00:00Z,1,1,O\n");
}
