#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support/oracles.hpp"
#include "wildtraj/features.hpp"

using namespace wildtraj;

namespace {

constexpr double kTol = 1e-12;

DailySequence day_from(std::vector<std::optional<LatLon>> pos, Resolution res = Resolution::hourly()) {
  DailySequence d;
  d.animal_id = "a";
  d.study_id = "s";
  d.species = "sp";
  d.day = 18322;
  d.resolution = res;
  d.positions = std::move(pos);
  for (const auto& p : d.positions) d.obs_mask.push_back(p ? 1 : 0);
  d.movement_valid = movement_validity(d.obs_mask);
  return d;
}

DailySequence random_day(std::mt19937_64& rng, Resolution res, double hole_rate) {
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> step(0, 0.01);
  std::vector<std::optional<LatLon>> pos(res.slots_per_day());
  double lat = -2 + u(rng), lon = 30 + u(rng);
  for (auto& p : pos) {
    lat += step(rng);
    lon += step(rng);
    if (u(rng) >= hole_rate) p = LatLon{lat, lon};
  }
  // Stationary repeats exercise the undefined-bearing path.
  for (std::size_t t = 1; t < pos.size(); ++t)
    if (pos[t] && pos[t - 1] && u(rng) < 0.1) pos[t] = pos[t - 1];
  return day_from(pos, res);
}

void expect_vec(const Vec3& v, double x, double y, double z) {
  EXPECT_NEAR(v.x, x, kTol);
  EXPECT_NEAR(v.y, y, kTol);
  EXPECT_NEAR(v.z, z, kTol);
}

}  // namespace

TEST(UnitSphere, Examples) {
  expect_vec(to_unit_sphere(0, 0), 1, 0, 0);
  expect_vec(to_unit_sphere(90, 0), 0, 0, 1);
  expect_vec(to_unit_sphere(0, 90), 0, 1, 0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 10000; ++i) {
    const auto v = to_unit_sphere(lat(rng), lon(rng));
    EXPECT_NEAR(v.x * v.x + v.y * v.y + v.z * v.z, 1.0, kTol);
  }
}

TEST(Displacement, Examples) {
  const auto a = to_unit_sphere(0, 0), b = to_unit_sphere(0, 90);
  expect_vec(displacement(a, a), 0, 0, 0);
  expect_vec(displacement(b, a), -1, 1, 0);
  const auto p = to_unit_sphere(12.5, -33), q = to_unit_sphere(-4, 100);
  const auto d1 = displacement(p, q), d2 = displacement(q, p);
  expect_vec(d1, -d2.x, -d2.y, -d2.z);
}

TEST(StepAndSpeed, Examples) {
  EXPECT_EQ(step_length({0, 0, 0}), 0.0);
  EXPECT_EQ(speed(0.0, 1.0), 0.0);
  const double l = step_length({3e-4, 4e-4, 0});
  EXPECT_NEAR(l, 5e-4, 1e-18);
  EXPECT_NEAR(speed(l, 1.0), 5e-4, 1e-18);
  EXPECT_DOUBLE_EQ(speed(l, 0.5), 2 * speed(l, 1.0));
  EXPECT_THROW(speed(1.0, 0.0), ProgrammingError);
}

TEST(Bearing, AxisCasesAndZeroStep) {
  auto b = bearing({0, 1, 0.3});
  EXPECT_NEAR(b.sin, 1, kTol);
  EXPECT_NEAR(b.cos, 0, kTol);
  b = bearing({1, 0, 0});
  EXPECT_NEAR(b.sin, 0, kTol);
  EXPECT_NEAR(b.cos, 1, kTol);
  b = bearing({-1, 0, 0});
  EXPECT_NEAR(b.sin, 0, kTol);
  EXPECT_NEAR(b.cos, -1, kTol);
  EXPECT_NEAR(bearing_angle({-1, 0, 0}), kPi, kTol);
  b = bearing({0, 0, 0.5});
  EXPECT_FALSE(b.defined);
  EXPECT_EQ(b.sin, 0.0);
  EXPECT_EQ(b.cos, 0.0);
}

TEST(TurningAngle, WrapExamples) {
  auto t = turning_angle(0.7, 0.7);
  EXPECT_EQ(t.sin, 0.0);
  EXPECT_EQ(t.cos, 1.0);
  const double raw = kPi / 2 - (-3 * kPi / 4);
  EXPECT_NEAR(wrap_angle(raw), oracle::wrap_by_turns(raw), kTol);
  EXPECT_NEAR(wrap_angle(raw), -3 * kPi / 4, kTol);
  EXPECT_NEAR(wrap_angle(6.0), oracle::wrap_by_turns(6.0), kTol);
  EXPECT_NEAR(wrap_angle(6.0), -0.28318530717958623, kTol);
}

TEST(TurningAngle, WrapAgreesWithOracleOnManyAngles) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-40, 40);
  for (int i = 0; i < 100000; ++i) {
    const double a = u(rng);
    const double w = wrap_angle(a);
    ASSERT_GE(w, -kPi);
    ASSERT_LE(w, kPi);
    ASSERT_TRUE(oracle::same_angle(w, oracle::wrap_by_turns(a), 1e-9)) << a;
  }
}

TEST(TimeEncoding, Examples) {
  auto c = time_encoding(0, Resolution::hourly());
  EXPECT_NEAR(c.sin, 0, kTol);
  EXPECT_NEAR(c.cos, 1, kTol);
  c = time_encoding(6, Resolution::hourly());
  EXPECT_NEAR(c.sin, 1, kTol);
  EXPECT_NEAR(c.cos, 0, kTol);
  c = time_encoding(24, Resolution::half_hourly());  // 720 minutes
  EXPECT_NEAR(c.sin, 0, kTol);
  EXPECT_NEAR(c.cos, -1, kTol);
}

TEST(MovementValidity, Examples) {
  std::vector<std::uint8_t> full(24, 1);
  auto v = movement_validity(full);
  EXPECT_EQ(v[0], 0);
  for (std::size_t t = 1; t < 24; ++t) EXPECT_EQ(v[t], 1);

  std::vector<std::uint8_t> holes(24, 1);
  holes[10] = holes[11] = 0;
  v = movement_validity(holes);
  for (std::size_t t = 0; t < 24; ++t) {
    const bool expect = t > 0 && holes[t] && holes[t - 1];  // pairwise enumeration
    EXPECT_EQ(v[t], expect ? 1 : 0) << t;
  }
  for (std::size_t t : {0, 10, 11, 12}) EXPECT_EQ(v[t], 0);

  std::vector<std::uint8_t> single(24, 0);
  single[7] = 1;
  v = movement_validity(single);
  EXPECT_EQ(std::count(v.begin(), v.end(), 1), 0);
}

TEST(Assemble, ColumnCountsAndPaddingContract) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto res = trial % 2 ? Resolution::hourly() : Resolution::half_hourly();
    const auto day = random_day(rng, res, 0.2);
    for (auto schema : {FeatureSchema::minimal5, FeatureSchema::augmented10}) {
      const auto ft = assemble(day, schema);
      const std::size_t F = schema == FeatureSchema::minimal5 ? 5 : 10;
      ASSERT_EQ(ft.features, F);
      ASSERT_EQ(ft.x.size(), res.slots_per_day() * F);
      for (std::size_t t = 0; t < ft.steps; ++t) {
        if (!ft.obs_mask[t]) {
          for (std::size_t f = 0; f < F; ++f) ASSERT_EQ(ft.at(t, f), 0.0);
          continue;
        }
        ASSERT_NEAR(ft.at(t, F - 2) * ft.at(t, F - 2) + ft.at(t, F - 1) * ft.at(t, F - 1), 1.0, kTol);
        if (!ft.movement_valid[t]) {
          for (std::size_t f = 0; f < F - 2; ++f) ASSERT_EQ(ft.at(t, f), 0.0);
          continue;
        }
        const auto a = to_unit_sphere(*day.positions[t]), b = to_unit_sphere(*day.positions[t - 1]);
        ASSERT_NEAR(ft.at(t, 0), a.x - b.x, kTol);
        if (schema == FeatureSchema::minimal5) continue;
        const double chord = step_length(a - b);
        ASSERT_NEAR(ft.at(t, 3), chord / res.hours(), kTol);
        ASSERT_LE(chord, 2.0);
        const double bs = ft.at(t, 4), bc = ft.at(t, 5);
        if (ft.bearing_defined[t]) {
          ASSERT_NEAR(bs * bs + bc * bc, 1.0, kTol);
          ASSERT_NEAR(std::atan2(bs, bc), bearing_angle(a - b), kTol);
        } else {
          ASSERT_TRUE(a.x == b.x && a.y == b.y);
          ASSERT_EQ(bs, 0.0);
          ASSERT_EQ(bc, 0.0);
        }
        const double ts = ft.at(t, 6), tc = ft.at(t, 7);
        if (ft.turning_defined[t]) {
          ASSERT_TRUE(ft.bearing_defined[t] && ft.bearing_defined[t - 1] && ft.movement_valid[t - 1]);
          ASSERT_NEAR(ts * ts + tc * tc, 1.0, kTol);
        } else {
          ASSERT_EQ(ts, 0.0);
          ASSERT_EQ(tc, 0.0);
        }
      }
    }
  }
}

TEST(Assemble, StationaryStepFlagsBearing) {
  std::vector<std::optional<LatLon>> pos(24);
  for (std::size_t t = 0; t < 14; ++t) pos[t] = LatLon{1.0, 2.0 + 0.01 * static_cast<double>(t)};
  pos[6] = pos[5];
  const auto ft = assemble(day_from(pos), FeatureSchema::augmented10);
  EXPECT_EQ(ft.bearing_defined[6], 0);
  EXPECT_EQ(ft.turning_defined[6], 0);
  EXPECT_EQ(ft.turning_defined[7], 0);  // previous bearing undefined
  EXPECT_EQ(ft.at(6, 3), 0.0);
}

TEST(Assemble, TurningAngleBetweenSteps) {
  std::vector<std::optional<LatLon>> pos(24);
  pos[0] = LatLon{0, 0};
  pos[1] = LatLon{0, 1};  // moves in +y on the sphere
  pos[2] = LatLon{1, 1};  // mostly +z with a small -x, -y component
  for (std::size_t t = 3; t < 14; ++t) pos[t] = LatLon{1, 1 + 0.1 * static_cast<double>(t)};
  const auto ft = assemble(day_from(pos), FeatureSchema::augmented10);
  const auto p0 = to_unit_sphere(0, 0), p1 = to_unit_sphere(0, 1), p2 = to_unit_sphere(1, 1);
  const double expected = wrap_angle(bearing_angle(p2 - p1) - bearing_angle(p1 - p0));
  ASSERT_EQ(ft.turning_defined[2], 1);
  EXPECT_NEAR(ft.at(2, 6), std::sin(expected), kTol);
  EXPECT_NEAR(ft.at(2, 7), std::cos(expected), kTol);
  EXPECT_EQ(ft.turning_defined[1], 0);
}

TEST(NormStats, TrainFitStandardizesTrainingRows) {
  std::mt19937_64 rng(21);
  std::vector<FeatureTensor> train;
  for (int i = 0; i < 40; ++i) train.push_back(assemble(random_day(rng, Resolution::hourly(), 0.1), FeatureSchema::augmented10));
  const auto stats = fit_norm_stats(train);
  for (double s : stats.stddev) EXPECT_GE(s, NormStats::kMinStd);
  const auto raw = train;
  for (auto& ft : train) apply_norm_stats(ft, stats);
  const std::size_t n = movement_columns(FeatureSchema::augmented10);
  std::vector<double> sum(n), sq(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t t = 0; t < 24; ++t) {
      for (std::size_t f = n; f < 10; ++f) EXPECT_EQ(train[i].at(t, f), raw[i].at(t, f));
      if (!train[i].movement_valid[t]) {
        for (std::size_t f = 0; f < n; ++f) EXPECT_EQ(train[i].at(t, f), raw[i].at(t, f));
        continue;
      }
      ++count;
      for (std::size_t f = 0; f < n; ++f) {
        sum[f] += train[i].at(t, f);
        sq[f] += train[i].at(t, f) * train[i].at(t, f);
      }
    }
  for (std::size_t f = 0; f < n; ++f) {
    const double mean = sum[f] / static_cast<double>(count);
    const double sd = std::sqrt(sq[f] / static_cast<double>(count) - mean * mean);
    EXPECT_LT(std::fabs(mean), 1e-6) << f;
    EXPECT_NEAR(sd, 1.0, 1e-6) << f;
  }
  EXPECT_THROW(apply_norm_stats(train[0], stats), ProgrammingError);
  auto minimal = assemble(random_day(rng, Resolution::hourly(), 0.1), FeatureSchema::minimal5);
  EXPECT_THROW(apply_norm_stats(minimal, stats), SchemaError);
  const auto back = NormStats::from_key_values(stats.to_key_values());
  EXPECT_EQ(back.mean, stats.mean);
  EXPECT_EQ(back.stddev, stats.stddev);
}

TEST(NormStats, ConstantColumnFloorsStd) {
  std::vector<std::optional<LatLon>> pos(24);
  for (std::size_t t = 0; t < 24; ++t) pos[t] = LatLon{0.0, 0.01 * static_cast<double>(t)};
  const std::vector<FeatureTensor> train{assemble(day_from(pos), FeatureSchema::minimal5)};
  const auto stats = fit_norm_stats(train);
  EXPECT_EQ(stats.stddev[2], NormStats::kMinStd);  // dz is identically zero on the equator
}

TEST(FeatureFile, RoundTripIsFloat32Exact) {
  std::mt19937_64 rng(4);
  FeatureSet set;
  set.resolution = Resolution::half_hourly();
  set.schema = FeatureSchema::augmented10;
  set.steps = 48;
  for (int i = 0; i < 5; ++i) set.days.push_back(assemble(random_day(rng, set.resolution, 0.3), set.schema));
  std::stringstream s;
  write_feature_file(s, set);
  const auto back = read_feature_file(s);
  EXPECT_EQ(back.resolution, set.resolution);
  ASSERT_EQ(back.days.size(), set.days.size());
  for (std::size_t i = 0; i < set.days.size(); ++i) {
    EXPECT_EQ(back.days[i].obs_mask, set.days[i].obs_mask);
    EXPECT_EQ(back.days[i].movement_valid, set.days[i].movement_valid);
    EXPECT_EQ(back.days[i].day, set.days[i].day);
    for (std::size_t k = 0; k < set.days[i].x.size(); ++k)
      EXPECT_EQ(back.days[i].x[k], static_cast<double>(static_cast<float>(set.days[i].x[k])));
  }
  std::stringstream bad("TRJX");
  EXPECT_THROW(read_feature_file(bad), SchemaError);
}
