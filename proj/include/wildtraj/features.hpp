#pragma once

// Per-timestep feature vectors for daily sequences.
//
// Column layout:
//   minimal5    [dx, dy, dz, t_sin, t_cos]
//   augmented10 [dx, dy, dz, v, bearing_sin, bearing_cos, turn_sin, turn_cos, t_sin, t_cos]
//
// Padding rows (obs_mask 0) are all zero. Observed rows whose movement is not
// valid keep zeros in every movement column and a defined time encoding.
// Undefined directions (zero-length step, or no previous bearing for the
// turning angle) are encoded as (0, 0), off the unit circle.

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wildtraj/core/binary_io.hpp"
#include "wildtraj/core/error.hpp"
#include "wildtraj/core/key_values.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/core/time.hpp"
#include "wildtraj/resample.hpp"

namespace wildtraj {

enum class FeatureSchema : std::uint8_t { minimal5, augmented10 };

inline std::size_t feature_count(FeatureSchema s) { return s == FeatureSchema::minimal5 ? 5 : 10; }

inline std::string to_string(FeatureSchema s) { return s == FeatureSchema::minimal5 ? "minimal5" : "augmented10"; }

inline FeatureSchema parse_schema(const std::string& s) {
  if (s == "minimal" || s == "minimal5") return FeatureSchema::minimal5;
  if (s == "augmented" || s == "augmented10") return FeatureSchema::augmented10;
  throw SchemaError("unknown feature schema '" + s + "' (expected minimal or augmented)");
}

inline FeatureSchema schema_for_width(std::size_t f) {
  if (f == 5) return FeatureSchema::minimal5;
  if (f == 10) return FeatureSchema::augmented10;
  throw SchemaError("unsupported feature width " + std::to_string(f));
}

// Number of leading movement-derived columns; the remaining two are time.
inline std::size_t movement_columns(FeatureSchema s) { return feature_count(s) - 2; }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kEarthRadiusMeters = 6371000.0;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

inline Vec3 to_unit_sphere(double lat_deg, double lon_deg) {
  const double phi = deg_to_rad(lat_deg);
  const double lambda = deg_to_rad(lon_deg);
  return {std::cos(phi) * std::cos(lambda), std::cos(phi) * std::sin(lambda), std::sin(phi)};
}

inline Vec3 to_unit_sphere(const LatLon& p) { return to_unit_sphere(p.lat, p.lon); }

// Displacement from `previous` to `current`.
inline Vec3 displacement(const Vec3& current, const Vec3& previous) { return current - previous; }

inline double step_length(const Vec3& d) { return std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z); }

// Sphere units per hour.
inline double speed(double length, double dt_hours) {
  if (!(dt_hours > 0.0)) throw ProgrammingError("speed: non-positive time step");
  return length / dt_hours;
}

struct CyclicCode {
  double sin = 0.0;
  double cos = 0.0;
  bool defined = false;
};

// Wraps into [-pi, pi]. Values already inside are returned unchanged.
inline double wrap_angle(double a) {
  if (a >= -kPi && a <= kPi) return a;
  double w = std::remainder(a, 2.0 * kPi);
  return w;
}

// Direction of the step from the x and y sphere components only.
inline CyclicCode bearing(const Vec3& d) {
  if (d.x == 0.0 && d.y == 0.0) return {};
  const double theta = std::atan2(d.y, d.x);
  return {std::sin(theta), std::cos(theta), true};
}

inline double bearing_angle(const Vec3& d) { return std::atan2(d.y, d.x); }

inline CyclicCode encode_angle(double a) { return {std::sin(a), std::cos(a), true}; }

inline CyclicCode turning_angle(double theta, double previous_theta) {
  return encode_angle(wrap_angle(theta - previous_theta));
}

// Hour of day for hourly grids, minutes since midnight for half-hourly grids.
inline CyclicCode time_encoding(std::size_t slot, Resolution res) {
  if (res == Resolution::hourly()) {
    const double h = static_cast<double>(slot);
    return {std::sin(2.0 * kPi * h / 24.0), std::cos(2.0 * kPi * h / 24.0), true};
  }
  const double m = static_cast<double>(slot) * 30.0;
  return {std::sin(2.0 * kPi * m / 1440.0), std::cos(2.0 * kPi * m / 1440.0), true};
}

inline std::vector<std::uint8_t> movement_validity(const DailySequence& day) { return movement_validity(day.obs_mask); }

struct FeatureTensor {
  std::string animal_id;
  std::string study_id;
  std::string species;
  std::int64_t day = 0;
  Resolution resolution = Resolution::hourly();
  FeatureSchema schema = FeatureSchema::augmented10;
  std::size_t steps = 0;     // T
  std::size_t features = 0;  // F
  std::vector<double> x;     // T x F row-major
  std::vector<std::uint8_t> obs_mask;
  std::vector<std::uint8_t> movement_valid;
  // Per-row flags for the angular columns (augmented schema).
  std::vector<std::uint8_t> bearing_defined;
  std::vector<std::uint8_t> turning_defined;
  bool standardized = false;

  double at(std::size_t t, std::size_t f) const { return x[t * features + f]; }
  double& at(std::size_t t, std::size_t f) { return x[t * features + f]; }
  std::string date() const { return format_date(day); }
};

struct NormStats {
  FeatureSchema schema = FeatureSchema::augmented10;
  std::vector<double> mean;
  std::vector<double> stddev;

  static constexpr double kMinStd = 1e-8;

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.add("norm.schema", to_string(schema));
    for (std::size_t i = 0; i < mean.size(); ++i) {
      kv.add("norm.mean." + std::to_string(i), format_double(mean[i]));
      kv.add("norm.std." + std::to_string(i), format_double(stddev[i]));
    }
    return kv;
  }

  static NormStats from_key_values(const KeyValues& kv) {
    NormStats s;
    auto schema = kv.get("norm.schema");
    if (!schema) throw SchemaError("norm stats: missing norm.schema");
    s.schema = parse_schema(*schema);
    const std::size_t n = movement_columns(s.schema);
    for (std::size_t i = 0; i < n; ++i) {
      const auto key = std::to_string(i);
      if (!kv.contains("norm.mean." + key) || !kv.contains("norm.std." + key))
        throw SchemaError("norm stats: missing column " + key);
      s.mean.push_back(kv.get_double("norm.mean." + key, 0.0));
      s.stddev.push_back(kv.get_double("norm.std." + key, 1.0));
    }
    return s;
  }
};

inline void apply_norm_stats(FeatureTensor& ft, const NormStats& s);

// Builds the feature tensor for one retained day. With `stats`, movement
// columns are standardized. Missing movement values are
// NaN while the row is computed and become 0 in the tensor.
inline FeatureTensor assemble(const DailySequence& day, FeatureSchema schema, const NormStats* stats = nullptr) {
  const std::size_t T = day.positions.size();
  const std::size_t F = feature_count(schema);
  FeatureTensor ft;
  ft.animal_id = day.animal_id;
  ft.study_id = day.study_id;
  ft.species = day.species;
  ft.day = day.day;
  ft.resolution = day.resolution;
  ft.schema = schema;
  ft.steps = T;
  ft.features = F;
  ft.x.assign(T * F, 0.0);
  ft.obs_mask = day.obs_mask;
  ft.movement_valid = movement_validity(day.obs_mask);
  ft.bearing_defined.assign(T, 0);
  ft.turning_defined.assign(T, 0);

  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> row(F);
  double previous_theta = 0.0;
  bool previous_bearing = false;
  for (std::size_t t = 0; t < T; ++t) {
    if (!ft.obs_mask[t]) {
      previous_bearing = false;
      continue;
    }
    std::fill(row.begin(), row.end(), nan);
    const CyclicCode tc = time_encoding(t, day.resolution);
    row[F - 2] = tc.sin;
    row[F - 1] = tc.cos;
    if (ft.movement_valid[t]) {
      const Vec3 d = displacement(to_unit_sphere(*day.positions[t]), to_unit_sphere(*day.positions[t - 1]));
      row[0] = d.x;
      row[1] = d.y;
      row[2] = d.z;
      if (schema == FeatureSchema::augmented10) {
        row[3] = speed(step_length(d), day.resolution.hours());
        const CyclicCode b = bearing(d);
        row[4] = b.sin;
        row[5] = b.cos;
        ft.bearing_defined[t] = b.defined;
        if (b.defined && previous_bearing) {
          const CyclicCode turn = turning_angle(bearing_angle(d), previous_theta);
          row[6] = turn.sin;
          row[7] = turn.cos;
          ft.turning_defined[t] = 1;
        } else {
          row[6] = 0.0;
          row[7] = 0.0;
        }
        previous_bearing = b.defined;
        if (b.defined) previous_theta = bearing_angle(d);
      }
    } else {
      previous_bearing = false;
    }
    for (std::size_t f = 0; f < F; ++f) ft.at(t, f) = std::isnan(row[f]) ? 0.0 : row[f];
  }
  if (stats) apply_norm_stats(ft, *stats);
  return ft;
}

// Fits per-column mean and population standard deviation of the movement
// columns over rows with valid movement.
inline NormStats fit_norm_stats(std::span<const FeatureTensor> train) {
  if (train.empty()) throw Error("cannot fit normalization on an empty training set");
  NormStats s;
  s.schema = train.front().schema;
  const std::size_t n = movement_columns(s.schema);
  std::vector<double> sum(n, 0.0);
  std::vector<double> sq(n, 0.0);
  std::size_t count = 0;
  for (const auto& ft : train) {
    if (ft.schema != s.schema) throw SchemaError("mixed feature schemas in training set");
    if (ft.standardized) throw ProgrammingError("fit_norm_stats: tensor already standardized");
    for (std::size_t t = 0; t < ft.steps; ++t) {
      if (!ft.movement_valid[t]) continue;
      ++count;
      for (std::size_t f = 0; f < n; ++f) sum[f] += ft.at(t, f);
    }
  }
  s.mean.assign(n, 0.0);
  s.stddev.assign(n, 1.0);
  if (count == 0) return s;
  for (std::size_t f = 0; f < n; ++f) s.mean[f] = sum[f] / static_cast<double>(count);
  for (const auto& ft : train) {
    for (std::size_t t = 0; t < ft.steps; ++t) {
      if (!ft.movement_valid[t]) continue;
      for (std::size_t f = 0; f < n; ++f) {
        const double d = ft.at(t, f) - s.mean[f];
        sq[f] += d * d;
      }
    }
  }
  for (std::size_t f = 0; f < n; ++f)
    s.stddev[f] = std::max(std::sqrt(sq[f] / static_cast<double>(count)), NormStats::kMinStd);
  return s;
}

// Standardizes movement columns on valid rows; invalid and padding rows keep
// their zeros and time columns are untouched.
inline void apply_norm_stats(FeatureTensor& ft, const NormStats& s) {
  if (s.schema != ft.schema) throw SchemaError("norm stats schema does not match feature schema");
  if (ft.standardized) throw ProgrammingError("apply_norm_stats: tensor already standardized");
  const std::size_t n = movement_columns(s.schema);
  for (std::size_t t = 0; t < ft.steps; ++t) {
    if (!ft.movement_valid[t]) continue;
    for (std::size_t f = 0; f < n; ++f) ft.at(t, f) = (ft.at(t, f) - s.mean[f]) / s.stddev[f];
  }
  ft.standardized = true;
}

// ---------------------------------------------------------------------------
// TRJF container
//
//   "TRJF" | version u32 | T u32 | F u32 | count u32 | resolution_seconds u32
//   per record: animal_id, study_id, species, date (u32 length + bytes each)
//               T*F f32 row-major | obs_mask T bytes | movement_valid T bytes

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureSet {
  Resolution resolution = Resolution::hourly();
  FeatureSchema schema = FeatureSchema::augmented10;
  std::size_t steps = 0;
  std::vector<FeatureTensor> days;
};

inline void write_feature_file(std::ostream& out, const FeatureSet& set) {
  out.write("TRJF", 4);
  binary::write_u32(out, kFeatureFileVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(set.steps));
  binary::write_u32(out, static_cast<std::uint32_t>(feature_count(set.schema)));
  binary::write_u32(out, static_cast<std::uint32_t>(set.days.size()));
  binary::write_u32(out, static_cast<std::uint32_t>(set.resolution.seconds()));
  for (const auto& ft : set.days) {
    if (ft.steps != set.steps || ft.schema != set.schema) throw ProgrammingError("feature set has mixed shapes");
    binary::write_string(out, ft.animal_id);
    binary::write_string(out, ft.study_id);
    binary::write_string(out, ft.species);
    binary::write_string(out, ft.date());
    for (double v : ft.x) binary::write_f32(out, static_cast<float>(v));
    binary::write_bytes(out, ft.obs_mask);
    binary::write_bytes(out, ft.movement_valid);
  }
  if (!out) throw Error("failed writing feature file");
}

inline FeatureSet read_feature_file(std::istream& in) {
  binary::expect_magic(in, "TRJF");
  const auto version = binary::read_u32(in);
  if (version != kFeatureFileVersion) throw SchemaError("unsupported TRJF version " + std::to_string(version));
  FeatureSet set;
  set.steps = binary::read_u32(in);
  set.schema = schema_for_width(binary::read_u32(in));
  const std::uint32_t count = binary::read_u32(in);
  set.resolution = Resolution::from_seconds(binary::read_u32(in));
  if (set.steps != set.resolution.slots_per_day()) throw SchemaError("TRJF: T does not match resolution");
  const std::size_t F = feature_count(set.schema);
  set.days.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureTensor ft;
    ft.animal_id = binary::read_string(in);
    ft.study_id = binary::read_string(in);
    ft.species = binary::read_string(in);
    auto day = parse_date(binary::read_string(in));
    if (!day) throw SchemaError("TRJF: bad date in record " + std::to_string(i));
    ft.day = *day;
    ft.resolution = set.resolution;
    ft.schema = set.schema;
    ft.steps = set.steps;
    ft.features = F;
    ft.x.resize(set.steps * F);
    for (auto& v : ft.x) v = static_cast<double>(binary::read_f32(in));
    ft.obs_mask.resize(set.steps);
    ft.movement_valid.resize(set.steps);
    binary::read_exact(in, ft.obs_mask.data(), set.steps);
    binary::read_exact(in, ft.movement_valid.data(), set.steps);
    ft.bearing_defined.assign(set.steps, 0);
    ft.turning_defined.assign(set.steps, 0);
    if (set.schema == FeatureSchema::augmented10) {
      for (std::size_t t = 0; t < set.steps; ++t) {
        ft.bearing_defined[t] = (ft.at(t, 4) != 0.0 || ft.at(t, 5) != 0.0) ? 1 : 0;
        ft.turning_defined[t] = (ft.at(t, 6) != 0.0 || ft.at(t, 7) != 0.0) ? 1 : 0;
      }
    }
    set.days.push_back(std::move(ft));
  }
  return set;
}

}  // namespace wildtraj
