#pragma once

// Regular-grid resampling and UTC daily segmentation of animal tracks.
//
// Fixes are snapped to the nearest multiple of the grid step (ties toward the
// later grid time); per slot only the fix closest to its grid time survives
// (ties keep the earlier fix). A missing slot is filled by the lat/lon
// midpoint only when both neighbours at +-step are observed; longer gaps stay
// undefined. Grid times are multiples of the step counted from the Unix epoch,
// so every UTC midnight is a grid time.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/core/time.hpp"
#include "wildtraj/ingest.hpp"

namespace wildtraj {

class Resolution {
 public:
  static constexpr Resolution hourly() { return Resolution(3600); }
  static constexpr Resolution half_hourly() { return Resolution(1800); }

  static Resolution from_seconds(std::int64_t s) {
    if (s != 3600 && s != 1800) throw SchemaError("unsupported resolution " + std::to_string(s) + " s");
    return Resolution(s);
  }

  // Accepts `1h` and `30m`.
  static Resolution parse(const std::string& s) {
    if (s == "1h" || s == "60m" || s == "3600") return hourly();
    if (s == "30m" || s == "1800") return half_hourly();
    throw SchemaError("unknown resolution '" + s + "' (expected 1h or 30m)");
  }

  constexpr std::int64_t seconds() const { return seconds_; }
  constexpr double hours() const { return static_cast<double>(seconds_) / 3600.0; }
  constexpr std::size_t slots_per_day() const { return static_cast<std::size_t>(kSecondsPerDay / seconds_); }
  // Minimum defined slots for a day to be kept.
  constexpr std::size_t coverage_threshold() const { return seconds_ == 3600 ? 12 : 25; }
  std::string label() const { return seconds_ == 3600 ? "1h" : "30m"; }

  friend constexpr bool operator==(Resolution, Resolution) = default;

 private:
  constexpr explicit Resolution(std::int64_t s) : seconds_(s) {}
  std::int64_t seconds_;
};

// Nearest multiple of `step`; exact half intervals round up.
inline UnixSeconds round_to_grid(UnixSeconds t, std::int64_t step) {
  return floor_div(t + step / 2, step) * step;
}

inline UnixSeconds round_to_grid(UnixSeconds t, Resolution r) { return round_to_grid(t, r.seconds()); }

// Maps grid time to the retained fix. Input track must be deduplicated.
inline std::map<UnixSeconds, FixRecord> snap_and_select(const AnimalTrack& track, Resolution res) {
  std::map<UnixSeconds, FixRecord> out;
  for (const auto& f : track.fixes) {
    UnixSeconds g = round_to_grid(f.timestamp, res);
    auto it = out.find(g);
    if (it == out.end()) {
      out.emplace(g, f);
      continue;
    }
    const auto d_new = std::llabs(f.timestamp - g);
    const auto d_old = std::llabs(it->second.timestamp - g);
    if (d_new < d_old || (d_new == d_old && f.timestamp < it->second.timestamp)) it->second = f;
  }
  return out;
}

enum class Origin : std::uint8_t { observed, interpolated };

struct GridEntry {
  double lat = 0.0;
  double lon = 0.0;
  Origin origin = Origin::observed;

  friend bool operator==(const GridEntry&, const GridEntry&) = default;
};

struct GridTrack {
  std::string animal_id;
  std::string study_id;
  std::string species;
  Resolution resolution = Resolution::hourly();
  // Grid index of entries[0]; the grid time of entries[k] is (first_index + k) * step.
  std::int64_t first_index = 0;
  std::vector<std::optional<GridEntry>> entries;

  UnixSeconds time_at(std::size_t k) const {
    return (first_index + static_cast<std::int64_t>(k)) * resolution.seconds();
  }

  friend bool operator==(const GridTrack&, const GridTrack&) = default;
};

// Lays the selected fixes out on the contiguous grid spanning the first to the
// last retained observation.
inline GridTrack build_grid(const AnimalTrack& track, Resolution res) {
  GridTrack g{track.animal_id, track.study_id, track.species, res, 0, {}};
  auto selected = snap_and_select(track, res);
  if (selected.empty()) return g;
  const std::int64_t first = selected.begin()->first / res.seconds();
  const std::int64_t last = selected.rbegin()->first / res.seconds();
  g.first_index = first;
  g.entries.assign(static_cast<std::size_t>(last - first + 1), std::nullopt);
  for (const auto& [t, f] : selected) {
    g.entries[static_cast<std::size_t>(t / res.seconds() - first)] = GridEntry{f.lat, f.lon, Origin::observed};
  }
  return g;
}

struct ResampleDiagnostics {
  std::size_t interpolated = 0;
  // Single gaps left undefined because the neighbours straddle the antimeridian.
  std::vector<UnixSeconds> antimeridian_gaps;
};

inline GridTrack fill_single_gaps(GridTrack grid, ResampleDiagnostics* diag = nullptr) {
  auto& e = grid.entries;
  auto observed = [&](std::size_t k) { return e[k] && e[k]->origin == Origin::observed; };
  for (std::size_t k = 1; k + 1 < e.size(); ++k) {
    if (e[k] || !observed(k - 1) || !observed(k + 1)) continue;
    const GridEntry& a = *e[k - 1];
    const GridEntry& b = *e[k + 1];
    if (std::fabs(a.lon - b.lon) > 180.0) {
      if (diag) diag->antimeridian_gaps.push_back(grid.time_at(k));
      continue;
    }
    e[k] = GridEntry{0.5 * (a.lat + b.lat), 0.5 * (a.lon + b.lon), Origin::interpolated};
    if (diag) ++diag->interpolated;
  }
  return grid;
}

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const LatLon&, const LatLon&) = default;
};

struct DailySequence {
  std::string animal_id;
  std::string study_id;
  std::string species;
  std::int64_t day = 0;  // days since 1970-01-01 (UTC)
  Resolution resolution = Resolution::hourly();
  std::vector<std::optional<LatLon>> positions;
  std::vector<std::uint8_t> obs_mask;
  std::vector<std::uint8_t> movement_valid;

  std::string date() const { return format_date(day); }
  std::size_t observed() const {
    std::size_t n = 0;
    for (auto m : obs_mask) n += m;
    return n;
  }
};

// movement_valid[t] = 1 iff slots t and t-1 are both defined; slot 0 is never
// valid. On the resampled grid an adjacent defined slot is exactly one
// nominal interval away.
inline std::vector<std::uint8_t> movement_validity(const std::vector<std::uint8_t>& obs_mask) {
  std::vector<std::uint8_t> valid(obs_mask.size(), 0);
  for (std::size_t t = 1; t < obs_mask.size(); ++t) valid[t] = (obs_mask[t] && obs_mask[t - 1]) ? 1 : 0;
  return valid;
}

struct SegmentResult {
  std::vector<DailySequence> days;
  std::size_t dropped = 0;
};

inline SegmentResult segment_days(const GridTrack& grid) {
  SegmentResult out;
  const Resolution res = grid.resolution;
  const std::size_t T = res.slots_per_day();
  std::map<std::int64_t, DailySequence> by_day;
  for (std::size_t k = 0; k < grid.entries.size(); ++k) {
    if (!grid.entries[k]) continue;
    const UnixSeconds t = grid.time_at(k);
    const std::int64_t day = day_of(t);
    auto [it, inserted] = by_day.try_emplace(day);
    DailySequence& d = it->second;
    if (inserted) {
      d.animal_id = grid.animal_id;
      d.study_id = grid.study_id;
      d.species = grid.species;
      d.day = day;
      d.resolution = res;
      d.positions.assign(T, std::nullopt);
      d.obs_mask.assign(T, 0);
    }
    const auto slot = static_cast<std::size_t>((t - day * kSecondsPerDay) / res.seconds());
    d.positions[slot] = LatLon{grid.entries[k]->lat, grid.entries[k]->lon};
    d.obs_mask[slot] = 1;
  }
  for (auto& [day, d] : by_day) {
    if (d.observed() < res.coverage_threshold()) {
      ++out.dropped;
      continue;
    }
    d.movement_valid = movement_validity(d.obs_mask);
    out.days.push_back(std::move(d));
  }
  return out;
}

// Dedup + grid + single-gap fill + daily segmentation for one track.
inline SegmentResult resample_track(const AnimalTrack& track, Resolution res, ResampleDiagnostics* diag = nullptr) {
  return segment_days(fill_single_gaps(build_grid(dedup_same_timestamp(track), res), diag));
}

// Rows `grid_time_iso,lat,lon,origin` with origin O (observed) or I
// (interpolated); undefined slots are omitted.
inline void write_grid_csv(std::ostream& out, const GridTrack& grid) {
  out << "grid_time_iso,lat,lon,origin\n";
  for (std::size_t k = 0; k < grid.entries.size(); ++k) {
    if (!grid.entries[k]) continue;
    const auto& e = *grid.entries[k];
    out << format_iso(grid.time_at(k)) << ',' << format_double(e.lat) << ',' << format_double(e.lon) << ','
        << (e.origin == Origin::observed ? 'O' : 'I') << '\n';
  }
}

// Retained days in long form, one row per defined slot:
// `animal_id,study_id,species,date,slot,lat,lon` after a `# resolution=` line.
inline void write_days_csv(std::ostream& out, const std::vector<DailySequence>& days, Resolution res) {
  out << "# resolution=" << res.label() << '\n';
  out << "animal_id,study_id,species,date,slot,lat,lon\n";
  for (const auto& d : days) {
    if (d.resolution != res) throw ProgrammingError("write_days_csv: mixed resolutions");
    for (std::size_t t = 0; t < d.positions.size(); ++t) {
      if (!d.positions[t]) continue;
      out << csv_escape(d.animal_id) << ',' << csv_escape(d.study_id) << ',' << csv_escape(d.species) << ','
          << d.date() << ',' << t << ',' << format_double(d.positions[t]->lat) << ','
          << format_double(d.positions[t]->lon) << '\n';
    }
  }
}

inline std::vector<DailySequence> read_days_csv(std::istream& in, Resolution* resolution_out = nullptr) {
  std::string first;
  if (!std::getline(in, first)) throw SchemaError("days file is empty");
  const std::string prefix = "# resolution=";
  if (first.rfind(prefix, 0) != 0) throw SchemaError("days file: missing '# resolution=' line");
  const Resolution res = Resolution::parse(std::string(trim(std::string_view(first).substr(prefix.size()))));
  if (resolution_out) *resolution_out = res;
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row) ||
      row != std::vector<std::string>{"animal_id", "study_id", "species", "date", "slot", "lat", "lon"})
    throw SchemaError("days file: unexpected header");
  std::vector<DailySequence> days;
  const std::size_t T = res.slots_per_day();
  while (reader.next(row)) {
    const std::string where = "days file line " + std::to_string(reader.line() + 1);
    if (row.size() != 7) throw SchemaError(where + ": expected 7 fields");
    const auto day = parse_date(row[3]);
    const auto slot = parse_int(row[4]);
    const auto lat = parse_double(row[5]);
    const auto lon = parse_double(row[6]);
    if (!day || !slot || !lat || !lon || *slot < 0 || static_cast<std::size_t>(*slot) >= T)
      throw SchemaError(where + ": malformed row");
    if (days.empty() || days.back().animal_id != row[0] || days.back().study_id != row[1] || days.back().day != *day) {
      DailySequence d;
      d.animal_id = row[0];
      d.study_id = row[1];
      d.species = row[2];
      d.day = *day;
      d.resolution = res;
      d.positions.assign(T, std::nullopt);
      d.obs_mask.assign(T, 0);
      days.push_back(std::move(d));
    }
    auto& d = days.back();
    const auto k = static_cast<std::size_t>(*slot);
    d.positions[k] = LatLon{*lat, *lon};
    d.obs_mask[k] = 1;
  }
  for (auto& d : days) d.movement_valid = movement_validity(d.obs_mask);
  return days;
}

}  // namespace wildtraj
