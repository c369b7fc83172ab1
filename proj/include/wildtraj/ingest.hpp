#pragma once

// Telemetry CSV ingestion: Movebank-style exports to validated per-animal
// fix streams.

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/core/time.hpp"

namespace wildtraj {

struct FixRecord {
  std::string animal_id;
  std::string study_id;
  std::string species;
  UnixSeconds timestamp = 0;
  double lat = 0.0;  // degrees, [-90, 90]
  double lon = 0.0;  // degrees, (-180, 180]

  friend bool operator==(const FixRecord&, const FixRecord&) = default;
};

struct AnimalTrack {
  std::string animal_id;
  std::string study_id;
  std::string species;
  std::vector<FixRecord> fixes;  // strictly increasing timestamps after dedup
};

struct ColumnMap {
  std::string timestamp = "timestamp";
  std::string lat = "location-lat";
  std::string lon = "location-long";
  std::string animal = "individual-local-identifier";
  std::string study = "study-id";
  std::string species = "species";
};

struct IngestOptions {
  ColumnMap columns;
  // Used when the file has no study/species column.
  std::optional<std::string> study_id;
  std::optional<std::string> species;
  // Offset applied to timestamps that carry no explicit zone.
  int utc_offset_seconds = 0;
};

struct Rejection {
  std::size_t line = 0;
  std::string reason;
};

struct ParseResult {
  std::vector<FixRecord> records;
  std::vector<Rejection> rejections;
  std::size_t data_rows = 0;
};

inline bool valid_coordinates(double lat, double lon) {
  return lat >= -90.0 && lat <= 90.0 && lon > -180.0 && lon <= 180.0;
}

inline ParseResult parse_fixes(std::istream& in, const IngestOptions& options = {}) {
  CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw SchemaError("empty input: no header row");

  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  auto require = [&](const std::string& name) {
    auto idx = find_column(name);
    if (!idx) throw SchemaError("missing required column '" + name + "'");
    return *idx;
  };

  const std::size_t c_time = require(options.columns.timestamp);
  const std::size_t c_lat = require(options.columns.lat);
  const std::size_t c_lon = require(options.columns.lon);
  const std::size_t c_animal = require(options.columns.animal);
  const auto c_study = find_column(options.columns.study);
  const auto c_species = find_column(options.columns.species);
  if (!c_study && !options.study_id) {
    throw SchemaError("no '" + options.columns.study + "' column and no study id supplied");
  }
  if (!c_species && !options.species) {
    throw SchemaError("no '" + options.columns.species + "' column and no species supplied; refusing to guess");
  }

  ParseResult result;
  std::vector<std::string> row;
  while (reader.next(row)) {
    ++result.data_rows;
    auto reject = [&](std::string reason) { result.rejections.push_back({reader.line(), std::move(reason)}); };
    if (row.size() != header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
      continue;
    }
    auto t = parse_timestamp(row[c_time], options.utc_offset_seconds);
    if (!t) {
      reject("unparseable timestamp '" + row[c_time] + "'");
      continue;
    }
    auto lat = parse_double(row[c_lat]);
    auto lon = parse_double(row[c_lon]);
    if (!lat || !lon) {
      reject("unparseable coordinates '" + row[c_lat] + "', '" + row[c_lon] + "'");
      continue;
    }
    // -180 and 180 name the same meridian.
    if (*lon == -180.0) *lon = 180.0;
    if (!valid_coordinates(*lat, *lon)) {
      reject("coordinates out of range (" + row[c_lat] + ", " + row[c_lon] + ")");
      continue;
    }
    FixRecord rec;
    rec.animal_id = row[c_animal];
    rec.study_id = c_study ? row[*c_study] : *options.study_id;
    rec.species = c_species ? row[*c_species] : *options.species;
    if (rec.animal_id.empty() || rec.study_id.empty() || rec.species.empty()) {
      reject("empty animal, study or species label");
      continue;
    }
    rec.timestamp = *t;
    rec.lat = *lat;
    rec.lon = *lon;
    result.records.push_back(std::move(rec));
  }
  if (result.data_rows == 0) throw SchemaError("empty input: header only");
  if (2 * result.rejections.size() > result.data_rows) {
    throw SchemaError("corrupt input: " + std::to_string(result.rejections.size()) + " of " +
                      std::to_string(result.data_rows) + " rows rejected");
  }
  return result;
}

inline void write_rejection_report(std::ostream& out, const ParseResult& result, const std::string& source = "") {
  for (const auto& r : result.rejections) {
    if (!source.empty()) out << source << ':';
    out << "line " << r.line << ": " << r.reason << '\n';
  }
}

// Averages fixes sharing one timestamp (arithmetic mean of lat and lon).
// Input must be sorted by timestamp.
inline AnimalTrack dedup_same_timestamp(const AnimalTrack& track) {
  AnimalTrack out{track.animal_id, track.study_id, track.species, {}};
  out.fixes.reserve(track.fixes.size());
  std::size_t i = 0;
  while (i < track.fixes.size()) {
    std::size_t j = i + 1;
    while (j < track.fixes.size() && track.fixes[j].timestamp == track.fixes[i].timestamp) ++j;
    FixRecord f = track.fixes[i];
    if (j - i > 1) {
      double lat = 0.0;
      double lon = 0.0;
      for (std::size_t k = i; k < j; ++k) {
        lat += track.fixes[k].lat;
        lon += track.fixes[k].lon;
      }
      f.lat = lat / static_cast<double>(j - i);
      f.lon = lon / static_cast<double>(j - i);
    }
    out.fixes.push_back(std::move(f));
    i = j;
  }
  return out;
}

// Groups records by (study, animal), sorts each track by time (stable, so
// file order survives among equal timestamps) and deduplicates.
inline std::vector<AnimalTrack> build_tracks(const std::vector<FixRecord>& records) {
  std::map<std::pair<std::string, std::string>, AnimalTrack> groups;
  for (const auto& r : records) {
    auto& t = groups[{r.study_id, r.animal_id}];
    if (t.fixes.empty()) {
      t.animal_id = r.animal_id;
      t.study_id = r.study_id;
      t.species = r.species;
    } else if (t.species != r.species) {
      throw SchemaError("animal '" + r.animal_id + "' in study '" + r.study_id + "' carries two species labels ('" +
                        t.species + "', '" + r.species + "')");
    }
    t.fixes.push_back(r);
  }
  std::vector<AnimalTrack> out;
  out.reserve(groups.size());
  for (auto& [key, track] : groups) {
    std::stable_sort(track.fixes.begin(), track.fixes.end(),
                     [](const FixRecord& a, const FixRecord& b) { return a.timestamp < b.timestamp; });
    out.push_back(dedup_same_timestamp(track));
  }
  return out;
}

// Writes records in the default ingest layout, so the output re-ingests as is.
inline void write_fixes_csv(std::ostream& out, const std::vector<FixRecord>& records) {
  ColumnMap c;
  out << c.timestamp << ',' << c.lat << ',' << c.lon << ',' << c.animal << ',' << c.study << ',' << c.species << '\n';
  for (const auto& r : records) {
    out << format_timestamp(r.timestamp) << ',' << format_double(r.lat) << ',' << format_double(r.lon) << ','
        << csv_escape(r.animal_id) << ',' << csv_escape(r.study_id) << ',' << csv_escape(r.species) << '\n';
  }
}

inline void write_fixes_csv(std::ostream& out, const std::vector<AnimalTrack>& tracks) {
  std::vector<FixRecord> all;
  for (const auto& t : tracks) all.insert(all.end(), t.fixes.begin(), t.fixes.end());
  write_fixes_csv(out, all);
}

}  // namespace wildtraj
