#pragma once

// Synthetic species archetypes: correlated random walks on a local tangent
// plane with circadian step modulation, rest bouts and i.i.d. fix dropout.
// Kept independent of the feature module's sphere math so generated tracks
// can serve as an oracle for it.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/key_values.hpp"
#include "wildtraj/core/time.hpp"
#include "wildtraj/ingest.hpp"
#include "wildtraj/resample.hpp"

namespace wildtraj::synth {

struct Archetype {
  std::string name;
  std::string species;       // label written to the species column
  double mean_step = 1e-4;   // unit-sphere arc per step (radians)
  double dispersion = 0.5;   // coefficient of variation of step lengths; 0 = constant
  double kappa = 1.0;        // von Mises concentration of turning angles
  double circadian_amplitude = 0.0;  // [0, 1]
  double circadian_phase = 0.0;      // hour of peak-minus-quarter-period, [0, 24)
  double rest_probability = 0.0;     // per-step chance of starting a rest bout
  double rest_duration = 1.0;        // mean bout length in hours
  double dropout = 0.0;              // per-fix drop probability
  double jitter_seconds = 0.0;       // uniform timestamp noise half-width

  void validate() const {
    auto fail = [&](const std::string& m) { throw SchemaError("archetype '" + name + "': " + m); };
    if (!(mean_step > 0) || mean_step > 0.01) fail("mean_step must be in (0, 0.01]");
    if (!(dispersion >= 0) || dispersion > 5) fail("dispersion must be in [0, 5]");
    if (!(kappa >= 0)) fail("kappa must be >= 0");
    if (!(circadian_amplitude >= 0 && circadian_amplitude <= 1)) fail("circadian_amplitude must be in [0, 1]");
    if (!(circadian_phase >= 0 && circadian_phase < 24)) fail("circadian_phase must be in [0, 24)");
    if (!(rest_probability >= 0 && rest_probability <= 1)) fail("rest_probability must be in [0, 1]");
    if (!(rest_duration > 0)) fail("rest_duration must be positive");
    if (!(dropout >= 0 && dropout < 1)) fail("dropout must be in [0, 1)");
    if (!(jitter_seconds >= 0 && jitter_seconds < 900)) fail("jitter_seconds must be in [0, 900)");
  }
};

struct StudySpec {
  std::string id;
  std::string archetype;
  double center_lat = 0;
  double center_lon = 0;
  std::size_t animals = 1;
};

struct SynthConfig {
  std::map<std::string, Archetype> archetypes;
  std::vector<StudySpec> studies;  // sorted by id
  std::size_t n_days = 10;
  std::int64_t start_day = 19723;  // 2024-01-01
  Resolution resolution = Resolution::hourly();
  std::uint64_t seed = 0;

  static SynthConfig from_key_values(const KeyValues& kv);
};

// Best-Fisher rejection sampler for the von Mises distribution on
// [-pi, pi] centred on 0. kappa = 0 is uniform; very large kappa falls back
// to the normal limit N(0, 1/kappa).
template <class Rng>
double sample_von_mises(double kappa, Rng& rng) {
  constexpr double pi = std::numbers::pi;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (kappa < 1e-8) return pi * (2.0 * u(rng) - 1.0);
  if (kappa > 1e5) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(kappa));
    return std::remainder(n(rng), 2 * pi);
  }
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  while (true) {
    const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
    const double z = std::cos(pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double theta = std::acos(std::clamp(f, -1.0, 1.0));
      return u3 > 0.5 ? theta : -theta;
    }
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Fixes of one animal. Its generator is seeded from seed ^ animal_index.
inline std::vector<FixRecord> generate_animal(const Archetype& a, const std::string& study_id,
                                              const std::string& animal_id, std::size_t n_days, Resolution res,
                                              std::int64_t start_day, std::uint64_t seed, std::uint64_t animal_index,
                                              double center_lat, double center_lon) {
  a.validate();
  constexpr double pi = std::numbers::pi;
  constexpr double deg = 180.0 / pi;
  std::mt19937_64 rng(splitmix64(seed ^ animal_index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::string species = a.species.empty() ? a.name : a.species;

  double lat = center_lat + 0.1 * (2 * u(rng) - 1);
  double lon = center_lon + 0.1 * (2 * u(rng) - 1);
  double heading = 2 * pi * u(rng);  // counter-clockwise from east
  std::size_t resting = 0;

  const std::size_t steps = n_days * res.slots_per_day();
  const double rest_steps = std::max(1.0, a.rest_duration / res.hours());
  std::geometric_distribution<std::size_t> bout(1.0 / rest_steps);
  std::vector<FixRecord> out;
  out.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const UnixSeconds t = start_day * kSecondsPerDay + static_cast<std::int64_t>(k) * res.seconds();
    // Draws happen whether or not the fix survives dropout, so the walk
    // itself does not depend on the dropout rate.
    const bool keep = u(rng) >= a.dropout;
    const double jitter = a.jitter_seconds > 0 ? a.jitter_seconds * (2 * u(rng) - 1) : 0.0;
    if (keep) {
      FixRecord r;
      r.animal_id = animal_id;
      r.study_id = study_id;
      r.species = species;
      r.timestamp = t + static_cast<std::int64_t>(std::llround(jitter));
      r.lat = lat;
      r.lon = lon;
      out.push_back(std::move(r));
    }

    // Step from slot k to k + 1.
    const double hour = static_cast<double>(floor_mod(t, kSecondsPerDay)) / 3600.0;
    const double circ = 1.0 + a.circadian_amplitude * std::sin(2 * pi * (hour - a.circadian_phase) / 24.0);
    if (resting == 0 && a.rest_probability > 0 && u(rng) < a.rest_probability) resting = 1 + bout(rng);
    if (resting > 0) {
      --resting;
      continue;
    }
    double len = a.mean_step * circ;
    if (a.dispersion > 0 && len > 0) {
      const double shape = 1.0 / (a.dispersion * a.dispersion);
      std::gamma_distribution<double> g(shape, len / shape);
      len = g(rng);
    }
    heading += sample_von_mises(a.kappa, rng);
    const double north = len * std::sin(heading);
    const double east = len * std::cos(heading);
    // East displacement converts at the step's mid latitude.
    const double next_lat = std::clamp(lat + north * deg, -89.9, 89.9);
    lon += east * deg / std::cos(0.5 * (lat + next_lat) / deg);
    lat = next_lat;
    if (lon > 180.0) lon -= 360.0;
    if (lon <= -180.0) lon += 360.0;
  }
  return out;
}

// All animals of all studies; animal indices run over studies in id order.
inline std::vector<FixRecord> generate(const SynthConfig& cfg) {
  std::vector<FixRecord> out;
  std::uint64_t index = 0;
  for (const auto& s : cfg.studies) {
    const auto it = cfg.archetypes.find(s.archetype);
    if (it == cfg.archetypes.end()) throw SchemaError("study '" + s.id + "' uses unknown archetype '" + s.archetype + "'");
    for (std::size_t i = 0; i < s.animals; ++i, ++index) {
      auto fixes = generate_animal(it->second, s.id, s.id + "-a" + std::to_string(i), cfg.n_days, cfg.resolution,
                                   cfg.start_day, cfg.seed, index, s.center_lat, s.center_lon);
      out.insert(out.end(), std::make_move_iterator(fixes.begin()), std::make_move_iterator(fixes.end()));
    }
  }
  return out;
}

inline SynthConfig SynthConfig::from_key_values(const KeyValues& kv) {
  SynthConfig c;
  static const std::set<std::string> archetype_fields{
      "species", "mean_step", "dispersion", "kappa", "circadian_amplitude", "circadian_phase",
      "rest_probability", "rest_duration", "dropout", "jitter_seconds"};
  static const std::set<std::string> study_fields{"archetype", "center_lat", "center_lon", "animals"};
  std::map<std::string, StudySpec> studies;

  auto number = [](const std::string& key, const std::string& v) {
    auto d = parse_double(v);
    if (!d) throw SchemaError("synth config key '" + key + "': not a number '" + v + "'");
    return *d;
  };
  for (const auto& [key, value] : kv.entries()) {
    if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(kv.get_int(key, 0));
    } else if (key == "n_days") {
      const auto n = kv.get_int(key, 0);
      if (n <= 0) throw SchemaError("synth config: n_days must be positive");
      c.n_days = static_cast<std::size_t>(n);
    } else if (key == "start_date") {
      auto d = parse_date(value);
      if (!d) throw SchemaError("synth config: bad start_date '" + value + "'");
      c.start_day = *d;
    } else if (key == "resolution") {
      c.resolution = Resolution::parse(value);
    } else if (key.starts_with("archetype.")) {
      const auto dot = key.rfind('.');
      const std::string name = key.substr(10, dot > 10 ? dot - 10 : 0);
      const std::string field = key.substr(dot + 1);
      if (name.empty() || dot <= 10 || !archetype_fields.count(field))
        throw SchemaError("synth config: unknown key '" + key + "'");
      Archetype& a = c.archetypes[name];
      a.name = name;
      if (field == "species") a.species = value;
      else if (field == "mean_step") a.mean_step = number(key, value);
      else if (field == "dispersion") a.dispersion = number(key, value);
      else if (field == "kappa") a.kappa = number(key, value);
      else if (field == "circadian_amplitude") a.circadian_amplitude = number(key, value);
      else if (field == "circadian_phase") a.circadian_phase = number(key, value);
      else if (field == "rest_probability") a.rest_probability = number(key, value);
      else if (field == "rest_duration") a.rest_duration = number(key, value);
      else if (field == "dropout") a.dropout = number(key, value);
      else if (field == "jitter_seconds") a.jitter_seconds = number(key, value);
    } else if (key.starts_with("study.")) {
      const auto dot = key.rfind('.');
      const std::string id = key.substr(6, dot > 6 ? dot - 6 : 0);
      const std::string field = key.substr(dot + 1);
      if (id.empty() || dot <= 6 || !study_fields.count(field)) throw SchemaError("synth config: unknown key '" + key + "'");
      StudySpec& s = studies[id];
      s.id = id;
      if (field == "archetype") s.archetype = value;
      else if (field == "center_lat") s.center_lat = number(key, value);
      else if (field == "center_lon") s.center_lon = number(key, value);
      else if (field == "animals") {
        const double n = number(key, value);
        if (n < 1 || n != std::floor(n)) throw SchemaError("synth config: " + key + " must be a positive integer");
        s.animals = static_cast<std::size_t>(n);
      }
    } else {
      throw SchemaError("synth config: unknown key '" + key + "'");
    }
  }
  for (auto& [name, a] : c.archetypes) {
    if (a.species.empty()) a.species = name;
    a.validate();
  }
  for (auto& [id, s] : studies) {
    if (s.archetype.empty()) throw SchemaError("synth config: study '" + id + "' has no archetype");
    if (!c.archetypes.count(s.archetype))
      throw SchemaError("synth config: study '" + id + "' uses unknown archetype '" + s.archetype + "'");
    if (!(s.center_lat > -80 && s.center_lat < 80) || !(s.center_lon > -180 && s.center_lon <= 180))
      throw SchemaError("synth config: study '" + id + "' center out of range");
    c.studies.push_back(s);
  }
  if (c.studies.empty()) throw SchemaError("synth config: no studies defined");
  return c;
}

}  // namespace wildtraj::synth
