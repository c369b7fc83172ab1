#pragma once

// Study-aware train/val/test manifests.
//
// For each species one whole study is reserved for test. The remaining
// animals are shuffled (seeded) and assigned whole to validation until the
// validation day count reaches `val_fraction` of that species' remaining days;
// the rest train. Species with a single study can optionally fall back to an
// animal-level train/val/test split inside that study.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/core/time.hpp"

namespace wildtraj {

enum class SplitRole : std::uint8_t { train, val, test };

inline std::string to_string(SplitRole s) {
  switch (s) {
    case SplitRole::train: return "train";
    case SplitRole::val: return "val";
    case SplitRole::test: return "test";
  }
  return "?";
}

inline SplitRole parse_split_role(const std::string& s) {
  if (s == "train") return SplitRole::train;
  if (s == "val") return SplitRole::val;
  if (s == "test") return SplitRole::test;
  throw SchemaError("unknown split '" + s + "'");
}

struct DayKey {
  std::string animal_id;
  std::string study_id;
  std::string species;
  std::int64_t day = 0;

  auto operator<=>(const DayKey&) const = default;
  bool operator==(const DayKey&) const = default;
};

struct ManifestEntry {
  DayKey key;
  SplitRole split = SplitRole::train;
};

struct SplitOptions {
  std::map<std::string, std::string> holdout;  // species -> held-out study
  double val_fraction = 0.2;
  // Test share used for within-study fallback species.
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  bool allow_within_study_test = false;
};

struct SplitManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::string> holdout;
  // Species split at animal level inside their own studies.
  std::set<std::string> within_study;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;

  std::map<DayKey, SplitRole> lookup() const {
    std::map<DayKey, SplitRole> m;
    for (const auto& e : entries) m.emplace(e.key, e.split);
    return m;
  }

  std::size_t count(SplitRole r) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == r; }));
  }
};

namespace detail {

struct AnimalDays {
  std::string animal_id;
  std::size_t days = 0;
};

// Seeded shuffle, then animals are taken until their day count reaches
// `fraction` of `total`. At least one animal is always left over.
inline std::vector<std::string> take_share(std::vector<AnimalDays> animals, double fraction, std::uint64_t seed,
                                           std::size_t total) {
  std::vector<std::string> taken;
  if (animals.size() < 2 || fraction <= 0.0) return taken;
  std::mt19937_64 rng(seed);
  std::shuffle(animals.begin(), animals.end(), rng);
  std::size_t got = 0;
  const double target = fraction * static_cast<double>(total);
  for (std::size_t i = 0; i + 1 < animals.size() && static_cast<double>(got) < target; ++i) {
    taken.push_back(animals[i].animal_id);
    got += animals[i].days;
  }
  return taken;
}

inline std::uint64_t species_seed(std::uint64_t seed, const std::string& species, std::uint64_t salt) {
  return seed ^ fnv1a(species) ^ (salt * 0x9E3779B97F4A7C15ULL);
}

}  // namespace detail

inline SplitManifest make_manifest(const std::vector<DayKey>& days, const SplitOptions& opt) {
  SplitManifest m;
  m.holdout = opt.holdout;
  m.seed = opt.seed;
  m.val_fraction = opt.val_fraction;

  std::map<std::string, std::set<std::string>> studies_of;  // species -> studies
  std::map<std::string, std::pair<std::string, std::string>> animal_owner;  // animal -> (species, study)
  for (const auto& d : days) {
    studies_of[d.species].insert(d.study_id);
    auto [it, inserted] = animal_owner.try_emplace(d.animal_id, d.species, d.study_id);
    if (!inserted && it->second.first != d.species)
      throw SchemaError("animal '" + d.animal_id + "' appears under two species");
  }
  for (const auto& [species, study] : opt.holdout) {
    auto it = studies_of.find(species);
    if (it == studies_of.end()) throw Error("holdout species '" + species + "' has no data");
    if (!it->second.count(study))
      throw Error("holdout study '" + study + "' for species '" + species + "' is absent from the data");
  }

  for (const auto& [species, studies] : studies_of) {
    auto h = opt.holdout.find(species);
    const bool only_holdout = h != opt.holdout.end() && studies.size() == 1;
    if (h == opt.holdout.end() || only_holdout) {
      if (!opt.allow_within_study_test) {
        throw Error(h == opt.holdout.end()
                        ? "species '" + species + "' has no holdout study (use within-study fallback to allow)"
                        : "species '" + species + "' has data only in its holdout study; no training data");
      }
      m.within_study.insert(species);
    }
  }

  // Animals spanning a holdout and a non-holdout study cannot be placed.
  std::map<std::string, std::set<bool>> animal_in_holdout;
  for (const auto& d : days) {
    if (m.within_study.count(d.species)) continue;
    animal_in_holdout[d.animal_id].insert(opt.holdout.at(d.species) == d.study_id);
  }
  for (const auto& [animal, flags] : animal_in_holdout)
    if (flags.size() > 1) throw Error("animal '" + animal + "' spans its holdout study and other studies");

  std::map<std::string, std::map<std::string, std::size_t>> remaining;  // species -> animal -> days
  std::map<std::string, std::size_t> remaining_total;
  for (const auto& d : days) {
    const bool test = !m.within_study.count(d.species) && opt.holdout.at(d.species) == d.study_id;
    if (test) continue;
    ++remaining[d.species][d.animal_id];
    ++remaining_total[d.species];
  }

  std::map<std::string, SplitRole> role_of_animal;
  for (const auto& [species, animals] : remaining) {
    std::vector<detail::AnimalDays> pool;
    for (const auto& [a, n] : animals) pool.push_back({a, n});
    std::size_t total = remaining_total[species];
    if (m.within_study.count(species)) {
      auto test = detail::take_share(pool, opt.test_fraction, detail::species_seed(0, species, 2), total);
      std::set<std::string> test_set(test.begin(), test.end());
      for (const auto& a : test) role_of_animal[a] = SplitRole::test;
      std::erase_if(pool, [&](const detail::AnimalDays& a) { return test_set.count(a.animal_id) > 0; });
    }
    total = 0;
    for (const auto& a : pool) total += a.days;
    for (const auto& a : detail::take_share(pool, opt.val_fraction, detail::species_seed(opt.seed, species, 1), total))
      role_of_animal[a] = SplitRole::val;
  }

  m.entries.reserve(days.size());
  for (const auto& d : days) {
    SplitRole r = SplitRole::train;
    if (!m.within_study.count(d.species) && opt.holdout.at(d.species) == d.study_id) {
      r = SplitRole::test;
    } else if (auto it = role_of_animal.find(d.animal_id); it != role_of_animal.end()) {
      r = it->second;
    }
    m.entries.push_back({d, r});
  }
  return m;
}

struct AuditReport {
  bool passed = true;
  std::vector<std::string> violations;

  void fail(std::string what) {
    passed = false;
    violations.push_back(std::move(what));
  }

  void write(std::ostream& out) const {
    out << "audit=" << (passed ? "pass" : "fail") << '\n';
    out << "violations=" << violations.size() << '\n';
    for (const auto& v : violations) out << v << '\n';
  }
};

inline std::string describe(const DayKey& k) {
  return k.animal_id + "/" + k.study_id + "/" + k.species + "/" + format_date(k.day);
}

// Checks study holdout, animal disjointness and that the manifest partitions
// exactly the given days.
inline AuditReport audit_leakage(const SplitManifest& m, const std::vector<DayKey>& days) {
  AuditReport report;
  std::map<DayKey, std::size_t> seen;
  for (const auto& e : m.entries) ++seen[e.key];
  for (const auto& [key, n] : seen)
    if (n > 1) report.fail("duplicate day " + describe(key) + " listed " + std::to_string(n) + " times");
  std::set<DayKey> expected(days.begin(), days.end());
  for (const auto& key : expected)
    if (!seen.count(key)) report.fail("day not covered by manifest: " + describe(key));
  for (const auto& [key, n] : seen)
    if (!expected.count(key)) report.fail("manifest lists unknown day: " + describe(key));

  std::map<std::string, std::set<SplitRole>> roles;
  for (const auto& e : m.entries) {
    roles[e.key.animal_id].insert(e.split);
    const bool fallback = m.within_study.count(e.key.species) > 0;
    auto h = m.holdout.find(e.key.species);
    const bool in_holdout_study = h != m.holdout.end() && h->second == e.key.study_id;
    if (fallback) {
      if (e.split == SplitRole::test && h != m.holdout.end() && !in_holdout_study)
        report.fail("test day outside declared study: " + describe(e.key));
      continue;
    }
    if (e.split == SplitRole::test && !in_holdout_study)
      report.fail("test day from non-holdout study: " + describe(e.key));
    if (e.split != SplitRole::test && in_holdout_study)
      report.fail(to_string(e.split) + " day from holdout study: " + describe(e.key));
  }
  for (const auto& [animal, r] : roles) {
    if (r.size() > 1) {
      std::string which;
      for (auto s : r) which += (which.empty() ? "" : ",") + to_string(s);
      report.fail("animal " + animal + " in several splits (" + which + ")");
    }
  }
  return report;
}

// CSV `animal_id,study_id,species,date,split`, preceded by `# key=value`
// comment lines carrying holdout map, seed and validation fraction.
inline void write_manifest(std::ostream& out, const SplitManifest& m) {
  out << "# seed=" << m.seed << '\n';
  out << "# val_fraction=" << format_double(m.val_fraction) << '\n';
  for (const auto& [species, study] : m.holdout) out << "# holdout=" << species << '=' << study << '\n';
  for (const auto& s : m.within_study) out << "# within_study=" << s << '\n';
  out << "animal_id,study_id,species,date,split\n";
  for (const auto& e : m.entries) {
    out << csv_escape(e.key.animal_id) << ',' << csv_escape(e.key.study_id) << ',' << csv_escape(e.key.species) << ','
        << format_date(e.key.day) << ',' << to_string(e.split) << '\n';
  }
}

inline SplitManifest read_manifest(std::istream& in) {
  SplitManifest m;
  std::string line;
  std::ostringstream body;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty() && t.front() == '#') {
      auto kv = trim(t.substr(1));
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string key(trim(kv.substr(0, eq)));
      const std::string value(trim(kv.substr(eq + 1)));
      if (key == "seed") {
        auto v = parse_int(value);
        if (!v) throw SchemaError("manifest: bad seed");
        m.seed = static_cast<std::uint64_t>(*v);
      } else if (key == "val_fraction") {
        m.val_fraction = parse_double(value).value_or(0.2);
      } else if (key == "holdout") {
        auto e = value.find('=');
        if (e == std::string::npos) throw SchemaError("manifest: bad holdout entry '" + value + "'");
        m.holdout[value.substr(0, e)] = value.substr(e + 1);
      } else if (key == "within_study") {
        m.within_study.insert(value);
      }
      continue;
    }
    body << line << '\n';
  }
  std::istringstream csv_in(body.str());
  CsvReader reader(csv_in);
  std::vector<std::string> row;
  if (!reader.next(row) || row != std::vector<std::string>{"animal_id", "study_id", "species", "date", "split"})
    throw SchemaError("manifest: expected header animal_id,study_id,species,date,split");
  while (reader.next(row)) {
    if (row.size() != 5) throw SchemaError("manifest: bad row at line " + std::to_string(reader.line()));
    auto day = parse_date(row[3]);
    if (!day) throw SchemaError("manifest: bad date '" + row[3] + "'");
    m.entries.push_back({DayKey{row[0], row[1], row[2], *day}, parse_split_role(row[4])});
  }
  return m;
}

}  // namespace wildtraj
