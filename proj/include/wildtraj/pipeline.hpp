#pragma once

// End-to-end experiment runner: ingest or synthesize, resample, featurize,
// split and audit, then one one-vs-rest task per target species.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/key_values.hpp"
#include "wildtraj/core/time.hpp"
#include "wildtraj/eval.hpp"
#include "wildtraj/features.hpp"
#include "wildtraj/ingest.hpp"
#include "wildtraj/models/checkpoint.hpp"
#include "wildtraj/resample.hpp"
#include "wildtraj/split.hpp"
#include "wildtraj/synth.hpp"
#include "wildtraj/train.hpp"

namespace wildtraj {

namespace fs = std::filesystem;

// Species and study labels per input file (`path,study_id,species`).
struct InputSpec {
  std::string path;
  std::optional<std::string> study_id;
  std::optional<std::string> species;
};

inline std::vector<InputSpec> read_input_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open input manifest '" + path + "'");
  CsvReader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row) || row.empty() || row[0] != "path")
    throw SchemaError("input manifest '" + path + "': expected header path[,study_id][,species]");
  const auto header = row;
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto study = col("study_id");
  const auto species = col("species");
  std::vector<InputSpec> out;
  while (reader.next(row)) {
    if (row.size() != header.size())
      throw SchemaError("input manifest '" + path + "' line " + std::to_string(reader.line()) + ": wrong field count");
    InputSpec s;
    s.path = row[0];
    if (study && !row[*study].empty()) s.study_id = row[*study];
    if (species && !row[*species].empty()) s.species = row[*species];
    out.push_back(std::move(s));
  }
  return out;
}

struct RunConfig {
  std::vector<std::string> inputs;
  std::string input_manifest;
  std::string synth;
  std::optional<std::string> study_id;  // for inputs without a study column
  std::optional<std::string> species_label;  // for inputs without a species column
  int utc_offset_seconds = 0;

  Resolution resolution = Resolution::hourly();
  FeatureSchema schema = FeatureSchema::augmented10;
  models::Architecture arch = models::Architecture::transformer;
  std::vector<std::string> targets;  // empty: every species
  std::map<std::string, std::string> holdout;
  std::uint64_t seed = 0;
  std::string out = "runs";
  bool standardize = true;
  bool allow_within_study_test = false;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::string manifest;  // use this manifest instead of generating one

  models::ModelConfig model;  // arch, features, steps, num_classes and seed are derived
  TrainConfig train;          // seed is derived

  static void parse_holdout(const std::string& text, std::map<std::string, std::string>& into) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
      throw SchemaError("holdout must be SPECIES=STUDY, got '" + text + "'");
    into[text.substr(0, eq)] = text.substr(eq + 1);
  }

  // `require_source` = false admits configs that only carry model, training
  // and split settings (stage-wise commands).
  static RunConfig from_key_values(const KeyValues& kv, bool require_source = true) {
    RunConfig c;
    static const std::set<std::string> derived{"model.arch", "model.features", "model.steps", "model.num_classes",
                                               "model.seed", "train.seed"};
    std::set<std::string> model_keys, train_keys;
    const KeyValues model_defaults = models::ModelConfig{}.to_key_values();
    const KeyValues train_defaults = TrainConfig{}.to_key_values();
    for (const auto& [k, v] : model_defaults.entries()) model_keys.insert(k);
    for (const auto& [k, v] : train_defaults.entries()) train_keys.insert(k);
    KeyValues model_kv, train_kv;
    for (const auto& [key, value] : kv.entries()) {
      if (derived.count(key)) throw SchemaError("config key '" + key + "' is derived; set the top-level key instead");
      if (key == "input") c.inputs.push_back(value);
      else if (key == "input_manifest") c.input_manifest = value;
      else if (key == "synth") c.synth = value;
      else if (key == "study_id") c.study_id = value;
      else if (key == "species_label") c.species_label = value;
      else if (key == "utc_offset") {
        auto off = parse_utc_offset(value);
        if (!off) throw SchemaError("config key 'utc_offset': expected +HH:MM, got '" + value + "'");
        c.utc_offset_seconds = *off;
      } else if (key == "resolution") c.resolution = Resolution::parse(value);
      else if (key == "features") c.schema = parse_schema(value);
      else if (key == "arch") c.arch = models::parse_architecture(value);
      else if (key == "species") c.targets.push_back(value);
      else if (key == "holdout") parse_holdout(value, c.holdout);
      else if (key == "seed") {
        auto v = parse_int(value);
        if (!v || *v < 0) throw SchemaError("config key 'seed' must be a non-negative integer");
        c.seed = static_cast<std::uint64_t>(*v);
      } else if (key == "out") c.out = value;
      else if (key == "standardize") c.standardize = kv.get_bool(key, true);
      else if (key == "allow_within_study_test") c.allow_within_study_test = kv.get_bool(key, false);
      else if (key == "val_fraction") c.val_fraction = kv.get_double(key, 0.2);
      else if (key == "test_fraction") c.test_fraction = kv.get_double(key, 0.2);
      else if (key == "manifest") c.manifest = value;
      else if (model_keys.count(key)) model_kv.add(key, value);
      else if (train_keys.count(key)) train_kv.add(key, value);
      else throw SchemaError("unknown config key '" + key + "'");
    }
    c.model = models::ModelConfig::from_key_values(model_kv);
    c.train = TrainConfig::from_key_values(train_kv);
    c.finalize(require_source);
    return c;
  }

  // Fills the derived model and training fields.
  void finalize(bool require_source = true) {
    model.arch = arch;
    model.features = feature_count(schema);
    model.steps = resolution.slots_per_day();
    model.num_classes = 2;
    model.seed = seed;
    train.seed = seed;
    model.validate();
    train.validate();
    if (!(val_fraction > 0 && val_fraction < 1) || !(test_fraction > 0 && test_fraction < 1))
      throw SchemaError("val_fraction and test_fraction must be in (0, 1)");
    if (require_source && inputs.empty() && input_manifest.empty() && synth.empty())
      throw SchemaError("no data source: set input, input_manifest or synth");
    if (!synth.empty() && (!inputs.empty() || !input_manifest.empty()))
      throw SchemaError("synth cannot be combined with input files");
  }

  // Effective configuration; parsing it back yields the same run.
  KeyValues to_key_values() const {
    KeyValues kv;
    for (const auto& i : inputs) kv.add("input", i);
    if (!input_manifest.empty()) kv.add("input_manifest", input_manifest);
    if (!synth.empty()) kv.add("synth", synth);
    if (study_id) kv.add("study_id", *study_id);
    if (species_label) kv.add("species_label", *species_label);
    if (utc_offset_seconds != 0) {
      const int a = std::abs(utc_offset_seconds);
      char buf[16];
      std::snprintf(buf, sizeof buf, "%c%02d:%02d", utc_offset_seconds < 0 ? '-' : '+', a / 3600, (a % 3600) / 60);
      kv.add("utc_offset", buf);
    }
    kv.add("resolution", resolution.label());
    kv.add("features", schema == FeatureSchema::minimal5 ? "minimal" : "augmented");
    kv.add("arch", models::to_string(arch));
    for (const auto& s : targets) kv.add("species", s);
    for (const auto& [sp, st] : holdout) kv.add("holdout", sp + "=" + st);
    kv.add("seed", std::to_string(seed));
    kv.add("out", out);
    kv.add("standardize", standardize ? "true" : "false");
    kv.add("allow_within_study_test", allow_within_study_test ? "true" : "false");
    kv.add("val_fraction", format_double(val_fraction));
    kv.add("test_fraction", format_double(test_fraction));
    if (!manifest.empty()) kv.add("manifest", manifest);
    const KeyValues model_kv = model.to_key_values();
    const KeyValues train_kv = train.to_key_values();
    for (const auto& [k, v] : model_kv.entries())
      if (k != "model.arch" && k != "model.features" && k != "model.steps" && k != "model.num_classes" &&
          k != "model.seed")
        kv.add(k, v);
    for (const auto& [k, v] : train_kv.entries())
      if (k != "train.seed") kv.add(k, v);
    return kv;
  }

  // The output location is not part of the experiment.
  std::uint64_t fingerprint() const {
    KeyValues kv = to_key_values();
    kv.erase("out");
    return fnv1a(kv.to_string());
  }
};

// ------------------------------------------------------------------ stages

struct IngestSummary {
  std::vector<FixRecord> records;
  std::size_t rows = 0;
  std::size_t rejected = 0;
  std::string rejection_text;
};

inline IngestSummary ingest_files(const std::vector<InputSpec>& files, const IngestOptions& defaults) {
  IngestSummary out;
  std::ostringstream rej;
  for (const auto& f : files) {
    std::ifstream in(f.path);
    if (!in) throw SchemaError("cannot open input '" + f.path + "'");
    IngestOptions opt = defaults;
    if (f.study_id) opt.study_id = f.study_id;
    if (f.species) opt.species = f.species;
    ParseResult r;
    try {
      r = parse_fixes(in, opt);
    } catch (const SchemaError& e) {
      throw SchemaError(f.path + ": " + e.what());
    }
    out.rows += r.data_rows;
    out.rejected += r.rejections.size();
    write_rejection_report(rej, r, f.path);
    out.records.insert(out.records.end(), std::make_move_iterator(r.records.begin()),
                       std::make_move_iterator(r.records.end()));
  }
  out.rejection_text = rej.str();
  return out;
}

struct ResampleSummary {
  std::vector<DailySequence> days;
  std::size_t tracks = 0;
  std::size_t dropped_days = 0;
  ResampleDiagnostics diag;
};

inline ResampleSummary resample_all(const std::vector<FixRecord>& records, Resolution res) {
  ResampleSummary out;
  for (const auto& track : build_tracks(records)) {
    ++out.tracks;
    auto seg = resample_track(track, res, &out.diag);
    out.dropped_days += seg.dropped;
    out.days.insert(out.days.end(), std::make_move_iterator(seg.days.begin()), std::make_move_iterator(seg.days.end()));
  }
  return out;
}

inline std::vector<FeatureTensor> featurize_all(const std::vector<DailySequence>& days, FeatureSchema schema) {
  std::vector<FeatureTensor> out;
  out.reserve(days.size());
  for (const auto& d : days) out.push_back(assemble(d, schema));
  return out;
}

inline DayKey key_of(const FeatureTensor& ft) { return {ft.animal_id, ft.study_id, ft.species, ft.day}; }

inline std::vector<DayKey> day_keys(const std::vector<FeatureTensor>& days) {
  std::vector<DayKey> keys;
  keys.reserve(days.size());
  for (const auto& d : days) keys.push_back(key_of(d));
  return keys;
}

// Days of the given role; `target` species is class 1.
inline LabeledSet labeled(const std::vector<FeatureTensor>& days, const std::map<DayKey, SplitRole>& roles,
                          SplitRole role, const std::string& target) {
  LabeledSet s;
  for (const auto& d : days) {
    auto it = roles.find(key_of(d));
    if (it == roles.end()) throw LeakageError("day missing from manifest: " + describe(key_of(d)));
    if (it->second == role) s.add(d, d.species == target ? 1 : 0);
  }
  return s;
}

// Fits on training days, then standardizes every day in place.
inline NormStats standardize_by_manifest(std::vector<FeatureTensor>& days, const std::map<DayKey, SplitRole>& roles) {
  std::vector<FeatureTensor> train;
  for (const auto& d : days)
    if (auto it = roles.find(key_of(d)); it != roles.end() && it->second == SplitRole::train) train.push_back(d);
  const NormStats stats = fit_norm_stats(train);
  for (auto& d : days) apply_norm_stats(d, stats);
  return stats;
}

inline std::string task_name(const std::string& species, models::Architecture arch, FeatureSchema schema,
                             Resolution res) {
  std::string s = species;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s + "-" + models::to_string(arch) + "-" + to_string(schema) + "-" + res.label();
}

namespace detail {

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

template <class F>
std::string render(F&& f) {
  std::ostringstream s;
  f(s);
  return s.str();
}

}  // namespace detail

struct TaskResult {
  std::string species;
  fs::path dir;
  MetricsReport report;
  FitResult fit;
};

struct RunResult {
  std::vector<TaskResult> tasks;
  AuditReport audit;
  std::size_t days = 0;
};

struct PreparedData {
  std::vector<FeatureTensor> days;
  SplitManifest manifest;
  AuditReport audit;
  std::optional<NormStats> norm;
  std::string rejections;
};

// Everything up to and including the audit and standardization.
inline PreparedData prepare(const RunConfig& cfg, std::ostream* log = nullptr) {
  PreparedData p;
  std::vector<FixRecord> records;
  if (!cfg.synth.empty()) {
    records = synth::generate(synth::SynthConfig::from_key_values(KeyValues::load(cfg.synth)));
  } else {
    std::vector<InputSpec> files;
    if (!cfg.input_manifest.empty()) files = read_input_sidecar(cfg.input_manifest);
    for (const auto& i : cfg.inputs) files.push_back({i, std::nullopt, std::nullopt});
    IngestOptions opt;
    opt.study_id = cfg.study_id;
    opt.species = cfg.species_label;
    opt.utc_offset_seconds = cfg.utc_offset_seconds;
    auto ing = ingest_files(files, opt);
    if (log) *log << "ingest: " << ing.records.size() << " fixes, " << ing.rejected << " rejected rows\n";
    p.rejections = std::move(ing.rejection_text);
    records = std::move(ing.records);
  }
  const auto rs = resample_all(records, cfg.resolution);
  if (log)
    *log << "resample: " << rs.tracks << " tracks, " << rs.days.size() << " days kept, " << rs.dropped_days
         << " dropped, " << rs.diag.interpolated << " slots interpolated\n";
  if (rs.days.empty()) throw Error("no day passes the coverage threshold");
  p.days = featurize_all(rs.days, cfg.schema);
  const auto keys = day_keys(p.days);

  if (!cfg.manifest.empty()) {
    std::ifstream in(cfg.manifest);
    if (!in) throw SchemaError("cannot open manifest '" + cfg.manifest + "'");
    p.manifest = read_manifest(in);
  } else {
    SplitOptions so;
    so.holdout = cfg.holdout;
    so.val_fraction = cfg.val_fraction;
    so.test_fraction = cfg.test_fraction;
    so.seed = cfg.seed;
    so.allow_within_study_test = cfg.allow_within_study_test;
    p.manifest = make_manifest(keys, so);
  }
  p.audit = audit_leakage(p.manifest, keys);
  if (log)
    *log << "split: train=" << p.manifest.count(SplitRole::train) << " val=" << p.manifest.count(SplitRole::val)
         << " test=" << p.manifest.count(SplitRole::test) << " audit=" << (p.audit.passed ? "pass" : "fail") << '\n';
  if (!p.audit.passed) return p;
  if (cfg.standardize) p.norm = standardize_by_manifest(p.days, p.manifest.lookup());
  return p;
}

inline RunResult run_all(const RunConfig& cfg, std::ostream* log = nullptr) {
  RunResult result;
  PreparedData data = prepare(cfg, log);
  result.audit = data.audit;
  result.days = data.days.size();
  const std::string config_text = cfg.to_key_values().to_string();
  const std::string manifest_text = detail::render([&](std::ostream& o) { write_manifest(o, data.manifest); });
  const std::string audit_text = detail::render([&](std::ostream& o) { data.audit.write(o); });
  fs::create_directories(cfg.out);
  if (!data.audit.passed) {
    detail::write_file(fs::path(cfg.out) / "audit.txt", audit_text);
    throw LeakageError("leakage audit failed with " + std::to_string(data.audit.violations.size()) +
                       " violation(s); see " + (fs::path(cfg.out) / "audit.txt").string());
  }

  std::vector<std::string> targets = cfg.targets;
  if (targets.empty()) {
    std::set<std::string> all;
    for (const auto& d : data.days) all.insert(d.species);
    targets.assign(all.begin(), all.end());
  }
  const auto roles = data.manifest.lookup();
  for (const auto& target : targets) {
    TaskResult task;
    task.species = target;
    task.dir = fs::path(cfg.out) / task_name(target, cfg.arch, cfg.schema, cfg.resolution);
    fs::create_directories(task.dir);
    detail::write_file(task.dir / "config.txt", config_text);
    detail::write_file(task.dir / "manifest.csv", manifest_text);
    detail::write_file(task.dir / "audit.txt", audit_text);
    if (!data.rejections.empty()) detail::write_file(task.dir / "rejections.txt", data.rejections);
    detail::write_file(task.dir / "norm_stats.txt",
                       data.norm ? data.norm->to_key_values().to_string() : std::string("# standardization disabled\n"));

    const LabeledSet train = labeled(data.days, roles, SplitRole::train, target);
    const LabeledSet val = labeled(data.days, roles, SplitRole::val, target);
    const LabeledSet test = labeled(data.days, roles, SplitRole::test, target);
    if (log)
      *log << "task " << target << ": train=" << train.size() << " val=" << val.size() << " test=" << test.size()
           << '\n';

    auto model = models::make_model<float>(cfg.model);
    task.fit = fit(*model, train, val, cfg.train, [&](const EpochRecord& r) {
      if (log)
        *log << "  epoch " << r.epoch << " train_loss=" << format_fixed(r.train_loss, 5)
             << " val_loss=" << format_fixed(r.val_loss, 5) << " lr=" << format_double(r.lr) << '\n';
    });
    detail::write_file(task.dir / "history.csv",
                       detail::render([&](std::ostream& o) { write_history(o, task.fit.history); }));

    KeyValues extra;
    extra.add("task.species", target);
    extra.add("task.resolution", cfg.resolution.label());
    extra.add("task.best_epoch", std::to_string(task.fit.best_epoch));
    models::save_checkpoint((task.dir / "model.trjm").string(), *model, data.norm ? &*data.norm : nullptr, extra);

    task.report = evaluate(*model, test);
    task.report.config_fingerprint = cfg.fingerprint();
    task.report.seed = cfg.seed;
    detail::write_file(task.dir / "report.txt", detail::render([&](std::ostream& o) { write_report(o, task.report); }));
    detail::write_file(task.dir / "confusion.csv",
                       detail::render([&](std::ostream& o) { write_confusion_csv(o, task.report.overall.cm); }));
    detail::write_file(task.dir / "per_study.csv",
                       detail::render([&](std::ostream& o) { write_per_study_csv(o, task.report); }));
    if (log)
      *log << "  balanced_acc=" << format_fixed(task.report.overall.balanced_acc, 4)
           << " f1=" << format_fixed(task.report.overall.f1, 4)
           << " auc=" << (task.report.overall.auc ? format_fixed(*task.report.overall.auc, 4) : "NA") << '\n';
    result.tasks.push_back(std::move(task));
  }
  return result;
}

}  // namespace wildtraj
