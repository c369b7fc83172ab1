// Command-line front-end: stage-wise subcommands plus run-all.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "wildtraj/pipeline.hpp"

namespace fs = std::filesystem;
using namespace wildtraj;

namespace {

struct Common {
  std::string config;
  std::string resolution;
  std::string features;
  std::string arch;
  std::vector<std::string> species;
  std::vector<std::string> holdout;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool no_standardize = false;
  bool allow_within_study_test = false;
};

void add_common(CLI::App* cmd, Common& c, bool full) {
  cmd->add_option("--config", c.config, "key=value configuration file");
  cmd->add_option("--seed", c.seed, "random seed");
  if (!full) return;
  cmd->add_option("--resolution", c.resolution, "grid resolution: 1h or 30m");
  cmd->add_option("--features", c.features, "feature set: minimal or augmented");
  cmd->add_option("--arch", c.arch, "transformer, lstm, cnn1d or tcn");
  cmd->add_option("--species", c.species, "target species (repeatable; default all)");
  cmd->add_option("--holdout", c.holdout, "SPECIES=STUDY held out for testing (repeatable)");
  cmd->add_flag("--no-standardize", c.no_standardize, "skip z-scoring of movement features");
  cmd->add_flag("--allow-within-study-test", c.allow_within_study_test,
                "split single-study species at animal level inside the study");
}

// Config file values, overridden by flags.
KeyValues merged(const Common& c) {
  KeyValues kv = c.config.empty() ? KeyValues{} : KeyValues::load(c.config);
  if (!c.resolution.empty()) kv.set("resolution", c.resolution);
  if (!c.features.empty()) kv.set("features", c.features);
  if (!c.arch.empty()) kv.set("arch", c.arch);
  if (!c.species.empty()) {
    kv.erase("species");
    for (const auto& s : c.species) kv.add("species", s);
  }
  for (const auto& h : c.holdout) kv.add("holdout", h);
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  if (!c.out.empty()) kv.set("out", c.out);
  if (c.no_standardize) kv.set("standardize", "false");
  if (c.allow_within_study_test) kv.set("allow_within_study_test", "true");
  return kv;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

template <class F>
void write_with(const fs::path& p, F&& f) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  f(out);
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

FeatureSet load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open feature file '" + path + "'");
  return read_feature_file(in);
}

SplitManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open manifest '" + path + "'");
  return read_manifest(in);
}

std::vector<FixRecord> load_fixes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return parse_fixes(in).records;
}

void require_audit(const SplitManifest& m, const std::vector<FeatureTensor>& days) {
  const auto audit = audit_leakage(m, day_keys(days));
  if (!audit.passed) {
    audit.write(std::cerr);
    throw LeakageError("manifest fails the leakage audit");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Species classification from daily GPS trajectories"};
  app.require_subcommand(1);

  // ingest
  std::vector<std::string> ing_inputs;
  std::string ing_sidecar, ing_out = "fixes.csv", ing_rejections, ing_study, ing_species, ing_tz;
  auto* ingest = app.add_subcommand("ingest", "Parse telemetry CSV files into a cleaned fix table");
  ingest->add_option("--input", ing_inputs, "input CSV (repeatable)");
  ingest->add_option("--input-manifest", ing_sidecar, "CSV path,study_id,species assigning labels per file");
  ingest->add_option("--study", ing_study, "study id for files without a study column");
  ingest->add_option("--species-label", ing_species, "species for files without a species column");
  ingest->add_option("--tz-offset", ing_tz, "UTC offset (+HH:MM) for timestamps without a zone");
  ingest->add_option("--out", ing_out, "output fixes CSV");
  ingest->add_option("--rejections", ing_rejections, "rejection report path (default stderr)");

  // resample
  std::string rs_input, rs_resolution = "1h", rs_out = "resampled";
  bool rs_grids = false;
  auto* resample = app.add_subcommand("resample", "Grid, gap-fill and cut fixes into daily sequences");
  resample->add_option("--input", rs_input, "fixes CSV")->required();
  resample->add_option("--resolution", rs_resolution, "1h or 30m");
  resample->add_option("--out", rs_out, "output directory (days.csv, grids/)");
  resample->add_flag("--grids", rs_grids, "also write one grid file per animal");

  // featurize
  std::string ft_input, ft_features = "augmented", ft_out = "features.trjf";
  auto* featurize = app.add_subcommand("featurize", "Assemble feature tensors from daily sequences");
  featurize->add_option("--input", ft_input, "days.csv from resample")->required();
  featurize->add_option("--features", ft_features, "minimal or augmented");
  featurize->add_option("--out", ft_out, "output feature file");

  // split
  Common sp_common;
  std::string sp_features, sp_out = "manifest.csv", sp_audit, sp_check;
  double sp_val = -1;
  auto* split_cmd = app.add_subcommand("split", "Build and audit a study-holdout manifest");
  add_common(split_cmd, sp_common, false);
  split_cmd->add_option("--feature-file", sp_features, "feature file from featurize")->required();
  split_cmd->add_option("--holdout", sp_common.holdout, "SPECIES=STUDY (repeatable)");
  split_cmd->add_flag("--allow-within-study-test", sp_common.allow_within_study_test, "within-study fallback");
  split_cmd->add_option("--val-fraction", sp_val, "validation share by animal-day count");
  split_cmd->add_option("--out", sp_out, "manifest CSV");
  split_cmd->add_option("--audit", sp_audit, "audit report path (default stdout)");
  split_cmd->add_option("--check", sp_check, "audit an existing manifest instead of building one");

  // train
  Common tr_common;
  std::string tr_features, tr_manifest, tr_out = "model";
  auto* train_cmd = app.add_subcommand("train", "Train a one-vs-rest classifier");
  add_common(train_cmd, tr_common, true);
  train_cmd->add_option("--feature-file", tr_features, "feature file from featurize")->required();
  train_cmd->add_option("--manifest", tr_manifest, "manifest CSV")->required();
  train_cmd->add_option("--out", tr_out, "output directory");

  // evaluate
  std::string ev_checkpoint, ev_features, ev_manifest, ev_species, ev_out = "eval";
  std::uint64_t ev_seed = 0;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  evaluate_cmd->add_option("--checkpoint", ev_checkpoint, "model.trjm")->required();
  evaluate_cmd->add_option("--feature-file", ev_features, "feature file from featurize")->required();
  evaluate_cmd->add_option("--manifest", ev_manifest, "manifest CSV")->required();
  evaluate_cmd->add_option("--species", ev_species, "target species (default: stored in checkpoint)");
  evaluate_cmd->add_option("--seed", ev_seed, "seed recorded in the report");
  evaluate_cmd->add_option("--out", ev_out, "output directory");

  // synth
  std::string sy_config, sy_out = "synthetic.csv";
  std::optional<std::uint64_t> sy_seed;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic archetype trajectories");
  synth_cmd->add_option("--config", sy_config, "synthetic archetype config")->required();
  synth_cmd->add_option("--seed", sy_seed, "override the config seed");
  synth_cmd->add_option("--out", sy_out, "output CSV in ingest layout");

  // run-all
  Common ra;
  auto* run_all_cmd = app.add_subcommand("run-all", "Full pipeline, one directory per one-vs-rest task");
  add_common(run_all_cmd, ra, true);
  run_all_cmd->add_option("--out", ra.out, "experiment root directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      std::vector<InputSpec> files;
      if (!ing_sidecar.empty()) files = read_input_sidecar(ing_sidecar);
      for (const auto& i : ing_inputs) files.push_back({i, std::nullopt, std::nullopt});
      if (files.empty()) throw SchemaError("ingest: no input files");
      IngestOptions opt;
      if (!ing_study.empty()) opt.study_id = ing_study;
      if (!ing_species.empty()) opt.species = ing_species;
      if (!ing_tz.empty()) {
        auto off = parse_utc_offset(ing_tz);
        if (!off) throw SchemaError("bad --tz-offset '" + ing_tz + "'");
        opt.utc_offset_seconds = *off;
      }
      auto r = ingest_files(files, opt);
      if (ing_rejections.empty()) std::cerr << r.rejection_text;
      else write_text(ing_rejections, r.rejection_text);
      write_with(ing_out, [&](std::ostream& o) { write_fixes_csv(o, build_tracks(r.records)); });
      std::cerr << "ingest: " << r.rows << " rows, " << r.records.size() << " fixes, " << r.rejected << " rejected\n";
    } else if (*resample) {
      const auto res = Resolution::parse(rs_resolution);
      const auto records = load_fixes(rs_input);
      ResampleSummary summary;
      fs::create_directories(rs_out);
      for (const auto& track : build_tracks(records)) {
        const auto grid = fill_single_gaps(build_grid(track, res), &summary.diag);
        if (rs_grids) {
          std::string name = track.study_id + "__" + track.animal_id;
          for (char& ch : name)
            if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
          write_with(fs::path(rs_out) / "grids" / (name + ".csv"), [&](std::ostream& o) { write_grid_csv(o, grid); });
        }
        auto seg = segment_days(grid);
        ++summary.tracks;
        summary.dropped_days += seg.dropped;
        summary.days.insert(summary.days.end(), seg.days.begin(), seg.days.end());
      }
      write_with(fs::path(rs_out) / "days.csv", [&](std::ostream& o) { write_days_csv(o, summary.days, res); });
      std::cerr << "resample: " << summary.tracks << " tracks, " << summary.days.size() << " days kept, "
                << summary.dropped_days << " dropped, " << summary.diag.interpolated << " interpolated\n";
    } else if (*featurize) {
      std::ifstream in(ft_input);
      if (!in) throw SchemaError("cannot open '" + ft_input + "'");
      Resolution res = Resolution::hourly();
      const auto days = read_days_csv(in, &res);
      FeatureSet set;
      set.resolution = res;
      set.schema = parse_schema(ft_features);
      set.steps = res.slots_per_day();
      set.days = featurize_all(days, set.schema);
      write_with(ft_out, [&](std::ostream& o) { write_feature_file(o, set); });
      std::cerr << "featurize: " << set.days.size() << " days, F=" << feature_count(set.schema) << '\n';
    } else if (*split_cmd) {
      const auto set = load_features(sp_features);
      const auto keys = day_keys(set.days);
      SplitManifest m;
      if (!sp_check.empty()) {
        m = load_manifest(sp_check);
      } else {
        const auto cfg = RunConfig::from_key_values(merged(sp_common), false);
        SplitOptions so;
        so.holdout = cfg.holdout;
        so.val_fraction = sp_val > 0 ? sp_val : cfg.val_fraction;
        so.test_fraction = cfg.test_fraction;
        so.seed = cfg.seed;
        so.allow_within_study_test = cfg.allow_within_study_test;
        m = make_manifest(keys, so);
        write_with(sp_out, [&](std::ostream& o) { write_manifest(o, m); });
      }
      const auto audit = audit_leakage(m, keys);
      if (sp_audit.empty()) audit.write(std::cout);
      else write_with(sp_audit, [&](std::ostream& o) { audit.write(o); });
      if (!audit.passed) return static_cast<int>(ExitCode::leakage);
    } else if (*train_cmd) {
      tr_common.out = "";
      auto set = load_features(tr_features);
      // Schema and resolution default to the feature file's own.
      KeyValues kv = merged(tr_common);
      if (!kv.get("features")) kv.set("features", set.schema == FeatureSchema::minimal5 ? "minimal" : "augmented");
      if (!kv.get("resolution")) kv.set("resolution", set.resolution.label());
      const auto cfg = RunConfig::from_key_values(kv, false);
      if (set.schema != cfg.schema) throw SchemaError("feature file schema differs from --features / config");
      if (set.resolution != cfg.resolution) throw SchemaError("feature file resolution differs from config");
      if (cfg.targets.size() != 1) throw SchemaError("train: exactly one --species is required");
      const auto manifest = load_manifest(tr_manifest);
      require_audit(manifest, set.days);
      const auto roles = manifest.lookup();
      std::optional<NormStats> norm;
      if (cfg.standardize) norm = standardize_by_manifest(set.days, roles);
      const auto& target = cfg.targets.front();
      const auto tr = labeled(set.days, roles, SplitRole::train, target);
      const auto va = labeled(set.days, roles, SplitRole::val, target);
      auto model = models::make_model<float>(cfg.model);
      const auto result = fit(*model, tr, va, cfg.train, [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " train_loss=" << format_fixed(r.train_loss, 5)
                  << " val_loss=" << format_fixed(r.val_loss, 5) << " lr=" << format_double(r.lr) << '\n';
      });
      fs::create_directories(tr_out);
      write_text(fs::path(tr_out) / "config.txt", cfg.to_key_values().to_string());
      write_with(fs::path(tr_out) / "history.csv", [&](std::ostream& o) { write_history(o, result.history); });
      write_text(fs::path(tr_out) / "norm_stats.txt",
                 norm ? norm->to_key_values().to_string() : std::string("# standardization disabled\n"));
      KeyValues extra;
      extra.add("task.species", target);
      extra.add("task.resolution", cfg.resolution.label());
      extra.add("task.best_epoch", std::to_string(result.best_epoch));
      extra.add("task.config_fingerprint", std::to_string(cfg.fingerprint()));
      models::save_checkpoint((fs::path(tr_out) / "model.trjm").string(), *model, norm ? &*norm : nullptr, extra);
      std::cerr << "train: best epoch " << result.best_epoch << " val_loss=" << format_fixed(result.best_val_loss, 5)
                << '\n';
    } else if (*evaluate_cmd) {
      auto ck = models::load_checkpoint<float>(ev_checkpoint);
      auto set = load_features(ev_features);
      if (feature_count(set.schema) != ck.model->config().features) throw SchemaError("feature width differs from checkpoint");
      const auto manifest = load_manifest(ev_manifest);
      require_audit(manifest, set.days);
      if (ck.norm)
        for (auto& d : set.days) apply_norm_stats(d, *ck.norm);
      std::string target = ev_species.empty() ? ck.metadata.get_or("task.species", "") : ev_species;
      if (target.empty()) throw SchemaError("evaluate: no target species given or stored in checkpoint");
      const auto test = labeled(set.days, manifest.lookup(), SplitRole::test, target);
      auto report = evaluate(*ck.model, test);
      report.seed = ev_seed;
      if (auto fp = ck.metadata.get("task.config_fingerprint"))
        report.config_fingerprint = static_cast<std::uint64_t>(std::stoull(*fp));
      fs::create_directories(ev_out);
      write_with(fs::path(ev_out) / "report.txt", [&](std::ostream& o) { write_report(o, report); });
      write_with(fs::path(ev_out) / "confusion.csv",
                 [&](std::ostream& o) { write_confusion_csv(o, report.overall.cm); });
      write_with(fs::path(ev_out) / "per_study.csv", [&](std::ostream& o) { write_per_study_csv(o, report); });
      write_report(std::cout, report);
    } else if (*synth_cmd) {
      KeyValues kv = KeyValues::load(sy_config);
      if (sy_seed) kv.set("seed", std::to_string(*sy_seed));
      const auto records = synth::generate(synth::SynthConfig::from_key_values(kv));
      write_with(sy_out, [&](std::ostream& o) { write_fixes_csv(o, records); });
      std::cerr << "synth: " << records.size() << " fixes\n";
    } else if (*run_all_cmd) {
      const auto cfg = RunConfig::from_key_values(merged(ra));
      const auto result = run_all(cfg, &std::cerr);
      for (const auto& t : result.tasks) std::cout << t.dir.string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::failure);
  }
  return 0;
}
