#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "wildtraj/pipeline.hpp"

using namespace wildtraj;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wildtraj_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Two archetypes, two studies each; small enough for a few seconds of training.
const char* kTinySynth =
    "seed=5\n"
    "n_days=6\n"
    "archetype.slow.mean_step=5e-5\n"
    "archetype.slow.kappa=0.3\n"
    "archetype.fast.mean_step=2e-4\n"
    "archetype.fast.kappa=3\n"
    "study.s1.archetype=slow\nstudy.s1.center_lat=10\nstudy.s1.animals=3\n"
    "study.s2.archetype=slow\nstudy.s2.center_lat=-20\nstudy.s2.center_lon=30\nstudy.s2.animals=3\n"
    "study.f1.archetype=fast\nstudy.f1.center_lat=40\nstudy.f1.animals=3\n"
    "study.f2.archetype=fast\nstudy.f2.center_lat=50\nstudy.f2.center_lon=-100\nstudy.f2.animals=3\n";

std::string tiny_run_config(const fs::path& synth, const fs::path& out) {
  return "synth=" + synth.string() + "\nout=" + out.string() +
         "\nspecies=fast\nholdout=slow=s2\nholdout=fast=f2\nseed=4\n"
         "model.d_model=16\nmodel.heads=2\nmodel.ff_dim=32\nmodel.layers=1\n"
         "train.max_epochs=3\ntrain.batch=16\n";
}

RunConfig tiny(const fs::path& dir) {
  spit(dir / "tiny.synth", kTinySynth);
  return RunConfig::from_key_values(KeyValues::parse_string(tiny_run_config(dir / "tiny.synth", dir / "out")));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(WILDTRAJ_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::set<std::string> report_keys(const std::string& text) {
  std::set<std::string> keys;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') keys.insert(line.substr(0, line.find('=')));
  return keys;
}

}  // namespace

TEST(RunConfig, RejectsDerivedAndUnknownKeys) {
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse_string("synth=x\nmodel.features=5\n")), SchemaError);
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse_string("synth=x\ntrain.seed=1\n")), SchemaError);
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse_string("synth=x\nmodel.nonsense=1\n")), SchemaError);
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse_string("resolution=1h\n")), SchemaError);
  EXPECT_THROW(RunConfig::from_key_values(KeyValues::parse_string("synth=x\ninput=y.csv\n")), SchemaError);
}

TEST(RunConfig, DerivesModelShapeFromData) {
  const auto c = RunConfig::from_key_values(KeyValues::parse_string("synth=x\nresolution=30m\nfeatures=minimal\nseed=9\n"));
  EXPECT_EQ(c.model.features, 5u);
  EXPECT_EQ(c.model.steps, 48u);
  EXPECT_EQ(c.model.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(RunConfig, EffectiveConfigRoundTrips) {
  const auto c = RunConfig::from_key_values(
      KeyValues::parse_string("synth=x\narch=tcn\nholdout=a=s\ntrain.lr=1e-3\nmodel.tcn_dilations=1,2\n"));
  const auto back = RunConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values().to_string(), c.to_key_values().to_string());
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  auto other = c;
  other.train.lr = 2e-3;
  EXPECT_NE(other.fingerprint(), c.fingerprint());
}

TEST(Pipeline, RunAllWritesArtifactsAndIsDeterministic) {
  const auto dir = scratch("run_all");
  auto cfg = tiny(dir);
  const auto first = run_all(cfg);
  ASSERT_EQ(first.tasks.size(), 1u);
  const auto task = first.tasks.front().dir;
  for (const char* f : {"config.txt", "manifest.csv", "audit.txt", "norm_stats.txt", "history.csv", "model.trjm",
                        "report.txt", "confusion.csv", "per_study.csv"})
    EXPECT_TRUE(fs::exists(task / f)) << f;
  EXPECT_EQ(task.filename().string(), "fast-transformer-augmented10-1h");
  EXPECT_EQ(report_keys(slurp(task / "report.txt")),
            (std::set<std::string>{"balanced_acc", "f1", "auc", "cm", "per_study"}));

  // The held-out studies are exactly the test studies.
  const auto& per_study = first.tasks.front().report.per_study;
  std::set<std::string> studies;
  for (const auto& [s, m] : per_study) studies.insert(s);
  EXPECT_EQ(studies, (std::set<std::string>{"f2", "s2"}));

  cfg.out = (dir / "again").string();
  const auto second = run_all(cfg);
  const auto task2 = second.tasks.front().dir;
  for (const char* f : {"history.csv", "report.txt", "manifest.csv", "norm_stats.txt", "model.trjm"})
    EXPECT_EQ(slurp(task / f), slurp(task2 / f)) << f;
}

TEST(Pipeline, CheckpointReproducesReport) {
  const auto dir = scratch("checkpoint");
  const auto cfg = tiny(dir);
  const auto result = run_all(cfg);
  const auto& task = result.tasks.front();

  auto ck = models::load_checkpoint<float>((task.dir / "model.trjm").string());
  ASSERT_TRUE(ck.norm.has_value());
  auto data = prepare(cfg);
  const auto test = labeled(data.days, data.manifest.lookup(), SplitRole::test, "fast");
  auto report = evaluate(*ck.model, test);
  report.config_fingerprint = cfg.fingerprint();
  report.seed = cfg.seed;
  std::ostringstream s;
  write_report(s, report);
  EXPECT_EQ(s.str(), slurp(task.dir / "report.txt"));
}

TEST(Pipeline, ForeignManifestFailsAudit) {
  const auto dir = scratch("leak");
  auto cfg = tiny(dir);
  const auto good = run_all(cfg);
  // Move one held-out day into training.
  std::string text = slurp(good.tasks.front().dir / "manifest.csv");
  const auto pos = text.find(",test\n");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 6, ",train\n");
  spit(dir / "bad.csv", text);
  cfg.manifest = (dir / "bad.csv").string();
  cfg.out = (dir / "bad_out").string();
  EXPECT_THROW(run_all(cfg), LeakageError);
  EXPECT_TRUE(fs::exists(dir / "bad_out" / "audit.txt"));
}

TEST(Cli, StageWiseCommandsAndExitCodes) {
  const auto dir = scratch("cli");
  spit(dir / "tiny.synth", kTinySynth);
  spit(dir / "train.cfg",
       "model.d_model=16\nmodel.heads=2\nmodel.ff_dim=32\nmodel.layers=1\ntrain.max_epochs=2\ntrain.batch=16\n");
  const std::string d = dir.string();
  ASSERT_EQ(run_cli("synth --config " + d + "/tiny.synth --out " + d + "/raw.csv"), 0);
  ASSERT_EQ(run_cli("ingest --input " + d + "/raw.csv --out " + d + "/fixes.csv --rejections " + d + "/rej.txt"), 0);
  ASSERT_EQ(run_cli("resample --input " + d + "/fixes.csv --out " + d + "/days --grids"), 0);
  EXPECT_TRUE(fs::exists(dir / "days" / "grids"));
  ASSERT_EQ(run_cli("featurize --input " + d + "/days/days.csv --features minimal --out " + d + "/x.trjf"), 0);
  ASSERT_EQ(run_cli("split --feature-file " + d + "/x.trjf --holdout slow=s2 --holdout fast=f2 --out " + d +
                    "/manifest.csv --audit " + d + "/audit.txt"),
            0);
  EXPECT_NE(slurp(dir / "audit.txt").find("pass"), std::string::npos);
  ASSERT_EQ(run_cli("train --config " + d + "/train.cfg --feature-file " + d + "/x.trjf --manifest " + d +
                    "/manifest.csv --species fast --arch lstm --out " + d + "/model"),
            0);
  ASSERT_EQ(run_cli("evaluate --checkpoint " + d + "/model/model.trjm --feature-file " + d + "/x.trjf --manifest " + d +
                    "/manifest.csv --out " + d + "/eval"),
            0);
  EXPECT_EQ(report_keys(slurp(dir / "eval" / "report.txt")),
            (std::set<std::string>{"balanced_acc", "f1", "auc", "cm", "per_study"}));

  // Leakage exits 3, both in the audit and when training on the bad manifest.
  std::string text = slurp(dir / "manifest.csv");
  text.replace(text.find(",test\n"), 6, ",train\n");
  spit(dir / "bad.csv", text);
  EXPECT_EQ(run_cli("split --feature-file " + d + "/x.trjf --check " + d + "/bad.csv --audit " + d + "/bad_audit.txt"),
            3);
  EXPECT_EQ(run_cli("train --config " + d + "/train.cfg --feature-file " + d + "/x.trjf --manifest " + d +
                    "/bad.csv --species fast --out " + d + "/model2"),
            3);

  // Schema problems exit 2.
  spit(dir / "unknown.cfg", "model.bogus=1\n");
  EXPECT_EQ(run_cli("run-all --config " + d + "/unknown.cfg"), 2);
  spit(dir / "broken.csv", "timestamp,lat\n2024-01-01T00:00:00Z,1\n");
  EXPECT_EQ(run_cli("ingest --input " + d + "/broken.csv --out " + d + "/never.csv"), 2);
  EXPECT_EQ(run_cli("featurize --input " + d + "/days/days.csv --features fancy --out " + d + "/y.trjf"), 2);
}
