#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "noisytail/errors.hpp"
#include "noisytail/pipeline.hpp"
#include "test_util.hpp"

using namespace noisytail;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config(std::uint64_t seed = 3) {
  PipelineConfig cfg;
  cfg.long_tail = {4, 60, 5.0};
  cfg.mixture.feature_dim = 8;
  cfg.test_per_class = 10;
  cfg.stage1.epochs = 2;
  cfg.stage1.batch_size = 16;
  cfg.stage1.queue_capacity = 32;
  cfg.stage1.hidden_dim = 16;
  cfg.stage1.feature_dim = 8;
  cfg.stage1.embed_dim = 8;
  cfg.stage2.epochs = 2;
  cfg.stage2.batch_size = 32;
  cfg.seed = seed;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json manifest_without_time(const fs::path& p) {
  nlohmann::json j = nlohmann::json::parse(slurp(p));
  j.erase("wall_time_s");
  return j;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Config, JsonRoundTrip) {
  PipelineConfig cfg = tiny_config();
  cfg.stage1.stop_gradient = StopGradient::kQuery;
  cfg.thresholds.scaling = ThresholdScaling::kAbsolute;
  cfg.output_dir = "runs/x";
  const PipelineConfig back = pipeline_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(cfg).dump());
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"sed": 1})")), InvalidSpec);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"stage1": {"tua": 1}})")), InvalidSpec);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"seed": -1})")), InvalidSpec);
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse("[1]")), InvalidSpec);
  PipelineConfig cfg;
  cfg.stage1.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidSpec);
}

TEST(Config, LoadErrors) {
  testutil::TempDir dir("cfg");
  EXPECT_THROW(load_pipeline_config(dir.path() / "absent.json"), IoError);
  write_file(dir.path() / "bad.json", "{ not json");
  EXPECT_THROW(load_pipeline_config(dir.path() / "bad.json"), InvalidSpec);
  write_file(dir.path() / "ok.json", R"({"seed": 9, "stage1": {"c": 2.0}})");
  const PipelineConfig cfg = load_pipeline_config(dir.path() / "ok.json");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.stage1.c, 2.0);
  EXPECT_EQ(cfg.stage1.alpha, 0.2);
}

TEST(Config, HashIgnoresOutputDirOnly) {
  PipelineConfig a = tiny_config(), b = tiny_config();
  a.output_dir = "one";
  b.output_dir = "two";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.stage1.c = 5.0;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, DerivedSeedsDependOnGlobalSeed) {
  const PipelineConfig a = with_derived_seeds(tiny_config(1)), b = with_derived_seeds(tiny_config(2));
  EXPECT_NE(a.stage1.seed, b.stage1.seed);
  EXPECT_NE(a.stage1.seed, a.stage2.seed);
  EXPECT_EQ(with_derived_seeds(a).stage1.seed, a.stage1.seed);
}

TEST(Pipeline, MissingUpstreamNamesProducer) {
  testutil::TempDir dir("up");
  try {
    cmd_stage1(tiny_config(), dir.path());
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("'simulate'"), std::string::npos);
  }
  cmd_simulate(tiny_config(), dir.path());
  try {
    cmd_stage2(tiny_config(), dir.path(), true);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("'stage1'"), std::string::npos);
  }
}

TEST(Pipeline, RerunIsByteIdentical) {
  testutil::TempDir a("run_a"), b("run_b");
  cmd_pipeline(tiny_config(), a.path());
  cmd_pipeline(tiny_config(), b.path());
  for (const char* f : {files::kTrain, files::kTest, files::kNoiseMask, files::kClassCounts,
                        files::kStage1Checkpoint, files::kStage1Predictions, files::kRefurbished,
                        files::kEnsemble, files::kEnsembleNoRelabel, files::kBaseline, files::kEvalJson,
                        files::kEvalCsv, files::kAblation}) {
    ASSERT_TRUE(fs::exists(a.path() / f)) << f;
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
  }
  for (const char* m : {"simulate", "stage1", "refurbish", "stage2", "evaluate", "pipeline"}) {
    const std::string name = std::string(m) + "_manifest.json";
    EXPECT_EQ(manifest_without_time(a.path() / name), manifest_without_time(b.path() / name)) << name;
  }
}

TEST(Pipeline, SeedChangesOutputs) {
  testutil::TempDir a("s1"), b("s2");
  cmd_simulate(tiny_config(1), a.path());
  cmd_simulate(tiny_config(2), b.path());
  EXPECT_NE(slurp(a.path() / files::kTrain), slurp(b.path() / files::kTrain));
}

TEST(Pipeline, NoRelabelVariantIsReported) {
  testutil::TempDir dir("nr");
  const PipelineConfig cfg = tiny_config();
  cmd_simulate(cfg, dir.path());
  cmd_stage1(cfg, dir.path());
  const CommandResult r = cmd_stage2(cfg, dir.path(), true);
  EXPECT_EQ(r.manifest["metrics"]["variant"], kVariantNoRelabel);
  EXPECT_TRUE(fs::exists(dir.path() / files::kEnsembleNoRelabel));
  EXPECT_FALSE(fs::exists(dir.path() / files::kEnsemble));
  // Evaluate scores whichever variant is present.
  cmd_evaluate(cfg, dir.path());
  EXPECT_TRUE(fs::exists(dir.path() / files::kEvalJsonNoRelabel));
  EXPECT_FALSE(fs::exists(dir.path() / files::kEvalJson));
}

TEST(Pipeline, AblationReadBack) {
  testutil::TempDir dir("abl");
  cmd_pipeline(tiny_config(), dir.path());
  const AblationSummary s = read_ablation(dir.path());
  EXPECT_EQ(s.full.variant, kVariantFull);
  EXPECT_EQ(s.no_relabel.variant, kVariantNoRelabel);
  for (double v : {s.stage1_train_accuracy, s.observed_label_accuracy, s.full.overall_accuracy,
                   s.no_relabel.overall_accuracy, s.baseline_accuracy}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(RarityCurve, FileContents) {
  testutil::TempDir dir("rc");
  cmd_rarity_curve(0.2, dir.path());
  std::ifstream in(dir.path() / files::kRarityCsv);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    rows.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  ASSERT_EQ(rows.size(), 101u);
  EXPECT_EQ(rows[0].second, 1.0);
  EXPECT_NEAR(rows[20].first, 0.2, 1e-12);
  EXPECT_NEAR(rows[20].second, std::exp(-1.0), 1e-12);
  EXPECT_NEAR(rows[100].second, 1.3887943864964021e-11, 1e-20);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(rows[i].second, rows[i - 1].second);
  EXPECT_NE(slurp(dir.path() / files::kRaritySvg).find("<svg"), std::string::npos);
  EXPECT_THROW(cmd_rarity_curve(0.0, dir.path()), InvalidSpec);
}

TEST(Sweep, SpecValidation) {
  EXPECT_THROW((SweepSpec{"beta", {1.0}}.validate()), InvalidSpec);
  EXPECT_THROW((SweepSpec{"c", {}}.validate()), InvalidSpec);
  EXPECT_THROW((SweepSpec{"c", {-1.0}}.validate()), InvalidSpec);
  EXPECT_THROW((SweepSpec{"alpha", {1.2}}.validate()), InvalidSpec);
  EXPECT_THROW((SweepSpec{"tau", {0.0}}.validate()), InvalidSpec);
  EXPECT_NO_THROW((SweepSpec{"sigma", {0.1, 0.5}}.validate()));
}

TEST(Sweep, SinglePointMatchesPlainRun) {
  testutil::TempDir sweep_dir("sw1"), plain_dir("pl1");
  PipelineConfig cfg = tiny_config();
  cmd_sweep(cfg, {"c", {cfg.stage1.c}}, sweep_dir.path());
  cmd_pipeline(cfg, plain_dir.path());
  const auto rows = read_sweep_csv(sweep_dir.path() / "sweep_c.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].config_hash, config_hash(with_derived_seeds(cfg)));
  EXPECT_NEAR(rows[0].accuracy, read_ablation(plain_dir.path()).full.overall_accuracy, 1e-6);
  EXPECT_EQ(slurp(sweep_dir.path() / "runs" / rows[0].config_hash / files::kEnsemble),
            slurp(plain_dir.path() / files::kEnsemble));
}

TEST(Sweep, GridRowsSortedByValue) {
  testutil::TempDir dir("sw4");
  cmd_sweep(tiny_config(), {"c", {6.0, 0.0, 2.0, 1.0}}, dir.path(), true);
  const auto rows = read_sweep_csv(dir.path() / "sweep_c.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].value, 0.0);
  EXPECT_EQ(rows[3].value, 6.0);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_NE(rows[i].config_hash, rows[i - 1].config_hash);
  EXPECT_TRUE(fs::exists(dir.path() / "sweep_c.svg"));
}

#ifdef NOISYTAIL_CLI
namespace {

int run_cli(const std::string& args) {
  const int status = std::system((std::string(NOISYTAIL_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  testutil::TempDir dir("cli");
  const std::string out = (dir.path() / "run").string();
  const fs::path cfg = dir.path() / "cfg.json";
  write_file(cfg, to_json(tiny_config()).dump());
  const fs::path bad_key = dir.path() / "bad_key.json";
  write_file(bad_key, R"({"stage9": {}})");
  const fs::path bad_value = dir.path() / "bad_value.json";
  write_file(bad_value, R"({"stage1": {"tau": -1}})");

  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("simulate"), 2);
  EXPECT_EQ(run_cli("simulate --config " + bad_key.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("simulate --config " + bad_value.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("simulate --config " + (dir.path() / "absent.json").string() + " --out " + out), 3);
  EXPECT_EQ(run_cli("stage1 --config " + cfg.string() + " --out " + out), 3);
  EXPECT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + out + " --seed 5"), 0);
  EXPECT_EQ(run_cli("stage1 --config " + cfg.string() + " --out " + out + " --seed 5"), 0);
  EXPECT_EQ(run_cli("stage2 --no-relabel --config " + cfg.string() + " --out " + out + " --seed 5"), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / files::kEnsembleNoRelabel));
  EXPECT_EQ(run_cli("rarity-curve --out " + out + " --sigma 0.3"), 0);
  EXPECT_EQ(run_cli("rarity-curve --out " + out + " --sigma -1"), 2);
  EXPECT_EQ(run_cli("sweep --config " + cfg.string() + " --out " + out + " --param beta --values 1"), 2);
}
#endif
