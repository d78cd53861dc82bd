#pragma once

// File-based orchestration behind the command line tool. Every command reads
// its inputs from and writes its outputs to one run directory, and leaves a
// `<command>_manifest.json` describing what it did.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisytail/datagen.hpp"
#include "noisytail/ensemble.hpp"
#include "noisytail/refurbish.hpp"
#include "noisytail/stage1.hpp"

namespace noisytail {

struct PipelineConfig {
  LongTailSpec long_tail;
  MixtureSpec mixture;
  NoiseSpec noise;
  Stage1Config stage1;
  RefurbishConfig refurbish;
  Stage2Config stage2;
  SubgroupThresholds thresholds;
  std::size_t test_per_class = 100;
  std::string output_dir;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& cfg);
// Strict: unknown keys raise InvalidSpec. Missing keys keep defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
// Missing file -> IoError, malformed JSON or invalid values -> InvalidSpec.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Overwrites the nested stage seeds with values derived from `cfg.seed`.
PipelineConfig with_derived_seeds(PipelineConfig cfg);

// Hash of the configuration with the output directory left out.
std::string config_hash(const PipelineConfig& cfg);

// Standard file names inside a run directory.
namespace files {
inline constexpr const char* kTrain = "train.jsonl";
inline constexpr const char* kTest = "test.jsonl";
inline constexpr const char* kNoiseMask = "noise_mask.jsonl";
inline constexpr const char* kClassCounts = "class_counts.csv";
inline constexpr const char* kStage1Checkpoint = "stage1_checkpoint.json";
inline constexpr const char* kStage1Predictions = "stage1_predictions.jsonl";
inline constexpr const char* kStage1Log = "stage1_log.csv";
inline constexpr const char* kRefurbished = "refurbished.jsonl";
inline constexpr const char* kEnsemble = "ensemble_checkpoint.json";
inline constexpr const char* kEnsembleNoRelabel = "ensemble_checkpoint_no_relabel.json";
inline constexpr const char* kStage2Log = "stage2_log.csv";
inline constexpr const char* kStage2LogNoRelabel = "stage2_log_no_relabel.csv";
inline constexpr const char* kBaseline = "baseline_checkpoint.json";
inline constexpr const char* kEvalJson = "eval_report.json";
inline constexpr const char* kEvalCsv = "eval_report.csv";
inline constexpr const char* kEvalJsonNoRelabel = "eval_report_no_relabel.json";
inline constexpr const char* kEvalCsvNoRelabel = "eval_report_no_relabel.csv";
inline constexpr const char* kAblation = "ablation.csv";
inline constexpr const char* kRarityCsv = "rarity_curve.csv";
inline constexpr const char* kRaritySvg = "rarity_curve.svg";
}  // namespace files

inline constexpr const char* kVariantFull = "full";
inline constexpr const char* kVariantNoRelabel = "w/o re-label";

// What a command did: a human-readable summary plus the manifest contents.
struct CommandResult {
  std::string summary;
  nlohmann::ordered_json manifest;
};

CommandResult cmd_simulate(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_stage1(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_refurbish(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_stage2(const PipelineConfig& cfg, const std::filesystem::path& out,
                         bool no_relabel);
// Plain cross-entropy reference trained end to end on the observed labels.
CommandResult cmd_baseline(const PipelineConfig& cfg, const std::filesystem::path& out);
// Evaluates every ensemble checkpoint present in `out` on the test split.
CommandResult cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& out);
// simulate, stage1, refurbish, stage2 (both variants), baseline, evaluate.
CommandResult cmd_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out);

// Headline numbers of a finished pipeline run, read back from its files.
struct AblationSummary {
  double stage1_train_accuracy = 0.0;  // vs true labels
  double observed_label_accuracy = 0.0;
  EvalReport full;
  EvalReport no_relabel;
  double baseline_accuracy = 0.0;  // balanced test split
};
AblationSummary read_ablation(const std::filesystem::path& out);

struct SweepSpec {
  std::string parameter;  // c, alpha, sigma or tau
  std::vector<double> values;

  void validate() const;
};

struct SweepRow {
  double value = 0.0;
  double accuracy = 0.0;
  std::string config_hash;
};

// Runs the full pipeline per grid value under `out/runs/<config hash>`.
// Writes sweep_<parameter>.csv sorted by value and, when `svg` is set, a line
// chart next to it.
CommandResult cmd_sweep(const PipelineConfig& cfg, const SweepSpec& sweep,
                        const std::filesystem::path& out, bool svg = false);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

// 101 rows of (h, exp(-h^2 / sigma^2)) for h = 0, 0.01, ..., 1, plus an SVG.
CommandResult cmd_rarity_curve(double sigma, const std::filesystem::path& out);

// Minimal SVG polyline chart.
std::string svg_line_chart(const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::string& x_label, const std::string& y_label);

}  // namespace noisytail
