#pragma once

// Stage 2: three linear expert heads over a frozen copy of the stage-1
// encoder, trained on soft labels with shot-adaptive losses, fused into a
// single prediction and evaluated per many/medium/few-shot subgroup.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisytail/datagen.hpp"
#include "noisytail/numerics.hpp"
#include "noisytail/refurbish.hpp"
#include "noisytail/stage1.hpp"

namespace noisytail {

// n_k = sum_i softlabel_i[k]
struct SoftClassStats {
  Vec counts;
  double total() const;
};

SoftClassStats soft_class_counts(std::span<const SoftLabel> labels);

// Expert losses: soft cross entropy over softmax(logits + shift), with
// shift 0 (E1), ln n (E2) and 2 ln n (E3). Counts must be strictly positive.
LossGrad e1_loss(std::span<const double> logits, const SoftLabel& target);
LossGrad e2_loss(std::span<const double> logits, const SoftLabel& target,
                 const SoftClassStats& counts);
LossGrad e3_loss(std::span<const double> logits, const SoftLabel& target,
                 const SoftClassStats& counts);

// Count floor applied before taking logs during training.
inline constexpr double kSoftCountFloor = 1e-3;

enum class Fusion { kProbabilityMean, kLogitMean };
std::string to_string(Fusion f);
Fusion fusion_from_string(const std::string& name);

inline constexpr std::size_t kNumExperts = 3;
inline constexpr std::array<const char*, kNumExperts> kExpertNames = {"E1", "E2", "E3"};

struct EnsembleModel {
  Mlp backbone;
  std::array<Mlp, kNumExperts> experts;
  Fusion fusion = Fusion::kProbabilityMean;

  std::size_t num_classes() const { return experts[0].output_dim(); }
};

struct Stage2Config {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  Fusion fusion = Fusion::kProbabilityMean;

  void validate() const;
};

struct Stage2EpochLog {
  std::size_t epoch = 0;
  std::array<double, kNumExperts> expert_loss{};
};

struct Stage2Result {
  EnsembleModel model;
  SoftClassStats counts;
  std::vector<Stage2EpochLog> log;
};

// `soft_labels` aligned with `ds`. The backbone is copied and never updated.
Stage2Result train_stage2(const Dataset& ds, std::span<const SoftLabel> soft_labels,
                          const Mlp& backbone, const Stage2Config& cfg);

Prediction expert_predict(const EnsembleModel& model, std::size_t expert,
                          std::span<const double> features);
// Probability-mean fusion returns logits = log(mean probs).
Prediction ensemble_predict(const EnsembleModel& model, std::span<const double> features);

// ---------------------------------------------------------------------------
// Evaluation

enum class ThresholdScaling {
  kAbsolute,   // thresholds used as given
  kHeadRatio,  // multiplied by n_1 / 5000
  kLogRange,   // placed at the same log-count fractions as 100 and 20 within [5, 500]
};
std::string to_string(ThresholdScaling s);
ThresholdScaling threshold_scaling_from_string(const std::string& name);

struct SubgroupThresholds {
  double many_min = 100.0;  // many-shot: count > many_min
  double few_max = 20.0;    // few-shot: count < few_max
  ThresholdScaling scaling = ThresholdScaling::kLogRange;

  void validate() const;
};

// Thresholds after scaling to the given training class counts.
struct EffectiveThresholds {
  double many_min = 0.0;
  double few_max = 0.0;
  std::string note;
};
EffectiveThresholds resolve_thresholds(const SubgroupThresholds& t, std::span<const double> counts);

enum class Subgroup { kMany = 0, kMedium = 1, kFew = 2 };
inline constexpr std::array<const char*, 3> kSubgroupNames = {"many", "medium", "few"};

Subgroup subgroup_of(double count, const EffectiveThresholds& t);

struct GroupAccuracy {
  std::string model;
  // NaN where a subgroup has no test samples.
  std::array<double, 3> subgroup{};
  double all = 0.0;
};

struct EvalReport {
  std::string variant;
  EffectiveThresholds thresholds;
  std::vector<Subgroup> class_subgroups;
  std::array<std::size_t, 3> subgroup_test_samples{};
  double overall_accuracy = 0.0;  // ensemble
  std::vector<GroupAccuracy> rows;  // E1, E2, E3, Ensemble, plus extras
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted], ensemble

  const GroupAccuracy& row(const std::string& name) const;
};

// Per-subgroup accuracy of arbitrary predictions on `test`.
GroupAccuracy accuracy_by_subgroup(const std::string& name, const std::vector<Prediction>& preds,
                                   const Dataset& test, const std::vector<Subgroup>& class_subgroups);

EvalReport evaluate(const EnsembleModel& model, const Dataset& test, const ClassStats& train_counts,
                    const SubgroupThresholds& thresholds);

nlohmann::ordered_json eval_report_to_json(const EvalReport& report);
// Columns: model,many,medium,few,all (percent, two decimals).
std::string eval_report_csv(const EvalReport& report);

// ---------------------------------------------------------------------------
// Persistence

std::string backbone_hash(const Mlp& backbone);

void save_ensemble_checkpoint(const EnsembleModel& model, bool relabel,
                              const std::filesystem::path& path);
struct EnsembleCheckpoint {
  EnsembleModel model;
  bool relabel = true;
};
// Verifies the stored backbone hash against `backbone`.
EnsembleCheckpoint load_ensemble_checkpoint(const std::filesystem::path& path, const Mlp& backbone);

}  // namespace noisytail
