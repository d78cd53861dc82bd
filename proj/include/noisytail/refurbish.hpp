#pragma once

// Soft-label refurbishment: samples whose pre-screening prediction disagrees
// with the observed label get a soft label blending the predicted
// distribution with the observed one-hot, weighted by confidence x rarity.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "noisytail/datagen.hpp"
#include "noisytail/numerics.hpp"
#include "noisytail/stage1.hpp"

namespace noisytail {

struct ClassStats {
  Vec counts;
  double total = 0.0;
  Vec proportions;

  static ClassStats from_counts(Vec counts);
  std::size_t num_classes() const { return counts.size(); }
};

// Hard counts of observed labels.
ClassStats class_proportions(const Dataset& ds);

struct RefurbishConfig {
  double sigma = 0.2;
  void validate() const;
};

struct SoftLabel {
  Vec weights;
  bool operator==(const SoftLabel&) const = default;
};

struct RefurbishRecord {
  std::int64_t id = 0;
  double rho = 0.0;
  double gamma = 0.0;
  double weight = 0.0;
  SoftLabel soft_label;
  bool changed = false;
};

// exp(-h^2 / sigma^2)
double rarity(double h, double sigma);

RefurbishRecord refurbish_one(const Prediction& pred, std::size_t observed, const ClassStats& stats,
                              const RefurbishConfig& cfg, std::int64_t id = 0);

struct RefurbishSummary {
  std::size_t samples = 0;
  std::size_t changed = 0;
  double fraction_changed = 0.0;
  double mean_weight_changed = 0.0;
  // Simulation only: agreement of argmax(soft label) / observed label with the
  // true label.
  std::optional<double> soft_argmax_accuracy;
  std::optional<double> observed_accuracy;
};

struct RefurbishResult {
  std::vector<RefurbishRecord> records;
  RefurbishSummary summary;

  std::vector<SoftLabel> soft_labels() const;
};

RefurbishResult refurbish_dataset(const Dataset& ds, const std::vector<IdPrediction>& preds,
                                  const RefurbishConfig& cfg);
// Predictions in dataset order.
RefurbishResult refurbish_dataset(const Dataset& ds, const std::vector<Prediction>& preds,
                                  const RefurbishConfig& cfg);

// One-hot observed labels, for training without refurbishment.
std::vector<SoftLabel> observed_one_hot_labels(const Dataset& ds);

void save_refurbished(const RefurbishResult& result, const std::filesystem::path& path);
// Records in file order; `num_classes` is checked against each soft label.
std::vector<RefurbishRecord> load_refurbished(const std::filesystem::path& path,
                                              std::size_t num_classes);

}  // namespace noisytail
