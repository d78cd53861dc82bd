#pragma once

// Long-tailed, label-noisy dataset construction and JSONL persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "noisytail/numerics.hpp"

namespace noisytail {

struct Sample {
  std::int64_t id = 0;
  Vec features;
  std::size_t observed_label = 0;
  std::optional<std::size_t> true_label;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  std::size_t size() const { return samples.size(); }
  bool has_true_labels() const;
  // Throws InvalidInput when ids repeat, labels are out of range, dims differ
  // or features are non-finite.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct LongTailSpec {
  std::size_t num_classes = 20;
  std::size_t head_count = 600;
  double imbalance_ratio = 10.0;

  void validate() const;
};

enum class NoiseKind { kSymmetric, kAsymmetric };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kSymmetric;
  double rate = 0.4;
  // Directed source -> target pairs, asymmetric noise only.
  std::vector<std::pair<std::size_t, std::size_t>> flip_map;

  void validate(std::size_t num_classes) const;
};

struct MixtureSpec {
  std::size_t feature_dim = 16;
  double class_center_scale = 1.0;
  double within_class_stddev = 0.3;

  void validate() const;
};

// true = label was altered by injection.
struct NoiseMask {
  std::vector<std::int64_t> ids;
  std::vector<bool> noisy;

  std::size_t noisy_count() const;
};

// n_k = round(n_1 * IR^{-(k-1)/(K-1)}), floored at 1.
std::vector<std::size_t> longtail_counts(const LongTailSpec& spec);

// Class centres: `class_center_scale` times a uniformly random unit direction.
std::vector<Vec> sample_class_centers(std::size_t num_classes, const MixtureSpec& mix, Rng& rng);

// Gaussian blobs around `centers` with the given per-class counts, shuffled.
// Ids are assigned 0..N-1 before shuffling plus `id_offset`.
Dataset sample_mixture(const std::vector<Vec>& centers, const std::vector<std::size_t>& counts,
                       const MixtureSpec& mix, Rng& rng, std::int64_t id_offset = 0);

Dataset synth_dataset(const LongTailSpec& lt, const MixtureSpec& mix, Rng& rng);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

// Imbalanced training split plus a balanced clean test split drawn from the
// same class centres.
TrainTestSplit synth_train_test(const LongTailSpec& lt, const MixtureSpec& mix,
                                std::size_t test_per_class, Rng& rng);

struct NoisyDataset {
  Dataset dataset;
  NoiseMask mask;
};

NoisyDataset inject_symmetric(const Dataset& ds, double rate, Rng& rng);
NoisyDataset inject_asymmetric(const Dataset& ds, double rate,
                               const std::vector<std::pair<std::size_t, std::size_t>>& flip_map,
                               Rng& rng);
NoisyDataset inject_noise(const Dataset& ds, const NoiseSpec& spec, Rng& rng);

// CIFAR-10 style pairs: truck->automobile, bird->airplane, deer->horse, cat->dog.
std::vector<std::pair<std::size_t, std::size_t>> cifar10_flip_map();

// Hard counts per class, using true labels.
std::vector<std::size_t> true_class_counts(const Dataset& ds);

// ---------------------------------------------------------------------------
// Persistence

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
// `num_classes` bounds labels; when 0 it is inferred as max label + 1.
Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes = 0);

void save_noise_mask(const NoiseMask& mask, const std::filesystem::path& path);
NoiseMask load_noise_mask(const std::filesystem::path& path);

// Features: JSONL, each line a JSON array of numbers. Labels: one integer per
// line. Ids are 0-based row indices.
Dataset import_embeddings(const std::filesystem::path& features_path,
                          const std::filesystem::path& labels_path, std::size_t num_classes = 0);

}  // namespace noisytail
