#pragma once

// Stage 1: contrastive representation learning over a shared encoder with a
// stop-gradient query branch and a feature queue, plus a pre-screening linear
// classifier trained on detached features with the balanced noise-tolerant
// cross entropy (BANC).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisytail/datagen.hpp"
#include "noisytail/numerics.hpp"

namespace noisytail {

struct LossGrad {
  double loss = 0.0;
  Vec grad;  // w.r.t. logits
};

// ---------------------------------------------------------------------------
// Classification losses. `target` must be a one-hot vector.

// -sum_k t_k log p_k
LossGrad cross_entropy(std::span<const double> logits, std::span<const double> target);

// Symmetric cross entropy: -sum t_k log p_k - sum_k A(t_k) p_k, where
// A(t) = log t for t > 0 and `log_zero_clamp` for t = 0.
double sce_loss_from_probs(std::span<const double> probs, std::span<const double> target,
                           double log_zero_clamp = -4.0);
LossGrad sce_loss(std::span<const double> logits, std::span<const double> target,
                  double log_zero_clamp = -4.0);

// BANC: -sum t_k log p_k + c * sum_k (1 - t_k) p_k.
double banc_loss_from_probs(std::span<const double> probs, std::span<const double> target, double c);
LossGrad banc_loss(std::span<const double> logits, std::span<const double> target, double c);

Vec one_hot(std::size_t label, std::size_t num_classes);

// (1 - alpha) * contrastive + alpha * classifier
double stage1_loss(double contrastive, double classifier, double alpha);

// ---------------------------------------------------------------------------
// Contrastive loss

enum class ContrastiveDenominator {
  kNegativesOnly,     // sum over A(i) only; the loss can be negative
  kIncludePositive,   // InfoNCE
};

struct ContrastiveResult {
  double loss = 0.0;
  Vec grad_query;  // informational; unused when the query branch is detached
  Vec grad_key;
  std::vector<Vec> grad_negatives;  // aligned with the negatives argument
};

// -log( exp(q.k / tau) / sum_{n in negatives} exp(q.n / tau) ).
// Gradients are reported for the key, every negative and the query; which of
// them the training loop uses depends on the detached branch. Entry `skip`,
// if set, is excluded from the negatives (its gradient slot stays zero).
ContrastiveResult contrastive_loss(std::span<const double> query, std::span<const double> key,
                                   std::span<const Vec> negatives, double tau,
                                   ContrastiveDenominator denominator =
                                       ContrastiveDenominator::kNegativesOnly,
                                   std::optional<std::size_t> skip = std::nullopt);

// ---------------------------------------------------------------------------

// FIFO ring of unit-norm embeddings, oldest first.
class FeatureQueue {
 public:
  explicit FeatureQueue(std::size_t capacity);

  // Throws InvalidInput unless `embedding` is unit-norm within 1e-9.
  void push(Vec embedding);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Vec>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<Vec> entries_;
};

enum class ClassifierLoss { kBanc, kCrossEntropy, kSce };

// Which view's embedding is treated as a constant in the contrastive term.
// kQuery: gradients reach the key and in-batch negatives only. kKey: the
// query (the anchor dotted with every negative) carries the gradient and
// keys / queue entries are constants.
enum class StopGradient { kQuery, kKey };

std::string to_string(StopGradient s);
StopGradient stop_gradient_from_string(const std::string& name);

std::string to_string(ClassifierLoss loss);
ClassifierLoss classifier_loss_from_string(const std::string& name);

struct Stage1Config {
  double tau = 0.2;
  double alpha = 0.2;
  double c = 6.0;
  std::size_t queue_capacity = 1024;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t feature_dim = 32;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double aug_noise_stddev = 0.1;
  double aug_dropout_prob = 0.1;
  std::uint64_t seed = 0;
  ClassifierLoss classifier_loss = ClassifierLoss::kBanc;
  double sce_log_zero_clamp = -4.0;
  ContrastiveDenominator denominator = ContrastiveDenominator::kNegativesOnly;
  StopGradient stop_gradient = StopGradient::kKey;

  void validate() const;
};

struct Prediction {
  Vec logits;
  Vec probs;
  std::size_t predicted_class = 0;

  static Prediction from_logits(Vec logits);
};

struct Stage1Model {
  Mlp encoder;     // input -> hidden -> feature_dim
  Mlp projection;  // feature_dim -> feature_dim -> embed_dim
  Mlp classifier;  // feature_dim -> K, linear

  std::size_t num_classes() const { return classifier.output_dim(); }
  bool operator==(const Stage1Model&) const = default;
};

Stage1Model init_stage1_model(std::size_t input_dim, std::size_t num_classes,
                              const Stage1Config& cfg, Rng& rng);

// Additive Gaussian noise followed by independent coordinate zeroing.
Vec augment(std::span<const double> features, const Stage1Config& cfg, Rng& rng);

Prediction predict(const Stage1Model& model, std::span<const double> features);

// One mini-batch worth of augmented inputs.
struct Stage1Batch {
  std::vector<Vec> query_views;
  std::vector<Vec> key_views;
  std::vector<std::size_t> labels;
};

struct Stage1Gradients {
  MlpGrad encoder;
  MlpGrad projection;
  MlpGrad classifier;
  double contrastive_loss = 0.0;  // batch mean
  double classifier_loss = 0.0;   // batch mean
  std::vector<Vec> keys;          // normalised key embeddings, to enqueue
};

// Gradients of the blended stage-1 objective for one batch. One branch is a
// constant per `cfg.stop_gradient`; the classifier sees detached query-branch
// encoder features, so only the contrastive term reaches the encoder.
Stage1Gradients stage1_batch_gradients(const Stage1Model& model, const Stage1Batch& batch,
                                       const FeatureQueue& queue, const Stage1Config& cfg);

struct Stage1EpochLog {
  std::size_t epoch = 0;
  double contrastive_loss = 0.0;
  double classifier_loss = 0.0;
  double total_loss = 0.0;
};

struct Stage1Result {
  Stage1Model model;
  std::vector<Prediction> predictions;  // dataset order
  std::vector<Stage1EpochLog> log;
};

Stage1Result train_stage1(const Dataset& ds, const Stage1Config& cfg);

// Plain supervised reference: encoder + classifier trained end to end with
// cross entropy on the observed labels, no contrastive term.
Stage1Result train_supervised_baseline(const Dataset& ds, const Stage1Config& cfg);

std::vector<Prediction> predict_all(const Stage1Model& model, const Dataset& ds);

// Fraction of samples whose predicted class equals the true (or, when
// `use_true` is false, observed) label.
double prediction_accuracy(const std::vector<Prediction>& preds, const Dataset& ds,
                           bool use_true = true);

// ---------------------------------------------------------------------------
// Persistence

void save_stage1_checkpoint(const Stage1Model& model, const Stage1Config& cfg,
                            const std::filesystem::path& path);
struct Stage1Checkpoint {
  Stage1Model model;
  Stage1Config config;
};
Stage1Checkpoint load_stage1_checkpoint(const std::filesystem::path& path);

void save_predictions(const std::vector<Prediction>& preds, const Dataset& ds,
                      const std::filesystem::path& path);
struct IdPrediction {
  std::int64_t id = 0;
  Prediction prediction;
};
std::vector<IdPrediction> load_predictions(const std::filesystem::path& path);

}  // namespace noisytail
