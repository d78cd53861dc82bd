#include "noisytail/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "noisytail/config_json.hpp"
#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"

namespace noisytail {

namespace {

void check_target(std::span<const double> logits, std::span<const double> target) {
  if (logits.size() != target.size()) {
    throw InvalidInput("target length " + std::to_string(target.size()) + " vs " +
                       std::to_string(logits.size()) + " classes");
  }
  std::size_t ones = 0;
  for (double t : target) {
    if (t == 1.0) {
      ++ones;
    } else if (t != 0.0) {
      throw InvalidInput("target is not one-hot");
    }
  }
  if (ones != 1) throw InvalidInput("target is not one-hot");
}

// -sum_k t_k log p_k with 0 log 0 = 0.
double target_cross_entropy(std::span<const double> probs, std::span<const double> target) {
  double loss = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (target[k] != 0.0) loss -= target[k] * std::log(probs[k]);
  }
  return loss;
}

// d/dz_j of sum_k a_k p_k, with p = softmax(z): p_j (a_j - sum_k a_k p_k).
void add_linear_prob_grad(std::span<const double> probs, std::span<const double> a, double scale,
                          Vec& grad) {
  double mean = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) mean += a[k] * probs[k];
  for (std::size_t j = 0; j < probs.size(); ++j) grad[j] += scale * probs[j] * (a[j] - mean);
}

}  // namespace

Vec one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) throw InvalidInput("label out of range for one-hot");
  Vec v(num_classes, 0.0);
  v[label] = 1.0;
  return v;
}

LossGrad cross_entropy(std::span<const double> logits, std::span<const double> target) {
  check_target(logits, target);
  const Vec logp = log_softmax(logits);
  LossGrad out;
  out.grad.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (target[k] != 0.0) out.loss -= target[k] * logp[k];
    out.grad[k] = std::exp(logp[k]) - target[k];
  }
  return out;
}

double sce_loss_from_probs(std::span<const double> probs, std::span<const double> target,
                           double log_zero_clamp) {
  check_target(probs, target);
  double loss = target_cross_entropy(probs, target);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double log_t = target[k] > 0.0 ? std::log(target[k]) : log_zero_clamp;
    loss -= log_t * probs[k];
  }
  return loss;
}

LossGrad sce_loss(std::span<const double> logits, std::span<const double> target,
                  double log_zero_clamp) {
  LossGrad out = cross_entropy(logits, target);
  const Vec probs = softmax(logits);
  Vec log_t(target.size());
  for (std::size_t k = 0; k < target.size(); ++k) {
    log_t[k] = target[k] > 0.0 ? std::log(target[k]) : log_zero_clamp;
    out.loss -= log_t[k] * probs[k];
  }
  add_linear_prob_grad(probs, log_t, -1.0, out.grad);
  return out;
}

double banc_loss_from_probs(std::span<const double> probs, std::span<const double> target, double c) {
  check_target(probs, target);
  if (!(c >= 0.0)) throw InvalidInput("BANC scaling coefficient must be >= 0");
  double loss = target_cross_entropy(probs, target);
  for (std::size_t k = 0; k < probs.size(); ++k) loss += c * (1.0 - target[k]) * probs[k];
  return loss;
}

LossGrad banc_loss(std::span<const double> logits, std::span<const double> target, double c) {
  if (!(c >= 0.0)) throw InvalidInput("BANC scaling coefficient must be >= 0");
  LossGrad out = cross_entropy(logits, target);
  const Vec probs = softmax(logits);
  Vec off(target.size());
  for (std::size_t k = 0; k < target.size(); ++k) {
    off[k] = 1.0 - target[k];
    out.loss += c * off[k] * probs[k];
  }
  add_linear_prob_grad(probs, off, c, out.grad);
  return out;
}

double stage1_loss(double contrastive, double classifier, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
  return (1.0 - alpha) * contrastive + alpha * classifier;
}

namespace {

// Loss plus softmax weights of each denominator term. weights[j] is zero for
// the skipped entry; pos_weight is zero unless the positive is in the
// denominator.
struct ContrastiveTerms {
  double loss = 0.0;
  double pos_weight = 0.0;
  Vec weights;
};

ContrastiveTerms contrastive_terms(std::span<const double> query, std::span<const double> key,
                                   std::span<const Vec> negatives, double tau,
                                   ContrastiveDenominator denominator,
                                   std::optional<std::size_t> skip) {
  if (!(tau > 0.0)) throw InvalidInput("temperature must be positive");
  if (query.size() != key.size()) throw InvalidInput("query and key dims differ");
  const std::size_t active = negatives.size() - (skip && *skip < negatives.size() ? 1 : 0);
  if (active == 0) throw InvalidInput("contrastive loss needs at least one negative");

  const double pos = dot(query, key) / tau;
  ContrastiveTerms t;
  t.weights.assign(negatives.size(), 0.0);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    if (skip && j == *skip) continue;
    if (negatives[j].size() != query.size()) throw InvalidInput("negative dim differs from query");
    t.weights[j] = dot(query, negatives[j]) / tau;
    m = std::max(m, t.weights[j]);
  }
  const bool with_pos = denominator == ContrastiveDenominator::kIncludePositive;
  if (with_pos) m = std::max(m, pos);
  double z = with_pos ? std::exp(pos - m) : 0.0;
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    if (!(skip && j == *skip)) z += std::exp(t.weights[j] - m);
  }
  const double lse = m + std::log(z);
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    t.weights[j] = (skip && j == *skip) ? 0.0 : std::exp(t.weights[j] - lse);
  }
  t.pos_weight = with_pos ? std::exp(pos - lse) : 0.0;
  t.loss = lse - pos;
  if (!std::isfinite(t.loss)) throw NumericError("non-finite contrastive loss");
  return t;
}

}  // namespace

ContrastiveResult contrastive_loss(std::span<const double> query, std::span<const double> key,
                                   std::span<const Vec> negatives, double tau,
                                   ContrastiveDenominator denominator,
                                   std::optional<std::size_t> skip) {
  const ContrastiveTerms t = contrastive_terms(query, key, negatives, tau, denominator, skip);
  ContrastiveResult out;
  out.loss = t.loss;
  out.grad_query.resize(query.size());
  for (std::size_t d = 0; d < query.size(); ++d) {
    double g = (t.pos_weight - 1.0) * key[d];
    for (std::size_t j = 0; j < negatives.size(); ++j) g += t.weights[j] * negatives[j][d];
    out.grad_query[d] = g / tau;
  }
  out.grad_key.resize(query.size());
  for (std::size_t d = 0; d < query.size(); ++d) out.grad_key[d] = (t.pos_weight - 1.0) * query[d] / tau;
  out.grad_negatives.resize(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    Vec g(query.size());
    for (std::size_t d = 0; d < query.size(); ++d) g[d] = t.weights[j] * query[d] / tau;
    out.grad_negatives[j] = std::move(g);
  }
  return out;
}

// ---------------------------------------------------------------------------

FeatureQueue::FeatureQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidSpec("queue capacity must be positive");
}

void FeatureQueue::push(Vec embedding) {
  if (std::abs(l2_norm(embedding) - 1.0) > 1e-9) throw InvalidInput("queue entries must be unit-norm");
  if (!entries_.empty() && entries_.front().size() != embedding.size()) {
    throw InvalidInput("queue entry dim differs");
  }
  entries_.push_back(std::move(embedding));
  if (entries_.size() > capacity_) entries_.pop_front();
}

std::string to_string(StopGradient s) { return s == StopGradient::kQuery ? "query" : "key"; }

StopGradient stop_gradient_from_string(const std::string& name) {
  if (name == "query") return StopGradient::kQuery;
  if (name == "key") return StopGradient::kKey;
  throw InvalidSpec("unknown stop-gradient branch '" + name + "' (expected query or key)");
}

std::string to_string(ClassifierLoss loss) {
  switch (loss) {
    case ClassifierLoss::kBanc:
      return "banc";
    case ClassifierLoss::kCrossEntropy:
      return "ce";
    case ClassifierLoss::kSce:
      return "sce";
  }
  return "banc";
}

ClassifierLoss classifier_loss_from_string(const std::string& name) {
  if (name == "banc") return ClassifierLoss::kBanc;
  if (name == "ce") return ClassifierLoss::kCrossEntropy;
  if (name == "sce") return ClassifierLoss::kSce;
  throw InvalidSpec("unknown classifier loss '" + name + "' (expected banc, ce or sce)");
}

void Stage1Config::validate() const {
  if (!(tau > 0.0)) throw InvalidSpec("stage1.tau must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidSpec("stage1.alpha must lie in [0, 1]");
  if (!(c >= 0.0)) throw InvalidSpec("stage1.c must be >= 0");
  if (queue_capacity == 0) throw InvalidSpec("stage1.queue_capacity must be positive");
  if (embed_dim == 0 || hidden_dim == 0 || feature_dim == 0) {
    throw InvalidSpec("stage1 layer dims must be positive");
  }
  if (batch_size == 0) throw InvalidSpec("stage1.batch_size must be positive");
  if (!(lr > 0.0)) throw InvalidSpec("stage1.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidSpec("stage1.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidSpec("stage1.weight_decay must be >= 0");
  if (!(aug_noise_stddev >= 0.0)) throw InvalidSpec("stage1.aug_noise_stddev must be >= 0");
  if (!(aug_dropout_prob >= 0.0 && aug_dropout_prob <= 1.0)) {
    throw InvalidSpec("stage1.aug_dropout_prob must lie in [0, 1]");
  }
}

Prediction Prediction::from_logits(Vec logits) {
  Prediction p;
  p.probs = softmax(logits);
  p.predicted_class = argmax(logits);
  p.logits = std::move(logits);
  return p;
}

Stage1Model init_stage1_model(std::size_t input_dim, std::size_t num_classes,
                              const Stage1Config& cfg, Rng& rng) {
  return {
      Mlp({input_dim, cfg.hidden_dim, cfg.feature_dim}, Activation::kTanh, rng),
      Mlp({cfg.feature_dim, cfg.feature_dim, cfg.embed_dim}, Activation::kTanh, rng),
      Mlp({cfg.feature_dim, num_classes}, Activation::kTanh, rng),
  };
}

Vec augment(std::span<const double> features, const Stage1Config& cfg, Rng& rng) {
  Vec out(features.begin(), features.end());
  for (double& v : out) {
    if (cfg.aug_noise_stddev > 0.0) v += cfg.aug_noise_stddev * rng.normal();
    if (cfg.aug_dropout_prob > 0.0 && rng.bernoulli(cfg.aug_dropout_prob)) v = 0.0;
  }
  return out;
}

Prediction predict(const Stage1Model& model, std::span<const double> features) {
  return Prediction::from_logits(mlp_forward(model.classifier, mlp_forward(model.encoder, features)));
}

std::vector<Prediction> predict_all(const Stage1Model& model, const Dataset& ds) {
  std::vector<Prediction> out;
  out.reserve(ds.size());
  for (const Sample& s : ds.samples) out.push_back(predict(model, s.features));
  return out;
}

double prediction_accuracy(const std::vector<Prediction>& preds, const Dataset& ds, bool use_true) {
  if (preds.size() != ds.size()) throw InvalidInput("prediction count differs from dataset size");
  if (ds.size() == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (use_true && !s.true_label) throw InvalidInput("dataset has no true labels");
    const std::size_t label = use_true ? *s.true_label : s.observed_label;
    if (preds[i].predicted_class == label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

namespace {

LossGrad classifier_objective(std::span<const double> logits, std::size_t label,
                              const Stage1Config& cfg) {
  const Vec target = one_hot(label, logits.size());
  switch (cfg.classifier_loss) {
    case ClassifierLoss::kBanc:
      return banc_loss(logits, target, cfg.c);
    case ClassifierLoss::kCrossEntropy:
      return cross_entropy(logits, target);
    case ClassifierLoss::kSce:
      return sce_loss(logits, target, cfg.sce_log_zero_clamp);
  }
  return cross_entropy(logits, target);
}

}  // namespace

Stage1Gradients stage1_batch_gradients(const Stage1Model& model, const Stage1Batch& batch,
                                       const FeatureQueue& queue, const Stage1Config& cfg) {
  const std::size_t b = batch.query_views.size();
  if (b == 0 || batch.key_views.size() != b || batch.labels.size() != b) {
    throw InvalidInput("inconsistent stage-1 batch");
  }
  Stage1Gradients out{MlpGrad::zeros_like(model.encoder), MlpGrad::zeros_like(model.projection),
                      MlpGrad::zeros_like(model.classifier), 0.0, 0.0, {}};

  const bool grad_query = cfg.stop_gradient == StopGradient::kKey;

  // Both branches run forward with caches; only the branch carrying the
  // gradient is backpropagated.
  std::vector<MlpCache> q_enc(b), q_proj(b), k_enc(b), k_proj(b);
  std::vector<Vec> q_raw(b), k_raw(b), queries(b), query_features(b);
  out.keys.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    query_features[i] = mlp_forward(model.encoder, batch.query_views[i], q_enc[i]);
    q_raw[i] = mlp_forward(model.projection, query_features[i], q_proj[i]);
    queries[i] = normalized(q_raw[i]);
    const Vec h = mlp_forward(model.encoder, batch.key_views[i], k_enc[i]);
    k_raw[i] = mlp_forward(model.projection, h, k_proj[i]);
    out.keys[i] = normalized(k_raw[i]);
  }

  // Negatives: queue entries followed by this batch's keys.
  std::vector<Vec> negatives(queue.entries().begin(), queue.entries().end());
  const std::size_t q = negatives.size();
  negatives.insert(negatives.end(), out.keys.begin(), out.keys.end());

  const double inv_b = 1.0 / static_cast<double>(b);
  const double w_con = (1.0 - cfg.alpha) * inv_b;
  std::vector<Vec> key_grads(b, Vec(cfg.embed_dim, 0.0));
  std::vector<Vec> query_grads(b, Vec(cfg.embed_dim, 0.0));
  std::size_t con_terms = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (negatives.size() < 2 && q == 0) break;  // a lone sample has no negatives
    const ContrastiveTerms t =
        contrastive_terms(queries[i], out.keys[i], negatives, cfg.tau, cfg.denominator, q + i);
    out.contrastive_loss += t.loss;
    ++con_terms;
    const Vec& zq = queries[i];
    if (grad_query) {
      Vec& g = query_grads[i];
      for (std::size_t d = 0; d < cfg.embed_dim; ++d) g[d] += (t.pos_weight - 1.0) * out.keys[i][d];
      for (std::size_t j = 0; j < negatives.size(); ++j) {
        if (t.weights[j] == 0.0) continue;
        for (std::size_t d = 0; d < cfg.embed_dim; ++d) g[d] += t.weights[j] * negatives[j][d];
      }
      for (double& v : g) v /= cfg.tau;
    } else {
      for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
        key_grads[i][d] += (t.pos_weight - 1.0) * zq[d] / cfg.tau;
      }
      for (std::size_t j = 0; j < b; ++j) {
        const double w = t.weights[q + j] / cfg.tau;
        for (std::size_t d = 0; d < cfg.embed_dim; ++d) key_grads[j][d] += w * zq[d];
      }
    }
  }
  if (con_terms > 0) out.contrastive_loss /= static_cast<double>(con_terms);

  if (w_con > 0.0 && con_terms > 0) {
    std::vector<MlpCache>& enc = grad_query ? q_enc : k_enc;
    std::vector<MlpCache>& proj = grad_query ? q_proj : k_proj;
    const std::vector<Vec>& raw = grad_query ? q_raw : k_raw;
    const std::vector<Vec>& grads = grad_query ? query_grads : key_grads;
    for (std::size_t i = 0; i < b; ++i) {
      Vec gz = normalized_backward(raw[i], grads[i]);
      for (double& v : gz) v *= w_con;
      mlp_backward(model.projection, proj[i], gz, out.projection);
      mlp_backward(model.encoder, enc[i], out.projection.input, out.encoder);
    }
  }

  // Classifier on detached query-branch features.
  const double w_cls = cfg.alpha * inv_b;
  for (std::size_t i = 0; i < b; ++i) {
    MlpCache cache;
    const Vec logits = mlp_forward(model.classifier, query_features[i], cache);
    LossGrad lg = classifier_objective(logits, batch.labels[i], cfg);
    out.classifier_loss += lg.loss * inv_b;
    if (w_cls > 0.0) {
      for (double& v : lg.grad) v *= w_cls;
      mlp_backward(model.classifier, cache, lg.grad, out.classifier);
    }
  }
  if (!std::isfinite(out.contrastive_loss) || !std::isfinite(out.classifier_loss)) {
    throw NumericError("non-finite stage-1 loss");
  }
  return out;
}

namespace {

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

}  // namespace

Stage1Result train_stage1(const Dataset& ds, const Stage1Config& cfg) {
  cfg.validate();
  ds.validate();
  if (cfg.batch_size > ds.size()) {
    throw InvalidSpec("stage1.batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds dataset size " + std::to_string(ds.size()));
  }
  Rng init_rng(derive_seed(cfg.seed, "stage1/init"));
  Rng rng(derive_seed(cfg.seed, "stage1/train"));
  Stage1Result result;
  result.model = init_stage1_model(ds.feature_dim, ds.num_classes, cfg, init_rng);
  Stage1Model& model = result.model;

  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
  Sgd enc_opt(model.encoder, sgd), proj_opt(model.projection, sgd), cls_opt(model.classifier, sgd);
  FeatureQueue queue(cfg.queue_capacity);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = steps_per_epoch(ds.size(), cfg.batch_size);
  const std::size_t total_steps = per_epoch * cfg.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    Stage1EpochLog log{epoch + 1, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Stage1Batch batch;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = ds.samples[order[k]];
        batch.query_views.push_back(augment(s.features, cfg, rng));
        batch.key_views.push_back(augment(s.features, cfg, rng));
        batch.labels.push_back(s.observed_label);
      }
      Stage1Gradients g = stage1_batch_gradients(model, batch, queue, cfg);
      const double lr = cosine_lr(cfg.lr, step++, total_steps);
      enc_opt.step(model.encoder, g.encoder, lr);
      proj_opt.step(model.projection, g.projection, lr);
      cls_opt.step(model.classifier, g.classifier, lr);
      for (Vec& k : g.keys) queue.push(std::move(k));
      log.contrastive_loss += g.contrastive_loss;
      log.classifier_loss += g.classifier_loss;
    }
    log.contrastive_loss /= static_cast<double>(per_epoch);
    log.classifier_loss /= static_cast<double>(per_epoch);
    log.total_loss = stage1_loss(log.contrastive_loss, log.classifier_loss, cfg.alpha);
    result.log.push_back(log);
  }
  result.predictions = predict_all(model, ds);
  return result;
}

Stage1Result train_supervised_baseline(const Dataset& ds, const Stage1Config& cfg) {
  cfg.validate();
  ds.validate();
  if (cfg.batch_size > ds.size()) throw InvalidSpec("batch_size exceeds dataset size");
  Rng init_rng(derive_seed(cfg.seed, "baseline/init"));
  Rng rng(derive_seed(cfg.seed, "baseline/train"));
  Stage1Result result;
  result.model = init_stage1_model(ds.feature_dim, ds.num_classes, cfg, init_rng);
  Stage1Model& model = result.model;
  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
  Sgd enc_opt(model.encoder, sgd), cls_opt(model.classifier, sgd);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = steps_per_epoch(ds.size(), cfg.batch_size);
  const std::size_t total_steps = per_epoch * cfg.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    Stage1EpochLog log{epoch + 1, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      MlpGrad genc = MlpGrad::zeros_like(model.encoder);
      MlpGrad gcls = MlpGrad::zeros_like(model.classifier);
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = ds.samples[order[k]];
        MlpCache ec, cc;
        const Vec h = mlp_forward(model.encoder, s.features, ec);
        const Vec logits = mlp_forward(model.classifier, h, cc);
        LossGrad lg = cross_entropy(logits, one_hot(s.observed_label, ds.num_classes));
        log.classifier_loss += lg.loss * inv_b;
        for (double& v : lg.grad) v *= inv_b;
        mlp_backward(model.classifier, cc, lg.grad, gcls);
        mlp_backward(model.encoder, ec, gcls.input, genc);
      }
      const double lr = cosine_lr(cfg.lr, step++, total_steps);
      enc_opt.step(model.encoder, genc, lr);
      cls_opt.step(model.classifier, gcls, lr);
    }
    log.classifier_loss /= static_cast<double>(per_epoch);
    log.total_loss = log.classifier_loss;
    if (!std::isfinite(log.total_loss)) throw NumericError("non-finite baseline loss");
    result.log.push_back(log);
  }
  result.predictions = predict_all(model, ds);
  return result;
}

// ---------------------------------------------------------------------------

void save_stage1_checkpoint(const Stage1Model& model, const Stage1Config& cfg,
                            const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["encoder"] = mlp_to_json(model.encoder);
  j["projection"] = mlp_to_json(model.projection);
  j["classifier"] = mlp_to_json(model.classifier);
  j["config"] = to_json(cfg);
  write_json(path, j);
}

Stage1Checkpoint load_stage1_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  try {
    Stage1Checkpoint ck;
    ck.model.encoder = mlp_from_json(j.at("encoder"));
    ck.model.projection = mlp_from_json(j.at("projection"));
    ck.model.classifier = mlp_from_json(j.at("classifier"));
    ck.config = stage1_config_from_json(j.at("config"));
    if (ck.model.classifier.input_dim() != ck.model.encoder.output_dim() ||
        ck.model.projection.input_dim() != ck.model.encoder.output_dim()) {
      throw InvalidSpec("checkpoint heads do not match encoder output dim");
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  } catch (const InvalidSpec& e) {
    throw ParseError(path.string(), 1, e.what());
  }
}

void save_predictions(const std::vector<Prediction>& preds, const Dataset& ds,
                      const std::filesystem::path& path) {
  if (preds.size() != ds.size()) throw InvalidInput("prediction count differs from dataset size");
  JsonlWriter out(path);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = ds.samples[i].id;
    j["logits"] = preds[i].logits;
    j["probs"] = preds[i].probs;
    j["predicted_class"] = preds[i].predicted_class;
    out.write(j);
  }
}

std::vector<IdPrediction> load_predictions(const std::filesystem::path& path) {
  std::vector<IdPrediction> out;
  const std::string p = path.string();
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      IdPrediction ip;
      ip.id = j.at("id").get<std::int64_t>();
      ip.prediction.logits = j.at("logits").get<Vec>();
      ip.prediction.probs = j.at("probs").get<Vec>();
      ip.prediction.predicted_class = j.at("predicted_class").get<std::size_t>();
      const std::size_t k = ip.prediction.logits.size();
      if (k == 0 || ip.prediction.probs.size() != k || ip.prediction.predicted_class >= k) {
        throw ParseError(p, line, "inconsistent prediction lengths");
      }
      out.push_back(std::move(ip));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(p, line, e.what());
    }
  });
  return out;
}

}  // namespace noisytail
