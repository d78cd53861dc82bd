#include "noisytail/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "noisytail/config_json.hpp"
#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"

namespace noisytail {

double SoftClassStats::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

SoftClassStats soft_class_counts(std::span<const SoftLabel> labels) {
  if (labels.empty()) throw InvalidInput("soft class counts of an empty label set");
  SoftClassStats stats;
  stats.counts.assign(labels.front().weights.size(), 0.0);
  for (const SoftLabel& l : labels) {
    if (l.weights.size() != stats.counts.size()) throw InvalidInput("soft labels disagree on K");
    for (std::size_t k = 0; k < l.weights.size(); ++k) stats.counts[k] += l.weights[k];
  }
  return stats;
}

namespace {

// -sum_k y_k log softmax(z + shift)_k; gradient p_j * sum(y) - y_j.
LossGrad shifted_soft_cross_entropy(std::span<const double> logits, const SoftLabel& target,
                                    std::span<const double> shift) {
  if (logits.size() != target.weights.size()) throw InvalidInput("logits and soft label lengths differ");
  Vec z(logits.begin(), logits.end());
  for (std::size_t k = 0; k < z.size() && !shift.empty(); ++k) z[k] += shift[k];
  const Vec logp = log_softmax(z);
  const double mass = std::accumulate(target.weights.begin(), target.weights.end(), 0.0);
  LossGrad out;
  out.grad.resize(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (target.weights[k] != 0.0) out.loss -= target.weights[k] * logp[k];
    out.grad[k] = std::exp(logp[k]) * mass - target.weights[k];
  }
  return out;
}

Vec log_counts(const SoftClassStats& counts, double power, std::size_t k) {
  if (counts.counts.size() != k) throw InvalidInput("class counts and logits lengths differ");
  Vec shift(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double n = counts.counts[i];
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw InvalidInput("degenerate class count " + std::to_string(n) + " for class " +
                         std::to_string(i));
    }
    shift[i] = power * std::log(n);
  }
  return shift;
}

// ln(max(n_k, floor)) * power
Vec floored_log_counts(const SoftClassStats& counts, double power) {
  Vec shift(counts.counts.size());
  for (std::size_t i = 0; i < shift.size(); ++i) {
    shift[i] = power * std::log(std::max(counts.counts[i], kSoftCountFloor));
  }
  return shift;
}

}  // namespace

LossGrad e1_loss(std::span<const double> logits, const SoftLabel& target) {
  return shifted_soft_cross_entropy(logits, target, {});
}

LossGrad e2_loss(std::span<const double> logits, const SoftLabel& target,
                 const SoftClassStats& counts) {
  return shifted_soft_cross_entropy(logits, target, log_counts(counts, 1.0, logits.size()));
}

LossGrad e3_loss(std::span<const double> logits, const SoftLabel& target,
                 const SoftClassStats& counts) {
  return shifted_soft_cross_entropy(logits, target, log_counts(counts, 2.0, logits.size()));
}

std::string to_string(Fusion f) { return f == Fusion::kLogitMean ? "logit_mean" : "prob_mean"; }

Fusion fusion_from_string(const std::string& name) {
  if (name == "prob_mean") return Fusion::kProbabilityMean;
  if (name == "logit_mean") return Fusion::kLogitMean;
  throw InvalidSpec("unknown fusion '" + name + "' (expected prob_mean or logit_mean)");
}

void Stage2Config::validate() const {
  if (batch_size == 0) throw InvalidSpec("stage2.batch_size must be positive");
  if (!(lr > 0.0)) throw InvalidSpec("stage2.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidSpec("stage2.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidSpec("stage2.weight_decay must be >= 0");
}

Stage2Result train_stage2(const Dataset& ds, std::span<const SoftLabel> soft_labels,
                          const Mlp& backbone, const Stage2Config& cfg) {
  cfg.validate();
  ds.validate();
  if (soft_labels.size() != ds.size()) {
    throw InvalidInput(std::to_string(soft_labels.size()) + " soft labels for " +
                       std::to_string(ds.size()) + " samples");
  }
  if (backbone.input_dim() != ds.feature_dim) throw InvalidInput("backbone input dim differs from data");
  for (const SoftLabel& l : soft_labels) {
    if (l.weights.size() != ds.num_classes) throw InvalidInput("soft label length differs from K");
  }

  Rng init_rng(derive_seed(cfg.seed, "stage2/init"));
  Rng rng(derive_seed(cfg.seed, "stage2/train"));
  Stage2Result result;
  EnsembleModel& model = result.model;
  model.backbone = backbone;
  model.fusion = cfg.fusion;
  const std::size_t feat = backbone.output_dim();
  for (Mlp& e : model.experts) e = Mlp({feat, ds.num_classes}, Activation::kTanh, init_rng);

  result.counts = soft_class_counts(soft_labels);
  const std::array<Vec, kNumExperts> shifts = {Vec{}, floored_log_counts(result.counts, 1.0),
                                               floored_log_counts(result.counts, 2.0)};

  // Frozen backbone: features computed once.
  std::vector<Vec> features;
  features.reserve(ds.size());
  for (const Sample& s : ds.samples) features.push_back(mlp_forward(model.backbone, s.features));

  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
  std::vector<Sgd> opts;
  for (const Mlp& e : model.experts) opts.emplace_back(e, sgd);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = (ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * cfg.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    Stage2EpochLog log{epoch + 1, {}};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      const double lr = cosine_lr(cfg.lr, step++, total_steps);
      for (std::size_t e = 0; e < kNumExperts; ++e) {
        MlpGrad grad = MlpGrad::zeros_like(model.experts[e]);
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = order[k];
          MlpCache cache;
          const Vec logits = mlp_forward(model.experts[e], features[i], cache);
          LossGrad lg = shifted_soft_cross_entropy(logits, soft_labels[i], shifts[e]);
          log.expert_loss[e] += lg.loss * inv_b;
          for (double& v : lg.grad) v *= inv_b;
          mlp_backward(model.experts[e], cache, lg.grad, grad);
        }
        opts[e].step(model.experts[e], grad, lr);
      }
    }
    for (double& l : log.expert_loss) {
      l /= static_cast<double>(per_epoch);
      if (!std::isfinite(l)) throw NumericError("non-finite expert loss");
    }
    result.log.push_back(log);
  }
  return result;
}

Prediction expert_predict(const EnsembleModel& model, std::size_t expert,
                          std::span<const double> features) {
  if (expert >= kNumExperts) throw InvalidInput("expert index out of range");
  return Prediction::from_logits(mlp_forward(model.experts[expert], mlp_forward(model.backbone, features)));
}

Prediction ensemble_predict(const EnsembleModel& model, std::span<const double> features) {
  const Vec h = mlp_forward(model.backbone, features);
  const std::size_t k = model.num_classes();
  Vec acc(k, 0.0);
  for (const Mlp& e : model.experts) {
    const Vec logits = mlp_forward(e, h);
    const Vec v = model.fusion == Fusion::kLogitMean ? logits : softmax(logits);
    for (std::size_t i = 0; i < k; ++i) acc[i] += v[i] / static_cast<double>(kNumExperts);
  }
  if (model.fusion == Fusion::kLogitMean) return Prediction::from_logits(std::move(acc));
  Prediction p;
  p.predicted_class = argmax(acc);
  p.logits.resize(k);
  for (std::size_t i = 0; i < k; ++i) p.logits[i] = std::log(acc[i]);
  p.probs = std::move(acc);
  return p;
}

// ---------------------------------------------------------------------------

std::string to_string(ThresholdScaling s) {
  switch (s) {
    case ThresholdScaling::kAbsolute:
      return "absolute";
    case ThresholdScaling::kHeadRatio:
      return "head_ratio";
    case ThresholdScaling::kLogRange:
      return "log_range";
  }
  return "log_range";
}

ThresholdScaling threshold_scaling_from_string(const std::string& name) {
  if (name == "absolute") return ThresholdScaling::kAbsolute;
  if (name == "head_ratio") return ThresholdScaling::kHeadRatio;
  if (name == "log_range") return ThresholdScaling::kLogRange;
  throw InvalidSpec("unknown threshold scaling '" + name +
                    "' (expected absolute, head_ratio or log_range)");
}

void SubgroupThresholds::validate() const {
  if (!(few_max > 0.0)) throw InvalidSpec("thresholds.few_max must be positive");
  if (!(few_max <= many_min)) throw InvalidSpec("thresholds.few_max must not exceed many_min");
}

EffectiveThresholds resolve_thresholds(const SubgroupThresholds& t, std::span<const double> counts) {
  t.validate();
  if (counts.empty()) throw InvalidInput("no training class counts");
  const double head = *std::max_element(counts.begin(), counts.end());
  const double tail = *std::min_element(counts.begin(), counts.end());
  EffectiveThresholds out;
  char buf[256];
  switch (t.scaling) {
    case ThresholdScaling::kAbsolute:
      out.many_min = t.many_min;
      out.few_max = t.few_max;
      std::snprintf(buf, sizeof(buf), "absolute thresholds: many > %.6g, few < %.6g", out.many_min,
                    out.few_max);
      break;
    case ThresholdScaling::kHeadRatio: {
      const double f = head / 5000.0;
      out.many_min = t.many_min * f;
      out.few_max = t.few_max * f;
      std::snprintf(buf, sizeof(buf),
                    "thresholds scaled by n_1/5000 = %.6g: many > %.6g, few < %.6g", f, out.many_min,
                    out.few_max);
      break;
    }
    case ThresholdScaling::kLogRange: {
      // Reference long tail: head 500, tail 5 (imbalance 100).
      constexpr double kRefHead = 500.0, kRefTail = 5.0;
      const double span = std::log(kRefHead / kRefTail);
      const double f_many = std::log(kRefHead / t.many_min) / span;
      const double f_few = std::log(kRefHead / t.few_max) / span;
      const double ratio = tail > 0.0 ? head / tail : 1.0;
      out.many_min = head * std::pow(ratio, -f_many);
      out.few_max = head * std::pow(ratio, -f_few);
      std::snprintf(buf, sizeof(buf),
                    "thresholds mapped from a 500..5 reference tail onto %.6g..%.6g: many > %.6g, "
                    "few < %.6g",
                    head, tail, out.many_min, out.few_max);
      break;
    }
  }
  out.note = buf;
  return out;
}

Subgroup subgroup_of(double count, const EffectiveThresholds& t) {
  if (count > t.many_min) return Subgroup::kMany;
  if (count < t.few_max) return Subgroup::kFew;
  return Subgroup::kMedium;
}

const GroupAccuracy& EvalReport::row(const std::string& name) const {
  for (const GroupAccuracy& r : rows) {
    if (r.model == name) return r;
  }
  throw InvalidInput("no report row named " + name);
}

GroupAccuracy accuracy_by_subgroup(const std::string& name, const std::vector<Prediction>& preds,
                                   const Dataset& test, const std::vector<Subgroup>& class_subgroups) {
  if (preds.size() != test.size()) throw InvalidInput("prediction count differs from test size");
  std::array<std::size_t, 3> hit{}, total{};
  std::size_t all_hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Sample& s = test.samples[i];
    if (!s.true_label) throw InvalidInput("test sample " + std::to_string(s.id) + " has no true label");
    const std::size_t label = *s.true_label;
    if (label >= class_subgroups.size()) throw InvalidInput("test label has no training class");
    const auto g = static_cast<std::size_t>(class_subgroups[label]);
    ++total[g];
    if (preds[i].predicted_class == label) {
      ++hit[g];
      ++all_hit;
    }
  }
  GroupAccuracy acc;
  acc.model = name;
  for (std::size_t g = 0; g < 3; ++g) {
    acc.subgroup[g] = total[g] > 0 ? static_cast<double>(hit[g]) / static_cast<double>(total[g])
                                   : std::numeric_limits<double>::quiet_NaN();
  }
  acc.all = test.size() > 0 ? static_cast<double>(all_hit) / static_cast<double>(test.size()) : 0.0;
  return acc;
}

EvalReport evaluate(const EnsembleModel& model, const Dataset& test, const ClassStats& train_counts,
                    const SubgroupThresholds& thresholds) {
  if (test.size() == 0) throw InvalidInput("empty test set");
  const std::size_t k = model.num_classes();
  if (train_counts.num_classes() != k) throw InvalidInput("training counts and model disagree on K");
  for (const Sample& s : test.samples) {
    if (!s.true_label) throw InvalidInput("test sample " + std::to_string(s.id) + " has no true label");
    if (*s.true_label >= k) {
      throw InvalidInput("test class " + std::to_string(*s.true_label) + " absent from training counts");
    }
  }

  EvalReport report;
  report.thresholds = resolve_thresholds(thresholds, train_counts.counts);
  for (double c : train_counts.counts) report.class_subgroups.push_back(subgroup_of(c, report.thresholds));
  for (const Sample& s : test.samples) {
    ++report.subgroup_test_samples[static_cast<std::size_t>(report.class_subgroups[*s.true_label])];
  }

  std::array<std::vector<Prediction>, kNumExperts> expert_preds;
  std::vector<Prediction> fused;
  for (const Sample& s : test.samples) {
    for (std::size_t e = 0; e < kNumExperts; ++e) expert_preds[e].push_back(expert_predict(model, e, s.features));
    fused.push_back(ensemble_predict(model, s.features));
  }
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    report.rows.push_back(accuracy_by_subgroup(kExpertNames[e], expert_preds[e], test, report.class_subgroups));
  }
  report.rows.push_back(accuracy_by_subgroup("Ensemble", fused, test, report.class_subgroups));
  report.overall_accuracy = report.rows.back().all;
  report.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < test.size(); ++i) {
    ++report.confusion[*test.samples[i].true_label][fused[i].predicted_class];
  }
  return report;
}

namespace {

nlohmann::ordered_json nan_to_null(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

}  // namespace

nlohmann::ordered_json eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["variant"] = report.variant;
  j["thresholds"] = {{"many_min", report.thresholds.many_min},
                     {"few_max", report.thresholds.few_max},
                     {"note", report.thresholds.note}};
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (Subgroup g : report.class_subgroups) groups.push_back(kSubgroupNames[static_cast<std::size_t>(g)]);
  j["class_subgroups"] = groups;
  j["subgroup_test_samples"] = {{"many", report.subgroup_test_samples[0]},
                                {"medium", report.subgroup_test_samples[1]},
                                {"few", report.subgroup_test_samples[2]}};
  j["overall_accuracy"] = report.overall_accuracy;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const GroupAccuracy& r : report.rows) {
    rows.push_back({{"model", r.model},
                    {"many", nan_to_null(r.subgroup[0])},
                    {"medium", nan_to_null(r.subgroup[1])},
                    {"few", nan_to_null(r.subgroup[2])},
                    {"all", r.all}});
  }
  j["rows"] = rows;
  j["confusion"] = report.confusion;
  return j;
}

std::string eval_report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "# " << report.variant << "; " << report.thresholds.note << '\n';
  out << "model,many,medium,few,all\n";
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return std::string(buf);
  };
  for (const GroupAccuracy& r : report.rows) {
    out << r.model << ',' << cell(r.subgroup[0]) << ',' << cell(r.subgroup[1]) << ','
        << cell(r.subgroup[2]) << ',' << cell(r.all) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

std::string backbone_hash(const Mlp& backbone) { return hex64(fnv1a64(mlp_to_json(backbone).dump())); }

void save_ensemble_checkpoint(const EnsembleModel& model, bool relabel,
                              const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["backbone_hash"] = backbone_hash(model.backbone);
  j["fusion"] = to_string(model.fusion);
  j["relabel"] = relabel;
  nlohmann::ordered_json experts = nlohmann::ordered_json::array();
  for (const Mlp& e : model.experts) experts.push_back(mlp_to_json(e));
  j["experts"] = experts;
  write_json(path, j);
}

EnsembleCheckpoint load_ensemble_checkpoint(const std::filesystem::path& path, const Mlp& backbone) {
  const nlohmann::json j = read_json(path);
  EnsembleCheckpoint ck;
  try {
    const std::string stored = j.at("backbone_hash").get<std::string>();
    if (stored != backbone_hash(backbone)) {
      throw ParseError(path.string(), 1,
                       "backbone hash " + stored + " does not match the stage-1 encoder " +
                           backbone_hash(backbone));
    }
    ck.model.backbone = backbone;
    ck.model.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    ck.relabel = j.at("relabel").get<bool>();
    const auto& experts = j.at("experts");
    if (!experts.is_array() || experts.size() != kNumExperts) {
      throw ParseError(path.string(), 1, "expected three expert heads");
    }
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      ck.model.experts[e] = mlp_from_json(experts[e]);
      if (ck.model.experts[e].input_dim() != backbone.output_dim() ||
          ck.model.experts[e].output_dim() != ck.model.experts[0].output_dim()) {
        throw ParseError(path.string(), 1, "expert head dims inconsistent with backbone");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 1, e.what());
  } catch (const InvalidSpec& e) {
    throw ParseError(path.string(), 1, e.what());
  }
  return ck;
}

}  // namespace noisytail
