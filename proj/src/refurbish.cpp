#include "noisytail/refurbish.hpp"

#include <cmath>
#include <numeric>

#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"

namespace noisytail {

ClassStats ClassStats::from_counts(Vec counts) {
  if (counts.empty()) throw InvalidInput("class stats need at least one class");
  ClassStats s;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidInput("class counts must be finite and >= 0");
  }
  s.total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (!(s.total > 0.0)) throw InvalidInput("class counts sum to zero");
  s.proportions.resize(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) s.proportions[k] = counts[k] / s.total;
  s.counts = std::move(counts);
  return s;
}

ClassStats class_proportions(const Dataset& ds) {
  if (ds.size() == 0) throw InvalidInput("class proportions of an empty dataset");
  Vec counts(ds.num_classes, 0.0);
  for (const Sample& s : ds.samples) {
    if (s.observed_label >= ds.num_classes) throw InvalidInput("label out of range");
    counts[s.observed_label] += 1.0;
  }
  return ClassStats::from_counts(std::move(counts));
}

void RefurbishConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidSpec("refurbish.sigma must be positive");
}

double rarity(double h, double sigma) {
  if (!(h >= 0.0 && h <= 1.0)) throw InvalidInput("class proportion must lie in [0, 1]");
  if (!(sigma > 0.0)) throw InvalidInput("sigma must be positive");
  return std::exp(-(h * h) / (sigma * sigma));
}

namespace {

void check_probs(const Vec& probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("probabilities must be finite and >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("probabilities do not sum to 1");
}

}  // namespace

RefurbishRecord refurbish_one(const Prediction& pred, std::size_t observed, const ClassStats& stats,
                              const RefurbishConfig& cfg, std::int64_t id) {
  check_probs(pred.probs);
  const std::size_t k = pred.probs.size();
  if (observed >= k) throw InvalidInput("observed label out of range");
  if (stats.num_classes() != k) throw InvalidInput("class stats and prediction disagree on K");

  RefurbishRecord r;
  r.id = id;
  r.rho = pred.probs[observed];
  r.gamma = rarity(stats.proportions[observed], cfg.sigma);
  r.weight = r.rho * r.gamma;
  r.changed = pred.predicted_class != observed;
  if (!r.changed) {
    r.soft_label.weights = one_hot(observed, k);
    return r;
  }
  Vec s = pred.probs;
  s[observed] += r.weight;
  const double z = std::accumulate(s.begin(), s.end(), 0.0);
  for (double& v : s) v /= z;
  r.soft_label.weights = std::move(s);
  return r;
}

std::vector<SoftLabel> RefurbishResult::soft_labels() const {
  std::vector<SoftLabel> out;
  out.reserve(records.size());
  for (const RefurbishRecord& r : records) out.push_back(r.soft_label);
  return out;
}

RefurbishResult refurbish_dataset(const Dataset& ds, const std::vector<IdPrediction>& preds,
                                  const RefurbishConfig& cfg) {
  cfg.validate();
  if (preds.size() != ds.size()) {
    throw InvalidInput(std::to_string(preds.size()) + " predictions for " +
                       std::to_string(ds.size()) + " samples");
  }
  const ClassStats stats = class_proportions(ds);
  RefurbishResult result;
  result.records.reserve(ds.size());
  double weight_sum = 0.0;
  std::size_t soft_hits = 0, observed_hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (preds[i].id != s.id) {
      throw InvalidInput("prediction id " + std::to_string(preds[i].id) + " does not match sample id " +
                         std::to_string(s.id) + " at row " + std::to_string(i));
    }
    RefurbishRecord r = refurbish_one(preds[i].prediction, s.observed_label, stats, cfg, s.id);
    if (r.changed) {
      ++result.summary.changed;
      weight_sum += r.weight;
    }
    if (s.true_label) {
      if (argmax(r.soft_label.weights) == *s.true_label) ++soft_hits;
      if (s.observed_label == *s.true_label) ++observed_hits;
    }
    result.records.push_back(std::move(r));
  }
  RefurbishSummary& sum = result.summary;
  sum.samples = ds.size();
  sum.fraction_changed = static_cast<double>(sum.changed) / static_cast<double>(ds.size());
  sum.mean_weight_changed = sum.changed > 0 ? weight_sum / static_cast<double>(sum.changed) : 0.0;
  if (ds.has_true_labels()) {
    sum.soft_argmax_accuracy = static_cast<double>(soft_hits) / static_cast<double>(ds.size());
    sum.observed_accuracy = static_cast<double>(observed_hits) / static_cast<double>(ds.size());
  }
  return result;
}

RefurbishResult refurbish_dataset(const Dataset& ds, const std::vector<Prediction>& preds,
                                  const RefurbishConfig& cfg) {
  if (preds.size() != ds.size()) throw InvalidInput("prediction count differs from dataset size");
  std::vector<IdPrediction> with_ids;
  with_ids.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) with_ids.push_back({ds.samples[i].id, preds[i]});
  return refurbish_dataset(ds, with_ids, cfg);
}

std::vector<SoftLabel> observed_one_hot_labels(const Dataset& ds) {
  std::vector<SoftLabel> out;
  out.reserve(ds.size());
  for (const Sample& s : ds.samples) out.push_back({one_hot(s.observed_label, ds.num_classes)});
  return out;
}

void save_refurbished(const RefurbishResult& result, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const RefurbishRecord& r : result.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["soft_label"] = r.soft_label.weights;
    j["changed"] = r.changed;
    j["rho"] = r.rho;
    j["gamma"] = r.gamma;
    j["weight"] = r.weight;
    out.write(j);
  }
}

std::vector<RefurbishRecord> load_refurbished(const std::filesystem::path& path,
                                              std::size_t num_classes) {
  std::vector<RefurbishRecord> out;
  const std::string p = path.string();
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    RefurbishRecord r;
    try {
      r.id = j.at("id").get<std::int64_t>();
      r.soft_label.weights = j.at("soft_label").get<Vec>();
      r.changed = j.at("changed").get<bool>();
      r.rho = j.at("rho").get<double>();
      r.gamma = j.at("gamma").get<double>();
      r.weight = j.at("weight").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(p, line, e.what());
    }
    if (r.soft_label.weights.size() != num_classes) {
      throw ParseError(p, line, "soft label has " + std::to_string(r.soft_label.weights.size()) +
                                    " entries, expected " + std::to_string(num_classes));
    }
    try {
      check_probs(r.soft_label.weights);
    } catch (const InvalidInput& e) {
      throw ParseError(p, line, e.what());
    }
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace noisytail
