#include "noisytail/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"

namespace noisytail {

using ojson = nlohmann::ordered_json;

bool Dataset::has_true_labels() const {
  return !samples.empty() &&
         std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.true_label.has_value(); });
}

void Dataset::validate() const {
  if (samples.empty()) throw InvalidInput("dataset is empty");
  if (num_classes < 1) throw InvalidInput("dataset has no classes");
  std::unordered_set<std::int64_t> ids;
  for (const Sample& s : samples) {
    if (!ids.insert(s.id).second) throw InvalidInput("duplicate sample id " + std::to_string(s.id));
    if (s.observed_label >= num_classes) {
      throw InvalidInput("sample " + std::to_string(s.id) + " label out of range");
    }
    if (s.true_label && *s.true_label >= num_classes) {
      throw InvalidInput("sample " + std::to_string(s.id) + " true label out of range");
    }
    if (s.features.size() != feature_dim) {
      throw InvalidInput("sample " + std::to_string(s.id) + " has feature dim " +
                         std::to_string(s.features.size()) + ", expected " +
                         std::to_string(feature_dim));
    }
    if (!all_finite(s.features)) throw InvalidInput("sample " + std::to_string(s.id) + " non-finite");
  }
}

void LongTailSpec::validate() const {
  if (num_classes < 2) throw InvalidSpec("long-tail spec needs at least 2 classes");
  if (!(imbalance_ratio >= 1.0) || !std::isfinite(imbalance_ratio)) {
    throw InvalidSpec("imbalance ratio must be >= 1");
  }
  if (static_cast<double>(head_count) < imbalance_ratio) {
    throw InvalidSpec("head count must be >= imbalance ratio");
  }
}

void NoiseSpec::validate(std::size_t num_classes) const {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidSpec("noise rate must lie in [0, 1)");
  if (kind == NoiseKind::kSymmetric) return;
  if (flip_map.empty()) throw InvalidSpec("asymmetric noise requires a non-empty flip map");
  std::set<std::size_t> sources;
  for (auto [src, dst] : flip_map) {
    if (src >= num_classes || dst >= num_classes) {
      throw InvalidSpec("flip map references class outside [0, " + std::to_string(num_classes) + ")");
    }
    if (src == dst) throw InvalidSpec("flip map pair maps a class onto itself");
    if (!sources.insert(src).second) {
      throw InvalidSpec("flip map lists source class " + std::to_string(src) + " twice");
    }
  }
}

void MixtureSpec::validate() const {
  if (feature_dim == 0) throw InvalidSpec("feature_dim must be positive");
  if (!(class_center_scale > 0.0)) throw InvalidSpec("class_center_scale must be positive");
  if (!(within_class_stddev > 0.0)) throw InvalidSpec("within_class_stddev must be positive");
}

std::size_t NoiseMask::noisy_count() const {
  return static_cast<std::size_t>(std::count(noisy.begin(), noisy.end(), true));
}

std::vector<std::size_t> longtail_counts(const LongTailSpec& spec) {
  spec.validate();
  std::vector<std::size_t> counts(spec.num_classes);
  const double k_minus_1 = static_cast<double>(spec.num_classes - 1);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double n = static_cast<double>(spec.head_count) *
                     std::pow(spec.imbalance_ratio, -static_cast<double>(k) / k_minus_1);
    counts[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  counts.front() = spec.head_count;
  return counts;
}

std::vector<Vec> sample_class_centers(std::size_t num_classes, const MixtureSpec& mix, Rng& rng) {
  mix.validate();
  std::vector<Vec> centers;
  centers.reserve(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    Vec c(mix.feature_dim);
    for (double& v : c) v = rng.normal();
    c = normalized(c);
    for (double& v : c) v *= mix.class_center_scale;
    centers.push_back(std::move(c));
  }
  return centers;
}

Dataset sample_mixture(const std::vector<Vec>& centers, const std::vector<std::size_t>& counts,
                       const MixtureSpec& mix, Rng& rng, std::int64_t id_offset) {
  mix.validate();
  if (centers.size() != counts.size()) throw InvalidInput("one count per class centre required");
  Dataset ds;
  ds.num_classes = centers.size();
  ds.feature_dim = mix.feature_dim;
  std::int64_t next_id = id_offset;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i) {
      Sample s;
      s.id = next_id++;
      s.features.resize(mix.feature_dim);
      for (std::size_t j = 0; j < mix.feature_dim; ++j) {
        s.features[j] = centers[k][j] + mix.within_class_stddev * rng.normal();
      }
      s.observed_label = k;
      s.true_label = k;
      ds.samples.push_back(std::move(s));
    }
  }
  rng.shuffle(ds.samples);
  return ds;
}

Dataset synth_dataset(const LongTailSpec& lt, const MixtureSpec& mix, Rng& rng) {
  const auto counts = longtail_counts(lt);
  const auto centers = sample_class_centers(lt.num_classes, mix, rng);
  return sample_mixture(centers, counts, mix, rng);
}

TrainTestSplit synth_train_test(const LongTailSpec& lt, const MixtureSpec& mix,
                                std::size_t test_per_class, Rng& rng) {
  if (test_per_class == 0) throw InvalidSpec("test_per_class must be positive");
  const auto counts = longtail_counts(lt);
  const auto centers = sample_class_centers(lt.num_classes, mix, rng);
  TrainTestSplit split;
  split.train = sample_mixture(centers, counts, mix, rng);
  const auto train_n = static_cast<std::int64_t>(split.train.size());
  split.test = sample_mixture(centers, std::vector<std::size_t>(lt.num_classes, test_per_class),
                              mix, rng, train_n);
  return split;
}

namespace {

NoiseMask clean_mask(const Dataset& ds) {
  NoiseMask mask;
  for (const Sample& s : ds.samples) mask.ids.push_back(s.id);
  mask.noisy.assign(ds.size(), false);
  return mask;
}

// First `k` entries of a partial Fisher-Yates shuffle of `pool`.
std::vector<std::size_t> choose_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                    Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  }
  pool.resize(k);
  return pool;
}

std::size_t base_label(const Sample& s) { return s.true_label.value_or(s.observed_label); }

}  // namespace

NoisyDataset inject_symmetric(const Dataset& ds, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidSpec("noise rate must lie in [0, 1)");
  if (ds.num_classes < 2 && rate > 0.0) throw InvalidSpec("label noise needs at least 2 classes");
  NoisyDataset out{ds, clean_mask(ds)};
  const auto n_noisy = static_cast<std::size_t>(std::llround(rate * static_cast<double>(ds.size())));
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t idx : choose_without_replacement(std::move(all), n_noisy, rng)) {
    Sample& s = out.dataset.samples[idx];
    const std::size_t base = base_label(s);
    // Uniform over the K-1 labels other than `base`.
    std::size_t label = rng.uniform_index(ds.num_classes - 1);
    if (label >= base) ++label;
    s.observed_label = label;
    out.mask.noisy[idx] = true;
  }
  return out;
}

NoisyDataset inject_asymmetric(const Dataset& ds, double rate,
                               const std::vector<std::pair<std::size_t, std::size_t>>& flip_map,
                               Rng& rng) {
  NoiseSpec spec{NoiseKind::kAsymmetric, rate, flip_map};
  spec.validate(ds.num_classes);
  NoisyDataset out{ds, clean_mask(ds)};
  for (auto [src, dst] : flip_map) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.samples[i].observed_label == src) members.push_back(i);
    }
    const auto n_flip =
        static_cast<std::size_t>(std::llround(rate * static_cast<double>(members.size())));
    for (std::size_t idx : choose_without_replacement(std::move(members), n_flip, rng)) {
      out.dataset.samples[idx].observed_label = dst;
      out.mask.noisy[idx] = true;
    }
  }
  return out;
}

NoisyDataset inject_noise(const Dataset& ds, const NoiseSpec& spec, Rng& rng) {
  spec.validate(ds.num_classes);
  if (spec.kind == NoiseKind::kSymmetric) return inject_symmetric(ds, spec.rate, rng);
  return inject_asymmetric(ds, spec.rate, spec.flip_map, rng);
}

std::vector<std::pair<std::size_t, std::size_t>> cifar10_flip_map() {
  // airplane=0 automobile=1 bird=2 cat=3 deer=4 dog=5 frog=6 horse=7 ship=8 truck=9
  return {{9, 1}, {2, 0}, {4, 7}, {3, 5}};
}

std::vector<std::size_t> true_class_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (const Sample& s : ds.samples) {
    if (!s.true_label) throw InvalidInput("dataset has no true labels");
    ++counts[*s.true_label];
  }
  return counts;
}

// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const Sample& s : ds.samples) {
    ojson j;
    j["id"] = s.id;
    j["features"] = s.features;
    j["observed_label"] = s.observed_label;
    if (s.true_label) j["true_label"] = *s.true_label;
    out.write(j);
  }
}

namespace {

std::size_t read_label(const nlohmann::json& j, const char* key, const std::string& path,
                       std::size_t line) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ParseError(path, line, std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

Vec read_features(const nlohmann::json& v, const std::string& path, std::size_t line) {
  if (!v.is_array() || v.empty()) throw ParseError(path, line, "features must be a non-empty array");
  Vec f;
  f.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw ParseError(path, line, "features must be numbers");
    f.push_back(x.get<double>());
  }
  if (!all_finite(f)) throw ParseError(path, line, "non-finite feature");
  return f;
}

void finish_dataset(Dataset& ds, std::size_t num_classes, const std::string& path,
                    const std::vector<std::size_t>& lines) {
  std::size_t max_label = 0;
  for (const Sample& s : ds.samples) {
    max_label = std::max(max_label, s.observed_label);
    if (s.true_label) max_label = std::max(max_label, *s.true_label);
  }
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  std::unordered_set<std::int64_t> ids;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (s.observed_label >= ds.num_classes || (s.true_label && *s.true_label >= ds.num_classes)) {
      throw ParseError(path, lines[i],
                       "label out of range for " + std::to_string(ds.num_classes) + " classes");
    }
    if (!ids.insert(s.id).second) throw ParseError(path, lines[i], "duplicate id");
  }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, std::size_t num_classes) {
  Dataset ds;
  std::vector<std::size_t> lines;
  const std::string p = path.string();
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    if (!j.is_object()) throw ParseError(p, line, "expected a JSON object");
    Sample s;
    try {
      const auto& id = j.at("id");
      if (!id.is_number_integer()) throw ParseError(p, line, "id must be an integer");
      s.id = id.get<std::int64_t>();
      s.features = read_features(j.at("features"), p, line);
      s.observed_label = read_label(j, "observed_label", p, line);
      if (j.contains("true_label") && !j["true_label"].is_null()) {
        s.true_label = read_label(j, "true_label", p, line);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(p, line, e.what());
    }
    if (ds.samples.empty()) {
      ds.feature_dim = s.features.size();
    } else if (s.features.size() != ds.feature_dim) {
      throw ParseError(p, line, "feature dimension " + std::to_string(s.features.size()) +
                                    " differs from " + std::to_string(ds.feature_dim));
    }
    ds.samples.push_back(std::move(s));
    lines.push_back(line);
  });
  if (ds.samples.empty()) throw ParseError(p, 0, "no samples");
  finish_dataset(ds, num_classes, p, lines);
  return ds;
}

void save_noise_mask(const NoiseMask& mask, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (std::size_t i = 0; i < mask.ids.size(); ++i) {
    ojson j;
    j["id"] = mask.ids[i];
    j["noisy"] = static_cast<bool>(mask.noisy[i]);
    out.write(j);
  }
}

NoiseMask load_noise_mask(const std::filesystem::path& path) {
  NoiseMask mask;
  const std::string p = path.string();
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      mask.ids.push_back(j.at("id").get<std::int64_t>());
      mask.noisy.push_back(j.at("noisy").get<bool>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(p, line, e.what());
    }
  });
  return mask;
}

Dataset import_embeddings(const std::filesystem::path& features_path,
                          const std::filesystem::path& labels_path, std::size_t num_classes) {
  Dataset ds;
  std::vector<std::size_t> lines;
  const std::string fp = features_path.string();
  for_each_jsonl(features_path, [&](const nlohmann::json& j, std::size_t line) {
    Sample s;
    s.id = static_cast<std::int64_t>(ds.samples.size());
    s.features = read_features(j, fp, line);
    if (ds.samples.empty()) {
      ds.feature_dim = s.features.size();
    } else if (s.features.size() != ds.feature_dim) {
      throw ParseError(fp, line, "embedding dimension " + std::to_string(s.features.size()) +
                                     " differs from " + std::to_string(ds.feature_dim));
    }
    ds.samples.push_back(std::move(s));
    lines.push_back(line);
  });

  std::ifstream in(labels_path);
  if (!in) throw IoError("cannot open " + labels_path.string());
  std::vector<std::size_t> labels;
  std::vector<std::size_t> label_lines;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (v < 0 || text.find_first_not_of(" \t\r", pos) != std::string::npos) {
        throw std::invalid_argument("bad label");
      }
      labels.push_back(static_cast<std::size_t>(v));
      label_lines.push_back(line);
    } catch (const std::exception&) {
      throw ParseError(labels_path.string(), line, "expected a non-negative integer label");
    }
  }
  if (labels.size() != ds.size()) {
    throw ParseError(labels_path.string(), line,
                     std::to_string(labels.size()) + " labels for " + std::to_string(ds.size()) +
                         " embedding rows");
  }
  if (ds.samples.empty()) throw ParseError(fp, 0, "no embeddings");
  for (std::size_t i = 0; i < labels.size(); ++i) ds.samples[i].observed_label = labels[i];
  finish_dataset(ds, num_classes, labels_path.string(), label_lines);
  return ds;
}

}  // namespace noisytail
