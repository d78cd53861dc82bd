#include "noisytail/config_json.hpp"

#include <initializer_list>
#include <string>

#include "noisytail/errors.hpp"

namespace noisytail {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

ojson mlp_to_json(const Mlp& net) {
  ojson j;
  j["dims"] = net.dims();
  j["activation"] = to_string(net.activation());
  ojson weights = ojson::array(), biases = ojson::array();
  for (const Layer& l : net.layers()) {
    weights.push_back(l.weight.data);
    biases.push_back(l.bias);
  }
  j["weights"] = weights;
  j["biases"] = biases;
  return j;
}

Mlp mlp_from_json(const json& j) {
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  const auto weights = j.at("weights").get<std::vector<Vec>>();
  const auto biases = j.at("biases").get<std::vector<Vec>>();
  if (dims.size() < 2 || weights.size() != dims.size() - 1 || biases.size() != dims.size() - 1) {
    throw InvalidSpec("MLP layer count does not match dims");
  }
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer{Matrix(dims[l + 1], dims[l]), biases[l]};
    if (weights[l].size() != dims[l] * dims[l + 1]) throw InvalidSpec("MLP weight array has wrong size");
    layer.weight.data = weights[l];
    layers.push_back(std::move(layer));
  }
  return Mlp::from_layers(std::move(layers), activation_from_string(j.at("activation").get<std::string>()));
}

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidSpec(std::string(section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidSpec("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidSpec(std::string(section) + "." + key + " has the wrong type");
  }
}

// Non-negative integers only; nlohmann happily converts -1 to size_t.
void read_count(const json& j, const char* section, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw InvalidSpec(std::string(section) + "." + key + " must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

}  // namespace

ojson to_json(const LongTailSpec& v) {
  return {{"num_classes", v.num_classes}, {"head_count", v.head_count}, {"imbalance_ratio", v.imbalance_ratio}};
}

ojson to_json(const MixtureSpec& v) {
  return {{"feature_dim", v.feature_dim},
          {"class_center_scale", v.class_center_scale},
          {"within_class_stddev", v.within_class_stddev}};
}

ojson to_json(const NoiseSpec& v) {
  ojson pairs = ojson::array();
  for (auto [s, t] : v.flip_map) pairs.push_back({s, t});
  return {{"kind", v.kind == NoiseKind::kSymmetric ? "symmetric" : "asymmetric"},
          {"rate", v.rate},
          {"flip_map", pairs}};
}

ojson to_json(const Stage1Config& v) {
  return {{"tau", v.tau},
          {"alpha", v.alpha},
          {"c", v.c},
          {"queue_capacity", v.queue_capacity},
          {"embed_dim", v.embed_dim},
          {"hidden_dim", v.hidden_dim},
          {"feature_dim", v.feature_dim},
          {"epochs", v.epochs},
          {"batch_size", v.batch_size},
          {"lr", v.lr},
          {"momentum", v.momentum},
          {"weight_decay", v.weight_decay},
          {"aug_noise_stddev", v.aug_noise_stddev},
          {"aug_dropout_prob", v.aug_dropout_prob},
          {"seed", v.seed},
          {"classifier_loss", to_string(v.classifier_loss)},
          {"sce_log_zero_clamp", v.sce_log_zero_clamp},
          {"include_positive_in_denominator",
           v.denominator == ContrastiveDenominator::kIncludePositive},
          {"stop_gradient", to_string(v.stop_gradient)}};
}

ojson to_json(const RefurbishConfig& v) { return {{"sigma", v.sigma}}; }

ojson to_json(const Stage2Config& v) {
  return {{"epochs", v.epochs},         {"batch_size", v.batch_size},
          {"lr", v.lr},                 {"momentum", v.momentum},
          {"weight_decay", v.weight_decay}, {"seed", v.seed},
          {"fusion", to_string(v.fusion)}};
}

ojson to_json(const SubgroupThresholds& v) {
  return {{"many_min", v.many_min}, {"few_max", v.few_max}, {"scaling", to_string(v.scaling)}};
}

LongTailSpec long_tail_from_json(const json& j) {
  constexpr const char* s = "long_tail";
  check_keys(j, s, {"num_classes", "head_count", "imbalance_ratio"});
  LongTailSpec v;
  read_count(j, s, "num_classes", v.num_classes);
  read_count(j, s, "head_count", v.head_count);
  read(j, s, "imbalance_ratio", v.imbalance_ratio);
  v.validate();
  return v;
}

MixtureSpec mixture_from_json(const json& j) {
  constexpr const char* s = "mixture";
  check_keys(j, s, {"feature_dim", "class_center_scale", "within_class_stddev"});
  MixtureSpec v;
  read_count(j, s, "feature_dim", v.feature_dim);
  read(j, s, "class_center_scale", v.class_center_scale);
  read(j, s, "within_class_stddev", v.within_class_stddev);
  v.validate();
  return v;
}

NoiseSpec noise_from_json(const json& j) {
  constexpr const char* s = "noise";
  check_keys(j, s, {"kind", "rate", "flip_map"});
  NoiseSpec v;
  std::string kind = "symmetric";
  read(j, s, "kind", kind);
  if (kind == "symmetric") {
    v.kind = NoiseKind::kSymmetric;
  } else if (kind == "asymmetric") {
    v.kind = NoiseKind::kAsymmetric;
  } else {
    throw InvalidSpec("noise.kind must be symmetric or asymmetric");
  }
  read(j, s, "rate", v.rate);
  if (j.contains("flip_map")) {
    const auto& fm = j.at("flip_map");
    if (!fm.is_array()) throw InvalidSpec("noise.flip_map must be an array of [source, target] pairs");
    for (const auto& pair : fm) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
          !pair[1].is_number_unsigned()) {
        throw InvalidSpec("noise.flip_map entries must be [source, target] class indices");
      }
      v.flip_map.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
    }
  }
  if (!(v.rate >= 0.0 && v.rate < 1.0)) throw InvalidSpec("noise.rate must lie in [0, 1)");
  return v;
}

Stage1Config stage1_config_from_json(const json& j) {
  constexpr const char* s = "stage1";
  check_keys(j, s,
             {"tau", "alpha", "c", "queue_capacity", "embed_dim", "hidden_dim", "feature_dim", "epochs",
              "batch_size", "lr", "momentum", "weight_decay", "aug_noise_stddev", "aug_dropout_prob",
              "seed", "classifier_loss", "sce_log_zero_clamp", "include_positive_in_denominator",
              "stop_gradient"});
  Stage1Config v;
  read(j, s, "tau", v.tau);
  read(j, s, "alpha", v.alpha);
  read(j, s, "c", v.c);
  read_count(j, s, "queue_capacity", v.queue_capacity);
  read_count(j, s, "embed_dim", v.embed_dim);
  read_count(j, s, "hidden_dim", v.hidden_dim);
  read_count(j, s, "feature_dim", v.feature_dim);
  read_count(j, s, "epochs", v.epochs);
  read_count(j, s, "batch_size", v.batch_size);
  read(j, s, "lr", v.lr);
  read(j, s, "momentum", v.momentum);
  read(j, s, "weight_decay", v.weight_decay);
  read(j, s, "aug_noise_stddev", v.aug_noise_stddev);
  read(j, s, "aug_dropout_prob", v.aug_dropout_prob);
  read(j, s, "seed", v.seed);
  std::string loss = to_string(v.classifier_loss);
  read(j, s, "classifier_loss", loss);
  v.classifier_loss = classifier_loss_from_string(loss);
  read(j, s, "sce_log_zero_clamp", v.sce_log_zero_clamp);
  bool with_pos = false;
  read(j, s, "include_positive_in_denominator", with_pos);
  v.denominator = with_pos ? ContrastiveDenominator::kIncludePositive : ContrastiveDenominator::kNegativesOnly;
  std::string detached = to_string(v.stop_gradient);
  read(j, s, "stop_gradient", detached);
  v.stop_gradient = stop_gradient_from_string(detached);
  v.validate();
  return v;
}

RefurbishConfig refurbish_config_from_json(const json& j) {
  check_keys(j, "refurbish", {"sigma"});
  RefurbishConfig v;
  read(j, "refurbish", "sigma", v.sigma);
  v.validate();
  return v;
}

Stage2Config stage2_config_from_json(const json& j) {
  constexpr const char* s = "stage2";
  check_keys(j, s, {"epochs", "batch_size", "lr", "momentum", "weight_decay", "seed", "fusion"});
  Stage2Config v;
  read_count(j, s, "epochs", v.epochs);
  read_count(j, s, "batch_size", v.batch_size);
  read(j, s, "lr", v.lr);
  read(j, s, "momentum", v.momentum);
  read(j, s, "weight_decay", v.weight_decay);
  read(j, s, "seed", v.seed);
  std::string fusion = to_string(v.fusion);
  read(j, s, "fusion", fusion);
  v.fusion = fusion_from_string(fusion);
  v.validate();
  return v;
}

SubgroupThresholds thresholds_from_json(const json& j) {
  constexpr const char* s = "thresholds";
  check_keys(j, s, {"many_min", "few_max", "scaling"});
  SubgroupThresholds v;
  read(j, s, "many_min", v.many_min);
  read(j, s, "few_max", v.few_max);
  std::string scaling = to_string(v.scaling);
  read(j, s, "scaling", scaling);
  v.scaling = threshold_scaling_from_string(scaling);
  v.validate();
  return v;
}

}  // namespace noisytail
