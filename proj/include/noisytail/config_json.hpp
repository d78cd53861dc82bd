#pragma once

// JSON (de)serialisation for models and configuration structs. Parsing is
// strict: unknown keys and out-of-range values raise InvalidSpec; missing
// keys keep their defaults.

#include <nlohmann/json.hpp>

#include "noisytail/datagen.hpp"
#include "noisytail/ensemble.hpp"
#include "noisytail/numerics.hpp"
#include "noisytail/refurbish.hpp"
#include "noisytail/stage1.hpp"

namespace noisytail {

nlohmann::ordered_json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const LongTailSpec& v);
nlohmann::ordered_json to_json(const MixtureSpec& v);
nlohmann::ordered_json to_json(const NoiseSpec& v);
nlohmann::ordered_json to_json(const Stage1Config& v);
nlohmann::ordered_json to_json(const RefurbishConfig& v);
nlohmann::ordered_json to_json(const Stage2Config& v);
nlohmann::ordered_json to_json(const SubgroupThresholds& v);

LongTailSpec long_tail_from_json(const nlohmann::json& j);
MixtureSpec mixture_from_json(const nlohmann::json& j);
NoiseSpec noise_from_json(const nlohmann::json& j);
Stage1Config stage1_config_from_json(const nlohmann::json& j);
RefurbishConfig refurbish_config_from_json(const nlohmann::json& j);
Stage2Config stage2_config_from_json(const nlohmann::json& j);
SubgroupThresholds thresholds_from_json(const nlohmann::json& j);

}  // namespace noisytail
