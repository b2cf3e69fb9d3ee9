#pragma once

#include <json.hpp>

#include "faultdet/data.hpp"
#include "faultdet/distill.hpp"

namespace faultdet {

nlohmann::ordered_json to_json(const ModelConfig& mc);
nlohmann::ordered_json to_json(const DistillConfig& dc);
nlohmann::ordered_json to_json(const SynthConfig& sc);

ModelConfig model_config_from_json(const nlohmann::json& j);
DistillConfig distill_config_from_json(const nlohmann::json& j);

}  // namespace faultdet
