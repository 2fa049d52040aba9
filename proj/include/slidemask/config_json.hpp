#pragma once

#include "json.hpp"
#include "slidemask/dataset.hpp"
#include "slidemask/model.hpp"

namespace slidemask {

// Readers start from `base` and override only the keys present. Unknown keys
// are config errors so typos do not pass silently.

nlohmann::ordered_json to_json(const AugmentationConfig& config);
AugmentationConfig augmentation_from_json(const nlohmann::json& doc, AugmentationConfig base = {});

nlohmann::ordered_json to_json(const ModelOptions& options);
ModelOptions model_options_from_json(const nlohmann::json& doc, ModelOptions base = {});

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

}  // namespace slidemask
