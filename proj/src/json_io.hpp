#pragma once

// JSON conversions shared by the checkpoint, engine and experiment code.

#include "cretta/buffer.hpp"
#include "cretta/engine.hpp"
#include "cretta/model.hpp"
#include "cretta/numerics.hpp"
#include "json.hpp"

namespace cretta::io {

using nlohmann::json;

json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const json& j);

json model_to_json(const Classifier& model);
Classifier model_from_json(const json& j);

json adam_to_json(const AdamState& state);
AdamState adam_from_json(const json& j);

json adapt_config_to_json(const AdaptConfig& config);
/// Overlays the keys present in j; unknown keys throw.
void adapt_config_from_json(const json& j, AdaptConfig& config);

json augmentation_to_json(const AugmentationSpec& spec);
void augmentation_from_json(const json& j, AugmentationSpec& spec);

}  // namespace cretta::io
