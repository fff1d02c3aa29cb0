#pragma once

#include <json.hpp>

#include "biembed/data.hpp"
#include "biembed/encoder.hpp"
#include "biembed/regimen.hpp"

namespace biembed {

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MnrlConfig& cfg);
nlohmann::json to_json(const StageConfig& cfg);
nlohmann::json to_json(const RegimenConfig& cfg);
nlohmann::json to_json(const SynthConfig& cfg);

// Strict parsers: unknown keys are rejected. Parsing starts from the given
// defaults so partial configs (presets plus overrides) work.
MnrlConfig mnrl_config_from_json(const nlohmann::json& j, MnrlConfig defaults = {});
StageConfig stage_config_from_json(const nlohmann::json& j, StageConfig defaults);
RegimenConfig regimen_config_from_json(const nlohmann::json& j);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig defaults = {});

}  // namespace biembed
