#pragma once

#include <initializer_list>
#include <string_view>

#include "json.hpp"
#include "svae/data.hpp"
#include "svae/training.hpp"

// JSON forms of the configuration records. The apply_json functions start
// from the existing value and override only the keys present; unknown keys
// and mistyped values throw ContractViolation naming the section and key.
namespace svae {

using Json = nlohmann::json;

void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                         std::string_view section);

Json to_json(const SharingScheme& sharing);
Json to_json(const DecoderSpec& spec);
Json to_json(const ModelConfig& config);
Json to_json(const ObjectiveMode& mode);
Json to_json(const SpriteConfig& config);
/// Sections "model", "decoder", "objective", "train".
Json to_json(const TrainConfig& config);

void apply_json(const Json& j, DecoderSpec& spec);
void apply_json(const Json& j, ModelConfig& config);
/// The optimal-sigma objective takes its sharing scheme from `decoder`.
ObjectiveMode objective_from_json(const Json& j, const DecoderSpec& decoder);
void apply_json(const Json& j, SpriteConfig& config);
void apply_json(const Json& j, TrainConfig& config);

}  // namespace svae
