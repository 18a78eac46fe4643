#pragma once

// Named-array archives: a directory holding manifest.json (names, shapes,
// roles) and arrays.bin (float64, column-major, concatenated), plus the
// vocabulary as vocab.txt for model checkpoints.

#include <filesystem>

#include <json.hpp>

#include "vipguard/model.hpp"

namespace vipguard::checkpoint {

nlohmann::json config_to_json(const model::ModelConfig& config);
model::ModelConfig config_from_json(const nlohmann::json& j);

void save_model(const model::Model& model, const std::filesystem::path& dir,
                const nlohmann::json& extra = nlohmann::json::object());
model::Model load_model(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);
bool has_model(const std::filesystem::path& dir);

void save_vip_token(const model::VIPToken& token, const std::filesystem::path& dir,
                    const nlohmann::json& extra = nlohmann::json::object());
model::VIPToken load_vip_token(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

/// Content hash of a model's parameters (all of them).
std::uint64_t model_hash(const model::Model& model);

}  // namespace vipguard::checkpoint
