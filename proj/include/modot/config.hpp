#pragma once

#include <json.hpp>

#include <string>

namespace modot {

using Json = nlohmann::json;

// Full default experiment config (desk-scale profile).
Json default_config();

// Defaults deep-merged with the overrides from `path` (missing file -> error).
Json load_config(const std::string& path);

// Deep-merges b over a (objects merge recursively, everything else replaces).
void merge_config(Json& a, const Json& b);

// Applies the MODOT_SEED env override to data.seed / train.seed if set.
void apply_env_seed(Json& cfg);

}  // namespace modot
