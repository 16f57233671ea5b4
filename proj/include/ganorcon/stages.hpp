#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganorcon/manifest.hpp"

namespace ganorcon::cli {

struct RunConfig {
  std::string stage;
  nlohmann::json params = nlohmann::json::object();
  std::filesystem::path out_dir;
};

std::vector<std::string> known_stages();
nlohmann::json stage_defaults(const std::string& stage);

// Applies defaults and validates; unknown or invalid fields raise a config
// error that enumerates them. The returned object is the effective config
// that goes into the manifest.
nlohmann::json effective_stage_config(const std::string& stage, const nlohmann::json& params);

// Runs a stage and writes out_dir/manifest.json (also on failure, with the
// failure recorded, before the error propagates).
RunManifest dispatch(const RunConfig& config);

// Desk-scale end-to-end surrogate: synthetic shapes data, short pretraining,
// both projector heads, distillation and cross-validated evaluation, all
// recorded in one manifest.
RunManifest toy_e2e(uint64_t seed, const std::filesystem::path& out_dir,
                    const nlohmann::json& overrides = nlohmann::json::object());

// GANORCON_OUT env var, else ./runs.
std::filesystem::path default_output_root();

}  // namespace ganorcon::cli
