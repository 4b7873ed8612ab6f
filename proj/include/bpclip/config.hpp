#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bpclip/data.hpp"
#include "bpclip/model.hpp"
#include "bpclip/train.hpp"
#include "json.hpp"

namespace bpclip {

/// Every recognized key with its default. Keys whose default is null are
/// optional and accept any value type.
nlohmann::json default_config();

/// TOML (by extension .toml) or JSON, as a JSON tree.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Recursively overlays `overlay` on `base`; a key absent from `base` throws ConfigError.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& where = "");

/// Applies "a.b.c=value" (value parsed as JSON when possible, else a string).
void apply_override(nlohmann::json& config, const std::string& assignment);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string manifest;
  std::string text_bank;
  std::vector<double> split_ratios;  // empty: 6:2:2 for FR, 8:2 for NR
  int repeats = 1;
  int repeat_index = 0;
  ManifestOptions manifest_options;
  nlohmann::json resolved;  // the merged tree
};

/// defaults <- file (optional) <- overrides, then typed.
RunConfig resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides);
RunConfig run_config_from_json(const nlohmann::json& merged);

}  // namespace bpclip
