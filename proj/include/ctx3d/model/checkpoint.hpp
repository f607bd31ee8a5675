#pragma once

#include <filesystem>
#include <string>

#include "ctx3d/model/config.hpp"
#include "ctx3d/model/detector.hpp"

namespace ctx3d::model {

struct Checkpoint {
  ModelConfig config;
  int epoch = 0;
  Detector<float> model;
};

// Flat "key = value" text of every config setting; parse_config_text inverts it.
std::string config_text(const ModelConfig& cfg);
ModelConfig parse_config_text(const std::string& text, const std::string& what);

// Parameters under "param/<name>", plus "meta/config", "meta/config_fingerprint"
// and "meta/epoch". Written atomically.
void save_checkpoint(const std::filesystem::path& path, const Detector<float>& model, int epoch);

// Throws DataError for truncated/malformed files, missing or mis-shaped
// parameters, and a stored fingerprint that disagrees with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As above; additionally rejects a checkpoint whose fingerprint differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace ctx3d::model
