#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ctx3d/model/config.hpp"

namespace ctx3d::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// Runs one subcommand (synth, preprocess, train, infer, eval). args[0] is the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Built-in desk defaults, then the config file, then "key=value" overrides.
model::ModelConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                  const std::vector<std::string>& overrides);

}  // namespace ctx3d::cli
