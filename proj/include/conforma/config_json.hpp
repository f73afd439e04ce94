#pragma once

#include <string>

#include "conforma/experiments.hpp"

namespace conforma {

/// Parse an experiment config from JSON text. Unknown keys are ignored;
/// malformed values raise ConfigError. The JSON mirrors ExperimentConfig;
/// model specs are {"name", "kind" (optional), "family", "params"} objects.
ExperimentConfig parse_config_json(const std::string& text);

/// Load and parse a JSON config file.
ExperimentConfig load_config(const std::string& path);

}  // namespace conforma
