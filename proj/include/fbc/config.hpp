// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "fbc/data_io.hpp"
#include "fbc/priors.hpp"
#include "fbc/sampler.hpp"

#include <filesystem>
#include <string>

namespace fbc {

constexpr int kConfigSchemaVersion = 1;

/// Everything a `run` needs. Parsed from JSON; unknown keys are rejected.
struct RunConfig {
  DatasetSpec dataset;
  PriorConfig prior;
  SamplerConfig sampler;
  std::filesystem::path output_dir = "fbc-out";
  int chains = 1;
};

/// Relative dataset and output paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks everything that does not need the data; sampler limits are rechecked against group sizes.
void validate(const RunConfig& config);

/// Pretty JSON with every default materialized; parsing it yields the same config.
std::string resolved_config_json(const RunConfig& config);

}  // namespace fbc
