#pragma once

#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedwarm/experiment.hpp"

namespace fedwarm::cli {

// Registers one option per RunConfig field plus --config (flat key=value file).
void add_run_options(CLI::App& app, RunConfig& config);

// Parses `args` (without the program name). File values are overridden by
// flags; unknown keys and invalid combinations raise ConfigError.
RunConfig parse_config(const std::vector<std::string>& args);

int run_main(int argc, char** argv);

}  // namespace fedwarm::cli
