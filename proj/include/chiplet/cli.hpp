#pragma once

#include <filesystem>
#include <string>

#include "chiplet/config.hpp"

namespace chiplet {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitNonConvergence = 3,
    kExitInvariant = 4,
};

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Subcommands. Each writes into cfg.output and a manifest.json describing
// the run; errors are mapped to exit codes and recorded in error.json.
int cmd_flow(const RunConfig& cfg);
int cmd_particles(const RunConfig& cfg);
int cmd_validate(const std::filesystem::path& out, bool flip_flux_sign);
int cmd_capacitance_dump(const RunConfig& cfg, double r_max, int samples);

// Entry point for the `meanfield` executable.
int run_cli(int argc, char** argv);

}  // namespace chiplet
