#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mbsde {

/// Subcommands accepted by the experiment driver, in help order.
const std::vector<std::string>& subcommand_names();

struct RunOptions {
    std::string subcommand;
    std::optional<std::filesystem::path> config;  // empty: all defaults
    std::filesystem::path out = "out";
    std::optional<std::uint64_t> seed;  // overrides the config seed
    int workers = 1;
    bool strict = false;
};

struct RunResult {
    /// 0 all checks passed, 1 a check failed, 2 configuration error, 3 runtime error.
    int exit_code = 0;
    bool pass = false;
    std::vector<std::string> warnings;
    std::filesystem::path manifest;
    std::string error;
};

/// Runs one experiment, writing its CSV/JSON artifacts and run_manifest.json into options.out.
/// Progress and errors go to `log`.
RunResult run_experiment(const RunOptions& options, std::ostream& log);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Command-line entry point (flags --config, --out, --seed, --workers, --strict).
int cli_main(int argc, char** argv);

}  // namespace mbsde
