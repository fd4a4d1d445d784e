#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advsr::harness {

struct Options {
    std::filesystem::path config_path;
    std::optional<uint64_t> seed;                   // overrides config seed
    std::optional<std::filesystem::path> out_dir;   // overrides output.dir
};

// Commands: synth-data, train, attack, defend-eval, sweep, gap.
// Returns the process exit code: 0 on full completion, 2 on any cell error.
int run(const std::string& command, const Options& opts);

std::vector<std::string> command_names();

}  // namespace advsr::harness
