#pragma once

#include <string>
#include <vector>

namespace placekit {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// `placekit <subcommand> --config <path> [--out <dir>] [--seed <u64>]
/// [--threads <n>]`. Diagnostics go to stderr.
int run_cli(const std::vector<std::string> &args);

} // namespace placekit
