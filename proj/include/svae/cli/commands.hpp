#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "svae/cli/run_config.hpp"

namespace svae::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumeric = 3 };

/// Fixed column order of metrics.csv and eval.csv.
const std::vector<std::string>& metrics_columns();

/// Each command writes its artifacts under config.output.dir and throws on
/// failure; run_cli maps exceptions to exit codes.
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
void cmd_sample(const RunConfig& config, const std::filesystem::path& checkpoint, std::optional<std::size_t> n,
                std::ostream& log);
void cmd_sweep_beta(const RunConfig& config, std::ostream& log);
void cmd_share_sweep(const RunConfig& config, std::ostream& log);
/// Uses the checkpoint's model when given, otherwise trains one first.
void cmd_mi(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
            std::optional<std::size_t> n, std::ostream& log);

/// Parses `svae <command> [--config PATH] [--out DIR] [--seed N]
/// [--betas a,b,c] [--n N] [--checkpoint PATH]` and runs the command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace svae::cli
