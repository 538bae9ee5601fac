#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace elpose::cli {

// Process exit codes, one per error family.
enum ExitCode : int {
  kExitOk = 0,
  kExitUnexpected = 1,
  kExitConfig = 2,             // ConfigError, bad flags
  kExitIo = 3,                 // IoError
  kExitData = 4,               // ParseError, SchemaError, ValueError and shape errors
  kExitMissingCheckpoint = 5,  // MissingCheckpoint
  kExitOther = 6,              // any other elpose::Error
};

int exit_code_for(const std::exception& e);

inline constexpr std::string_view kCommands[] = {"simulate", "train", "refine", "metrics", "heatmap"};

// Validated configuration for one command. Relative paths are resolved
// against the directory of the config file.
struct RunConfig {
  std::string command;
  nlohmann::json values;
  std::uint64_t seed = 0;
};

// Applies `key=value` overrides (value parsed as JSON, falling back to a
// string), then `seed`, then validates against the command schema.
RunConfig make_run_config(std::string_view command, const nlohmann::json& document,
                          const std::filesystem::path& base_dir,
                          const std::vector<std::string>& overrides = {},
                          std::optional<std::uint64_t> seed = std::nullopt);
RunConfig load_run_config(std::string_view command, const std::filesystem::path& config_path,
                          const std::vector<std::string>& overrides = {},
                          std::optional<std::uint64_t> seed = std::nullopt);

struct CommandResult {
  std::vector<std::filesystem::path> written;
  std::string summary;
};

CommandResult cmd_simulate(const RunConfig& config);
CommandResult cmd_train(const RunConfig& config);
CommandResult cmd_refine(const RunConfig& config);
CommandResult cmd_metrics(const RunConfig& config);
CommandResult cmd_heatmap(const RunConfig& config);
CommandResult run_command(const RunConfig& config);

// Shortest round-trip decimal form.
std::string format_double(double value);
// RFC 4180 field quoting.
std::string csv_field(std::string_view field);

// Entry point shared by the executable; returns the exit code.
int run_main(int argc, char** argv);

}  // namespace elpose::cli
