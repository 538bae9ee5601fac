#include <iostream>

#include <CLI11.hpp>

#include "elpose/cli.hpp"
#include "elpose/errors.hpp"

namespace elpose::cli {

int run_main(int argc, char** argv) {
  CLI::App app{"Physics-informed 2D-to-3D pose refinement pipeline", "elpose"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  for (auto name : kCommands) {
    auto* sub = app.add_subcommand(std::string(name));
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--set", overrides, "Override a config key (key=value)")->take_all();
    sub->add_option("--seed", seed, "Seed for every random stream");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto config = load_run_config(command, config_path, overrides, seed);
    const auto result = run_command(config);
    std::cout << command << ": " << result.summary << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "elpose " << command << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace elpose::cli
