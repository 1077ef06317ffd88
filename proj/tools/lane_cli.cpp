#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lane/config.hpp"
#include "lane/error.hpp"
#include "lane/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"lane: preference-aligned sequential recommendation"};
  app.set_version_flag("--version", lane::code_version());

  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool print_defaults = false;

  app.add_option("command", command, "prepare | extract-prefs | train | evaluate | explain | sweep")
      ->check(CLI::IsMember({"prepare", "extract-prefs", "train", "evaluate", "explain", "sweep"}));
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed (overrides the config)");
  app.add_option("--set", overrides, "override a config value, e.g. --set trainer.max_epochs=10")
      ->allow_extra_args(false);
  app.add_flag("--print-defaults", print_defaults, "print the default config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (print_defaults) {
    std::cout << lane::default_config_json() << '\n';
    return 0;
  }
  if (command.empty() || config_path.empty()) {
    std::cerr << "error: a command and --config are required (see --help)\n";
    return 1;
  }

  try {
    const lane::RunConfig config = lane::load_run_config(config_path, seed, overrides);
    lane::run_command(lane::parse_command(command), config, std::cout);
    return 0;
  } catch (const lane::UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
}
