#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "p3l/p3l.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Three-layer network / mean-field experiment driver"};
  app.require_subcommand(1);

  std::string run_path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", run_path, "Config file (key = value or JSON)")->required();

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Dry-run checks on a config file");
  validate->add_option("config", validate_path, "Config file (key = value or JSON)")->required();

  app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : p3l::kExitConfig;
  }

  if (*run) return p3l::run_file(run_path, std::cout, std::cerr);

  if (*validate) {
    p3l::Config cfg;
    try {
      cfg = p3l::Config::load(validate_path);
    } catch (const p3l::ConfigError& e) {
      std::cerr << "p3l: config error: " << e.what() << '\n';
      return p3l::kExitConfig;
    }
    const p3l::ValidationReport r = p3l::validate_config(cfg);
    p3l::print_report(std::cout, r);
    return r.ok() ? p3l::kExitOk : p3l::kExitConfig;
  }

  std::cout << "p3l " << p3l::kVersion << '\n';
  return 0;
}
