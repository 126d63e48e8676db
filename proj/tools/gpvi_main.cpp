#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gpvi/experiments.hpp"

namespace {

int run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "config error: cannot read " << path << "\n";
    return 2;
  }
  std::stringstream ss;
  ss << in.rdbuf();

  gpvi::ExperimentConfig cfg;
  try {
    cfg = gpvi::build_config(gpvi::parse_config_text(ss.str()));
  } catch (const gpvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    gpvi::RunResult res = gpvi::run_experiment(cfg);
    if (res.exit_code == 3) std::cerr << "training diverged\n";
    return res.exit_code;
  } catch (const gpvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  gpvi::tune_allocator();
  CLI::App app{"generative particle variational inference experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("config", config_path, "path to a key = value config file")->required();

  CLI::App* list = app.add_subcommand("list-experiments", "describe experiment kinds and keys");

  CLI11_PARSE(app, argc, argv);

  if (list->parsed()) {
    std::cout << gpvi::describe_experiments();
    return 0;
  }
  return run_config(config_path);
}
