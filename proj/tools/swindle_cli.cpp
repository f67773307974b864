// Command-line driver: swindle {fit,sample,sweep,predict} --config FILE [--seed N] [--out DIR]
#include "swindle/experiment.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Coupled-chain variance reduction for HMC, MALA and random-walk samplers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;

  for (const char* name : {"fit", "sample", "sweep", "predict"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--replications", replications, "override the number of replications");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : swindle::kExitConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  return swindle::run_command(command, config_path, out_dir, {seed, replications});
}
