#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lula/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"lula-lab: Laplace approximations with LULA units"};
  app.require_subcommand(1);

  lula::cli::CommandOptions options;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;

  for (const char* name : {"train", "laplace", "lula", "eval", "demo-toy"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", options.config, "experiment configuration file")->required();
    sub->add_option("--model", model, "model file to read");
    sub->add_option("--out", out, "output file (directory for demo-toy)");
    sub->add_option("--seed", seed, "overrides every seed of the configuration");
  }
  app.add_subcommand("defaults", "print the configuration reference with every default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lula::cli::kConfigError;
  }

  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->get_name() == "defaults") {
    std::cout << lula::cli::reference_config();
    return 0;
  }
  if (chosen->count("--model") > 0) options.model = model;
  if (chosen->count("--out") > 0) options.out = out;
  if (chosen->count("--seed") > 0) options.seed = seed;
  return lula::cli::run_command(chosen->get_name(), options, std::cout, std::cerr);
}
