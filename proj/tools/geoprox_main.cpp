#include "geoprox/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <utility>

int main(int argc, char** argv) {
  using namespace geoprox::cli;
  CLI::App app{"Proximal splitting, GEO operators and training experiments"};
  app.require_subcommand(1);
  Invocation inv;
  std::string config;
  std::string model;
  std::uint64_t seed = 0;

  const std::pair<const char*, const char*> subcommands[] = {
      {"prox-check", "compare catalog proxes against a numerical argmin"},
      {"solve", "run a splitting scheme on a problem spec"},
      {"fd-check", "finite-difference gradient error versus delta"},
      {"geo-equiv", "theoretical GEO versus the splitting scheme"},
      {"train", "train a GEO on min-op or PDE data"},
      {"eval", "evaluate a trained GEO on fresh test data"},
      {"report", "summarize a training run directory"},
  };
  for (const auto& [name, help] : subcommands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "JSON config or problem spec");
    sub->add_option("--out", inv.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "root seed override");
    sub->add_flag("--quiet", inv.quiet, "suppress progress output");
    if (std::string(name) == "eval") sub->add_option("--model", model, "GeoParams JSON (default <out>/model.json)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParseError;
  }

  CLI::App* chosen = app.get_subcommands().front();
  inv.subcommand = *parse_subcommand(chosen->get_name());
  if (chosen->count("--config")) inv.config_path = config;
  if (chosen->count("--seed")) inv.seed = seed;
  if (!model.empty()) inv.model_path = model;
  return dispatch(inv, std::cout, std::cerr);
}
