// Experiment driver: synthesize the two-domain datasets, train the quality
// assessor and the reduction network, evaluate checkpoints and run the
// quality-range sweep — all from a key=value config file.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "risemar/cli/commands.hpp"
#include "risemar/io/config.hpp"

namespace {

int exit_code_for(const std::string& category) {
  if (category == "usage") return 2;
  if (category == "config") return 3;
  if (category == "io") return 4;
  if (category == "data") return 5;
  if (category == "state") return 6;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rise-mar experiment driver"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "experiment config file")
      ->required();
  app.add_flag("--force", force, "overwrite outputs stamped with a different config");
  app.add_option("-D,--define", overrides,
                 "key=value override applied after the config file");

  auto* simulate = app.add_subcommand("simulate", "synthesize datasets");
  auto* train_cqa = app.add_subcommand("train-cqa", "train the quality assessor");
  auto* train_mar = app.add_subcommand("train-mar", "warm start + self-training");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on both domains");
  auto* sweep = app.add_subcommand("sweep-q", "quality-range ablation sweep");

  CLI11_PARSE(app, argc, argv);

  try {
    risemar::io::Config cfg = risemar::io::Config::from_file(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw risemar::io::CliError("usage", "override must be key=value: " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (simulate->parsed()) risemar::cli::cmd_simulate(cfg, force);
    if (train_cqa->parsed()) risemar::cli::cmd_train_cqa(cfg, force);
    if (train_mar->parsed()) risemar::cli::cmd_train_mar(cfg, force);
    if (eval->parsed()) risemar::cli::cmd_eval(cfg, force);
    if (sweep->parsed()) risemar::cli::cmd_sweep_q(cfg, force);
  } catch (const risemar::io::CliError& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.what());
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
