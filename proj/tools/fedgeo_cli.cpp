// fedgeo: command-line experiment runner.
//
//   fedgeo synth|ingest|run|ablate|sweep --config FILE [--out DIR] [--seeds 0,1,2]
//          [--dry-run] [--force]
//   fedgeo report --out DIR
//
// Exit status: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <exception>
#include <iostream>

#include "fedgeo/error.hpp"
#include "fedgeo/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FedGeo federated next-location prediction simulator"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::string seeds;
  bool dry_run = false;
  bool force = false;

  for (const char* name : {"synth", "ingest", "run", "ablate", "sweep", "report"}) {
    CLI::App* sub = app.add_subcommand(name);
    auto* cfg_opt = sub->add_option("--config", config_path, "experiment INI file");
    if (std::string_view(name) != "report") cfg_opt->required();
    sub->add_option("--out", out_dir, "output root directory");
    if (std::string_view(name) != "report") {
      sub->add_option("--seeds", seeds, "comma-separated seed list");
      sub->add_flag("--dry-run", dry_run, "validate and print the plan only");
      sub->add_flag("--force", force, "replace existing results");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const fedgeo::Command cmd = fedgeo::parse_command(app.get_subcommands().front()->get_name());
    fedgeo::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = fedgeo::load_experiment_config(config_path);
    fedgeo::CommandOptions opts;
    if (!out_dir.empty()) opts.out = out_dir;
    if (!seeds.empty()) opts.seeds = fedgeo::parse_seed_list(seeds);
    opts.dry_run = dry_run;
    opts.force = force;
    fedgeo::run_command(cmd, cfg, opts, std::cout);
  } catch (const fedgeo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
