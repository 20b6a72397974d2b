#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sconf/sconf.hpp"

// Exit codes: 0 success, 1 configuration error, 2 runtime error.

int main(int argc, char** argv) {
  CLI::App app{"split conformal prediction over embedding classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int threads = 1;
  bool verbose = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "path to the JSON config");
    if (needs_config) opt->required();
    cmd->add_option("--out", out_dir, "output directory (overrides the config)");
    cmd->add_option("--threads", threads, "worker threads for trials")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--verbose", verbose, "print the aggregate table after the run");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic task");
  add_common(synth, true);
  CLI::App* run = app.add_subcommand("run", "run configured trials and write reports");
  add_common(run, true);
  CLI::App* sweep = app.add_subcommand("sweep", "repeat the run across a swept parameter");
  add_common(sweep, true);

  CLI::App* report = app.add_subcommand("report", "pretty-print an aggregate.json");
  std::string aggregate_path;
  report->add_option("aggregate", aggregate_path, "path to an aggregate.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  sconf::CommandOptions opt;
  opt.out_dir = out_dir;
  opt.threads = threads;
  opt.verbose = verbose;

  try {
    if (synth->parsed()) {
      sconf::cmd_synth(config_path, opt);
    } else if (run->parsed()) {
      sconf::cmd_run(config_path, opt);
    } else if (sweep->parsed()) {
      sconf::cmd_sweep(config_path, opt);
    } else if (report->parsed()) {
      std::cout << sconf::cmd_report(aggregate_path);
    }
  } catch (const sconf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
