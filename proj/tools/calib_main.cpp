#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "calib/experiment.hpp"

// Exit codes: 0 success, 2 for configuration or usage problems, 1 for
// failures while running or writing results.
int main(int argc, char** argv) {
  CLI::App app{"calibration toolkit runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  bool force = false;

  const struct {
    const char* name;
    const char* help;
  } kinds[] = {
      {"recalibrate", "fit a recalibration map from mean,stddev,outcome rows"},
      {"diagnose", "reliability diagnostics for probabilistic forecasts"},
      {"bandit", "contextual bandit policy comparison"},
      {"inventory", "perishable inventory planning runs"},
      {"mdp-verify", "check model calibration and value agreement for a finite MDP"},
  };
  for (const auto& k : kinds) {
    CLI::App* sub = app.add_subcommand(k.name, k.help);
    sub->add_option("config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--threads", threads, "override the worker count");
    sub->add_flag("--force", force, "overwrite an existing report");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().at(0);
  try {
    calib::ExperimentConfig cfg = calib::load_experiment_config(config_path);
    if (cfg.kind != sub->get_name())
      throw calib::ConfigError("config: kind '" + cfg.kind + "' does not match subcommand '" +
                               sub->get_name() + "'");
    if (sub->count("--seed") > 0) cfg.seed = seed;
    if (sub->count("--out") > 0) cfg.out_dir = out_dir;
    if (sub->count("--threads") > 0) {
      if (threads < 1 || threads > 64) throw calib::ConfigError("--threads must lie in [1, 64]");
      cfg.threads = threads;
    }
    if (force) cfg.force = true;
    if (cfg.out_dir.empty())
      throw calib::ConfigError("config: no output directory given (set out_dir or pass --out)");

    const calib::RunReport report = calib::run_experiment(cfg);
    calib::emit_report(report, cfg.out_dir, cfg.force);
    std::cout << "wrote " << cfg.out_dir << "/report.json\n";
    return 0;
  } catch (const calib::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
