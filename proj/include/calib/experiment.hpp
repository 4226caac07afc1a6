#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "calib/diagnostics.hpp"
#include "json.hpp"

namespace calib {

using Json = nlohmann::ordered_json;

// Raised for any configuration problem: unreadable or malformed config file,
// unknown keys, wrong types, out-of-range values, missing input paths. The
// CLI maps it to exit code 2; runtime failures map to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RecalibrateParams {
  std::string input_csv;             // mean,stddev,outcome rows
  std::string method = "isotonic";   // isotonic | sigmoid
  double eval_fraction = 0.3;        // chronological tail held out for diagnostics
  int bins = 10;
};

struct DiagnoseParams {
  std::string input_csv;  // either a single pit column or mean,stddev,outcome
  int bins = 10;
};

struct BanditParams {
  std::string env = "linear";  // linear | beta | nonlinear | dataset
  std::string mode = "both";   // both | ucb | calibrated
  int arms = 4;
  int dim = 5;
  double noise_sd = 0.25;      // linear env
  double concentration = 8.0;  // beta env
  long rows = 6000;            // nonlinear env dataset size
  std::string input_csv;       // dataset env
  long horizon = 2000;
  int trials = 10;
  double alpha = 1.0;
  double lambda = 1.0;
  int warmup = 30;
  int refit_every = 25;
  bool step_log = false;
};

struct InventoryParams {
  std::string mode = "loop";  // loop | benchmark
  // shared planner settings
  double c = 1.0;
  int n_traj = 100;
  int n_mc = 20;
  int horizon = 5;
  int max_order = 50;
  int shelf_life = 5;
  bool fifo = false;
  double ridge = 1e-3;
  // loop mode: rounds of collect-refit-recalibrate on one synthetic item
  int iterations = 2;
  long collect_days = 400;
  // benchmark mode: paired three-policy comparison across seeds
  int trials = 10;
  int items = 100;
  long train_days = 600;
  long cal_days = 150;
  long test_days = 90;
};

struct MdpVerifyParams {
  std::string input_json;
  double calibration_tol = 1e-9;
};

struct ExperimentConfig {
  std::string kind;  // recalibrate | diagnose | bandit | inventory | mdp-verify
  std::uint64_t seed = 0;
  std::string out_dir;
  bool force = false;
  int threads = 1;
  RecalibrateParams recalibrate;
  DiagnoseParams diagnose;
  BanditParams bandit;
  InventoryParams inventory;
  MdpVerifyParams mdp_verify;
};

// Full upfront validation: every key checked for name, type, and range, and
// every referenced input path for existence, before any computation starts.
// Unknown keys anywhere are errors.
ExperimentConfig parse_experiment_config(const Json& doc);
ExperimentConfig load_experiment_config(const std::string& path);

// The echoed config inside report documents holds only semantic settings
// (kind, seed, and the kind block); execution details such as out_dir,
// force, and thread count live in the timings sidecar so reports stay
// byte-identical across reruns and worker counts.
struct RunReport {
  Json document;  // report.json content
  Json timings;   // timings.json content (wall-clock, never byte-stable)
  std::vector<std::pair<std::string, std::string>> files;  // extra artifacts
};

RunReport run_experiment(const ExperimentConfig& cfg);

// Writes report.json, timings.json, and artifacts under out_dir, creating it
// when needed. Refuses to overwrite an existing report.json unless force.
void emit_report(const RunReport& report, const std::string& out_dir, bool force);

// Runs fn(0..n-1) on up to `threads` workers; each index must only touch its
// own output slot, which keeps results independent of the thread count.
void parallel_for(long n, int threads, const std::function<void(long)>& fn);

// One collect-refit round of the model-refresh loop, exposed for tests.
// pre/post losses and curves are measured on the calibration split (the
// recalibrator's own fitting data, where a correct fit leaves the composed
// values uniform); eval_* fields repeat the measurement on held-out days
// interleaved through the same span, so they share the seasonal coverage of
// the calibration days instead of sitting on a later, phase-shifted window.
struct LoopIterationDiagnostics {
  int iteration = 0;
  long train_n = 0, cal_n = 0, eval_n = 0;
  double pre_loss = 0.0, post_loss = 0.0;
  double eval_pre_loss = 0.0, eval_post_loss = 0.0;
  ReliabilityCurve pre_curve, post_curve;
  ReliabilityCurve eval_pre_curve, eval_post_curve;
};

// Seeded synthetic-demand loop: bootstrap data with a generous constant
// order policy, then repeatedly plan with the current recalibrated model,
// accumulate observed sales, and refit model + recalibrator on a
// chronological 70/30 train/tail split; every fifth tail day is held out of
// the recalibrator's fit for evaluation. Entry 0 reports the initial fit;
// entry i the fit after collection round i.
std::vector<LoopIterationDiagnostics> run_inventory_loop(const InventoryParams& params,
                                                         std::uint64_t seed);

}  // namespace calib
