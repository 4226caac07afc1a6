#include "calib/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <mutex>
#include <sstream>
#include <thread>

#include "calib/bandit.hpp"
#include "calib/csv.hpp"
#include "calib/forecast.hpp"
#include "calib/inventory.hpp"
#include "calib/mdp.hpp"
#include "calib/recalibration.hpp"
#include "calib/sha256.hpp"

namespace calib {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// seed-space tags for the refresh loop, disjoint from the simulator's own
constexpr std::uint64_t loop_alloc_space = 5ull << 32;
constexpr std::uint64_t loop_mpc_space = 6ull << 32;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(12);
  o << v;
  return o.str();
}

// ---- config validation -----------------------------------------------------

const Json* find_key(const Json& obj, const std::string& key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void reject_unknown(const Json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::string require_string(const Json& obj, const std::string& where, const std::string& key) {
  const Json* v = find_key(obj, key);
  if (!v) throw ConfigError(where + ": missing required key '" + key + "'");
  if (!v->is_string()) throw ConfigError(where + ": '" + key + "' must be a string");
  return v->get<std::string>();
}

std::string get_string(const Json& obj, const std::string& where, const std::string& key,
                       const std::string& fallback) {
  const Json* v = find_key(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(where + ": '" + key + "' must be a string");
  return v->get<std::string>();
}

long get_integer(const Json& obj, const std::string& where, const std::string& key, long fallback,
                 long lo, long hi) {
  const Json* v = find_key(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer())
    throw ConfigError(where + ": '" + key + "' must be an integer");
  const long x = v->get<long>();
  if (x < lo || x > hi)
    throw ConfigError(where + ": '" + key + "' must lie in [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  return x;
}

double get_number(const Json& obj, const std::string& where, const std::string& key,
                  double fallback, double lo, double hi) {
  const Json* v = find_key(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(where + ": '" + key + "' must be a number");
  const double x = v->get<double>();
  if (!(x >= lo && x <= hi))
    throw ConfigError(where + ": '" + key + "' must lie in [" + fmt(lo) + ", " + fmt(hi) + "]");
  return x;
}

bool get_flag(const Json& obj, const std::string& where, const std::string& key, bool fallback) {
  const Json* v = find_key(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(where + ": '" + key + "' must be a boolean");
  return v->get<bool>();
}

void require_choice(const std::string& value, const std::string& where, const std::string& key,
                    std::initializer_list<const char*> choices) {
  for (const char* c : choices)
    if (value == c) return;
  std::string list;
  for (const char* c : choices) list += (list.empty() ? "" : ", ") + std::string(c);
  throw ConfigError(where + ": '" + key + "' must be one of {" + list + "} but is '" + value + "'");
}

void require_input_file(const std::string& path, const std::string& where, const std::string& key) {
  if (!fs::exists(path) || !fs::is_regular_file(path))
    throw ConfigError(where + ": '" + key + "' does not name a readable file: " + path);
}

// chronological partition shared by the loop and its config precheck: the
// first 70% trains the model, and every fifth day of the remaining tail is
// held out of the recalibrator's fit for evaluation
long loop_train_size(long n) { return n * 7 / 10; }

bool loop_eval_day(long day, long train_n) { return (day - train_n) % 5 == 4; }

long loop_cal_pairs(long n, int horizon) {
  const long train_n = loop_train_size(n);
  long count = 0;
  for (long base = train_n; base + horizon < n; ++base)
    if (!loop_eval_day(base, train_n)) ++count;
  return count;
}

RecalibrateParams parse_recalibrate(const Json& block) {
  const std::string where = "recalibrate";
  reject_unknown(block, where, {"input_csv", "method", "eval_fraction", "bins"});
  RecalibrateParams p;
  p.input_csv = require_string(block, where, "input_csv");
  require_input_file(p.input_csv, where, "input_csv");
  p.method = get_string(block, where, "method", p.method);
  require_choice(p.method, where, "method", {"isotonic", "sigmoid"});
  p.eval_fraction = get_number(block, where, "eval_fraction", p.eval_fraction, 0.05, 0.9);
  p.bins = static_cast<int>(get_integer(block, where, "bins", p.bins, 2, 100));
  return p;
}

DiagnoseParams parse_diagnose(const Json& block) {
  const std::string where = "diagnose";
  reject_unknown(block, where, {"input_csv", "bins"});
  DiagnoseParams p;
  p.input_csv = require_string(block, where, "input_csv");
  require_input_file(p.input_csv, where, "input_csv");
  p.bins = static_cast<int>(get_integer(block, where, "bins", p.bins, 2, 100));
  return p;
}

BanditParams parse_bandit(const Json& block) {
  const std::string where = "bandit";
  BanditParams p;
  p.env = require_string(block, where, "env");
  require_choice(p.env, where, "env", {"linear", "beta", "nonlinear", "dataset"});
  if (p.env == "linear")
    reject_unknown(block, where,
                   {"env", "mode", "arms", "dim", "noise_sd", "horizon", "trials", "alpha", "lambda",
                    "warmup", "refit_every", "step_log"});
  else if (p.env == "beta")
    reject_unknown(block, where,
                   {"env", "mode", "arms", "dim", "concentration", "horizon", "trials", "alpha",
                    "lambda", "warmup", "refit_every", "step_log"});
  else if (p.env == "nonlinear")
    reject_unknown(block, where,
                   {"env", "mode", "rows", "horizon", "trials", "alpha", "lambda", "warmup",
                    "refit_every", "step_log"});
  else
    reject_unknown(block, where,
                   {"env", "mode", "input_csv", "horizon", "trials", "alpha", "lambda", "warmup",
                    "refit_every", "step_log"});

  p.mode = get_string(block, where, "mode", p.mode);
  require_choice(p.mode, where, "mode", {"both", "ucb", "calibrated"});
  p.arms = static_cast<int>(get_integer(block, where, "arms", p.arms, 2, 64));
  p.dim = static_cast<int>(get_integer(block, where, "dim", p.dim, 1, 64));
  p.noise_sd = get_number(block, where, "noise_sd", p.noise_sd, 1e-6, 100.0);
  p.concentration = get_number(block, where, "concentration", p.concentration, 0.1, 1000.0);
  p.rows = get_integer(block, where, "rows", p.rows, 200, 1000000);
  if (p.env == "dataset") {
    p.input_csv = require_string(block, where, "input_csv");
    require_input_file(p.input_csv, where, "input_csv");
  }
  p.horizon = get_integer(block, where, "horizon", p.horizon, 1, 1000000);
  p.trials = static_cast<int>(get_integer(block, where, "trials", p.trials, 1, 10000));
  p.alpha = get_number(block, where, "alpha", p.alpha, 1e-9, 100.0);
  p.lambda = get_number(block, where, "lambda", p.lambda, 1e-9, 1e6);
  p.warmup = static_cast<int>(get_integer(block, where, "warmup", p.warmup, 1, 1000000));
  p.refit_every =
      static_cast<int>(get_integer(block, where, "refit_every", p.refit_every, 1, 1000000));
  p.step_log = get_flag(block, where, "step_log", p.step_log);
  if (p.env == "nonlinear" && p.horizon > p.rows)
    throw ConfigError(where + ": horizon exceeds the generated dataset rows");
  return p;
}

InventoryParams parse_inventory(const Json& block) {
  const std::string where = "inventory";
  InventoryParams p;
  p.mode = get_string(block, where, "mode", p.mode);
  require_choice(p.mode, where, "mode", {"loop", "benchmark"});
  if (p.mode == "loop")
    reject_unknown(block, where,
                   {"mode", "c", "n_traj", "n_mc", "horizon", "max_order", "shelf_life", "fifo",
                    "ridge", "iterations", "collect_days"});
  else
    reject_unknown(block, where,
                   {"mode", "c", "n_traj", "n_mc", "horizon", "max_order", "shelf_life", "fifo",
                    "ridge", "trials", "items", "train_days", "cal_days", "test_days"});

  if (p.mode == "benchmark") p.c = 0.3;  // overconfident baseline by default
  p.c = get_number(block, where, "c", p.c, 1e-9, 100.0);
  p.n_traj = static_cast<int>(get_integer(block, where, "n_traj", p.n_traj, 1, 100000));
  p.n_mc = static_cast<int>(get_integer(block, where, "n_mc", p.n_mc, 1, 100000));
  p.horizon = static_cast<int>(get_integer(block, where, "horizon", p.horizon, 1, 8));
  p.max_order = static_cast<int>(get_integer(block, where, "max_order", p.max_order, 1, 500));
  p.shelf_life = static_cast<int>(get_integer(block, where, "shelf_life", p.shelf_life, 1, 8));
  p.fifo = get_flag(block, where, "fifo", p.fifo);
  p.ridge = get_number(block, where, "ridge", p.ridge, 0.0, 1e3);

  if (p.mode == "loop") {
    p.iterations = static_cast<int>(get_integer(block, where, "iterations", p.iterations, 0, 100));
    p.collect_days = get_integer(block, where, "collect_days", p.collect_days, 150, 100000);
    if (loop_train_size(p.collect_days) < 60 || loop_cal_pairs(p.collect_days, p.horizon) < 30)
      throw ConfigError(where + ": collect_days " + std::to_string(p.collect_days) +
                        " leaves the calibration split below the minimum of 30 pairs");
  } else {
    p.trials = static_cast<int>(get_integer(block, where, "trials", p.trials, 1, 1000));
    p.items = static_cast<int>(get_integer(block, where, "items", p.items, 1, 10000));
    p.train_days = get_integer(block, where, "train_days", p.train_days, 60, 100000);
    p.cal_days = get_integer(block, where, "cal_days", p.cal_days, 10, 100000);
    p.test_days = get_integer(block, where, "test_days", p.test_days, 1, 100000);
    if (p.cal_days <= p.horizon)
      throw ConfigError(where + ": cal_days must exceed the planning horizon");
  }
  return p;
}

MdpVerifyParams parse_mdp_verify(const Json& block) {
  const std::string where = "mdp-verify";
  reject_unknown(block, where, {"input_json", "calibration_tol"});
  MdpVerifyParams p;
  p.input_json = require_string(block, where, "input_json");
  require_input_file(p.input_json, where, "input_json");
  p.calibration_tol = get_number(block, where, "calibration_tol", p.calibration_tol, 0.0, 1.0);
  return p;
}

// ---- config echo (semantic settings only; see header note) ------------------

Json echo_config(const ExperimentConfig& cfg) {
  Json block = Json::object();
  if (cfg.kind == "recalibrate") {
    const auto& p = cfg.recalibrate;
    block = {{"input_csv", p.input_csv},
             {"method", p.method},
             {"eval_fraction", p.eval_fraction},
             {"bins", p.bins}};
  } else if (cfg.kind == "diagnose") {
    const auto& p = cfg.diagnose;
    block = {{"input_csv", p.input_csv}, {"bins", p.bins}};
  } else if (cfg.kind == "bandit") {
    const auto& p = cfg.bandit;
    block["env"] = p.env;
    block["mode"] = p.mode;
    if (p.env == "linear" || p.env == "beta") {
      block["arms"] = p.arms;
      block["dim"] = p.dim;
    }
    if (p.env == "linear") block["noise_sd"] = p.noise_sd;
    if (p.env == "beta") block["concentration"] = p.concentration;
    if (p.env == "nonlinear") block["rows"] = p.rows;
    if (p.env == "dataset") block["input_csv"] = p.input_csv;
    block["horizon"] = p.horizon;
    block["trials"] = p.trials;
    block["alpha"] = p.alpha;
    block["lambda"] = p.lambda;
    block["warmup"] = p.warmup;
    block["refit_every"] = p.refit_every;
    block["step_log"] = p.step_log;
  } else if (cfg.kind == "inventory") {
    const auto& p = cfg.inventory;
    block["mode"] = p.mode;
    block["c"] = p.c;
    block["n_traj"] = p.n_traj;
    block["n_mc"] = p.n_mc;
    block["horizon"] = p.horizon;
    block["max_order"] = p.max_order;
    block["shelf_life"] = p.shelf_life;
    block["fifo"] = p.fifo;
    block["ridge"] = p.ridge;
    if (p.mode == "loop") {
      block["iterations"] = p.iterations;
      block["collect_days"] = p.collect_days;
    } else {
      block["trials"] = p.trials;
      block["items"] = p.items;
      block["train_days"] = p.train_days;
      block["cal_days"] = p.cal_days;
      block["test_days"] = p.test_days;
    }
  } else {
    const auto& p = cfg.mdp_verify;
    block = {{"input_json", p.input_json}, {"calibration_tol", p.calibration_tol}};
  }
  return Json{{"kind", cfg.kind}, {"seed", cfg.seed}, {cfg.kind, std::move(block)}};
}

// ---- recalibrate -----------------------------------------------------------

void run_recalibrate(const ExperimentConfig& cfg, RunReport& rep, Json& metrics) {
  const auto& p = cfg.recalibrate;
  const auto rows = load_forecast_csv(p.input_csv);
  const long n = static_cast<long>(rows.size());

  std::vector<double> pits;
  pits.reserve(rows.size());
  for (const auto& r : rows)
    pits.push_back(cdf_eval(Forecast::gaussian(r.mean, r.stddev), r.outcome));

  const long eval_n = std::max<long>(1, static_cast<long>(std::floor(n * p.eval_fraction)));
  const long cal_n = n - eval_n;
  if (cal_n < 10)
    throw std::runtime_error("recalibrate: only " + std::to_string(cal_n) +
                             " calibration rows; need at least 10");

  const std::vector<double> cal(pits.begin(), pits.begin() + cal_n);
  const std::vector<double> eval_pits(pits.begin() + cal_n, pits.end());

  const RecalDataset data = build_recal_dataset(cal);
  const Recalibrator recal = p.method == "isotonic" ? fit_isotonic(data) : fit_sigmoid(data);

  std::vector<double> post;
  post.reserve(eval_pits.size());
  for (double q : eval_pits) post.push_back(recal.apply(q));

  const ReliabilityCurve pre_curve = reliability_curve(eval_pits, p.bins);
  const ReliabilityCurve post_curve = reliability_curve(post, p.bins);

  metrics["rows"] = n;
  metrics["calibration_rows"] = cal_n;
  metrics["eval_rows"] = eval_n;
  metrics["pre_loss"] = calibration_loss(pre_curve);
  metrics["post_loss"] = calibration_loss(post_curve);

  rep.files.emplace_back("reliability_pre.csv", reliability_csv(pre_curve));
  rep.files.emplace_back("reliability_post.csv", reliability_csv(post_curve));
  rep.files.emplace_back("recalibrator.json", recal.to_json() + "\n");
}

// ---- diagnose ---------------------------------------------------------------

bool has_pit_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string first;
  std::getline(in, first);
  if (!first.empty() && first.back() == '\r') first.pop_back();
  while (!first.empty() && (first.back() == ' ' || first.back() == '\t')) first.pop_back();
  return first == "pit";
}

void run_diagnose(const ExperimentConfig& cfg, RunReport& rep, Json& metrics) {
  const auto& p = cfg.diagnose;
  std::vector<double> pits;
  bool have_forecasts = false;
  double sharp = 0.0;
  if (has_pit_header(p.input_csv)) {
    pits = load_pit_csv(p.input_csv);
  } else {
    const auto rows = load_forecast_csv(p.input_csv);
    std::vector<Forecast> forecasts;
    forecasts.reserve(rows.size());
    for (const auto& r : rows) {
      forecasts.push_back(Forecast::gaussian(r.mean, r.stddev));
      pits.push_back(cdf_eval(forecasts.back(), r.outcome));
    }
    sharp = sharpness(forecasts);
    have_forecasts = true;
  }

  const ReliabilityCurve curve = reliability_curve(pits, p.bins);
  const PitHistogram hist = pit_histogram(pits, p.bins);

  metrics["rows"] = static_cast<long>(pits.size());
  metrics["bins"] = p.bins;
  metrics["loss"] = calibration_loss(curve);
  if (have_forecasts) metrics["sharpness"] = sharp;

  std::string hist_csv = "bin,count\n";
  for (int b = 0; b < hist.bins; ++b)
    hist_csv += std::to_string(b) + "," + std::to_string(hist.counts[static_cast<size_t>(b)]) + "\n";
  rep.files.emplace_back("reliability.csv", reliability_csv(curve));
  rep.files.emplace_back("histogram.csv", hist_csv);
}

// ---- bandit ------------------------------------------------------------------

BanditEnv build_bandit_env(const BanditParams& p, std::uint64_t seed) {
  if (p.env == "linear") return BanditEnv::synthetic_linear(p.arms, p.dim, p.noise_sd);
  if (p.env == "beta") return BanditEnv::synthetic_beta(p.arms, p.dim, p.concentration);
  if (p.env == "nonlinear") {
    auto data = make_nonlinear_classification(p.rows, seed);
    return BanditEnv::dataset(std::move(data.features), std::move(data.labels));
  }
  auto data = load_labeled_csv(p.input_csv);
  return BanditEnv::dataset(std::move(data.features), std::move(data.labels));
}

struct ModeSummary {
  std::vector<double> per_trial;
  std::vector<double> per_trial_optimal;
  std::vector<std::string> step_logs;
};

ModeSummary run_bandit_mode(const BanditEnv& env, BanditMode mode, const BanditParams& p,
                            std::uint64_t seed, int threads) {
  ModeSummary out;
  out.per_trial.assign(static_cast<size_t>(p.trials), 0.0);
  out.per_trial_optimal.assign(static_cast<size_t>(p.trials), 0.0);
  out.step_logs.assign(static_cast<size_t>(p.trials), {});
  BanditAgentConfig agent;
  agent.alpha = p.alpha;
  agent.lambda = p.lambda;
  agent.warmup = p.warmup;
  agent.refit_every = p.refit_every;
  parallel_for(p.trials, threads, [&](long t) {
    BanditEnv local = env;
    const auto r =
        run_bandit_trial(local, mode, p.horizon, seed, static_cast<std::uint64_t>(t), agent,
                         p.step_log ? &out.step_logs[static_cast<size_t>(t)] : nullptr);
    out.per_trial[static_cast<size_t>(t)] = r.cumulative;
    out.per_trial_optimal[static_cast<size_t>(t)] = r.optimal;
  });
  return out;
}

Json summarize_mode(const ModeSummary& s) {
  const long n = static_cast<long>(s.per_trial.size());
  double mean = 0.0, mean_opt = 0.0;
  for (long i = 0; i < n; ++i) {
    mean += s.per_trial[static_cast<size_t>(i)];
    mean_opt += s.per_trial_optimal[static_cast<size_t>(i)];
  }
  mean /= static_cast<double>(n);
  mean_opt /= static_cast<double>(n);
  double var = 0.0;
  for (long i = 0; i < n; ++i) {
    const double d = s.per_trial[static_cast<size_t>(i)] - mean;
    var += d * d;
  }
  var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
  Json j;
  j["mean_cumulative_reward"] = mean;
  j["stderr_cumulative_reward"] = std::sqrt(var / static_cast<double>(n));
  j["mean_optimal_reward"] = mean_opt;
  j["per_trial"] = s.per_trial;
  return j;
}

void run_bandit_experiment(const ExperimentConfig& cfg, RunReport& rep, Json& metrics) {
  const auto& p = cfg.bandit;
  const BanditEnv env = build_bandit_env(p, cfg.seed);
  if (env.max_horizon() < p.horizon)
    throw std::runtime_error("bandit: dataset has fewer rows than the horizon");

  const bool want_cal = p.mode != "ucb";
  const bool want_ucb = p.mode != "calibrated";

  ModeSummary cal, ucb;
  if (want_cal) cal = run_bandit_mode(env, BanditMode::Calibrated, p, cfg.seed, cfg.threads);
  if (want_ucb) ucb = run_bandit_mode(env, BanditMode::Ucb, p, cfg.seed, cfg.threads);

  if (want_cal) metrics["calibrated"] = summarize_mode(cal);
  if (want_ucb) metrics["ucb"] = summarize_mode(ucb);

  std::string per_trial_csv = "trial,calibrated,ucb,optimal\n";
  for (int t = 0; t < p.trials; ++t) {
    per_trial_csv += std::to_string(t) + ",";
    per_trial_csv += (want_cal ? fmt(cal.per_trial[static_cast<size_t>(t)]) : "") + ",";
    per_trial_csv += (want_ucb ? fmt(ucb.per_trial[static_cast<size_t>(t)]) : "") + ",";
    const auto& opt = want_cal ? cal.per_trial_optimal : ucb.per_trial_optimal;
    per_trial_csv += fmt(opt[static_cast<size_t>(t)]) + "\n";
  }
  rep.files.emplace_back("per_trial.csv", per_trial_csv);

  if (want_cal && want_ucb) {
    int wins = 0, losses = 0, ties = 0;
    for (int t = 0; t < p.trials; ++t) {
      const double d =
          cal.per_trial[static_cast<size_t>(t)] - ucb.per_trial[static_cast<size_t>(t)];
      if (d > 0)
        ++wins;
      else if (d < 0)
        ++losses;
      else
        ++ties;
    }
    Json paired;
    paired["wins"] = wins;
    paired["losses"] = losses;
    paired["ties"] = ties;
    paired["sign_test_p"] = wins + losses > 0 ? sign_test_p_value(wins, wins + losses) : 1.0;
    metrics["calibrated_vs_ucb"] = paired;
  }

  if (p.step_log) {
    const auto dump_steps = [&](const ModeSummary& s, const std::string& name) {
      std::string csv = "trial,t,arm,reward,optimal_expected\n";
      for (const auto& part : s.step_logs) csv += part;
      rep.files.emplace_back(name, csv);
    };
    if (want_cal) dump_steps(cal, "steps_calibrated.csv");
    if (want_ucb) dump_steps(ucb, "steps_ucb.csv");
  }
}

// ---- inventory ---------------------------------------------------------------

Json episode_json(const EpisodeMetrics& m) {
  Json j;
  j["shipped"] = m.shipped;
  j["sold"] = m.sold;
  j["wasted"] = m.wasted;
  j["stockouts"] = m.stockouts;
  j["terminal_units"] = m.terminal_units;
  j["pct_waste"] = m.pct_waste;
  j["pct_stockouts"] = m.pct_stockouts;
  j["total_reward"] = m.total_reward;
  return j;
}

void run_inventory_benchmark(const ExperimentConfig& cfg, RunReport& rep, Json& metrics) {
  const auto& p = cfg.inventory;
  std::vector<InventoryComparison> rows(static_cast<size_t>(p.trials));
  parallel_for(p.trials, cfg.threads, [&](long t) {
    InventoryBenchConfig bc;
    bc.seed = cfg.seed + static_cast<std::uint64_t>(t);
    bc.items = p.items;
    bc.train_days = p.train_days;
    bc.cal_days = p.cal_days;
    bc.test_days = p.test_days;
    bc.shelf_life = p.shelf_life;
    bc.c = p.c;
    bc.ridge = p.ridge;
    bc.fifo = p.fifo;
    bc.mpc.n_traj = p.n_traj;
    bc.mpc.n_mc = p.n_mc;
    bc.mpc.horizon = p.horizon;
    bc.mpc.max_order = p.max_order;
    rows[static_cast<size_t>(t)] = compare_inventory_policies(bc);
  });

  Json per_seed = Json::array();
  std::string csv =
      "seed,calibrated_reward,uncalibrated_reward,heuristic_reward,calibrated_stockouts,"
      "uncalibrated_stockouts,calibrated_waste,uncalibrated_waste\n";
  int wins = 0, losses = 0, ties = 0;
  int heur_wins = 0, heur_losses = 0, heur_ties = 0;
  double mean_cal = 0.0, mean_unc = 0.0, mean_heur = 0.0;
  long stock_cal = 0, stock_unc = 0, waste_cal = 0, waste_unc = 0;
  bool warned = false;
  for (int t = 0; t < p.trials; ++t) {
    const auto& r = rows[static_cast<size_t>(t)];
    Json row;
    row["seed"] = cfg.seed + static_cast<std::uint64_t>(t);
    row["calibrated"] = episode_json(r.calibrated);
    row["uncalibrated"] = episode_json(r.uncalibrated);
    row["heuristic"] = episode_json(r.heuristic);
    row["recal_warning"] = r.recal_warning;
    per_seed.push_back(std::move(row));

    csv += std::to_string(cfg.seed + static_cast<std::uint64_t>(t)) + "," +
           fmt(r.calibrated.total_reward) + "," + fmt(r.uncalibrated.total_reward) + "," +
           fmt(r.heuristic.total_reward) + "," + std::to_string(r.calibrated.stockouts) + "," +
           std::to_string(r.uncalibrated.stockouts) + "," + std::to_string(r.calibrated.wasted) +
           "," + std::to_string(r.uncalibrated.wasted) + "\n";

    const double d = r.calibrated.total_reward - r.uncalibrated.total_reward;
    if (d > 0)
      ++wins;
    else if (d < 0)
      ++losses;
    else
      ++ties;
    const double dh = r.calibrated.total_reward - r.heuristic.total_reward;
    if (dh > 0)
      ++heur_wins;
    else if (dh < 0)
      ++heur_losses;
    else
      ++heur_ties;
    mean_cal += r.calibrated.total_reward;
    mean_unc += r.uncalibrated.total_reward;
    mean_heur += r.heuristic.total_reward;
    stock_cal += r.calibrated.stockouts;
    stock_unc += r.uncalibrated.stockouts;
    waste_cal += r.calibrated.wasted;
    waste_unc += r.uncalibrated.wasted;
    warned = warned || r.recal_warning;
  }
  const double n = static_cast<double>(p.trials);

  metrics["per_seed"] = std::move(per_seed);
  metrics["mean_reward"] = Json{{"calibrated", mean_cal / n},
                                {"uncalibrated", mean_unc / n},
                                {"heuristic", mean_heur / n}};
  metrics["total_stockouts"] = Json{{"calibrated", stock_cal}, {"uncalibrated", stock_unc}};
  metrics["total_waste"] = Json{{"calibrated", waste_cal}, {"uncalibrated", waste_unc}};
  metrics["calibrated_vs_uncalibrated"] =
      Json{{"wins", wins},
           {"losses", losses},
           {"ties", ties},
           {"sign_test_p", wins + losses > 0 ? sign_test_p_value(wins, wins + losses) : 1.0}};
  metrics["calibrated_vs_heuristic"] = Json{{"wins", heur_wins},
                                            {"losses", heur_losses},
                                            {"ties", heur_ties},
                                            {"mean_gap", (mean_cal - mean_heur) / n}};
  metrics["recal_warning"] = warned;
  rep.files.emplace_back("per_seed.csv", csv);
}

void run_inventory_experiment(const ExperimentConfig& cfg, RunReport& rep, Json& metrics) {
  const auto& p = cfg.inventory;
  if (p.mode == "benchmark") {
    run_inventory_benchmark(cfg, rep, metrics);
    return;
  }
  const auto iters = run_inventory_loop(p, cfg.seed);
  Json arr = Json::array();
  for (const auto& d : iters) {
    Json row;
    row["iteration"] = d.iteration;
    row["train_n"] = d.train_n;
    row["cal_n"] = d.cal_n;
    row["eval_n"] = d.eval_n;
    row["pre_loss"] = d.pre_loss;
    row["post_loss"] = d.post_loss;
    row["eval_pre_loss"] = d.eval_pre_loss;
    row["eval_post_loss"] = d.eval_post_loss;
    arr.push_back(std::move(row));

    char tag[32];
    std::snprintf(tag, sizeof tag, "%02d", d.iteration);
    rep.files.emplace_back("reliability_" + std::string(tag) + "_pre.csv",
                           reliability_csv(d.pre_curve));
    rep.files.emplace_back("reliability_" + std::string(tag) + "_post.csv",
                           reliability_csv(d.post_curve));
    rep.files.emplace_back("reliability_" + std::string(tag) + "_eval_pre.csv",
                           reliability_csv(d.eval_pre_curve));
    rep.files.emplace_back("reliability_" + std::string(tag) + "_eval_post.csv",
                           reliability_csv(d.eval_post_curve));
  }
  metrics["iterations"] = std::move(arr);
  metrics["final_pre_loss"] = iters.back().pre_loss;
  metrics["final_post_loss"] = iters.back().post_loss;
}

// ---- mdp-verify ----------------------------------------------------------------

Eigen::MatrixXd parse_matrix(const Json& j, const std::string& what, long rows, long cols) {
  if (!j.is_array() || static_cast<long>(j.size()) != rows)
    throw std::runtime_error("mdp input: " + what + " must be an array of " + std::to_string(rows) +
                             " rows");
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<long>(row.size()) != cols)
      throw std::runtime_error("mdp input: " + what + " row " + std::to_string(r) + " must hold " +
                               std::to_string(cols) + " numbers");
    for (long c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<size_t>(c)];
      if (!v.is_number())
        throw std::runtime_error("mdp input: " + what + " has a non-numeric entry");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

void run_mdp_verify(const ExperimentConfig& cfg, RunReport&, Json& metrics) {
  const auto& p = cfg.mdp_verify;
  std::ifstream in(p.input_json, std::ios::binary);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("mdp input: " + p.input_json + ": " + e.what());
  }
  if (!doc.is_object()) throw std::runtime_error("mdp input: top level must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (it.key() != "transitions" && it.key() != "rewards" && it.key() != "gamma" &&
        it.key() != "policy" && it.key() != "grouping" && it.key() != "model")
      throw std::runtime_error("mdp input: unknown key '" + it.key() + "'");

  const Json* tj = find_key(doc, "transitions");
  const Json* rj = find_key(doc, "rewards");
  const Json* gj = find_key(doc, "gamma");
  if (!tj || !rj || !gj)
    throw std::runtime_error("mdp input: transitions, rewards, and gamma are required");
  if (!tj->is_array() || tj->empty())
    throw std::runtime_error("mdp input: transitions must be a non-empty array of matrices");
  if (!rj->is_array() || rj->empty())
    throw std::runtime_error("mdp input: rewards must be a non-empty array");
  if (!gj->is_number()) throw std::runtime_error("mdp input: gamma must be a number");

  const long S = static_cast<long>(rj->size());
  const long A = static_cast<long>(tj->size());
  DiscreteMdp mdp;
  mdp.gamma = gj->get<double>();
  mdp.rewards.resize(S);
  for (long s = 0; s < S; ++s) {
    const Json& v = (*rj)[static_cast<size_t>(s)];
    if (!v.is_number()) throw std::runtime_error("mdp input: rewards must be numeric");
    mdp.rewards(s) = v.get<double>();
  }
  for (long a = 0; a < A; ++a)
    mdp.transitions.push_back(parse_matrix((*tj)[static_cast<size_t>(a)],
                                           "transitions[" + std::to_string(a) + "]", S, S));
  mdp.validate();

  Policy policy = Policy::Constant(S, A, 1.0 / static_cast<double>(A));
  if (const Json* pj = find_key(doc, "policy")) policy = parse_matrix(*pj, "policy", S, A);
  validate_policy(mdp, policy);

  Grouping grouping;
  if (const Json* gg = find_key(doc, "grouping")) {
    if (!gg->is_array()) throw std::runtime_error("mdp input: grouping must be an array of arrays");
    for (const auto& g : *gg) {
      if (!g.is_array()) throw std::runtime_error("mdp input: grouping must be an array of arrays");
      std::vector<int> group;
      for (const auto& v : g) {
        if (!v.is_number_integer())
          throw std::runtime_error("mdp input: grouping entries must be integers");
        const long idx = v.get<long>();
        if (idx < 0 || idx >= S * A)
          throw std::runtime_error("mdp input: grouping index out of range");
        group.push_back(static_cast<int>(idx));
      }
      grouping.push_back(std::move(group));
    }
  }

  // Either a grouping (pool the true rows, calibrated by construction) or an
  // explicit claimed model whose calibration is the thing under test.
  std::vector<Eigen::MatrixXd> model;
  if (const Json* mj = find_key(doc, "model")) {
    if (!grouping.empty())
      throw std::runtime_error("mdp input: model and grouping are mutually exclusive");
    if (!mj->is_array() || static_cast<long>(mj->size()) != A)
      throw std::runtime_error("mdp input: model must hold one matrix per action");
    for (long a = 0; a < A; ++a) {
      Eigen::MatrixXd m =
          parse_matrix((*mj)[static_cast<size_t>(a)], "model[" + std::to_string(a) + "]", S, S);
      for (long s = 0; s < S; ++s) {
        if (m.row(s).minCoeff() < -1e-12 || std::abs(m.row(s).sum() - 1.0) > 1e-9)
          throw std::runtime_error("mdp input: model[" + std::to_string(a) + "] row " +
                                   std::to_string(s) + " is not a probability distribution");
      }
      model.push_back(std::move(m));
    }
  } else {
    model = make_calibrated_model(mdp, policy, grouping);
  }

  const Eigen::MatrixXd joint = build_joint(mdp, policy);
  const double gap = check_calibration(model, joint);

  metrics["states"] = S;
  metrics["actions"] = A;
  metrics["gamma"] = mdp.gamma;
  metrics["calibration_gap"] = gap;
  metrics["calibration_tol"] = p.calibration_tol;
  if (gap <= p.calibration_tol) {
    const ValueComparison cmp = compare_policy_values(mdp, policy, model, p.calibration_tol);
    metrics["within_tolerance"] = true;
    metrics["value_true"] = cmp.value_true;
    metrics["value_model"] = cmp.value_model;
    metrics["abs_difference"] = std::abs(cmp.value_true - cmp.value_model);
  } else {
    metrics["within_tolerance"] = false;
  }
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out.good()) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

// ---- public entry points ------------------------------------------------------

void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
  if (n <= 0) return;
  const long k = std::max<long>(1, std::min<long>(threads, n));
  if (k == 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::mutex guard;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(k));
  for (long w = 0; w < k; ++w)
    pool.emplace_back([&] {
      while (true) {
        const long i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(guard);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

ExperimentConfig parse_experiment_config(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");

  ExperimentConfig cfg;
  cfg.kind = require_string(doc, "config", "kind");
  require_choice(cfg.kind, "config", "kind",
                 {"recalibrate", "diagnose", "bandit", "inventory", "mdp-verify"});
  reject_unknown(doc, "config",
                 {"kind", "seed", "out_dir", "force", "threads", cfg.kind.c_str()});

  const Json* seed = find_key(doc, "seed");
  if (!seed) throw ConfigError("config: missing required key 'seed' (runs never seed themselves)");
  if (!seed->is_number_integer() || (seed->is_number_integer() && !seed->is_number_unsigned() &&
                                     seed->get<long long>() < 0))
    throw ConfigError("config: 'seed' must be a nonnegative integer");
  cfg.seed = seed->get<std::uint64_t>();

  cfg.out_dir = get_string(doc, "config", "out_dir", "");
  cfg.force = get_flag(doc, "config", "force", false);
  cfg.threads = static_cast<int>(get_integer(doc, "config", "threads", 1, 1, 64));

  const Json* block = find_key(doc, cfg.kind);
  if (!block) throw ConfigError("config: missing required block '" + cfg.kind + "'");
  if (!block->is_object()) throw ConfigError("config: block '" + cfg.kind + "' must be an object");

  if (cfg.kind == "recalibrate")
    cfg.recalibrate = parse_recalibrate(*block);
  else if (cfg.kind == "diagnose")
    cfg.diagnose = parse_diagnose(*block);
  else if (cfg.kind == "bandit")
    cfg.bandit = parse_bandit(*block);
  else if (cfg.kind == "inventory")
    cfg.inventory = parse_inventory(*block);
  else
    cfg.mdp_verify = parse_mdp_verify(*block);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return parse_experiment_config(doc);
}

std::vector<LoopIterationDiagnostics> run_inventory_loop(const InventoryParams& p,
                                                         std::uint64_t seed) {
  const int H = p.horizon;
  const long total_days = p.collect_days * (static_cast<long>(p.iterations) + 1);
  const SyntheticItem item = make_synthetic_item(seed, 0, total_days);

  std::vector<double> observed;  // accumulated sales, day 0 onward
  observed.reserve(static_cast<size_t>(total_days));
  DemandForecaster model;
  std::vector<LoopIterationDiagnostics> out;

  const auto collect = [&](long round, const OrderPolicy& policy) {
    const long first = static_cast<long>(observed.size());
    const std::vector<int> slice(item.demand.begin() + first,
                                 item.demand.begin() + first + p.collect_days);
    RngStream alloc(seed, loop_alloc_space + static_cast<std::uint64_t>(round));
    std::vector<DayLog> log;
    run_episode(slice, observed, first, p.shelf_life, policy, alloc, p.fifo, &log);
    for (const auto& d : log) observed.push_back(static_cast<double>(d.sales));
  };

  const auto refit = [&](int iteration) {
    const long n = static_cast<long>(observed.size());
    const long train_n = loop_train_size(n);
    if (loop_cal_pairs(n, H) < 30)
      throw std::runtime_error("refresh loop: calibration split has only " +
                               std::to_string(loop_cal_pairs(n, H)) +
                               " pairs at the longest horizon; need at least 30");
    const std::vector<double> train(observed.begin(), observed.begin() + train_n);
    const DemandForecaster raw = fit_demand_model(train, 0, p.c, H, p.ridge);

    DemandForecaster recal = raw;
    for (int h = 1; h <= H; ++h) {
      std::vector<double> fit_pits;
      for (long base = train_n; base + h < n; ++base) {
        if (loop_eval_day(base, train_n)) continue;
        const Eigen::VectorXd phi = demand_features(observed, base, 0, h);
        fit_pits.push_back(forecast_cdf(raw, phi, h, observed[static_cast<size_t>(base + h)]));
      }
      recal.recal[static_cast<size_t>(h - 1)] = fit_isotonic(build_recal_dataset(fit_pits));
    }

    std::vector<double> pre, post, eval_pre, eval_post;
    for (int h = 1; h <= H; ++h)
      for (long base = train_n; base + h < n; ++base) {
        const Eigen::VectorXd phi = demand_features(observed, base, 0, h);
        const double y = observed[static_cast<size_t>(base + h)];
        const double raw_pit = forecast_cdf(raw, phi, h, y);
        const double rec_pit = forecast_cdf(recal, phi, h, y);
        if (loop_eval_day(base, train_n)) {
          eval_pre.push_back(raw_pit);
          eval_post.push_back(rec_pit);
        } else {
          pre.push_back(raw_pit);
          post.push_back(rec_pit);
        }
      }

    LoopIterationDiagnostics d;
    d.iteration = iteration;
    d.train_n = train_n;
    d.cal_n = static_cast<long>(pre.size());
    d.eval_n = static_cast<long>(eval_pre.size());
    d.pre_curve = reliability_curve(pre, 10);
    d.post_curve = reliability_curve(post, 10);
    d.eval_pre_curve = reliability_curve(eval_pre, 10);
    d.eval_post_curve = reliability_curve(eval_post, 10);
    d.pre_loss = calibration_loss(d.pre_curve);
    d.post_loss = calibration_loss(d.post_curve);
    d.eval_pre_loss = calibration_loss(d.eval_pre_curve);
    d.eval_post_loss = calibration_loss(d.eval_post_curve);
    out.push_back(std::move(d));
    model = recal;
  };

  // bootstrap: a generous constant order keeps sales tracking demand
  collect(0, [&](const InventoryState&, const std::vector<double>&, long) { return p.max_order; });
  refit(0);

  for (int it = 1; it <= p.iterations; ++it) {
    const OrderPolicy planner = [&](const InventoryState& st, const std::vector<double>& obs,
                                    long day) {
      const long base = static_cast<long>(obs.size()) - 1;
      std::vector<Eigen::VectorXd> phis;
      phis.reserve(static_cast<size_t>(H));
      for (int h = 1; h <= H; ++h) phis.push_back(demand_features(obs, base, 0, h));
      MpcConfig mc;
      mc.n_traj = p.n_traj;
      mc.n_mc = p.n_mc;
      mc.horizon = H;
      mc.max_order = p.max_order;
      RngStream r(seed, loop_mpc_space + static_cast<std::uint64_t>(day));
      return mpc_plan(st, model, phis, mc, r);
    };
    collect(it, planner);
    refit(it);
  }
  return out;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto start = Clock::now();
  RunReport rep;

  Json input_hash = Json::object();
  if (cfg.kind == "recalibrate")
    input_hash["input_csv"] = file_blob_hash_hex(cfg.recalibrate.input_csv);
  else if (cfg.kind == "diagnose")
    input_hash["input_csv"] = file_blob_hash_hex(cfg.diagnose.input_csv);
  else if (cfg.kind == "bandit" && cfg.bandit.env == "dataset")
    input_hash["input_csv"] = file_blob_hash_hex(cfg.bandit.input_csv);
  else if (cfg.kind == "mdp-verify")
    input_hash["input_json"] = file_blob_hash_hex(cfg.mdp_verify.input_json);
  const double hash_seconds = seconds_since(start);

  Json metrics = Json::object();
  const auto run_start = Clock::now();
  if (cfg.kind == "recalibrate")
    run_recalibrate(cfg, rep, metrics);
  else if (cfg.kind == "diagnose")
    run_diagnose(cfg, rep, metrics);
  else if (cfg.kind == "bandit")
    run_bandit_experiment(cfg, rep, metrics);
  else if (cfg.kind == "inventory")
    run_inventory_experiment(cfg, rep, metrics);
  else
    run_mdp_verify(cfg, rep, metrics);
  const double run_seconds = seconds_since(run_start);

  rep.document["schema_version"] = 1;
  rep.document["kind"] = cfg.kind;
  rep.document["seed"] = cfg.seed;
  rep.document["config"] = echo_config(cfg);
  rep.document["input_hash"] = std::move(input_hash);
  rep.document["metrics"] = std::move(metrics);

  rep.timings["kind"] = cfg.kind;
  rep.timings["out_dir"] = cfg.out_dir;
  rep.timings["threads"] = cfg.threads;
  rep.timings["force"] = cfg.force;
  rep.timings["seconds"] =
      Json{{"hash_inputs", hash_seconds}, {"run", run_seconds}, {"total", seconds_since(start)}};
  return rep;
}

void emit_report(const RunReport& report, const std::string& out_dir, bool force) {
  if (out_dir.empty())
    throw ConfigError("config: no output directory given (set out_dir or pass --out)");
  fs::create_directories(out_dir);
  const fs::path report_path = fs::path(out_dir) / "report.json";
  if (fs::exists(report_path) && !force)
    throw std::runtime_error("refusing to overwrite " + report_path.string() +
                             "; pass force to replace it");
  write_text_file(report_path, report.document.dump(2) + "\n");
  write_text_file(fs::path(out_dir) / "timings.json", report.timings.dump(2) + "\n");
  for (const auto& [name, content] : report.files) write_text_file(fs::path(out_dir) / name, content);
}

}  // namespace calib
