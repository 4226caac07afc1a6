// Acceptance harness: one line per criterion, nonzero exit when any fails.
// Thresholds are pinned in code next to each check. --full switches the
// inventory comparison to the large planning budget; --only N runs a single
// criterion while debugging.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "calib/bandit.hpp"
#include "calib/diagnostics.hpp"
#include "calib/experiment.hpp"
#include "calib/forecast.hpp"
#include "calib/inventory.hpp"
#include "calib/mdp.hpp"
#include "calib/normal.hpp"
#include "calib/recalibration.hpp"
#include "calib/rng.hpp"

using namespace calib;
namespace fs = std::filesystem;

namespace {

bool g_full_budget = false;

struct Outcome {
  bool pass = false;
  std::string detail;
  double time_limit = 0.0;  // seconds; 0 = unbounded
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

Outcome recalibration_repair() {
  RngStream rng(2026, 1);
  const auto draw_pits = [&](int n) {
    std::vector<double> pits;
    pits.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double mu = 10.0 * rng.uniform01() - 5.0;
      const double sd = 0.5 + 1.5 * rng.uniform01();
      const double y = mu + sd * normal_quantile(rng.uniform01());
      // the forecaster understates its spread by half
      pits.push_back(cdf_eval(Forecast::gaussian(mu, 0.5 * sd), y));
    }
    return pits;
  };

  const std::vector<double> cal = draw_pits(10000);
  const std::vector<double> held = draw_pits(10000);
  const double uncal = calibration_loss(cal, 10);

  const Recalibrator recal = fit_isotonic(build_recal_dataset(cal));
  std::vector<double> post;
  post.reserve(held.size());
  for (double p : held) post.push_back(recal.apply(p));
  const double heldout = calibration_loss(post, 10);

  Outcome out;
  out.pass = uncal > 0.05 && heldout < 0.005;
  out.detail = "uncalibrated_loss=" + fmt("%.4f", uncal) + " (need > 0.05), heldout_loss=" +
               fmt("%.5f", heldout) + " (need < 0.005), n=10000, m=10";
  out.time_limit = 10.0;
  return out;
}

// ---------------------------------------------------------------- criterion 2

Outcome coarsened_expectation_equality() {
  RngStream rng(2026, 2);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const long nx = 2 + static_cast<long>(rng.below(5));
    const long ny = 2 + static_cast<long>(rng.below(5));
    Eigen::MatrixXd joint(nx, ny);
    for (long x = 0; x < nx; ++x)
      for (long y = 0; y < ny; ++y) joint(x, y) = -std::log(rng.uniform01());
    joint /= joint.sum();

    // pool conditional rows over a random partition of X
    std::vector<long> group(static_cast<size_t>(nx));
    for (auto& g : group) g = static_cast<long>(rng.below(static_cast<std::uint64_t>(nx)));
    Eigen::MatrixXd model(nx, ny);
    for (long x = 0; x < nx; ++x) {
      Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(ny);
      double mass = 0.0;
      for (long x2 = 0; x2 < nx; ++x2) {
        if (group[static_cast<size_t>(x2)] != group[static_cast<size_t>(x)]) continue;
        pooled += joint.row(x2);
        mass += joint.row(x2).sum();
      }
      model.row(x) = pooled / mass;
    }

    Eigen::VectorXd g(ny);
    for (long y = 0; y < ny; ++y) g(y) = normal_quantile(rng.uniform01());

    const ExpectationPair pair = expectation_equality(joint, model, g, 1e-9);
    worst = std::max(worst, std::abs(pair.direct - pair.factored));
  }

  Outcome out;
  out.pass = worst < 1e-12;
  out.detail = "worst |direct - factored| = " + fmt("%.3e", worst) +
               " over 100 joints (need < 1e-12)";
  out.time_limit = 5.0;
  return out;
}

// ---------------------------------------------------------------- criterion 3

DiscreteMdp random_mdp(RngStream& rng, int S, int A, double gamma) {
  DiscreteMdp mdp;
  mdp.gamma = gamma;
  mdp.rewards.resize(S);
  for (int s = 0; s < S; ++s) mdp.rewards(s) = 2.0 * rng.uniform01() - 1.0;
  for (int a = 0; a < A; ++a) {
    Eigen::MatrixXd t(S, S);
    for (int s = 0; s < S; ++s) {
      for (int s2 = 0; s2 < S; ++s2) t(s, s2) = -std::log(rng.uniform01());
      t.row(s) /= t.row(s).sum();
    }
    mdp.transitions.push_back(std::move(t));
  }
  return mdp;
}

Policy random_policy(RngStream& rng, int S, int A) {
  Policy policy(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) policy(s, a) = -std::log(rng.uniform01());
    policy.row(s) /= policy.row(s).sum();
  }
  return policy;
}

Grouping random_grouping(RngStream& rng, int pairs) {
  const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(pairs)));
  std::vector<std::vector<int>> buckets(static_cast<size_t>(k));
  for (int i = 0; i < pairs; ++i)
    buckets[rng.below(static_cast<std::uint64_t>(k))].push_back(i);
  Grouping grouping;
  for (auto& b : buckets)
    if (!b.empty()) grouping.push_back(std::move(b));
  return grouping;
}

Outcome pooled_value_equivalence() {
  RngStream rng(2026, 3);
  const double gammas[3] = {0.5, 0.9, 0.99};
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int S = 2 + static_cast<int>(rng.below(7));
    const int A = 1 + static_cast<int>(rng.below(4));
    const DiscreteMdp mdp = random_mdp(rng, S, A, gammas[k % 3]);
    const Policy policy = random_policy(rng, S, A);
    const Grouping grouping = random_grouping(rng, S * A);
    const auto model = make_calibrated_model(mdp, policy, grouping);
    const ValueComparison cmp = compare_policy_values(mdp, policy, model, 1e-9);
    worst = std::max(worst, std::abs(cmp.value_true - cmp.value_model));
  }

  // counterexample: mass +-0.1 moved inside one model row must be detectable
  // through some reward vector
  RngStream rng2(2026, 33);
  DiscreteMdp mdp = random_mdp(rng2, 5, 2, 0.9);
  const Policy policy = random_policy(rng2, 5, 2);
  auto model = make_calibrated_model(mdp, policy, Grouping{});
  Eigen::MatrixXd::Index jmax, jmin;
  model[0].row(0).maxCoeff(&jmax);
  model[0].row(0).minCoeff(&jmin);
  model[0](0, jmax) -= 0.1;  // rows are strictly positive with max >= 1/S > 0.1
  model[0](0, jmin) += 0.1;
  double adversarial = 0.0;
  for (int s = 0; s < 5; ++s) {
    DiscreteMdp probe = mdp;
    probe.rewards = Eigen::VectorXd::Unit(5, s);
    const ValueComparison cmp =
        compare_policy_values(probe, policy, model, std::numeric_limits<double>::infinity());
    adversarial = std::max(adversarial, std::abs(cmp.value_true - cmp.value_model));
  }

  Outcome out;
  out.pass = worst < 1e-9 && adversarial > 1e-6;
  out.detail = "worst |V_true - V_model| = " + fmt("%.3e", worst) +
               " over 50 MDPs (need < 1e-9); perturbed-model gap = " + fmt("%.3e", adversarial) +
               " (need > 1e-6)";
  out.time_limit = 30.0;
  return out;
}

// ---------------------------------------------------------------- criterion 4

Outcome linear_bandit_parity() {
  const BanditEnv env = BanditEnv::synthetic_linear(4, 5, 0.25);
  const BanditRunSummary cal = run_bandit(env, BanditMode::Calibrated, 2000, 10, 2026);
  const BanditRunSummary ucb = run_bandit(env, BanditMode::Ucb, 2000, 10, 2026);

  const double gap = std::abs(cal.mean_cumulative_reward - ucb.mean_cumulative_reward);
  const double se = std::sqrt(cal.stderr_cumulative_reward * cal.stderr_cumulative_reward +
                              ucb.stderr_cumulative_reward * ucb.stderr_cumulative_reward);
  const double cal_frac = cal.mean_cumulative_reward / cal.mean_optimal_reward;
  const double ucb_frac = ucb.mean_cumulative_reward / ucb.mean_optimal_reward;

  Outcome out;
  out.pass = gap <= 2.0 * se && cal_frac >= 0.95 && ucb_frac >= 0.95;
  out.detail = "mean gap=" + fmt("%.2f", gap) + " vs 2*SE=" + fmt("%.2f", 2.0 * se) +
               "; optimal fraction cal=" + fmt("%.3f", cal_frac) + " ucb=" + fmt("%.3f", ucb_frac) +
               " (need >= 0.95)";
  out.time_limit = 60.0;
  return out;
}

// ---------------------------------------------------------------- criterion 5

Outcome misspecified_bandit_direction() {
  const ClassificationData data = make_nonlinear_classification(6000, 11);
  const BanditEnv env = BanditEnv::dataset(data.features, data.labels);
  const int trials = 12;
  const BanditRunSummary cal = run_bandit(env, BanditMode::Calibrated, 2000, trials, 2026);
  const BanditRunSummary ucb = run_bandit(env, BanditMode::Ucb, 2000, trials, 2026);

  int wins = 0, losses = 0;
  for (int t = 0; t < trials; ++t) {
    const double d = cal.per_trial[static_cast<size_t>(t)] - ucb.per_trial[static_cast<size_t>(t)];
    if (d > 0) ++wins;
    if (d < 0) ++losses;
  }
  const double p = sign_test_p_value(wins, wins + losses);

  Outcome out;
  out.pass = p < 0.05;
  out.detail = "calibrated wins " + std::to_string(wins) + "/" + std::to_string(wins + losses) +
               " paired trials, one-sided sign test p=" + fmt("%.4f", p) + " (need < 0.05); means " +
               fmt("%.1f", cal.mean_cumulative_reward) + " vs " +
               fmt("%.1f", ucb.mean_cumulative_reward);
  return out;
}

// ---------------------------------------------------------------- criterion 6

Outcome inventory_direction() {
  const int seeds = 10;
  std::vector<InventoryComparison> results(seeds);
  const int threads =
      std::max(1, std::min(seeds, static_cast<int>(std::thread::hardware_concurrency())));
  parallel_for(seeds, threads, [&](long s) {
    InventoryBenchConfig cfg;
    cfg.seed = 2026 + static_cast<std::uint64_t>(s);
    cfg.items = 100;
    cfg.train_days = 600;
    cfg.cal_days = 150;
    cfg.test_days = 90;
    cfg.c = 0.3;
    cfg.mpc.n_traj = g_full_budget ? 5000 : 500;
    cfg.mpc.n_mc = g_full_budget ? 300 : 50;
    results[static_cast<size_t>(s)] = compare_inventory_policies(cfg);
  });

  int wins = 0, losses = 0;
  double cal_mean = 0.0, uncal_mean = 0.0, heur_mean = 0.0;
  long cal_stockouts = 0, uncal_stockouts = 0;
  for (const auto& r : results) {
    const double d = r.calibrated.total_reward - r.uncalibrated.total_reward;
    if (d > 0) ++wins;
    if (d < 0) ++losses;
    cal_mean += r.calibrated.total_reward / seeds;
    uncal_mean += r.uncalibrated.total_reward / seeds;
    heur_mean += r.heuristic.total_reward / seeds;
    cal_stockouts += r.calibrated.stockouts;
    uncal_stockouts += r.uncalibrated.stockouts;
  }
  const double p = sign_test_p_value(wins, wins + losses);

  Outcome out;
  out.pass = p < 0.05 && cal_mean >= heur_mean && uncal_stockouts > cal_stockouts;
  out.detail = "calibrated beats uncalibrated " + std::to_string(wins) + "/" +
               std::to_string(wins + losses) + " (p=" + fmt("%.4f", p) +
               ", need < 0.05); means cal=" + fmt("%.0f", cal_mean) + " uncal=" +
               fmt("%.0f", uncal_mean) + " heuristic=" + fmt("%.0f", heur_mean) +
               "; stockouts uncal=" + std::to_string(uncal_stockouts) + " > cal=" +
               std::to_string(cal_stockouts) + (g_full_budget ? " [full budget]" : "");
  out.time_limit = g_full_budget ? 0.0 : 600.0;
  return out;
}

// ---------------------------------------------------------------- criterion 7

// exhaustive monotone least squares on n points: every optimal fit is
// piecewise constant on contiguous blocks at the block mean with
// non-decreasing block means, so scanning all 2^(n-1) block layouts finds it
std::vector<double> exhaustive_isotonic(const std::vector<double>& targets) {
  const int n = static_cast<int>(targets.size());
  std::vector<double> best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<double> fit(static_cast<size_t>(n));
    double sse = 0.0, prev_mean = -std::numeric_limits<double>::infinity();
    bool monotone = true;
    int start = 0;
    for (int i = 0; i < n; ++i) {
      const bool block_ends = i == n - 1 || (mask & (1u << i));
      if (!block_ends) continue;
      double mean = 0.0;
      for (int j = start; j <= i; ++j) mean += targets[static_cast<size_t>(j)];
      mean /= (i - start + 1);
      if (mean < prev_mean) {
        monotone = false;
        break;
      }
      for (int j = start; j <= i; ++j) {
        fit[static_cast<size_t>(j)] = mean;
        const double r = targets[static_cast<size_t>(j)] - mean;
        sse += r * r;
      }
      prev_mean = mean;
      start = i + 1;
    }
    if (monotone && sse < best_sse) {
      best_sse = sse;
      best = fit;
    }
  }
  return best;
}

Outcome isotonic_oracle() {
  RngStream rng(2026, 7);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int n = 2 + static_cast<int>(rng.below(7));
    RecalDataset data;
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
      p += rng.uniform01();  // strictly increasing p, ties exercised elsewhere
      data.points.push_back({p / (n + 1.0), rng.uniform01()});
    }
    std::vector<double> targets;
    for (const auto& pt : data.points) targets.push_back(pt.target);
    const std::vector<double> oracle = exhaustive_isotonic(targets);
    const Recalibrator recal = fit_isotonic(data);
    for (int i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(recal.apply(data.points[static_cast<size_t>(i)].p) -
                                       oracle[static_cast<size_t>(i)]));
  }

  Outcome out;
  out.pass = worst < 1e-9;
  out.detail = "worst |fit - exhaustive| = " + fmt("%.3e", worst) +
               " over 1000 instances, n <= 8 (need < 1e-9)";
  return out;
}

// ---------------------------------------------------------------- criterion 8

Forecast random_forecast(RngStream& rng, int kind) {
  if (kind == 0)
    return Forecast::gaussian(10.0 * rng.uniform01() - 5.0, 0.1 + 2.9 * rng.uniform01());
  const int k = 2 + static_cast<int>(rng.below(39));
  std::vector<double> xs(static_cast<size_t>(k));
  for (auto& x : xs) x = 20.0 * rng.uniform01() - 10.0;
  if (kind == 1) return Forecast::empirical(xs);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  if (xs.size() < 2) xs.push_back(xs.back() + 1.0);
  std::vector<double> cdf(xs.size());
  cdf[0] = 0.0;
  double acc = 0.0;
  for (size_t i = 1; i < cdf.size(); ++i) {
    acc += rng.uniform01();
    cdf[i] = acc;
  }
  for (size_t i = 1; i < cdf.size(); ++i) cdf[i] /= acc;  // runs 0 -> 1 exactly
  return Forecast::piecewise_linear(xs, cdf);
}

Outcome quantile_laws() {
  RngStream rng(2026, 8);
  long violations = 0;
  for (int k = 0; k < 1000; ++k) {
    const Forecast f = random_forecast(rng, k % 3);
    for (int j = 0; j <= 100; ++j) {
      const double p = j / 100.0;
      const double q = f.quantile(p);
      if (!(f.cdf(q) >= p)) ++violations;        // cdf(quantile(p)) >= p
      if (!(f.quantile(f.cdf(q)) <= q)) ++violations;  // quantile(cdf(y)) <= y
    }
    for (int j = 0; j < 10; ++j) {
      const double y = f.sample(rng);  // in-support outcomes
      if (!(f.quantile(f.cdf(y)) <= y)) ++violations;
    }
  }

  Outcome out;
  out.pass = violations == 0;
  out.detail = std::to_string(violations) +
               " violations over 1000 forecasts x (101 grid points + 10 random outcomes)";
  return out;
}

// ---------------------------------------------------------------- criterion 9

int run_cli(const std::string& args, const fs::path& log_dir) {
  const std::string cmd = std::string(CALIB_CLI_PATH) + " " + args + " >" +
                          (log_dir / "stdout.txt").string() + " 2>" +
                          (log_dir / "stderr.txt").string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome report_determinism() {
  const fs::path dir =
      fs::temp_directory_path() / ("calib_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);

  const Json bandit_cfg{
      {"kind", "bandit"},
      {"seed", 31},
      {"bandit", {{"env", "linear"}, {"trials", 6}, {"horizon", 400}}}};
  const Json inv_cfg{{"kind", "inventory"},
                     {"seed", 32},
                     {"inventory",
                      {{"mode", "benchmark"},
                       {"trials", 3},
                       {"items", 3},
                       {"train_days", 150},
                       {"cal_days", 50},
                       {"test_days", 15},
                       {"n_traj", 30},
                       {"n_mc", 10}}}};
  {
    std::ofstream(dir / "bandit.json") << bandit_cfg.dump();
    std::ofstream(dir / "inventory.json") << inv_cfg.dump();
  }

  bool pass = true;
  std::string detail;
  const auto check_kind = [&](const std::string& kind, const fs::path& cfg) {
    const std::string base = (dir / kind).string();
    if (run_cli(kind + " " + cfg.string() + " --out " + base + "_a", dir) != 0) pass = false;
    if (run_cli(kind + " " + cfg.string() + " --out " + base + "_a --force", dir) != 0)
      pass = false;  // rerun over the same directory
    if (run_cli(kind + " " + cfg.string() + " --out " + base + "_b --threads 4", dir) != 0)
      pass = false;
    const std::string a = slurp(fs::path(base + "_a") / "report.json");
    const std::string b = slurp(fs::path(base + "_b") / "report.json");
    const bool same = !a.empty() && a == b;
    pass = pass && same;
    if (!detail.empty()) detail += "; ";
    detail += kind + " rerun+threads " + (same ? "identical" : "DIFFER") + " (" +
              std::to_string(a.size()) + " bytes)";
  };
  check_kind("bandit", dir / "bandit.json");
  check_kind("inventory", dir / "inventory.json");

  Outcome out;
  out.pass = pass;
  out.detail = detail;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--full") g_full_budget = true;
    else if (arg == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
    else {
      std::fprintf(stderr, "usage: acceptance [--full] [--only N]\n");
      return 2;
    }
  }

  struct Entry {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {1, "recalibration repair", recalibration_repair},
      {2, "coarsened expectation equality", coarsened_expectation_equality},
      {3, "pooled-model value equivalence", pooled_value_equivalence},
      {4, "well-specified bandit parity", linear_bandit_parity},
      {5, "misspecified bandit direction", misspecified_bandit_direction},
      {6, "inventory policy ordering", inventory_direction},
      {7, "isotonic exhaustive oracle", isotonic_oracle},
      {8, "quantile laws", quantile_laws},
      {9, "report determinism", report_determinism},
  };

  int failures = 0;
  for (const Entry& e : entries) {
    if (only != 0 && e.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = e.fn();
    } catch (const std::exception& ex) {
      out.pass = false;
      out.detail = std::string("exception: ") + ex.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = out.time_limit <= 0.0 || secs < out.time_limit;
    const bool pass = out.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] %d %s: %s (%.1fs%s)\n", pass ? "PASS" : "FAIL", e.id, e.name,
                out.detail.c_str(), secs,
                out.time_limit > 0.0 && !in_time
                    ? (", over the " + fmt("%.0f", out.time_limit) + "s limit").c_str()
                    : "");
    std::fflush(stdout);
  }

  if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
