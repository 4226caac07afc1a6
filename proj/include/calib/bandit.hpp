#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calib/forecast.hpp"
#include "calib/recalibration.hpp"
#include "calib/rng.hpp"

namespace calib {

// Ridge regression state for one arm: A = lambda I + sum x x^T, b = sum r x.
struct LinUcbArm {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::LLT<Eigen::MatrixXd> chol;
  long pulls = 0;
  std::vector<double> pit_history;  // cdf of each observed reward under the pre-update forecast
  std::optional<Recalibrator> recal;
};

enum class BanditMode { Ucb, Calibrated };

struct BanditAgentConfig {
  double alpha = 1.0;
  double lambda = 1.0;
  int warmup = 30;       // minimum pulls before an arm's recalibrator activates
  int refit_every = 25;  // refit cadence past warmup
};

// Contextual bandit agent. Ucb mode scores mean + alpha * stddev. Calibrated
// mode scores the recalibrated quantile at q = normal_cdf(alpha) for arms
// whose recalibrator is fitted (pulls >= warmup); an absent recalibrator is
// the identity map, which reduces to the plain Ucb score.
class BanditAgent {
 public:
  BanditAgent(BanditMode mode, int arms, int dim, const BanditAgentConfig& cfg = {});

  Forecast predict(int arm, const Eigen::VectorXd& x) const;
  double score(int arm, const Eigen::VectorXd& x) const;
  int select(const Eigen::VectorXd& x) const;  // ties go to the lowest index
  void update(int arm, const Eigen::VectorXd& x, double reward);

  void set_recalibrator(int arm, std::optional<Recalibrator> recal);
  const LinUcbArm& arm_state(int arm) const;
  BanditMode mode() const { return mode_; }
  int arms() const { return static_cast<int>(arms_.size()); }
  int dim() const { return dim_; }

 private:
  BanditMode mode_;
  int dim_;
  BanditAgentConfig cfg_;
  double q_alpha_;
  std::vector<LinUcbArm> arms_;
};

// Environments. Context features always end with a constant intercept term.
// Env randomness is drawn independently of the chosen arm wherever the
// reward structure allows it, so runs with equal (seed, trial) pairs are
// step-for-step paired across agents.
class BanditEnv {
 public:
  struct Step {
    double reward;
    double optimal_expected;  // best arm's expected reward for this context
  };

  // rewards theta_a . x + noise, noise ~ N(0, noise_sd)
  static BanditEnv synthetic_linear(int arms, int dim, double noise_sd = 0.25);
  // rewards Beta with mean logistic(theta_a . x) and given concentration
  static BanditEnv synthetic_beta(int arms, int dim, double concentration = 8.0);
  // reward 1 when the arm matches the row's label; features standardized
  static BanditEnv dataset(Eigen::MatrixXd features, std::vector<int> labels);

  int arms() const { return arms_; }
  int dim() const { return dim_; }
  long max_horizon() const;

  void reset(std::uint64_t seed, std::uint64_t trial);
  Eigen::VectorXd context(long t);
  int oracle_arm() const;  // best arm for the most recent context
  Step pull(long t, int arm);

 private:
  BanditEnv() = default;
  enum class Kind { Linear, Beta, Dataset } kind_ = Kind::Linear;
  int arms_ = 0, dim_ = 0;
  double noise_sd_ = 0.25, concentration_ = 8.0;
  std::vector<Eigen::VectorXd> thetas_;
  Eigen::MatrixXd rows_;
  std::vector<int> labels_;
  std::vector<long> order_;
  RngStream rng_{0, 0};
  Eigen::VectorXd last_context_;
  int oracle_arm_ = 0;
  double oracle_value_ = 0.0;
};

struct BanditRunSummary {
  double mean_cumulative_reward = 0.0;
  double stderr_cumulative_reward = 0.0;
  double mean_optimal_reward = 0.0;
  std::vector<double> per_trial;
  std::vector<double> per_trial_optimal;
  std::string per_step_csv;  // filled only when requested
};

struct BanditTrialResult {
  double cumulative = 0.0;
  double optimal = 0.0;
};

// One trial on a caller-owned env (reset internally). Extracted so callers
// can fan trials out over worker threads with one env copy per task.
BanditTrialResult run_bandit_trial(BanditEnv& env, BanditMode mode, long horizon,
                                   std::uint64_t seed, std::uint64_t trial,
                                   const BanditAgentConfig& cfg = {},
                                   std::string* step_csv = nullptr);

BanditRunSummary run_bandit(BanditEnv env, BanditMode mode, long horizon, int trials,
                            std::uint64_t seed, const BanditAgentConfig& cfg = {},
                            bool keep_step_log = false);

// Synthetic multiclass rows whose boundaries no linear score matches; used
// as a misspecified dataset environment.
struct ClassificationData {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int classes = 0;
};

ClassificationData make_nonlinear_classification(long rows, std::uint64_t seed);

// Exact one-sided sign test: probability of at least `positives` successes
// out of n fair coin flips.
double sign_test_p_value(int positives, int n);

}  // namespace calib
