#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace calib {

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationGapError : std::runtime_error {
  double violation;
  explicit CalibrationGapError(double v);
};

// Finite MDP with state rewards. transitions[a] is S x S, rows sum to 1
// within 1e-12. gamma in [0, 1).
struct DiscreteMdp {
  std::vector<Eigen::MatrixXd> transitions;
  Eigen::VectorXd rewards;
  double gamma = 0.9;

  int n_states() const { return static_cast<int>(rewards.size()); }
  int n_actions() const { return static_cast<int>(transitions.size()); }
  void validate() const;
};

// policy(s, a) = probability of action a in state s; rows sum to 1.
using Policy = Eigen::MatrixXd;

void validate_policy(const DiscreteMdp& mdp, const Policy& policy);

// State chain under the policy: M(s, s') = sum_a policy(s, a) T_a(s, s').
Eigen::MatrixXd induced_chain(const DiscreteMdp& mdp, const Policy& policy);

struct StationaryOptions {
  double tol = 1e-12;
  long max_iters = 1000000;
  bool smooth = false;  // mix the chain with uniform at weight 1e-6 first
};

// Stationary distribution by power iteration from uniform. Throws
// ConvergenceError when the chain is reducible or the iteration stalls.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& chain,
                                        const StationaryOptions& opts = {});

// Fixed point of V = r + gamma M V, iterated until the sup-norm change is
// below 1e-12.
Eigen::VectorXd evaluate_policy(const DiscreteMdp& mdp, const Policy& policy);

// Stationary-weighted state value.
double policy_value(const DiscreteMdp& mdp, const Policy& policy);

// Joint distribution over (state, action) pairs and next states under the
// policy's stationary distribution. Pairs flatten as s * n_actions + a; the
// matrix is (S*A) x S and sums to 1 within 1e-10.
Eigen::MatrixXd build_joint(const DiscreteMdp& mdp, const Policy& policy);

// Groups of flattened (s, a) indices whose transition rows get pooled.
using Grouping = std::vector<std::vector<int>>;

// Replace each grouped row by the joint-mass-weighted average of its group's
// true rows. Ungrouped pairs keep their true rows. A group whose total mass
// is zero cannot be pooled and is an error.
std::vector<Eigen::MatrixXd> make_calibrated_model(const DiscreteMdp& mdp, const Policy& policy,
                                                   const Grouping& grouping);

// Worst absolute gap between predicted next-state probability and the
// joint-weighted empirical frequency, maximized over next states and over
// classes of (s, a) pairs with equal predictions (clustered within
// cluster_tol). Zero-mass classes are skipped.
double check_calibration(const std::vector<Eigen::MatrixXd>& model, const Eigen::MatrixXd& joint,
                         double cluster_tol = 1e-9);

// Generic form of the same identity: P is a joint over X x Y, Q holds
// conditional rows Q(y | x), g scores outcomes. Requires Q calibrated with
// respect to P within tol; on violation throws CalibrationGapError carrying
// the measured gap.
struct ExpectationPair {
  double direct;    // E_P[g(Y)]
  double factored;  // E_{P(X)} E_{Q(.|X)}[g(Y)]
};

ExpectationPair expectation_equality(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& model,
                                     const Eigen::VectorXd& g, double tol = 1e-9);

// Compares the true policy value with the value computed by pushing the true
// V through a (claimed) calibrated model's one-step expectations. The gate
// throws CalibrationGapError when the model's calibration gap exceeds
// calibration_tol; pass +inf to skip the gate.
struct ValueComparison {
  double value_true;
  double value_model;
  double calibration_gap;
};

ValueComparison compare_policy_values(const DiscreteMdp& mdp, const Policy& policy,
                                      const std::vector<Eigen::MatrixXd>& model,
                                      double calibration_tol = 1e-9);

}  // namespace calib
