#include "calib/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace calib {

CalibrationGapError::CalibrationGapError(double v)
    : std::runtime_error("model is not calibrated: measured violation " + std::to_string(v)),
      violation(v) {}

void DiscreteMdp::validate() const {
  if (transitions.empty()) throw std::invalid_argument("mdp: needs at least one action");
  const auto S = rewards.size();
  if (S < 1) throw std::invalid_argument("mdp: needs at least one state");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("mdp: gamma must lie in [0, 1)");
  for (const auto& T : transitions) {
    if (T.rows() != S || T.cols() != S)
      throw std::invalid_argument("mdp: transition matrices must be S x S");
    for (Eigen::Index s = 0; s < S; ++s) {
      double sum = 0.0;
      for (Eigen::Index t = 0; t < S; ++t) {
        if (T(s, t) < 0.0) throw std::invalid_argument("mdp: negative transition probability");
        sum += T(s, t);
      }
      if (std::fabs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("mdp: transition row does not sum to 1");
    }
  }
}

void validate_policy(const DiscreteMdp& mdp, const Policy& policy) {
  if (policy.rows() != mdp.n_states() || policy.cols() != mdp.n_actions())
    throw std::invalid_argument("policy: must be S x A");
  for (Eigen::Index s = 0; s < policy.rows(); ++s) {
    double sum = 0.0;
    for (Eigen::Index a = 0; a < policy.cols(); ++a) {
      if (policy(s, a) < 0.0) throw std::invalid_argument("policy: negative probability");
      sum += policy(s, a);
    }
    if (std::fabs(sum - 1.0) > 1e-12) throw std::invalid_argument("policy: row does not sum to 1");
  }
}

Eigen::MatrixXd induced_chain(const DiscreteMdp& mdp, const Policy& policy) {
  mdp.validate();
  validate_policy(mdp, policy);
  const int S = mdp.n_states(), A = mdp.n_actions();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(S, S);
  for (int a = 0; a < A; ++a) M += policy.col(a).asDiagonal() * mdp.transitions[static_cast<size_t>(a)];
  return M;
}

namespace {

// Both directions of reachability over strictly positive transition edges.
bool strongly_connected(const Eigen::MatrixXd& M) {
  const auto S = M.rows();
  auto reach = [&](bool forward) {
    std::vector<char> seen(static_cast<size_t>(S), 0);
    std::vector<Eigen::Index> stack = {0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (Eigen::Index v = 0; v < S; ++v) {
        const double w = forward ? M(u, v) : M(v, u);
        if (w > 0.0 && !seen[static_cast<size_t>(v)]) {
          seen[static_cast<size_t>(v)] = 1;
          stack.push_back(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reach(true) && reach(false);
}

}  // namespace

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& chain, const StationaryOptions& opts) {
  const auto S = chain.rows();
  if (S < 1 || chain.cols() != S) throw std::invalid_argument("stationary: chain must be square");
  for (Eigen::Index s = 0; s < S; ++s) {
    double sum = 0.0;
    for (Eigen::Index t = 0; t < S; ++t) {
      if (chain(s, t) < 0.0) throw std::invalid_argument("stationary: negative probability");
      sum += chain(s, t);
    }
    if (std::fabs(sum - 1.0) > 1e-12) throw std::invalid_argument("stationary: row does not sum to 1");
  }

  Eigen::MatrixXd M = chain;
  if (opts.smooth) {
    const double eps = 1e-6;
    M = (1.0 - eps) * M;
    M.array() += eps / static_cast<double>(S);
  }

  if (S == 1) return Eigen::VectorXd::Ones(1);
  if (!strongly_connected(M))
    throw ConvergenceError("stationary: chain is reducible, no unique stationary distribution");

  Eigen::VectorXd x = Eigen::VectorXd::Constant(S, 1.0 / static_cast<double>(S));
  const Eigen::MatrixXd Mt = M.transpose();
  for (long it = 0; it < opts.max_iters; ++it) {
    Eigen::VectorXd next = Mt * x;
    next /= next.sum();
    const double resid = (next - x).cwiseAbs().sum();
    x = next;
    if (resid < opts.tol) return x;
  }
  throw ConvergenceError("stationary: power iteration did not converge (chain may be periodic)");
}

Eigen::VectorXd evaluate_policy(const DiscreteMdp& mdp, const Policy& policy) {
  const Eigen::MatrixXd M = induced_chain(mdp, policy);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.n_states());
  for (long it = 0; it < 10000000; ++it) {
    Eigen::VectorXd next = mdp.rewards + mdp.gamma * (M * v);
    const double delta = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (delta < 1e-12) return v;
  }
  throw ConvergenceError("policy evaluation: Bellman iteration did not converge");
}

double policy_value(const DiscreteMdp& mdp, const Policy& policy) {
  const Eigen::VectorXd v = evaluate_policy(mdp, policy);
  const Eigen::VectorXd sigma = stationary_distribution(induced_chain(mdp, policy));
  return sigma.dot(v);
}

Eigen::MatrixXd build_joint(const DiscreteMdp& mdp, const Policy& policy) {
  const Eigen::VectorXd sigma = stationary_distribution(induced_chain(mdp, policy));
  const int S = mdp.n_states(), A = mdp.n_actions();
  Eigen::MatrixXd joint(S * A, S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      joint.row(s * A + a) = sigma(s) * policy(s, a) * mdp.transitions[static_cast<size_t>(a)].row(s);
  const double total = joint.sum();
  if (std::fabs(total - 1.0) > 1e-10) throw std::logic_error("joint: mass does not sum to 1");
  return joint;
}

std::vector<Eigen::MatrixXd> make_calibrated_model(const DiscreteMdp& mdp, const Policy& policy,
                                                   const Grouping& grouping) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  const Eigen::MatrixXd joint = build_joint(mdp, policy);
  std::vector<char> taken(static_cast<size_t>(S * A), 0);
  std::vector<Eigen::MatrixXd> model = mdp.transitions;

  for (const auto& group : grouping) {
    if (group.empty()) throw std::invalid_argument("calibrated model: empty group");
    double mass = 0.0;
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(S);
    for (int idx : group) {
      if (idx < 0 || idx >= S * A) throw std::invalid_argument("calibrated model: index out of range");
      if (taken[static_cast<size_t>(idx)])
        throw std::invalid_argument("calibrated model: pair assigned to two groups");
      taken[static_cast<size_t>(idx)] = 1;
      const double w = joint.row(idx).sum();
      mass += w;
      pooled += w * mdp.transitions[static_cast<size_t>(idx % A)].row(idx / A);
    }
    if (mass <= 0.0)
      throw std::invalid_argument("calibrated model: group has zero visitation mass");
    pooled /= mass;
    for (int idx : group) model[static_cast<size_t>(idx % A)].row(idx / A) = pooled;
  }
  return model;
}

double check_calibration(const std::vector<Eigen::MatrixXd>& model, const Eigen::MatrixXd& joint,
                         double cluster_tol) {
  if (model.empty()) throw std::invalid_argument("calibration check: empty model");
  const auto S = model.front().rows();
  const auto A = static_cast<Eigen::Index>(model.size());
  if (joint.rows() != S * A || joint.cols() != S)
    throw std::invalid_argument("calibration check: joint must be (S*A) x S");

  Eigen::VectorXd mass(S * A);
  for (Eigen::Index i = 0; i < joint.rows(); ++i) mass(i) = joint.row(i).sum();

  struct Item {
    double p, w, f;
  };
  double worst = 0.0;
  std::vector<Item> items(static_cast<size_t>(S * A));
  for (Eigen::Index ns = 0; ns < S; ++ns) {
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) {
        const auto i = s * A + a;
        items[static_cast<size_t>(i)] = {model[static_cast<size_t>(a)](s, ns), mass(i), joint(i, ns)};
      }
    std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.p < y.p; });
    size_t start = 0;
    while (start < items.size()) {
      size_t end = start + 1;
      while (end < items.size() && items[end].p - items[end - 1].p <= cluster_tol) ++end;
      double w = 0.0, f = 0.0, wp = 0.0;
      for (size_t i = start; i < end; ++i) {
        w += items[i].w;
        f += items[i].f;
        wp += items[i].w * items[i].p;
      }
      if (w > 0.0) worst = std::max(worst, std::fabs(f / w - wp / w));
      start = end;
    }
  }
  return worst;
}

ExpectationPair expectation_equality(const Eigen::MatrixXd& joint, const Eigen::MatrixXd& model,
                                     const Eigen::VectorXd& g, double tol) {
  if (joint.rows() != model.rows() || joint.cols() != model.cols())
    throw std::invalid_argument("expectation equality: joint/model shape mismatch");
  if (g.size() != joint.cols())
    throw std::invalid_argument("expectation equality: g must score each outcome");

  // calibration gate, clustering rows by predicted probability per outcome
  struct Item {
    double p, w, f;
  };
  double worst = 0.0;
  const auto X = joint.rows(), Y = joint.cols();
  Eigen::VectorXd mass(X);
  for (Eigen::Index x = 0; x < X; ++x) mass(x) = joint.row(x).sum();
  std::vector<Item> items(static_cast<size_t>(X));
  for (Eigen::Index y = 0; y < Y; ++y) {
    for (Eigen::Index x = 0; x < X; ++x) items[static_cast<size_t>(x)] = {model(x, y), mass(x), joint(x, y)};
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.p < b.p; });
    size_t start = 0;
    while (start < items.size()) {
      size_t end = start + 1;
      while (end < items.size() && items[end].p - items[end - 1].p <= 1e-9) ++end;
      double w = 0.0, f = 0.0, wp = 0.0;
      for (size_t i = start; i < end; ++i) {
        w += items[i].w;
        f += items[i].f;
        wp += items[i].w * items[i].p;
      }
      if (w > 0.0) worst = std::max(worst, std::fabs(f / w - wp / w));
      start = end;
    }
  }
  if (worst > tol) throw CalibrationGapError(worst);

  const double direct = (joint * g).sum();
  double factored = 0.0;
  for (Eigen::Index x = 0; x < X; ++x) factored += mass(x) * model.row(x).dot(g);
  return {direct, factored};
}

ValueComparison compare_policy_values(const DiscreteMdp& mdp, const Policy& policy,
                                      const std::vector<Eigen::MatrixXd>& model,
                                      double calibration_tol) {
  if (static_cast<int>(model.size()) != mdp.n_actions())
    throw std::invalid_argument("value comparison: model/action count mismatch");
  const Eigen::VectorXd v = evaluate_policy(mdp, policy);
  const Eigen::VectorXd sigma = stationary_distribution(induced_chain(mdp, policy));
  const Eigen::MatrixXd joint = build_joint(mdp, policy);

  const double gap = check_calibration(model, joint);
  if (gap > calibration_tol) throw CalibrationGapError(gap);

  const int S = mdp.n_states(), A = mdp.n_actions();
  double model_step = 0.0;
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      const double w = joint.row(s * A + a).sum();
      if (w > 0.0) model_step += w * model[static_cast<size_t>(a)].row(s).dot(v);
    }

  ValueComparison out;
  out.value_true = sigma.dot(v);
  out.value_model = sigma.dot(mdp.rewards) + mdp.gamma * model_step;
  out.calibration_gap = gap;
  return out;
}

}  // namespace calib
