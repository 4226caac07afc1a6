#include "calib/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "calib/normal.hpp"

namespace calib {

namespace {

double draw_normal(RngStream& rng) { return normal_quantile(rng.uniform01()); }

double sample_gamma(double shape, RngStream& rng) {
  if (shape < 1.0) {
    const double u = rng.uniform01();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = draw_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

double sample_beta(double a, double b, RngStream& rng) {
  const double g1 = sample_gamma(a, rng);
  const double g2 = sample_gamma(b, rng);
  return g1 / (g1 + g2);
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

BanditAgent::BanditAgent(BanditMode mode, int arms, int dim, const BanditAgentConfig& cfg)
    : mode_(mode), dim_(dim), cfg_(cfg), q_alpha_(normal_cdf(cfg.alpha)) {
  if (arms < 1 || dim < 1) throw std::invalid_argument("bandit agent: need arms >= 1 and dim >= 1");
  if (cfg.lambda <= 0.0) throw std::invalid_argument("bandit agent: ridge lambda must be positive");
  if (cfg.alpha <= 0.0) throw std::invalid_argument("bandit agent: alpha must be positive");
  arms_.resize(static_cast<size_t>(arms));
  for (auto& arm : arms_) {
    arm.A = cfg.lambda * Eigen::MatrixXd::Identity(dim, dim);
    arm.b = Eigen::VectorXd::Zero(dim);
    arm.chol.compute(arm.A);
  }
}

Forecast BanditAgent::predict(int arm, const Eigen::VectorXd& x) const {
  const auto& st = arms_.at(static_cast<size_t>(arm));
  if (x.size() != dim_) throw std::invalid_argument("bandit agent: context dimension mismatch");
  const Eigen::VectorXd theta = st.chol.solve(st.b);
  const double mean = theta.dot(x);
  const double var = x.dot(st.chol.solve(x));
  const double sd = std::sqrt(std::max(var, 1e-24));
  return Forecast::gaussian(mean, std::max(sd, 1e-12));
}

double BanditAgent::score(int arm, const Eigen::VectorXd& x) const {
  const auto& st = arms_.at(static_cast<size_t>(arm));
  const Forecast f = predict(arm, x);
  if (mode_ == BanditMode::Calibrated && st.recal.has_value() && st.pulls >= cfg_.warmup) {
    return RecalibratedForecast(f, *st.recal).quantile(q_alpha_);
  }
  return f.gaussian_mean() + cfg_.alpha * f.gaussian_stddev();
}

int BanditAgent::select(const Eigen::VectorXd& x) const {
  int best = 0;
  double best_score = score(0, x);
  for (int a = 1; a < arms(); ++a) {
    const double s = score(a, x);
    if (s > best_score) {
      best_score = s;
      best = a;
    }
  }
  return best;
}

void BanditAgent::update(int arm, const Eigen::VectorXd& x, double reward) {
  auto& st = arms_.at(static_cast<size_t>(arm));
  if (x.size() != dim_) throw std::invalid_argument("bandit agent: context dimension mismatch");
  st.pit_history.push_back(predict(arm, x).cdf(reward));
  st.A.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0);
  st.A.triangularView<Eigen::StrictlyUpper>() = st.A.transpose();
  st.b += reward * x;
  st.chol.rankUpdate(x, 1.0);
  ++st.pulls;
  if (mode_ == BanditMode::Calibrated && st.pulls >= cfg_.warmup &&
      (st.pulls == cfg_.warmup || st.pulls % cfg_.refit_every == 0)) {
    st.recal = fit_isotonic(build_recal_dataset(st.pit_history));
  }
}

void BanditAgent::set_recalibrator(int arm, std::optional<Recalibrator> recal) {
  arms_.at(static_cast<size_t>(arm)).recal = std::move(recal);
}

const LinUcbArm& BanditAgent::arm_state(int arm) const { return arms_.at(static_cast<size_t>(arm)); }

BanditEnv BanditEnv::synthetic_linear(int arms, int dim, double noise_sd) {
  if (arms < 2 || dim < 2) throw std::invalid_argument("linear env: need arms >= 2, dim >= 2");
  if (noise_sd <= 0.0) throw std::invalid_argument("linear env: noise must be positive");
  BanditEnv env;
  env.kind_ = Kind::Linear;
  env.arms_ = arms;
  env.dim_ = dim;
  env.noise_sd_ = noise_sd;
  return env;
}

BanditEnv BanditEnv::synthetic_beta(int arms, int dim, double concentration) {
  if (arms < 2 || dim < 2) throw std::invalid_argument("beta env: need arms >= 2, dim >= 2");
  if (concentration <= 0.0) throw std::invalid_argument("beta env: concentration must be positive");
  BanditEnv env;
  env.kind_ = Kind::Beta;
  env.arms_ = arms;
  env.dim_ = dim;
  env.concentration_ = concentration;
  return env;
}

BanditEnv BanditEnv::dataset(Eigen::MatrixXd features, std::vector<int> labels) {
  if (features.rows() < 1 || static_cast<size_t>(features.rows()) != labels.size())
    throw std::invalid_argument("dataset env: features/labels mismatch");
  int classes = 0;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("dataset env: negative label");
    classes = std::max(classes, y + 1);
  }
  if (classes < 2) throw std::invalid_argument("dataset env: need at least two classes");

  // standardize columns, then append an intercept feature
  Eigen::MatrixXd X(features.rows(), features.cols() + 1);
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    const double mu = features.col(c).mean();
    const double sd = std::sqrt((features.col(c).array() - mu).square().mean());
    X.col(c) = (features.col(c).array() - mu) / (sd > 0.0 ? sd : 1.0);
  }
  X.col(features.cols()).setOnes();

  BanditEnv env;
  env.kind_ = Kind::Dataset;
  env.arms_ = classes;
  env.dim_ = static_cast<int>(X.cols());
  env.rows_ = std::move(X);
  env.labels_ = std::move(labels);
  return env;
}

long BanditEnv::max_horizon() const {
  return kind_ == Kind::Dataset ? static_cast<long>(rows_.rows()) : std::numeric_limits<long>::max();
}

void BanditEnv::reset(std::uint64_t seed, std::uint64_t trial) {
  rng_ = RngStream(seed, 2 * trial + 1);
  if (kind_ == Kind::Dataset) {
    RngStream shuffle_rng(seed, 2 * trial);
    order_.resize(static_cast<size_t>(rows_.rows()));
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<long>(i);
    for (size_t i = order_.size() - 1; i > 0; --i)
      std::swap(order_[i], order_[shuffle_rng.below(static_cast<std::uint64_t>(i + 1))]);
    return;
  }
  RngStream params(seed, 2 * trial);
  thetas_.assign(static_cast<size_t>(arms_), Eigen::VectorXd::Zero(dim_));
  const double slope_scale = 0.5 / std::sqrt(static_cast<double>(dim_ - 1));
  for (auto& theta : thetas_) {
    for (int j = 0; j < dim_ - 1; ++j) theta(j) = slope_scale * draw_normal(params);
    // positive intercepts keep the optimal baseline comfortably positive
    theta(dim_ - 1) = (kind_ == Kind::Linear) ? 1.8 + 0.4 * params.uniform01()
                                              : 0.6 * (params.uniform01() * 2.0 - 1.0);
  }
}

Eigen::VectorXd BanditEnv::context(long t) {
  if (kind_ == Kind::Dataset) {
    const long row = order_.at(static_cast<size_t>(t));
    last_context_ = rows_.row(row).transpose();
    oracle_arm_ = labels_[static_cast<size_t>(row)];
    oracle_value_ = 1.0;
    return last_context_;
  }
  Eigen::VectorXd x(dim_);
  for (int j = 0; j < dim_ - 1; ++j) x(j) = draw_normal(rng_);
  x(dim_ - 1) = 1.0;
  last_context_ = x;
  oracle_arm_ = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < arms_; ++a) {
    double v = thetas_[static_cast<size_t>(a)].dot(x);
    if (kind_ == Kind::Beta) v = logistic(v);
    if (v > best) {
      best = v;
      oracle_arm_ = a;
    }
  }
  oracle_value_ = best;
  return x;
}

int BanditEnv::oracle_arm() const { return oracle_arm_; }

BanditEnv::Step BanditEnv::pull(long t, int arm) {
  if (arm < 0 || arm >= arms_) throw std::invalid_argument("bandit env: arm out of range");
  switch (kind_) {
    case Kind::Linear: {
      // one shared noise draw per step keeps paired runs aligned
      const double eps = noise_sd_ * draw_normal(rng_);
      const double mean = thetas_[static_cast<size_t>(arm)].dot(last_context_);
      return {mean + eps, oracle_value_};
    }
    case Kind::Beta: {
      const double mu = logistic(thetas_[static_cast<size_t>(arm)].dot(last_context_));
      const double m = std::min(1.0 - 1e-6, std::max(1e-6, mu));
      const double r = sample_beta(m * concentration_, (1.0 - m) * concentration_, rng_);
      return {r, oracle_value_};
    }
    case Kind::Dataset: {
      const long row = order_.at(static_cast<size_t>(t));
      return {labels_[static_cast<size_t>(row)] == arm ? 1.0 : 0.0, 1.0};
    }
  }
  return {0.0, 0.0};
}

BanditTrialResult run_bandit_trial(BanditEnv& env, BanditMode mode, long horizon,
                                   std::uint64_t seed, std::uint64_t trial,
                                   const BanditAgentConfig& cfg, std::string* step_csv) {
  if (horizon < 1) throw std::invalid_argument("bandit trial: horizon must be >= 1");
  if (env.max_horizon() < horizon)
    throw std::invalid_argument("bandit trial: dataset has fewer rows than the horizon");

  env.reset(seed, trial);
  BanditAgent agent(mode, env.arms(), env.dim(), cfg);
  std::ostringstream csv;
  BanditTrialResult out;
  for (long t = 0; t < horizon; ++t) {
    const Eigen::VectorXd x = env.context(t);
    const int arm = agent.select(x);
    const auto step = env.pull(t, arm);
    agent.update(arm, x, step.reward);
    out.cumulative += step.reward;
    out.optimal += step.optimal_expected;
    if (step_csv)
      csv << trial << "," << t << "," << arm << "," << step.reward << "," << step.optimal_expected
          << "\n";
  }
  if (step_csv) *step_csv = csv.str();
  return out;
}

BanditRunSummary run_bandit(BanditEnv env, BanditMode mode, long horizon, int trials,
                            std::uint64_t seed, const BanditAgentConfig& cfg, bool keep_step_log) {
  if (horizon < 1 || trials < 1) throw std::invalid_argument("bandit run: need horizon and trials >= 1");
  if (env.max_horizon() < horizon)
    throw std::invalid_argument("bandit run: dataset has fewer rows than the horizon");

  BanditRunSummary out;
  std::ostringstream csv;
  if (keep_step_log) csv << "trial,t,arm,reward,optimal_expected\n";

  for (int trial = 0; trial < trials; ++trial) {
    std::string steps;
    const auto r = run_bandit_trial(env, mode, horizon, seed, static_cast<std::uint64_t>(trial),
                                    cfg, keep_step_log ? &steps : nullptr);
    if (keep_step_log) csv << steps;
    out.per_trial.push_back(r.cumulative);
    out.per_trial_optimal.push_back(r.optimal);
  }

  const double n = static_cast<double>(trials);
  double mean = 0.0, mean_opt = 0.0;
  for (int i = 0; i < trials; ++i) {
    mean += out.per_trial[static_cast<size_t>(i)];
    mean_opt += out.per_trial_optimal[static_cast<size_t>(i)];
  }
  mean /= n;
  mean_opt /= n;
  double var = 0.0;
  for (int i = 0; i < trials; ++i) {
    const double d = out.per_trial[static_cast<size_t>(i)] - mean;
    var += d * d;
  }
  var = trials > 1 ? var / (n - 1.0) : 0.0;

  out.mean_cumulative_reward = mean;
  out.stderr_cumulative_reward = std::sqrt(var / n);
  out.mean_optimal_reward = mean_opt;
  if (keep_step_log) out.per_step_csv = csv.str();
  return out;
}

ClassificationData make_nonlinear_classification(long rows, std::uint64_t seed) {
  if (rows < 1) throw std::invalid_argument("classification data: rows must be positive");
  RngStream rng(seed, 923);
  // Shaped like the one-hot multiclass sets bandits are usually benchmarked
  // on: a wide context (so ridge-posterior widths stay honest over a few
  // thousand pulls instead of collapsing), a couple of dominant classes with
  // a long imbalanced tail, and class scores whose curved terms defeat any
  // single linear fit region by region.
  const int dim = 24, classes = 6;
  Eigen::MatrixXd w(classes, dim);
  for (int a = 0; a < classes; ++a) {
    for (int j = 0; j < dim; ++j) w(a, j) = draw_normal(rng);
    w.row(a) *= 0.3 / w.row(a).norm();
  }
  std::vector<int> qi(static_cast<size_t>(classes)), qj(static_cast<size_t>(classes));
  for (int a = 0; a < classes; ++a) {
    qi[static_cast<size_t>(a)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(dim)));
    qj[static_cast<size_t>(a)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(dim)));
  }
  ClassificationData data;
  data.features.resize(rows, dim);
  data.labels.resize(static_cast<size_t>(rows));
  data.classes = classes;
  for (long i = 0; i < rows; ++i) {
    Eigen::VectorXd z(dim);
    for (int j = 0; j < dim; ++j) z(j) = draw_normal(rng);
    data.features.row(i) = z.transpose();
    Eigen::VectorXd scores(classes);
    for (int a = 0; a < classes; ++a) {
      const int u = qi[static_cast<size_t>(a)], v = qj[static_cast<size_t>(a)];
      const double curved = (a % 3 == 0) ? z(u) * z(v)
                            : (a % 3 == 1) ? z(u) * z(u) - 1.0
                                           : std::fabs(z(v)) - 0.8;
      scores(a) = w.row(a).dot(z) + curved + 0.9 - 0.45 * a;
    }
    Eigen::Index label;
    scores.maxCoeff(&label);
    data.labels[static_cast<size_t>(i)] = static_cast<int>(label);
  }
  return data;
}

double sign_test_p_value(int positives, int n) {
  if (n < 0 || positives < 0 || positives > n)
    throw std::invalid_argument("sign test: need 0 <= positives <= n");
  // P[Bin(n, 1/2) >= positives]
  double p = 0.0;
  double coeff = 1.0;  // C(n, 0)
  std::vector<double> pmf(static_cast<size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    pmf[static_cast<size_t>(k)] = coeff;
    coeff = coeff * (n - k) / (k + 1.0);
  }
  double total = 0.0;
  for (double v : pmf) total += v;
  for (int k = positives; k <= n; ++k) p += pmf[static_cast<size_t>(k)] / total;
  return p;
}

}  // namespace calib
