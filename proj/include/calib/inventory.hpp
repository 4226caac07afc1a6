#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "calib/forecast.hpp"
#include "calib/recalibration.hpp"
#include "calib/rng.hpp"

namespace calib {

// stock(l) counts units that expire in l+1 days; slot 0 spoils tonight
struct InventoryState {
  long day = 0;
  Eigen::VectorXi stock;
};

struct TransitionOutcome {
  InventoryState next;
  int sales = 0;
  int waste = 0;
  int stockout = 0;
};

// One simulated day. The order is sellable on arrival; demand is served from
// all available units, picked uniformly at random without replacement (or
// oldest-first when fifo is set). Units left at shelf life 1 spoil, survivors
// age one day, and unsold arrivals enter at shelf life L. Shelf life is
// limited to 8 slots.
TransitionOutcome transition(const InventoryState& state, int order, int demand, RngStream& rng,
                             bool fifo = false);

// zero when every unit sold and every demand met; more negative is worse
double reward(const TransitionOutcome& outcome);

inline constexpr int demand_feature_dim = 17;

// intercept, four sales lags (lag 1 = the base day itself), 7/14/28 day
// rolling means, weekday one-hot of the target day, annual sine/cosine of the
// target day; start_day is the absolute day number of series[0]
Eigen::VectorXd demand_features(const std::vector<double>& series, long base, long start_day, int h);

struct DemandForecaster {
  Eigen::MatrixXd coef;   // one row per horizon
  Eigen::VectorXd sigma;  // residual stddev per horizon
  double c = 1.0;         // stddev multiplier; c < 1 makes the model overconfident
  std::vector<std::optional<Recalibrator>> recal;
  bool recal_warning = false;

  int horizons() const { return static_cast<int>(coef.rows()); }
};

// per-horizon ridge regression on demand_features rows; the intercept is not
// penalized; needs at least 35 days of history
DemandForecaster fit_demand_model(const std::vector<double>& series, long start_day, double c = 1.0,
                                  int horizons = 5, double ridge = 1e-3);

// plain gaussian forecast for horizon h, before any recalibration
Forecast demand_forecast(const DemandForecaster& f, const Eigen::VectorXd& phi, int h);

// cdf and quantile through the horizon's recalibrator when one is fitted
double forecast_cdf(const DemandForecaster& f, const Eigen::VectorXd& phi, int h, double y);
double forecast_quantile(const DemandForecaster& f, const Eigen::VectorXd& phi, int h, double p);

// refits every horizon's recalibrator from scratch on probability levels of
// the realized values at base days in [cal_begin, cal_end - h); sets
// recal_warning when any horizon has fewer than 30 pairs
DemandForecaster recalibrate_forecaster(const DemandForecaster& f, const std::vector<double>& series,
                                        long start_day, long cal_begin, long cal_end);

struct MpcConfig {
  int n_traj = 500;
  int n_mc = 50;
  int horizon = 5;
  int max_order = 50;  // action set {0, ..., max_order}
};

// random shooting: samples n_traj order sequences uniformly, scores each by
// total waste + stockout over n_mc demand scenarios shared across sequences,
// and returns the first action of the best one; exact integer ties go to the
// smaller order
int mpc_plan(const InventoryState& state, const DemandForecaster& f,
             const std::vector<Eigen::VectorXd>& phis, const MpcConfig& cfg, RngStream& rng);

// order up to 1.5x the expected next-day demand
int heuristic_policy(const InventoryState& state, const DemandForecaster& f,
                     const Eigen::VectorXd& phi_next_day);

struct EpisodeMetrics {
  long shipped = 0;
  long sold = 0;
  long wasted = 0;
  long stockouts = 0;
  long terminal_units = 0;
  double pct_waste = 0.0;
  double pct_stockouts = 0.0;
  double total_reward = 0.0;
};

void merge_metrics(EpisodeMetrics& into, const EpisodeMetrics& other);

struct DayLog {
  long day = 0;
  int order = 0;
  int demand = 0;
  int sales = 0;
  int waste = 0;
  int stockout = 0;
};

// policy sees the current state, the observed sales series so far, and the
// absolute day; realized demand stays hidden
using OrderPolicy = std::function<int(const InventoryState&, const std::vector<double>&, long)>;

EpisodeMetrics run_episode(const std::vector<int>& demand_by_day, const std::vector<double>& observed_init,
                           long first_day, int shelf_life, const OrderPolicy& policy, RngStream& alloc_rng,
                           bool fifo = false, std::vector<DayLog>* log = nullptr);

struct SyntheticItem {
  double base = 0.0;
  double week_amp = 0.0;
  double week_phase = 0.0;
  double year_amp = 0.0;
  double year_phase = 0.0;
  double noise_sd = 0.0;
  std::vector<int> demand;
};

// heterogeneous weekly + annual seasonality with gaussian noise, rounded and
// clamped at zero; the whole series is a pure function of (seed, index)
SyntheticItem make_synthetic_item(std::uint64_t seed, int index, long days);

struct InventoryBenchConfig {
  std::uint64_t seed = 0;
  int items = 100;
  long train_days = 600;
  long cal_days = 150;
  long test_days = 90;
  int shelf_life = 5;
  double c = 0.3;
  MpcConfig mpc;
  double ridge = 1e-3;
  bool fifo = false;
};

struct InventoryComparison {
  EpisodeMetrics calibrated;
  EpisodeMetrics uncalibrated;
  EpisodeMetrics heuristic;
  bool recal_warning = false;
};

// fits one forecaster per item on the training span, pools recalibration
// pairs across items per horizon, then plays calibrated MPC, uncalibrated
// MPC, and the heuristic over the same realized demand
InventoryComparison compare_inventory_policies(const InventoryBenchConfig& cfg);

}  // namespace calib
