#include "calib/inventory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "calib/normal.hpp"

namespace calib {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;
constexpr int max_shelf = 8;

// stream id spaces so every random source in a benchmark run is a pure
// function of (seed, item, day)
constexpr std::uint64_t series_space = 1ull << 32;
constexpr std::uint64_t params_space = 2ull << 32;
constexpr std::uint64_t mpc_space = 3ull << 32;
constexpr std::uint64_t alloc_space = 4ull << 32;

void check_horizon(const DemandForecaster& f, int h) {
  if (h < 1 || h > f.horizons()) throw std::invalid_argument("horizon out of range for this forecaster");
}

double mean_at(const DemandForecaster& f, const Eigen::VectorXd& phi, int h) {
  if (phi.size() != demand_feature_dim) throw std::invalid_argument("feature row has the wrong dimension");
  return f.coef.row(h - 1).dot(phi);
}

double stddev_at(const DemandForecaster& f, int h) { return std::max(f.c * f.sigma(h - 1), 1e-9); }

double raw_cdf(const DemandForecaster& f, const Eigen::VectorXd& phi, int h, double y) {
  return normal_cdf((y - mean_at(f, phi, h)) / stddev_at(f, h));
}

}  // namespace

TransitionOutcome transition(const InventoryState& state, int order, int demand, RngStream& rng, bool fifo) {
  const int L = static_cast<int>(state.stock.size());
  if (L < 1 || L > max_shelf) throw std::invalid_argument("shelf life must be between 1 and 8");
  if (order < 0) throw std::invalid_argument("order must be nonnegative");
  if (demand < 0) throw std::invalid_argument("demand must be nonnegative");

  int avail[max_shelf + 1];
  long total = 0;
  for (int l = 0; l < L; ++l) {
    avail[l] = state.stock(l);
    if (avail[l] < 0) throw std::invalid_argument("stock must be nonnegative");
    total += avail[l];
  }
  avail[L] = order;
  total += order;

  const int sales = static_cast<int>(std::min<long>(total, demand));
  const int stockout = demand - sales;

  int sold[max_shelf + 1] = {0};
  if (fifo) {
    int rem = sales;
    for (int l = 0; l <= L && rem > 0; ++l) {
      const int take = std::min(avail[l], rem);
      sold[l] = take;
      rem -= take;
    }
  } else if (sales > 0 && sales < total) {
    // exact uniform subset via a unit-by-unit walk; walking the smaller of
    // the sold/survivor sides lets the loop stop early
    const bool walk_sold = 2L * sales <= total;
    std::uint64_t k = static_cast<std::uint64_t>(walk_sold ? sales : total - sales);
    std::uint64_t n = static_cast<std::uint64_t>(total);
    for (int l = 0; l <= L; ++l) {
      if (walk_sold && k == 0) break;  // everything left stays on the shelf
      int hit = 0;
      for (int u = 0; u < avail[l] && k > 0; ++u) {
        if (rng.below(n) < k) {
          ++hit;
          --k;
        }
        --n;
      }
      // once the survivor budget runs out, whatever remains is sold
      sold[l] = walk_sold ? hit : avail[l] - hit;
    }
  } else if (sales == total) {
    for (int l = 0; l <= L; ++l) sold[l] = avail[l];
  }

  TransitionOutcome out;
  out.sales = sales;
  out.stockout = stockout;
  out.waste = avail[0] - sold[0];
  out.next.day = state.day + 1;
  out.next.stock.resize(L);
  for (int l = 0; l < L; ++l) out.next.stock(l) = avail[l + 1] - sold[l + 1];
  return out;
}

double reward(const TransitionOutcome& outcome) { return -static_cast<double>(outcome.waste + outcome.stockout); }

Eigen::VectorXd demand_features(const std::vector<double>& series, long base, long start_day, int h) {
  if (h < 1) throw std::invalid_argument("horizon must be at least 1");
  if (base < 27 || base >= static_cast<long>(series.size()))
    throw std::invalid_argument("feature rows need 28 days of history through the base day");
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(demand_feature_dim);
  phi(0) = 1.0;
  for (int k = 0; k < 4; ++k) phi(1 + k) = series[static_cast<size_t>(base - k)];
  const auto roll = [&](long w) {
    double s = 0.0;
    for (long i = base - w + 1; i <= base; ++i) s += series[static_cast<size_t>(i)];
    return s / static_cast<double>(w);
  };
  phi(5) = roll(7);
  phi(6) = roll(14);
  phi(7) = roll(28);
  const long target = start_day + base + h;
  phi(8 + ((target % 7) + 7) % 7) = 1.0;
  const double ang = two_pi * static_cast<double>(((target % 365) + 365) % 365) / 365.0;
  phi(15) = std::sin(ang);
  phi(16) = std::cos(ang);
  return phi;
}

DemandForecaster fit_demand_model(const std::vector<double>& series, long start_day, double c, int horizons,
                                  double ridge) {
  if (horizons < 1) throw std::invalid_argument("need at least one horizon");
  if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("c must be positive and finite");
  if (ridge < 0.0) throw std::invalid_argument("ridge penalty must be nonnegative");
  const long n = static_cast<long>(series.size());
  if (n < 35) throw std::invalid_argument("need at least 35 days of history");
  for (double v : series)
    if (!std::isfinite(v)) throw std::invalid_argument("history must be finite");

  DemandForecaster f;
  f.coef.resize(horizons, demand_feature_dim);
  f.sigma.resize(horizons);
  f.c = c;
  f.recal.assign(static_cast<size_t>(horizons), std::nullopt);
  for (int h = 1; h <= horizons; ++h) {
    const long rows = n - 27 - h;
    if (rows < 1) throw std::invalid_argument("history too short for the longest horizon");
    Eigen::MatrixXd X(rows, demand_feature_dim);
    Eigen::VectorXd y(rows);
    for (long r = 0; r < rows; ++r) {
      const long base = 27 + r;
      X.row(r) = demand_features(series, base, start_day, h).transpose();
      y(r) = series[static_cast<size_t>(base + h)];
    }
    Eigen::MatrixXd gram = X.transpose() * X;
    for (int j = 1; j < demand_feature_dim; ++j) gram(j, j) += ridge;
    const Eigen::VectorXd beta = gram.ldlt().solve(X.transpose() * y);
    f.coef.row(h - 1) = beta.transpose();
    const double ssr = (y - X * beta).squaredNorm();
    const double dof = static_cast<double>(std::max<long>(1, rows - demand_feature_dim));
    f.sigma(h - 1) = std::max(std::sqrt(ssr / dof), 1e-12);
  }
  return f;
}

Forecast demand_forecast(const DemandForecaster& f, const Eigen::VectorXd& phi, int h) {
  check_horizon(f, h);
  return Forecast::gaussian(mean_at(f, phi, h), stddev_at(f, h));
}

double forecast_cdf(const DemandForecaster& f, const Eigen::VectorXd& phi, int h, double y) {
  check_horizon(f, h);
  const double p = raw_cdf(f, phi, h, y);
  return f.recal[static_cast<size_t>(h - 1)] ? f.recal[static_cast<size_t>(h - 1)]->apply(p) : p;
}

double forecast_quantile(const DemandForecaster& f, const Eigen::VectorXd& phi, int h, double p) {
  check_horizon(f, h);
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("p must lie strictly inside (0, 1)");
  double level = p;
  if (f.recal[static_cast<size_t>(h - 1)])
    level = std::clamp(f.recal[static_cast<size_t>(h - 1)]->inverse(p), 1e-12, 1.0 - 1e-12);
  return mean_at(f, phi, h) + stddev_at(f, h) * normal_quantile(level);
}

DemandForecaster recalibrate_forecaster(const DemandForecaster& f, const std::vector<double>& series,
                                        long start_day, long cal_begin, long cal_end) {
  if (cal_begin < 27) throw std::invalid_argument("calibration span starts before features exist");
  if (cal_end > static_cast<long>(series.size())) throw std::invalid_argument("calibration span exceeds the series");
  DemandForecaster out = f;
  out.recal_warning = false;
  for (int h = 1; h <= f.horizons(); ++h) {
    std::vector<double> ps;
    for (long s = cal_begin; s + h < cal_end; ++s)
      ps.push_back(raw_cdf(f, demand_features(series, s, start_day, h), h, series[static_cast<size_t>(s + h)]));
    if (ps.empty()) throw std::invalid_argument("calibration split is empty");
    if (static_cast<long>(ps.size()) < 30) out.recal_warning = true;
    out.recal[static_cast<size_t>(h - 1)] = fit_isotonic(build_recal_dataset(ps));
  }
  return out;
}

int mpc_plan(const InventoryState& state, const DemandForecaster& f, const std::vector<Eigen::VectorXd>& phis,
             const MpcConfig& cfg, RngStream& rng) {
  const int L = static_cast<int>(state.stock.size());
  if (L < 1 || L > max_shelf) throw std::invalid_argument("shelf life must be between 1 and 8");
  if (cfg.max_order < 0) throw std::invalid_argument("action set is empty");
  if (cfg.n_traj < 1 || cfg.n_mc < 1) throw std::invalid_argument("need at least one trajectory and one sample");
  const int H = cfg.horizon;
  if (H < 1 || H > max_shelf || H > f.horizons() || H > static_cast<int>(phis.size()))
    throw std::invalid_argument("horizon out of range");

  double mu[max_shelf] = {0};
  double sd[max_shelf] = {0};
  const Recalibrator* rc[max_shelf] = {nullptr};
  for (int h = 0; h < H; ++h) {
    mu[h] = mean_at(f, phis[static_cast<size_t>(h)], h + 1);
    sd[h] = stddev_at(f, h + 1);
    if (f.recal[static_cast<size_t>(h)]) rc[h] = &*f.recal[static_cast<size_t>(h)];
  }

  // one scenario table per call: every candidate sequence sees the same draws
  std::vector<int> scenarios(static_cast<size_t>(cfg.n_mc) * static_cast<size_t>(H));
  for (int m = 0; m < cfg.n_mc; ++m)
    for (int h = 0; h < H; ++h) {
      double p = rng.uniform01();
      if (rc[h]) p = std::clamp(rc[h]->inverse(p), 1e-12, 1.0 - 1e-12);
      const double draw = mu[h] + sd[h] * normal_quantile(p);
      scenarios[static_cast<size_t>(m) * H + h] = draw > 0.0 ? static_cast<int>(std::llround(draw)) : 0;
    }

  int base_stock[max_shelf];
  int base_total = 0;
  for (int l = 0; l < L; ++l) {
    base_stock[l] = state.stock(l);
    if (base_stock[l] < 0) throw std::invalid_argument("stock must be nonnegative");
    base_total += base_stock[l];
  }

  const std::uint64_t n_actions = static_cast<std::uint64_t>(cfg.max_order) + 1;
  std::vector<int> seq(static_cast<size_t>(H));
  long long best = std::numeric_limits<long long>::max();
  int best_first = 0;
  for (int cand = 0; cand < cfg.n_traj; ++cand) {
    for (int h = 0; h < H; ++h) seq[static_cast<size_t>(h)] = static_cast<int>(rng.below(n_actions));
    long long cost = 0;
    for (int m = 0; m < cfg.n_mc; ++m) {
      int st[max_shelf];
      for (int l = 0; l < L; ++l) st[l] = base_stock[l];
      int tot = base_total;
      const int* dm = &scenarios[static_cast<size_t>(m) * H];
      for (int h = 0; h < H; ++h) {
        const int a = seq[static_cast<size_t>(h)];
        const int avail = tot + a;
        const int d = dm[h];
        if (d >= avail) {
          cost += d - avail;
          for (int l = 0; l < L; ++l) st[l] = 0;
          tot = 0;
          continue;
        }
        // rollouts consume oldest-first so identical sequences cost the same
        int rem = d;
        for (int l = 0; l < L && rem > 0; ++l) {
          const int take = st[l] < rem ? st[l] : rem;
          st[l] -= take;
          rem -= take;
        }
        const int waste = st[0];
        cost += waste;
        for (int l = 0; l + 1 < L; ++l) st[l] = st[l + 1];
        st[L - 1] = a - rem;
        tot = avail - d - waste;
      }
    }
    if (cost < best || (cost == best && seq[0] < best_first)) {
      best = cost;
      best_first = seq[0];
    }
  }
  return best_first;
}

int heuristic_policy(const InventoryState& state, const DemandForecaster& f, const Eigen::VectorXd& phi_next_day) {
  check_horizon(f, 1);
  const long target = std::llround(1.5 * mean_at(f, phi_next_day, 1));
  const long have = state.stock.sum();
  return static_cast<int>(std::max(0L, target - have));
}

void merge_metrics(EpisodeMetrics& into, const EpisodeMetrics& other) {
  into.shipped += other.shipped;
  into.sold += other.sold;
  into.wasted += other.wasted;
  into.stockouts += other.stockouts;
  into.terminal_units += other.terminal_units;
  into.total_reward += other.total_reward;
  into.pct_waste = into.shipped > 0 ? static_cast<double>(into.wasted) / static_cast<double>(into.shipped) : 0.0;
  into.pct_stockouts =
      into.shipped > 0 ? static_cast<double>(into.stockouts) / static_cast<double>(into.shipped) : 0.0;
}

EpisodeMetrics run_episode(const std::vector<int>& demand_by_day, const std::vector<double>& observed_init,
                           long first_day, int shelf_life, const OrderPolicy& policy, RngStream& alloc_rng,
                           bool fifo, std::vector<DayLog>* log) {
  if (shelf_life < 1 || shelf_life > max_shelf) throw std::invalid_argument("shelf life must be between 1 and 8");
  if (demand_by_day.empty()) throw std::invalid_argument("episode needs at least one day");

  InventoryState state;
  state.day = first_day;
  state.stock = Eigen::VectorXi::Zero(shelf_life);
  std::vector<double> observed = observed_init;
  EpisodeMetrics m;
  for (size_t t = 0; t < demand_by_day.size(); ++t) {
    const int order = policy(state, observed, state.day);
    if (order < 0) throw std::invalid_argument("policy returned a negative order");
    const TransitionOutcome out = transition(state, order, demand_by_day[t], alloc_rng, fifo);
    m.shipped += order;
    m.sold += out.sales;
    m.wasted += out.waste;
    m.stockouts += out.stockout;
    m.total_reward += reward(out);
    if (log) log->push_back({state.day, order, demand_by_day[t], out.sales, out.waste, out.stockout});
    observed.push_back(static_cast<double>(out.sales));
    state = out.next;
  }
  m.terminal_units = state.stock.sum();
  m.pct_waste = m.shipped > 0 ? static_cast<double>(m.wasted) / static_cast<double>(m.shipped) : 0.0;
  m.pct_stockouts = m.shipped > 0 ? static_cast<double>(m.stockouts) / static_cast<double>(m.shipped) : 0.0;
  return m;
}

SyntheticItem make_synthetic_item(std::uint64_t seed, int index, long days) {
  if (index < 0) throw std::invalid_argument("item index must be nonnegative");
  if (days < 1) throw std::invalid_argument("need at least one day");
  SyntheticItem it;
  RngStream pr(seed, params_space + static_cast<std::uint64_t>(index));
  it.base = 6.0 + 10.0 * pr.uniform01();
  it.week_amp = it.base * (0.10 + 0.20 * pr.uniform01());
  it.week_phase = two_pi * pr.uniform01();
  it.year_amp = it.base * (0.05 + 0.10 * pr.uniform01());
  it.year_phase = two_pi * pr.uniform01();
  it.noise_sd = it.base * (0.20 + 0.15 * pr.uniform01());

  RngStream dr(seed, series_space + static_cast<std::uint64_t>(index));
  it.demand.reserve(static_cast<size_t>(days));
  for (long day = 0; day < days; ++day) {
    const double mu = it.base + it.week_amp * std::sin(two_pi * static_cast<double>(day % 7) / 7.0 + it.week_phase) +
                      it.year_amp * std::sin(two_pi * static_cast<double>(day % 365) / 365.0 + it.year_phase);
    const double draw = mu + it.noise_sd * normal_quantile(dr.uniform01());
    it.demand.push_back(draw > 0.0 ? static_cast<int>(std::llround(draw)) : 0);
  }
  return it;
}

InventoryComparison compare_inventory_policies(const InventoryBenchConfig& cfg) {
  if (cfg.items < 1) throw std::invalid_argument("need at least one item");
  if (cfg.train_days < 35) throw std::invalid_argument("training span too short");
  if (cfg.cal_days <= cfg.mpc.horizon) throw std::invalid_argument("calibration span too short");
  if (cfg.test_days < 1) throw std::invalid_argument("test span must cover at least one day");
  const int H = cfg.mpc.horizon;
  const long n_days = cfg.train_days + cfg.cal_days + cfg.test_days;
  const long first_test_day = cfg.train_days + cfg.cal_days;

  struct ItemRun {
    DemandForecaster uncal;
    std::vector<double> series;
    std::vector<int> test_demand;
  };
  std::vector<ItemRun> items;
  items.reserve(static_cast<size_t>(cfg.items));
  std::vector<std::vector<double>> pooled(static_cast<size_t>(H));
  for (int i = 0; i < cfg.items; ++i) {
    const SyntheticItem item = make_synthetic_item(cfg.seed, i, n_days);
    ItemRun r;
    r.series.assign(item.demand.begin(), item.demand.end());
    const std::vector<double> train(r.series.begin(), r.series.begin() + cfg.train_days);
    r.uncal = fit_demand_model(train, 0, cfg.c, H, cfg.ridge);
    for (int h = 1; h <= H; ++h)
      for (long s = cfg.train_days; s + h < first_test_day; ++s)
        pooled[static_cast<size_t>(h - 1)].push_back(
            raw_cdf(r.uncal, demand_features(r.series, s, 0, h), h, r.series[static_cast<size_t>(s + h)]));
    r.test_demand.assign(item.demand.begin() + first_test_day, item.demand.end());
    items.push_back(std::move(r));
  }

  InventoryComparison out;
  std::vector<Recalibrator> shared;
  for (int h = 0; h < H; ++h) {
    if (pooled[static_cast<size_t>(h)].size() < 30) out.recal_warning = true;
    shared.push_back(fit_isotonic(build_recal_dataset(pooled[static_cast<size_t>(h)])));
  }

  for (int i = 0; i < cfg.items; ++i) {
    const ItemRun& r = items[static_cast<size_t>(i)];
    DemandForecaster cal = r.uncal;
    for (int h = 0; h < H; ++h) cal.recal[static_cast<size_t>(h)] = shared[static_cast<size_t>(h)];

    const auto mpc_policy = [&cfg, i](const DemandForecaster& fc) {
      return [&cfg, i, &fc](const InventoryState& st, const std::vector<double>& observed, long day) {
        const long base = static_cast<long>(observed.size()) - 1;
        const long start = day - static_cast<long>(observed.size());
        std::vector<Eigen::VectorXd> phis;
        phis.reserve(static_cast<size_t>(cfg.mpc.horizon));
        for (int h = 1; h <= cfg.mpc.horizon; ++h) phis.push_back(demand_features(observed, base, start, h));
        RngStream mr(cfg.seed,
                     mpc_space + static_cast<std::uint64_t>(i) * (1ull << 20) + static_cast<std::uint64_t>(day));
        return mpc_plan(st, fc, phis, cfg.mpc, mr);
      };
    };
    const auto heur = [&r](const InventoryState& st, const std::vector<double>& observed, long day) {
      const long base = static_cast<long>(observed.size()) - 1;
      const long start = day - static_cast<long>(observed.size());
      return heuristic_policy(st, r.uncal, demand_features(observed, base, start, 1));
    };

    const std::vector<double> obs0(r.series.begin(), r.series.begin() + first_test_day);
    const std::uint64_t alloc_id = alloc_space + static_cast<std::uint64_t>(i);
    {
      RngStream arng(cfg.seed, alloc_id);
      merge_metrics(out.calibrated, run_episode(r.test_demand, obs0, first_test_day, cfg.shelf_life,
                                                mpc_policy(cal), arng, cfg.fifo));
    }
    {
      RngStream arng(cfg.seed, alloc_id);
      merge_metrics(out.uncalibrated, run_episode(r.test_demand, obs0, first_test_day, cfg.shelf_life,
                                                  mpc_policy(r.uncal), arng, cfg.fifo));
    }
    {
      RngStream arng(cfg.seed, alloc_id);
      merge_metrics(out.heuristic,
                    run_episode(r.test_demand, obs0, first_test_day, cfg.shelf_life, heur, arng, cfg.fifo));
    }
  }
  return out;
}

}  // namespace calib
