#include "calib/recalibration.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "calib/forecast.hpp"
#include "calib/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using calib::build_recal_dataset;
using calib::Forecast;
using calib::RecalDataset;
using calib::RecalibratedForecast;
using calib::Recalibrator;

namespace {

double sigma(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Recalibrator identity_grid(int m = 100) {
  std::vector<double> b(m + 1), l(m + 1);
  for (int i = 0; i <= m; ++i) b[i] = l[i] = static_cast<double>(i) / m;
  return Recalibrator::isotonic(b, l);
}

}  // namespace

TEST_CASE("dataset targets are tie-inclusive empirical frequencies") {
  const auto ds = build_recal_dataset(std::vector<double>{0.9, 0.1, 0.5});
  REQUIRE(ds.points.size() == 3);
  CHECK(ds.points[0].p == 0.1);
  CHECK(ds.points[0].target == 1.0 / 3.0);
  CHECK(ds.points[1].p == 0.5);
  CHECK(ds.points[1].target == 2.0 / 3.0);
  CHECK(ds.points[2].p == 0.9);
  CHECK(ds.points[2].target == 1.0);

  const auto one = build_recal_dataset(std::vector<double>{0.7});
  REQUIRE(one.points.size() == 1);
  CHECK(one.points[0].target == 1.0);

  const auto tied = build_recal_dataset(std::vector<double>{0.4, 0.4, 0.8, 0.2});
  CHECK(tied.points[1].p == 0.4);
  CHECK(tied.points[1].target == 0.75);
  CHECK(tied.points[2].target == 0.75);
}

TEST_CASE("dataset frequencies track the diagonal for uniform cdf values") {
  calib::RngStream rng(11, 0);
  std::vector<double> ps(10000);
  for (auto& p : ps) p = rng.uniform01();
  const auto ds = build_recal_dataset(std::move(ps));
  double worst = 0.0;
  for (const auto& pt : ds.points) worst = std::max(worst, std::fabs(pt.target - pt.p));
  CHECK(worst <= 0.03);
}

TEST_CASE("isotonic fit reproduces monotone data exactly") {
  RecalDataset ds;
  ds.points = {{0.1, 0.05}, {0.3, 0.3}, {0.55, 0.6}, {0.9, 0.95}};
  const auto r = fit_isotonic(ds);
  for (const auto& pt : ds.points) CHECK(r.apply(pt.p) == pt.target);
}

TEST_CASE("isotonic fit pools decreasing targets into one block") {
  RecalDataset ds;
  ds.points = {{0.2, 0.9}, {0.8, 0.1}};
  const auto r = fit_isotonic(ds);
  CHECK(r.apply(0.2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.apply(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.apply(1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.apply(0.1) == 0.0);
}

TEST_CASE("isotonic fit merges tied inputs by mean before pooling") {
  RecalDataset ds;
  ds.points = {{0.3, 0.2}, {0.3, 0.8}, {0.6, 0.4}};
  const auto r = fit_isotonic(ds);
  const double pooled = (2.0 * 0.5 + 0.4) / 3.0;
  CHECK(r.apply(0.3) == doctest::Approx(pooled).epsilon(1e-15));
  CHECK(r.apply(0.6) == doctest::Approx(pooled).epsilon(1e-15));
}

TEST_CASE("isotonic fit matches exhaustive least squares on small instances") {
  calib::RngStream rng(404, 2);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 2 + static_cast<int>(rng.below(7));
    RecalDataset ds;
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
      p += 0.01 + rng.uniform01() * 0.1;
      ds.points.push_back({std::min(p, 1.0), rng.uniform01()});
    }
    const auto r = fit_isotonic(ds);
    std::vector<double> targets, weights;
    for (const auto& pt : ds.points) {
      targets.push_back(pt.target);
      weights.push_back(1.0);
    }
    const auto oracle = oracles::best_monotone_fit(targets, weights);
    for (int i = 0; i < n; ++i) {
      REQUIRE(r.apply(ds.points[static_cast<size_t>(i)].p) ==
              doctest::Approx(oracle.fitted[static_cast<size_t>(i)]).epsilon(1e-9));
    }
  }
}

TEST_CASE("sigmoid fit recovers known parameters from soft targets") {
  RecalDataset ds;
  for (int i = 0; i < 50; ++i) {
    const double p = (i + 0.5) / 50.0;
    ds.points.push_back({p, sigma(2.0 * p - 1.0)});
  }
  const auto fit = calib::fit_sigmoid_params(ds);
  CHECK(fit.a == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(fit.b == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK_FALSE(fit.degenerate);
}

TEST_CASE("sigmoid fit on constant targets is flagged and flat") {
  RecalDataset ds;
  for (int i = 1; i <= 9; ++i) ds.points.push_back({i / 10.0, 0.5});
  const auto fit = calib::fit_sigmoid_params(ds);
  CHECK(fit.a == 0.0);
  CHECK(fit.b == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.degenerate);
}

TEST_CASE("sigmoid fit never produces a decreasing map") {
  calib::RngStream rng(77, 5);
  for (int rep = 0; rep < 30; ++rep) {
    RecalDataset ds;
    double p = 0.0;
    for (int i = 0; i < 20; ++i) {
      p += 0.01 + 0.04 * rng.uniform01();
      ds.points.push_back({p, rng.uniform01()});
    }
    const auto r = calib::fit_sigmoid(ds);
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      const double v = r.apply(i / 100.0);
      REQUIRE(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("apply worked examples") {
  const auto id = identity_grid();
  CHECK(id.apply(0.3) == 0.3);

  const auto flat = Recalibrator::sigmoid(0.0, 0.0);
  CHECK(flat.apply(0.0) == 0.5);
  CHECK(flat.apply(0.42) == 0.5);
  CHECK(flat.apply(1.0) == 0.5);

  const auto step = Recalibrator::isotonic({0.5}, {1.0});
  CHECK(step.apply(0.7) == 1.0);
  CHECK(step.apply(0.5) == 1.0);
  CHECK(step.apply(0.3) == 0.0);

  CHECK_THROWS_AS(step.apply(-0.1), std::domain_error);
  CHECK_THROWS_AS(step.apply(1.1), std::domain_error);
}

TEST_CASE("recalibrated quantile worked examples") {
  const auto base = Forecast::gaussian(0.0, 1.0);

  const RecalibratedForecast ident(base, identity_grid());
  for (int i = 0; i <= 100; ++i) {
    const double p = i / 100.0;
    CHECK(calib::recalibrated_quantile(ident, p) == calib::quantile(base, p));
  }

  // R(q) = q^2 sampled on a dense monotone grid
  {
    RecalDataset ds;
    for (int i = 0; i <= 1000; ++i) {
      const double q = i / 1000.0;
      ds.points.push_back({q, q * q});
    }
    const RecalibratedForecast f(base, fit_isotonic(ds));
    const double got = calib::recalibrated_quantile(f, 0.25);
    CHECK(got == doctest::Approx(calib::quantile(base, 0.5)).epsilon(2e-3));
  }

  {
    const RecalibratedForecast f(base, Recalibrator::isotonic({0.5}, {1.0}));
    CHECK(calib::recalibrated_quantile(f, 0.3) == calib::quantile(base, 0.5));
  }

  {
    const auto emp = Forecast::empirical({1.0, 2.0, 3.0, 9.0});
    const RecalibratedForecast f(emp, Recalibrator::isotonic({0.5}, {0.8}));
    CHECK(calib::recalibrated_quantile(f, 0.9) == 9.0);  // above sup R -> top of support
  }
}

TEST_CASE("composition is exact at double precision") {
  const auto base = Forecast::gaussian(1.0, 2.0);
  const auto r = Recalibrator::isotonic({0.1, 0.4, 0.9}, {0.2, 0.5, 1.0});
  const RecalibratedForecast f(base, r);
  for (int i = -40; i <= 40; ++i) {
    const double y = i * 0.25;
    CHECK(f.cdf(y) == r.apply(base.cdf(y)));
  }
}

TEST_CASE("recalibrated moments agree with direct sampling") {
  const auto base = Forecast::gaussian(2.0, 1.5);
  calib::RngStream rng(31, 9);
  std::vector<double> pits(4000);
  for (auto& p : pits) p = std::pow(rng.uniform01(), 1.3);  // miscalibrated cdf values
  const auto recal = fit_isotonic(build_recal_dataset(std::move(pits)));
  const RecalibratedForecast f(base, recal);

  calib::RngStream mc(32, 9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = f.quantile(mc.uniform01());
    s += y;
    s2 += y * y;
  }
  const double mc_mean = s / n;
  const double mc_var = s2 / n - mc_mean * mc_mean;
  const double se = std::sqrt(mc_var / n);
  CHECK(std::fabs(f.mean() - mc_mean) < 4.0 * se + 1e-3);
  CHECK(f.variance() == doctest::Approx(mc_var).epsilon(0.03));

  // bounded support keeps the sigmoid map's edge mass at finite points
  const auto pwl = Forecast::piecewise_linear({0.0, 1.0, 4.0}, {0.0, 0.25, 1.0});
  const RecalibratedForecast g(pwl, Recalibrator::sigmoid(1.6, -0.6));
  calib::RngStream mc2(33, 9);
  double t = 0.0;
  for (int i = 0; i < n; ++i) t += g.quantile(mc2.uniform01());
  CHECK(std::fabs(g.mean() - t / n) < 0.01);
}

TEST_CASE("recalibrator json round trip preserves full precision") {
  const auto iso = Recalibrator::isotonic({0.1234567890123456, 0.7}, {0.3333333333333333, 1.0});
  const auto iso2 = Recalibrator::from_json(iso.to_json());
  REQUIRE(iso2.kind() == calib::RecalKind::Isotonic);
  CHECK(iso2.breakpoints() == iso.breakpoints());
  CHECK(iso2.levels() == iso.levels());

  const auto sig = Recalibrator::sigmoid(1.9876543210987654, -0.1234567890123456);
  const auto sig2 = Recalibrator::from_json(sig.to_json());
  REQUIRE(sig2.kind() == calib::RecalKind::Sigmoid);
  CHECK(sig2.slope() == sig.slope());
  CHECK(sig2.intercept() == sig.intercept());

  CHECK_THROWS_AS(Recalibrator::from_json("{\"variant\":\"spline\"}"), std::invalid_argument);
}

TEST_CASE("platt scaling recovers calibrated probabilities") {
  calib::RngStream rng(88, 1);
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  for (int i = 0; i < 10000; ++i) {
    const double z = 1.5 * (rng.uniform01() * 2.0 - 1.0) * 2.0;
    const double p1 = sigma(z);
    probs.push_back({1.0 - p1, p1});
    labels.push_back(rng.uniform01() < p1 ? 1 : 0);
  }
  const auto fit = calib::fit_platt(probs, labels);
  CHECK_FALSE(fit.degenerate);
  CHECK(fit.a > 0.9);
  CHECK(fit.a < 1.1);
  CHECK(fit.b > -0.1);
  CHECK(fit.b < 0.1);
}

TEST_CASE("platt scaling shrinks overconfident classifiers") {
  calib::RngStream rng(89, 1);
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  for (int i = 0; i < 10000; ++i) {
    const double z = 1.5 * (rng.uniform01() * 2.0 - 1.0) * 2.0;
    const double truth = sigma(z);
    const double reported = sigma(2.0 * z);  // inflated logits
    probs.push_back({1.0 - reported, reported});
    labels.push_back(rng.uniform01() < truth ? 1 : 0);
  }
  const auto fit = calib::fit_platt(probs, labels);
  CHECK(fit.a < 0.75);
}

TEST_CASE("platt scaling degenerate inputs") {
  {
    std::vector<std::vector<double>> probs(20, {0.5, 0.5});
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 2);
    const auto fit = calib::fit_platt(probs, labels);
    CHECK(fit.degenerate);
    CHECK(fit.a == 1.0);
    CHECK(fit.b == doctest::Approx(0.0).epsilon(1e-12));
  }
  {
    std::vector<std::vector<double>> probs(20, {0.9, 0.1});
    std::vector<int> labels(20, 0);
    const auto fit = calib::fit_platt(probs, labels);
    CHECK(fit.degenerate);
    CHECK(fit.a == 1.0);
    CHECK(fit.b == 0.0);
  }
}

TEST_CASE("platt apply renormalizes across classes") {
  const calib::PlattScaling fit{0.5, 0.2, false};
  const auto out = calib::apply_platt(fit, {0.2, 0.3, 0.5});
  double total = 0.0;
  for (double v : out) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[2] > out[1]);
  CHECK(out[1] > out[0]);
}

TEST_CASE("recalibrator validation") {
  CHECK_THROWS_AS(Recalibrator::isotonic({0.5, 0.5}, {0.1, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(Recalibrator::isotonic({0.5, 0.7}, {0.5, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(Recalibrator::isotonic({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Recalibrator::sigmoid(-1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(build_recal_dataset(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(build_recal_dataset(std::vector<double>{1.5}), std::domain_error);
}
