#pragma once

#include <vector>

#include "calib/rng.hpp"

namespace calib {

enum class ForecastKind { Gaussian, Empirical, PiecewiseLinear };

// A one-dimensional predictive distribution. Three closed-world variants:
//   Gaussian(mean, stddev), stddev > 0
//   Empirical(samples), the discrete uniform distribution over the samples
//   PiecewiseLinear(knots, cdf), a continuous CDF interpolated between knots
//
// quantile(p) is the generalized inverse evaluated at double precision: the
// smallest representable y with cdf(y) >= p. quantile(0) returns the left
// edge of the support (-inf for Gaussian, the smallest sample or first knot
// otherwise).
class Forecast {
 public:
  static Forecast gaussian(double mean, double stddev);
  static Forecast empirical(std::vector<double> samples);
  static Forecast piecewise_linear(std::vector<double> knots, std::vector<double> cdf);

  ForecastKind kind() const { return kind_; }

  double cdf(double y) const;
  double quantile(double p) const;
  double sample(RngStream& rng) const;
  double mean() const;
  double variance() const;

  double gaussian_mean() const { return mu_; }
  double gaussian_stddev() const { return sigma_; }
  // Empirical: sorted samples. PiecewiseLinear: knots.
  const std::vector<double>& points() const { return xs_; }
  const std::vector<double>& cdf_values() const { return cs_; }

 private:
  Forecast() = default;
  ForecastKind kind_ = ForecastKind::Gaussian;
  double mu_ = 0.0, sigma_ = 1.0;
  std::vector<double> xs_;  // sorted samples or knots
  std::vector<double> cs_;  // piecewise-linear cdf values at knots
};

// Free-function spellings used throughout the toolkit.
double cdf_eval(const Forecast& f, double y);
double quantile(const Forecast& f, double p);
double sample(const Forecast& f, RngStream& rng);
double mean(const Forecast& f);
double variance(const Forecast& f);

}  // namespace calib
