#pragma once

#include <string>
#include <vector>

#include "calib/forecast.hpp"

namespace calib {

enum class RecalKind { Isotonic, Sigmoid };

// A monotone map R: [0,1] -> [0,1] applied on top of a forecast's cdf.
// Isotonic: a right-continuous step function, 0 below the first breakpoint,
// level i on [breakpoints[i], breakpoints[i+1]). Sigmoid: R(p) = s(a p + b)
// with a >= 0, where s is the logistic function.
class Recalibrator {
 public:
  static Recalibrator isotonic(std::vector<double> breakpoints, std::vector<double> levels);
  static Recalibrator sigmoid(double a, double b);

  RecalKind kind() const { return kind_; }
  double apply(double p) const;
  // Generalized inverse: smallest q in [0,1] with R(q) >= p, or 1 if none.
  double inverse(double p) const;

  const std::vector<double>& breakpoints() const { return bs_; }
  const std::vector<double>& levels() const { return ls_; }
  double slope() const { return a_; }
  double intercept() const { return b_; }

  std::string to_json() const;
  static Recalibrator from_json(const std::string& text);

 private:
  Recalibrator() = default;
  RecalKind kind_ = RecalKind::Isotonic;
  std::vector<double> bs_, ls_;
  double a_ = 0.0, b_ = 0.0;
};

// One observation for recalibrator fitting: a forecast cdf value p and the
// empirical frequency target attached to it.
struct RecalPoint {
  double p;
  double target;
};

struct RecalDataset {
  std::vector<RecalPoint> points;  // sorted by p ascending
};

// target(p) = fraction of observed cdf values <= p (ties inclusive).
RecalDataset build_recal_dataset(std::vector<double> cdf_values);
RecalDataset build_recal_dataset(const std::vector<Forecast>& forecasts,
                                 const std::vector<double>& outcomes);

Recalibrator fit_isotonic(const RecalDataset& data);

struct SigmoidFit {
  double a = 0.0;
  double b = 0.0;
  bool degenerate = false;
  int iterations = 0;
};

SigmoidFit fit_sigmoid_params(const RecalDataset& data);
Recalibrator fit_sigmoid(const RecalDataset& data);

// Composition R(F(.)) exposed with the same query surface as Forecast.
class RecalibratedForecast {
 public:
  RecalibratedForecast(Forecast base, Recalibrator recal);
  double cdf(double y) const;
  double quantile(double p) const;
  double mean() const;
  double variance() const;
  const Forecast& base() const { return base_; }
  const Recalibrator& recalibrator() const { return recal_; }

 private:
  Forecast base_;
  Recalibrator recal_;
};

double recalibrated_cdf(const RecalibratedForecast& f, double y);
double recalibrated_quantile(const RecalibratedForecast& f, double p);

// Shared-parameter one-vs-rest logistic rescaling of a discrete classifier's
// probability vectors.
struct PlattScaling {
  double a = 1.0;
  double b = 0.0;
  bool degenerate = false;
};

PlattScaling fit_platt(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels);
std::vector<double> apply_platt(const PlattScaling& fit, const std::vector<double>& probs);

}  // namespace calib
