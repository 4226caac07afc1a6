#pragma once

#include <string>
#include <vector>

#include "calib/forecast.hpp"

namespace calib {

// Probability integral transform of each outcome under its forecast.
std::vector<double> pit_values(const std::vector<Forecast>& forecasts,
                               const std::vector<double>& outcomes);

// Empirical frequency of PIT <= j/m for j = 1..m. A calibrated forecaster
// tracks the diagonal.
struct ReliabilityCurve {
  std::vector<double> thresholds;
  std::vector<double> frequencies;
  long n = 0;
};

ReliabilityCurve reliability_curve(const std::vector<double>& pits, int thresholds = 10);
ReliabilityCurve reliability_curve(const std::vector<Forecast>& forecasts,
                                   const std::vector<double>& outcomes, int thresholds = 10);

// Sum of squared deviations from the diagonal across the curve's thresholds.
double calibration_loss(const ReliabilityCurve& curve);
double calibration_loss(const std::vector<double>& pits, int thresholds = 10);

struct PitHistogram {
  int bins = 0;
  std::vector<long> counts;
};

PitHistogram pit_histogram(const std::vector<double>& pits, int bins = 10);

// Mean forecast variance; lower is sharper.
double sharpness(const std::vector<Forecast>& forecasts);

// "threshold,empirical_frequency" rows, one per threshold.
std::string reliability_csv(const ReliabilityCurve& curve);

}  // namespace calib
