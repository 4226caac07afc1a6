#include "calib/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace calib {

std::vector<double> pit_values(const std::vector<Forecast>& forecasts,
                               const std::vector<double>& outcomes) {
  if (forecasts.size() != outcomes.size())
    throw std::invalid_argument("pit values: forecasts/outcomes length mismatch");
  std::vector<double> pits;
  pits.reserve(forecasts.size());
  for (size_t i = 0; i < forecasts.size(); ++i) pits.push_back(forecasts[i].cdf(outcomes[i]));
  return pits;
}

ReliabilityCurve reliability_curve(const std::vector<double>& pits, int thresholds) {
  if (thresholds < 1) throw std::invalid_argument("reliability curve: need at least one threshold");
  if (pits.empty()) throw std::invalid_argument("reliability curve: no observations");
  for (double p : pits)
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("reliability curve: pit outside [0, 1]");

  std::vector<double> sorted(pits);
  std::sort(sorted.begin(), sorted.end());
  ReliabilityCurve curve;
  curve.n = static_cast<long>(pits.size());
  curve.thresholds.reserve(static_cast<size_t>(thresholds));
  curve.frequencies.reserve(static_cast<size_t>(thresholds));
  const double n = static_cast<double>(pits.size());
  for (int j = 1; j <= thresholds; ++j) {
    const double t = static_cast<double>(j) / thresholds;
    const auto cnt = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.thresholds.push_back(t);
    curve.frequencies.push_back(static_cast<double>(cnt) / n);
  }
  return curve;
}

ReliabilityCurve reliability_curve(const std::vector<Forecast>& forecasts,
                                   const std::vector<double>& outcomes, int thresholds) {
  return reliability_curve(pit_values(forecasts, outcomes), thresholds);
}

double calibration_loss(const ReliabilityCurve& curve) {
  double s = 0.0;
  for (size_t j = 0; j < curve.thresholds.size(); ++j) {
    const double d = curve.frequencies[j] - curve.thresholds[j];
    s += d * d;
  }
  return s;
}

double calibration_loss(const std::vector<double>& pits, int thresholds) {
  return calibration_loss(reliability_curve(pits, thresholds));
}

PitHistogram pit_histogram(const std::vector<double>& pits, int bins) {
  if (bins < 1) throw std::invalid_argument("pit histogram: need at least one bin");
  PitHistogram h;
  h.bins = bins;
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (double p : pits) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("pit histogram: pit outside [0, 1]");
    const auto b = std::min<long>(bins - 1, static_cast<long>(std::floor(p * bins)));
    ++h.counts[static_cast<size_t>(b)];
  }
  return h;
}

double sharpness(const std::vector<Forecast>& forecasts) {
  if (forecasts.empty()) throw std::invalid_argument("sharpness: no forecasts");
  double s = 0.0;
  for (const auto& f : forecasts) s += f.variance();
  return s / static_cast<double>(forecasts.size());
}

std::string reliability_csv(const ReliabilityCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,empirical_frequency\n";
  for (size_t j = 0; j < curve.thresholds.size(); ++j)
    out << curve.thresholds[j] << "," << curve.frequencies[j] << "\n";
  return out.str();
}

}  // namespace calib
