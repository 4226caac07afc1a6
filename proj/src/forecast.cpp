#include "calib/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "calib/normal.hpp"

namespace calib {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("quantile: p must lie in [0, 1]");
}

// Smallest double in (lo, hi] at which cdf crosses >= p.
// Requires cdf(lo) < p <= cdf(hi). The computed cdf can wiggle a couple of
// ulps around the true curve, so bisection alone may stop above the minimal
// crossing. Walk down through rounding plateaus and sub-ulp dips afterwards:
// no crossing can sit below the point where the cdf falls more than a few
// ulps of p under p, and a step cap bounds degenerate plateaus (quantiles
// straddling zero, where adjacent doubles are arbitrarily dense).
template <class F>
double bisect_boundary(const F& cdf, double p, double lo, double hi) {
  while (true) {
    const double mid = lo + (hi - lo) * 0.5;
    if (!(mid > lo && mid < hi)) break;
    if (cdf(mid) >= p) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  // The walk may pass below the bisection bracket: a dip point can have been
  // adopted as lo during bisection. Stop rule soundness: the computed cdf is
  // a wiggle of at most a few ulps around a monotone curve, so once a point
  // evaluates below p - 8 ulps of p, every point further down computes below
  // p and no crossing can hide there. Dense plateaus (quantiles straddling
  // zero, where adjacent doubles are arbitrarily close) are crossed by
  // doubling jumps; a jump is kept when it lands on a crossing (the landing
  // point replaces hi) or on the identical computed value (a flat run),
  // anything else rejects it in favor of single-ulp steps.
  const double u = std::ldexp(std::fabs(p) + 4.9e-324, -52);
  const double floor_p = p - 8.0 * u;
  double x = hi;         // lowest cleared point
  double xc = cdf(hi);   // its computed value, >= p by the bracket invariant
  double jump = 0.0;     // current fast-skip width; 0 = one ulp at a time
  const auto start_jump = [](double at) {
    return std::max(std::fabs(at) * 3.6e-15, 4.9e-324 * 16.0);  // ~16 ulps
  };
  for (long evals = 0; evals < (1l << 17); ++evals) {
    double cand = std::nextafter(x, -kInf);
    const bool jumped = jump > 0.0 && std::isfinite(x - jump) && x - jump < cand;
    if (jumped) cand = x - jump;
    if (!std::isfinite(cand)) break;
    const double c = cdf(cand);
    if (c >= p) {
      hi = x = cand;
      xc = c;
      jump = jump > 0.0 ? jump * 2.0 : start_jump(x);
      continue;
    }
    if (jumped && c != xc) {
      jump *= 0.25;  // cannot certify the skipped stretch; retry shorter
      if (jump <= std::fabs(x) * 4.4e-16) jump = 0.0;
      continue;
    }
    if (c < floor_p) break;
    x = cand;
    if (c == xc) {
      jump = jump > 0.0 ? jump * 2.0 : start_jump(x);
    } else {
      xc = c;
      jump = 0.0;
    }
  }
  return hi;
}

// Smallest double y with cdf(y) >= p, starting from an approximate seed.
// step sets the initial bracket scale; the bracket expands as needed.
template <class F>
double tighten_quantile(const F& cdf, double p, double seed, double step) {
  double lo, hi;
  if (cdf(seed) >= p) {
    hi = seed;
    lo = seed - step;
    for (int i = 0; cdf(lo) >= p; ++i) {
      if (i > 200) {
        lo = -std::numeric_limits<double>::max();
        break;
      }
      step *= 8.0;
      lo -= step;
    }
  } else {
    lo = seed;
    hi = seed + step;
    for (int i = 0; cdf(hi) < p; ++i) {
      if (i > 200) {
        hi = std::numeric_limits<double>::max();
        break;
      }
      step *= 8.0;
      hi += step;
    }
  }
  return bisect_boundary(cdf, p, lo, hi);
}

}  // namespace

Forecast Forecast::gaussian(double mean, double stddev) {
  if (!std::isfinite(mean) || !std::isfinite(stddev) || stddev <= 0.0)
    throw std::invalid_argument("gaussian forecast: mean must be finite and stddev > 0");
  Forecast f;
  f.kind_ = ForecastKind::Gaussian;
  f.mu_ = mean;
  f.sigma_ = stddev;
  return f;
}

Forecast Forecast::empirical(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("empirical forecast: need at least one sample");
  for (double v : samples)
    if (!std::isfinite(v)) throw std::invalid_argument("empirical forecast: samples must be finite");
  std::sort(samples.begin(), samples.end());
  Forecast f;
  f.kind_ = ForecastKind::Empirical;
  f.xs_ = std::move(samples);
  return f;
}

Forecast Forecast::piecewise_linear(std::vector<double> knots, std::vector<double> cdf) {
  if (knots.size() < 2 || knots.size() != cdf.size())
    throw std::invalid_argument("piecewise linear forecast: need matching knots/cdf, length >= 2");
  for (size_t i = 0; i < knots.size(); ++i) {
    if (!std::isfinite(knots[i])) throw std::invalid_argument("piecewise linear forecast: knots must be finite");
    if (i > 0 && !(knots[i] > knots[i - 1]))
      throw std::invalid_argument("piecewise linear forecast: knots must be strictly increasing");
    if (i > 0 && cdf[i] < cdf[i - 1])
      throw std::invalid_argument("piecewise linear forecast: cdf values must be nondecreasing");
  }
  if (cdf.front() != 0.0 || cdf.back() != 1.0)
    throw std::invalid_argument("piecewise linear forecast: cdf must run from 0 to 1");
  Forecast f;
  f.kind_ = ForecastKind::PiecewiseLinear;
  f.xs_ = std::move(knots);
  f.cs_ = std::move(cdf);
  return f;
}

double Forecast::cdf(double y) const {
  if (std::isnan(y)) throw std::domain_error("cdf: y must not be NaN");
  switch (kind_) {
    case ForecastKind::Gaussian: {
      if (y == kInf) return 1.0;
      if (y == -kInf) return 0.0;
      return normal_cdf((y - mu_) / sigma_);
    }
    case ForecastKind::Empirical: {
      const auto n = static_cast<double>(xs_.size());
      const auto cnt = std::upper_bound(xs_.begin(), xs_.end(), y) - xs_.begin();
      return static_cast<double>(cnt) / n;
    }
    case ForecastKind::PiecewiseLinear: {
      if (y < xs_.front()) return 0.0;
      if (y >= xs_.back()) return 1.0;
      const auto j = std::upper_bound(xs_.begin(), xs_.end(), y) - xs_.begin();
      const double x0 = xs_[j - 1], x1 = xs_[j];
      const double c0 = cs_[j - 1], c1 = cs_[j];
      return c0 + (y - x0) * ((c1 - c0) / (x1 - x0));
    }
  }
  return 0.0;
}

double Forecast::quantile(double p) const {
  check_p(p);
  switch (kind_) {
    case ForecastKind::Gaussian: {
      if (p == 0.0) return -kInf;
      const auto g = [this](double y) { return cdf(y); };
      if (p == 1.0) {
        // smallest double whose computed cdf rounds up to exactly 1
        double lo = mu_ + 7.0 * sigma_;
        double hi = mu_ + 11.0 * sigma_;
        if (!std::isfinite(hi)) hi = std::numeric_limits<double>::max();
        if (!(g(lo) < 1.0)) lo = mu_;  // extreme parameter regimes
        return bisect_boundary(g, 1.0, lo, hi);
      }
      const double z = normal_quantile(p);
      const double seed = mu_ + sigma_ * z;
      const double step = sigma_ * 1e-12 * std::max(1.0, std::fabs(z)) + std::fabs(seed) * 1e-14 + 1e-300;
      return tighten_quantile(g, p, seed, step);
    }
    case ForecastKind::Empirical: {
      if (p == 0.0) return xs_.front();
      const auto n = static_cast<long long>(xs_.size());
      const double nd = static_cast<double>(n);
      auto k = static_cast<long long>(std::ceil(p * nd));
      k = std::max<long long>(1, std::min(n, k));
      while (k > 1 && static_cast<double>(k - 1) / nd >= p) --k;
      while (k < n && static_cast<double>(k) / nd < p) ++k;
      return xs_[static_cast<size_t>(k - 1)];
    }
    case ForecastKind::PiecewiseLinear: {
      if (p == 0.0) return xs_.front();
      const auto j = std::lower_bound(cs_.begin(), cs_.end(), p) - cs_.begin();
      // cs_[j] >= p and cs_[j-1] < p; j >= 1 because cs_[0] = 0 < p
      const double x0 = xs_[j - 1], x1 = xs_[j];
      const double c0 = cs_[j - 1], c1 = cs_[j];
      double seed = x0 + (p - c0) * ((x1 - x0) / (c1 - c0));
      seed = std::min(std::max(seed, x0), x1);
      const auto g = [this](double y) { return cdf(y); };
      // bracket is exact at the knots: cdf(x0) = c0 < p <= c1 = cdf(x1)
      if (g(seed) >= p) return bisect_boundary(g, p, x0, seed);
      return bisect_boundary(g, p, seed, x1);
    }
  }
  return 0.0;
}

double Forecast::sample(RngStream& rng) const { return quantile(rng.uniform01()); }

double Forecast::mean() const {
  switch (kind_) {
    case ForecastKind::Gaussian:
      return mu_;
    case ForecastKind::Empirical: {
      double s = 0.0;
      for (double v : xs_) s += v;
      return s / static_cast<double>(xs_.size());
    }
    case ForecastKind::PiecewiseLinear: {
      double m = 0.0;
      for (size_t i = 1; i < xs_.size(); ++i) {
        const double dc = cs_[i] - cs_[i - 1];
        m += dc * 0.5 * (xs_[i] + xs_[i - 1]);
      }
      return m;
    }
  }
  return 0.0;
}

double Forecast::variance() const {
  switch (kind_) {
    case ForecastKind::Gaussian:
      return sigma_ * sigma_;
    case ForecastKind::Empirical: {
      const double m = mean();
      double s = 0.0;
      for (double v : xs_) s += (v - m) * (v - m);
      return s / static_cast<double>(xs_.size());
    }
    case ForecastKind::PiecewiseLinear: {
      const double m = mean();
      double m2 = 0.0;
      for (size_t i = 1; i < xs_.size(); ++i) {
        const double dc = cs_[i] - cs_[i - 1];
        const double a = xs_[i - 1], b = xs_[i];
        m2 += dc * (a * a + a * b + b * b) / 3.0;
      }
      return m2 - m * m;
    }
  }
  return 0.0;
}

double cdf_eval(const Forecast& f, double y) { return f.cdf(y); }
double quantile(const Forecast& f, double p) { return f.quantile(p); }
double sample(const Forecast& f, RngStream& rng) { return f.sample(rng); }
double mean(const Forecast& f) { return f.mean(); }
double variance(const Forecast& f) { return f.variance(); }

}  // namespace calib
