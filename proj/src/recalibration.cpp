#include "calib/recalibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace calib {

namespace {

double logistic(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double logit(double p) {
  const double c = std::min(1.0 - 1e-12, std::max(1e-12, p));
  return std::log(c) - std::log1p(-c);
}

void check_unit(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error(std::string(what) + " must lie in [0, 1]");
}

}  // namespace

Recalibrator Recalibrator::isotonic(std::vector<double> breakpoints, std::vector<double> levels) {
  if (breakpoints.empty() || breakpoints.size() != levels.size())
    throw std::invalid_argument("isotonic recalibrator: need matching nonempty breakpoints/levels");
  for (size_t i = 0; i < breakpoints.size(); ++i) {
    check_unit(breakpoints[i], "isotonic breakpoint");
    check_unit(levels[i], "isotonic level");
    if (i > 0 && !(breakpoints[i] > breakpoints[i - 1]))
      throw std::invalid_argument("isotonic recalibrator: breakpoints must be strictly increasing");
    if (i > 0 && levels[i] < levels[i - 1])
      throw std::invalid_argument("isotonic recalibrator: levels must be nondecreasing");
  }
  Recalibrator r;
  r.kind_ = RecalKind::Isotonic;
  r.bs_ = std::move(breakpoints);
  r.ls_ = std::move(levels);
  return r;
}

Recalibrator Recalibrator::sigmoid(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0)
    throw std::invalid_argument("sigmoid recalibrator: requires finite parameters with a >= 0");
  Recalibrator r;
  r.kind_ = RecalKind::Sigmoid;
  r.a_ = a;
  r.b_ = b;
  return r;
}

double Recalibrator::apply(double p) const {
  check_unit(p, "recalibrator input");
  if (kind_ == RecalKind::Sigmoid) return logistic(a_ * p + b_);
  const auto it = std::upper_bound(bs_.begin(), bs_.end(), p);
  if (it == bs_.begin()) return 0.0;
  return ls_[static_cast<size_t>(it - bs_.begin()) - 1];
}

double Recalibrator::inverse(double p) const {
  if (p <= 0.0) return 0.0;
  if (kind_ == RecalKind::Sigmoid) {
    if (logistic(b_) >= p) return 0.0;          // R(0) already reaches p
    if (logistic(a_ + b_) < p) return 1.0;      // p above sup R
    if (a_ == 0.0) return 1.0;
    double q = (logit(p) - b_) / a_;
    q = std::min(1.0, std::max(0.0, q));
    for (int i = 0; i < 8 && logistic(a_ * q + b_) < p; ++i) q = std::nextafter(q, 2.0);
    return std::min(q, 1.0);
  }
  const auto it = std::lower_bound(ls_.begin(), ls_.end(), p);
  if (it == ls_.end()) return 1.0;
  return bs_[static_cast<size_t>(it - ls_.begin())];
}

std::string Recalibrator::to_json() const {
  nlohmann::ordered_json j;
  if (kind_ == RecalKind::Isotonic) {
    j["variant"] = "isotonic";
    j["breakpoints"] = bs_;
    j["levels"] = ls_;
  } else {
    j["variant"] = "sigmoid";
    j["a"] = a_;
    j["b"] = b_;
  }
  return j.dump();
}

Recalibrator Recalibrator::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "isotonic") {
    return isotonic(j.at("breakpoints").get<std::vector<double>>(),
                    j.at("levels").get<std::vector<double>>());
  }
  if (variant == "sigmoid") {
    return sigmoid(j.at("a").get<double>(), j.at("b").get<double>());
  }
  throw std::invalid_argument("recalibrator json: unknown variant '" + variant + "'");
}

RecalDataset build_recal_dataset(std::vector<double> cdf_values) {
  if (cdf_values.empty()) throw std::invalid_argument("recalibration dataset: no observations");
  for (double p : cdf_values) check_unit(p, "cdf value");
  std::sort(cdf_values.begin(), cdf_values.end());
  const double n = static_cast<double>(cdf_values.size());
  RecalDataset ds;
  ds.points.reserve(cdf_values.size());
  for (size_t i = 0; i < cdf_values.size(); ++i) {
    const double p = cdf_values[i];
    const auto cnt = std::upper_bound(cdf_values.begin(), cdf_values.end(), p) - cdf_values.begin();
    ds.points.push_back({p, static_cast<double>(cnt) / n});
  }
  return ds;
}

RecalDataset build_recal_dataset(const std::vector<Forecast>& forecasts,
                                 const std::vector<double>& outcomes) {
  if (forecasts.size() != outcomes.size())
    throw std::invalid_argument("recalibration dataset: forecasts/outcomes length mismatch");
  std::vector<double> ps;
  ps.reserve(forecasts.size());
  for (size_t i = 0; i < forecasts.size(); ++i) ps.push_back(forecasts[i].cdf(outcomes[i]));
  return build_recal_dataset(std::move(ps));
}

Recalibrator fit_isotonic(const RecalDataset& data) {
  if (data.points.empty()) throw std::invalid_argument("isotonic fit: empty dataset");

  // merge exact ties in p so the fit is a function of p
  struct Block {
    double minp, wsum, tsum;
    double level() const { return tsum / wsum; }
  };
  std::vector<Block> merged;
  for (const auto& pt : data.points) {
    check_unit(pt.p, "cdf value");
    check_unit(pt.target, "target frequency");
    if (!merged.empty() && merged.back().minp == pt.p) {
      merged.back().wsum += 1.0;
      merged.back().tsum += pt.target;
    } else {
      if (!merged.empty() && pt.p < merged.back().minp)
        throw std::invalid_argument("isotonic fit: dataset must be sorted by p");
      merged.push_back({pt.p, 1.0, pt.target});
    }
  }

  // pool adjacent violators
  std::vector<Block> stack;
  stack.reserve(merged.size());
  for (const auto& blk : merged) {
    stack.push_back(blk);
    while (stack.size() >= 2 && stack[stack.size() - 1].level() < stack[stack.size() - 2].level()) {
      Block top = stack.back();
      stack.pop_back();
      stack.back().wsum += top.wsum;
      stack.back().tsum += top.tsum;
    }
  }

  std::vector<double> bs, ls;
  bs.reserve(stack.size());
  ls.reserve(stack.size());
  for (const auto& blk : stack) {
    bs.push_back(blk.minp);
    ls.push_back(std::min(1.0, std::max(0.0, blk.level())));
  }
  return Recalibrator::isotonic(std::move(bs), std::move(ls));
}

namespace {

// Cross-entropy fit of s(a x + b) against soft targets; damped Newton.
SigmoidFit fit_logistic_two_param(const std::vector<double>& xs, const std::vector<double>& ts) {
  const size_t n = xs.size();
  auto nll = [&](double a, double b) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double z = a * xs[i] + b;
      s += ts[i] * softplus(-z) + (1.0 - ts[i]) * softplus(z);
    }
    return s;
  };

  double a = 1.0, b = 0.0;
  double cur = nll(a, b);
  int iter = 0;
  for (; iter < 100; ++iter) {
    double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double s = logistic(a * xs[i] + b);
      const double d = s - ts[i];
      ga += d * xs[i];
      gb += d;
      const double w = s * (1.0 - s);
      haa += w * xs[i] * xs[i];
      hab += w * xs[i];
      hbb += w;
    }
    if (std::max(std::fabs(ga), std::fabs(gb)) < 1e-10) break;

    double mu = 0.0;
    bool stepped = false;
    for (int damp = 0; damp < 12 && !stepped; ++damp) {
      const double det = (haa + mu) * (hbb + mu) - hab * hab;
      if (det > 1e-300) {
        const double da = (-(ga) * (hbb + mu) + gb * hab) / det;
        const double db = (-(gb) * (haa + mu) + ga * hab) / det;
        double scale = 1.0;
        for (int half = 0; half < 40; ++half) {
          const double trial = nll(a + scale * da, b + scale * db);
          if (trial <= cur) {
            a += scale * da;
            b += scale * db;
            cur = trial;
            stepped = true;
            break;
          }
          scale *= 0.5;
        }
      }
      mu = (mu == 0.0) ? 1e-8 : mu * 100.0;
    }
    if (!stepped) break;
  }
  return {a, b, false, iter};
}

}  // namespace

SigmoidFit fit_sigmoid_params(const RecalDataset& data) {
  if (data.points.empty()) throw std::invalid_argument("sigmoid fit: empty dataset");
  std::vector<double> xs, ts;
  xs.reserve(data.points.size());
  ts.reserve(data.points.size());
  double tmin = 1.0, tmax = 0.0, tsum = 0.0;
  for (const auto& pt : data.points) {
    check_unit(pt.p, "cdf value");
    check_unit(pt.target, "target frequency");
    xs.push_back(pt.p);
    ts.push_back(pt.target);
    tmin = std::min(tmin, pt.target);
    tmax = std::max(tmax, pt.target);
    tsum += pt.target;
  }
  const double tmean = tsum / static_cast<double>(ts.size());

  if (tmax - tmin == 0.0) return {0.0, logit(tmean), true, 0};

  SigmoidFit fit = fit_logistic_two_param(xs, ts);
  if (fit.a < 0.0) {
    fit.a = 0.0;
    fit.b = logit(tmean);
    fit.degenerate = true;
  }
  return fit;
}

Recalibrator fit_sigmoid(const RecalDataset& data) {
  const SigmoidFit fit = fit_sigmoid_params(data);
  return Recalibrator::sigmoid(fit.a, fit.b);
}

RecalibratedForecast::RecalibratedForecast(Forecast base, Recalibrator recal)
    : base_(std::move(base)), recal_(std::move(recal)) {}

double RecalibratedForecast::cdf(double y) const { return recal_.apply(base_.cdf(y)); }

double RecalibratedForecast::quantile(double p) const {
  check_unit(p, "quantile probability");
  return base_.quantile(recal_.inverse(p));
}

double RecalibratedForecast::mean() const {
  if (recal_.kind() == RecalKind::Isotonic) {
    const auto& bs = recal_.breakpoints();
    const auto& ls = recal_.levels();
    if (ls.back() != 1.0)
      throw std::domain_error("recalibrated mean: isotonic map must reach 1");
    double m = 0.0, prev = 0.0;
    for (size_t i = 0; i < bs.size(); ++i) {
      const double mass = ls[i] - prev;
      if (mass > 0.0) m += mass * base_.quantile(bs[i]);
      prev = ls[i];
    }
    return m;
  }
  // continuous map: midpoint quadrature in probability space
  const int n = 8192;
  double m = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = (i + 0.5) / n;
    double q = recal_.inverse(u);
    q = std::min(1.0 - 1e-12, std::max(1e-12, q));
    m += base_.quantile(q);
  }
  return m / n;
}

double RecalibratedForecast::variance() const {
  if (recal_.kind() == RecalKind::Isotonic) {
    const auto& bs = recal_.breakpoints();
    const auto& ls = recal_.levels();
    if (ls.back() != 1.0)
      throw std::domain_error("recalibrated variance: isotonic map must reach 1");
    double m = 0.0, m2 = 0.0, prev = 0.0;
    for (size_t i = 0; i < bs.size(); ++i) {
      const double mass = ls[i] - prev;
      if (mass > 0.0) {
        const double y = base_.quantile(bs[i]);
        m += mass * y;
        m2 += mass * y * y;
      }
      prev = ls[i];
    }
    return m2 - m * m;
  }
  const int n = 8192;
  double m = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = (i + 0.5) / n;
    double q = recal_.inverse(u);
    q = std::min(1.0 - 1e-12, std::max(1e-12, q));
    const double y = base_.quantile(q);
    m += y;
    m2 += y * y;
  }
  m /= n;
  m2 /= n;
  return m2 - m * m;
}

double recalibrated_cdf(const RecalibratedForecast& f, double y) { return f.cdf(y); }
double recalibrated_quantile(const RecalibratedForecast& f, double p) { return f.quantile(p); }

PlattScaling fit_platt(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
  if (probs.empty() || probs.size() != labels.size())
    throw std::invalid_argument("platt fit: need matching nonempty probs/labels");
  const size_t k = probs.front().size();
  if (k < 2) throw std::invalid_argument("platt fit: need at least two classes");
  for (size_t t = 0; t < probs.size(); ++t) {
    if (probs[t].size() != k) throw std::invalid_argument("platt fit: ragged probability rows");
    if (labels[t] < 0 || static_cast<size_t>(labels[t]) >= k)
      throw std::invalid_argument("platt fit: label out of range");
  }

  bool single_class = true;
  for (size_t t = 1; t < labels.size(); ++t) single_class = single_class && labels[t] == labels[0];
  if (single_class) return {1.0, 0.0, true};

  std::vector<double> xs, ts;
  xs.reserve(probs.size() * k);
  ts.reserve(probs.size() * k);
  for (size_t t = 0; t < probs.size(); ++t) {
    for (size_t c = 0; c < k; ++c) {
      xs.push_back(logit(probs[t][c]));
      ts.push_back(static_cast<size_t>(labels[t]) == c ? 1.0 : 0.0);
    }
  }

  double zmin = xs[0], zmax = xs[0], tsum = 0.0;
  for (double z : xs) {
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  for (double t : ts) tsum += t;
  if (zmax - zmin == 0.0) {
    const double tmean = tsum / static_cast<double>(ts.size());
    return {1.0, logit(tmean) - zmin, true};
  }

  const SigmoidFit fit = fit_logistic_two_param(xs, ts);
  return {fit.a, fit.b, false};
}

std::vector<double> apply_platt(const PlattScaling& fit, const std::vector<double>& probs) {
  if (probs.empty()) throw std::invalid_argument("platt apply: empty probability vector");
  std::vector<double> out(probs.size());
  double total = 0.0;
  for (size_t c = 0; c < probs.size(); ++c) {
    check_unit(probs[c], "class probability");
    out[c] = logistic(fit.a * logit(probs[c]) + fit.b);
    total += out[c];
  }
  if (total <= 0.0) throw std::domain_error("platt apply: degenerate rescaled vector");
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace calib
