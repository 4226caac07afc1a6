#pragma once

namespace calib {

// Rational-approximation error functions, abs error below 1e-7 everywhere
// (the implementation is accurate to near double precision).
double erf_approx(double x);
double erfc_approx(double x);

// Standard normal CDF and its inverse. normal_quantile(0) = -inf,
// normal_quantile(1) = +inf; arguments outside [0, 1] are the caller's bug.
double normal_cdf(double z);
double normal_quantile(double p);

double normal_pdf(double z);

}  // namespace calib
