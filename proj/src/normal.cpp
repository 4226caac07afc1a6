#include "calib/normal.hpp"

#include <cmath>
#include <limits>

namespace calib {

namespace {

constexpr double kSqrtPiInv = 5.6418958354775628695e-1;  // 1/sqrt(pi)

// Shared rational kernel behind erf and erfc (Cody's CALERF scheme).
// mode 0 -> erf(x), mode 1 -> erfc(x).
double calerf(double x, int mode) {
  static const double A[5] = {3.16112374387056560e0, 1.13864154151050156e2,
                              3.77485237685302021e2, 3.20937758913846947e3,
                              1.85777706184603153e-1};
  static const double B[4] = {2.36012909523441209e1, 2.44024637934444173e2,
                              1.28261652607737228e3, 2.84423683343917062e3};
  static const double C[9] = {5.64188496988670089e-1, 8.88314979438837594e0,
                              6.61191906371416295e1,  2.98635138197400131e2,
                              8.81952221241769090e2,  1.71204761263407058e3,
                              2.05107837782607147e3,  1.23033935479799725e3,
                              2.15311535474403846e-8};
  static const double D[8] = {1.57449261107098347e1, 1.17693950891312499e2,
                              5.37181101862009858e2, 1.62138957456669019e3,
                              3.29079923573345963e3, 4.36261909014324716e3,
                              3.43936767414372164e3, 1.23033935480374942e3};
  static const double P[6] = {3.05326634961232344e-1, 3.60344899949804439e-1,
                              1.25781726111229246e-1, 1.60837851487422766e-2,
                              6.58749161529837803e-4, 1.63153871373020978e-2};
  static const double Q[5] = {2.56852019228982242e0, 1.87295284992346047e0,
                              5.27905102951428412e-1, 6.05183413124413191e-2,
                              2.33520497626869185e-3};

  const double y = std::fabs(x);
  double result;

  if (y <= 0.46875) {
    double z = 0.0;
    if (y > 1.11e-16) z = y * y;
    double xnum = A[4] * z;
    double xden = z;
    for (int i = 0; i < 3; ++i) {
      xnum = (xnum + A[i]) * z;
      xden = (xden + B[i]) * z;
    }
    result = x * (xnum + A[3]) / (xden + B[3]);
    if (mode == 0) return result;
    return 1.0 - result;
  }

  if (y <= 4.0) {
    double xnum = C[8] * y;
    double xden = y;
    for (int i = 0; i < 7; ++i) {
      xnum = (xnum + C[i]) * y;
      xden = (xden + D[i]) * y;
    }
    result = (xnum + C[7]) / (xden + D[7]);
    const double ysq = std::trunc(y * 16.0) / 16.0;
    const double del = (y - ysq) * (y + ysq);
    result *= std::exp(-ysq * ysq) * std::exp(-del);
  } else {
    if (y >= 26.5) {
      result = 0.0;
    } else {
      const double z = 1.0 / (y * y);
      double xnum = P[5] * z;
      double xden = z;
      for (int i = 0; i < 4; ++i) {
        xnum = (xnum + P[i]) * z;
        xden = (xden + Q[i]) * z;
      }
      result = z * (xnum + P[4]) / (xden + Q[4]);
      result = (kSqrtPiInv - result) / y;
      const double ysq = std::trunc(y * 16.0) / 16.0;
      const double del = (y - ysq) * (y + ysq);
      result *= std::exp(-ysq * ysq) * std::exp(-del);
    }
  }

  // result == erfc(y) at this point
  if (mode == 1) {
    if (x < 0.0) return 2.0 - result;
    return result;
  }
  if (x < 0.0) return result - 1.0;
  return 1.0 - result;
}

}  // namespace

double erf_approx(double x) {
  if (std::isnan(x)) return x;
  if (x > 6.0) return 1.0;
  if (x < -6.0) return -1.0;
  return calerf(x, 0);
}

double erfc_approx(double x) {
  if (std::isnan(x)) return x;
  if (x > 27.0) return 0.0;
  if (x < -6.0) return 2.0;
  return calerf(x, 1);
}

double normal_cdf(double z) {
  if (std::isnan(z)) return z;
  if (z == std::numeric_limits<double>::infinity()) return 1.0;
  if (z == -std::numeric_limits<double>::infinity()) return 0.0;
  return 0.5 * erfc_approx(-z * 0.7071067811865475244);
}

double normal_pdf(double z) {
  return 0.3989422804014326779 * std::exp(-0.5 * z * z);
}

double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();

  // Acklam's rational seed, then one Halley step against normal_cdf.
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;

  double z;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  if (std::fabs(z) < 37.0) {
    const double e = normal_cdf(z) - p;
    const double u = e * 2.5066282746310002 * std::exp(0.5 * z * z);
    z -= u / (1.0 + 0.5 * z * u);
  }
  return z;
}

}  // namespace calib
