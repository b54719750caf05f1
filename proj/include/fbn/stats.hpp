#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fbn/common.hpp"
#include "fbn/tensor.hpp"

namespace fbn {

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double ibeta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 3e-15;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double ibeta(double a, double b, double x) {
  detail::require(a > 0.0 && b > 0.0, "ibeta: parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::ibeta_cf(a, b, x) / a;
  return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of a t statistic: p = 2 (1 - CDF_t(|t|; nu)).
inline double t_two_sided_p(double t, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("t_two_sided_p: degrees of freedom must be > 0");
  if (std::isinf(t)) return 0.0;
  const double x = nu / (nu + t * t);
  return ibeta(0.5 * nu, 0.5, x);
}

struct WelchResult {
  double t = 0.0;
  double nu = 1.0;
  double p = 1.0;
};

// Welch's unequal-variance two-sample t-test with Welch-Satterthwaite
// degrees of freedom. Both groups need at least two observations.
inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  detail::require(a.size() >= 2 && b.size() >= 2, "welch_t_test: each group needs >= 2 samples");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ma = 0.0, mb = 0.0;
  for (const double v : a) ma += v;
  for (const double v : b) mb += v;
  ma /= na;
  mb /= nb;
  double va = 0.0, vb = 0.0;
  for (const double v : a) va += (v - ma) * (v - ma);
  for (const double v : b) vb += (v - mb) * (v - mb);
  va /= (na - 1.0);
  vb /= (nb - 1.0);

  WelchResult res;
  const double sea = va / na, seb = vb / nb;
  const double se2 = sea + seb;
  if (se2 <= 0.0) {
    // both groups constant
    if (ma == mb) {
      res.t = 0.0;
      res.nu = na + nb - 2.0;
      res.p = 1.0;
    } else {
      res.t = ma > mb ? std::numeric_limits<double>::infinity()
                      : -std::numeric_limits<double>::infinity();
      res.nu = na + nb - 2.0;
      res.p = 0.0;
    }
    return res;
  }
  res.t = (ma - mb) / std::sqrt(se2);
  res.nu = se2 * se2 / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
  res.p = t_two_sided_p(res.t, res.nu);
  return res;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace fbn
