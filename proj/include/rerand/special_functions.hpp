#pragma once

// Regularized incomplete gamma, chi-squared CDF/quantile, and the
// rerandomization variance factor v_a.

#include <cmath>
#include <limits>
#include <string>

#include "rerand/error.hpp"

namespace rerand {

namespace detail {

inline constexpr double kSeriesEps = 1e-17;
inline constexpr int kMaxIterations = 100000;

// sum_{k>=0} x^k / ((s+1)(s+2)...(s+k))
inline double gamma_series_sum(double s, double x) {
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < kMaxIterations; ++k) {
    term *= x / (s + k);
    sum += term;
    if (term < sum * kSeriesEps) return sum;
  }
  fail(ErrorKind::Domain, "incomplete gamma series did not converge");
}

// Continued fraction for Gamma(s, x) * e^x * x^-s, modified Lentz.
inline double gamma_continued_fraction(double s, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - s;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - s);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16) return h;
  }
  fail(ErrorKind::Domain, "incomplete gamma continued fraction did not converge");
}

inline void check_gamma_args(double s, double x) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    fail(ErrorKind::Domain, "incomplete gamma requires s > 0");
  }
  if (!(x >= 0.0) || std::isnan(x)) {
    fail(ErrorKind::Domain, "incomplete gamma requires x >= 0");
  }
}

}  // namespace detail

/// P(s, x) = gamma(s, x) / Gamma(s). Series below x = s + 1, continued
/// fraction above.
inline double reg_lower_incomplete_gamma(double s, double x) {
  detail::check_gamma_args(s, x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < s + 1.0) {
    const double log_prefix = s * std::log(x) - x - std::lgamma(s + 1.0);
    return std::exp(log_prefix) * detail::gamma_series_sum(s, x);
  }
  const double log_prefix = s * std::log(x) - x - std::lgamma(s);
  return 1.0 - std::exp(log_prefix) * detail::gamma_continued_fraction(s, x);
}

/// Q(s, x) = 1 - P(s, x), computed without cancellation in the upper tail.
inline double reg_upper_incomplete_gamma(double s, double x) {
  detail::check_gamma_args(s, x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < s + 1.0) return 1.0 - reg_lower_incomplete_gamma(s, x);
  const double log_prefix = s * std::log(x) - x - std::lgamma(s);
  return std::exp(log_prefix) * detail::gamma_continued_fraction(s, x);
}

namespace detail {
inline void check_dof(int dof) {
  if (dof < 1) fail(ErrorKind::Domain, "chi-squared degrees of freedom must be >= 1");
}
}  // namespace detail

inline double chi2_cdf(int dof, double x) {
  detail::check_dof(dof);
  if (!(x >= 0.0)) fail(ErrorKind::Domain, "chi-squared CDF requires x >= 0");
  return reg_lower_incomplete_gamma(0.5 * dof, 0.5 * x);
}

inline double chi2_pdf(int dof, double x) {
  detail::check_dof(dof);
  if (x < 0.0) return 0.0;
  const double s = 0.5 * dof;
  if (x == 0.0) return dof == 2 ? 0.5 : (dof == 1 ? std::numeric_limits<double>::infinity() : 0.0);
  return std::exp((s - 1.0) * std::log(x) - 0.5 * x - s * std::log(2.0) - std::lgamma(s));
}

/// Smallest x with chi2_cdf(dof, x) = prob: geometric bracketing, then
/// Newton steps that fall back to bisection when they leave the bracket.
inline double chi2_quantile(int dof, double prob) {
  detail::check_dof(dof);
  if (!(prob > 0.0 && prob < 1.0)) {
    fail(ErrorKind::Domain, "chi-squared quantile requires prob in (0, 1)");
  }
  double lo = 0.0;
  double hi = std::max(1.0, static_cast<double>(dof));
  while (chi2_cdf(dof, hi) < prob) {
    lo = hi;
    hi *= 2.0;
  }
  double x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 500; ++iter) {
    const double f = chi2_cdf(dof, x) - prob;
    if (f == 0.0) return x;
    if (f < 0.0) lo = x; else hi = x;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;

    const double density = chi2_pdf(dof, x);
    double next = (density > 0.0 && std::isfinite(density)) ? x - f / density : lo;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - x) <= 1e-16 * std::max(1.0, x)) return next;
    x = next;
  }
  return x;
}

/// Shrinkage of cov[x_bar(f+) - x_bar(f-)] when M_f is truncated at a.
struct VarianceFactor {
  int dof = 0;
  double threshold = 0.0;
  double value = 1.0;

  double percent_reduction() const { return 100.0 * (1.0 - value); }
};

/// v_a = (2/p) gamma(p/2 + 1, a/2) / gamma(p/2, a/2)
///     = P(p/2 + 1, a/2) / P(p/2, a/2)   (regularized form)
inline VarianceFactor variance_factor(int dof, double threshold) {
  detail::check_dof(dof);
  if (!(threshold > 0.0)) fail(ErrorKind::Domain, "variance factor requires a > 0");
  VarianceFactor vf{dof, threshold, 1.0};
  if (std::isinf(threshold)) return vf;
  const double s = 0.5 * dof;
  const double x = 0.5 * threshold;
  if (x < s + 1.0) {
    // Ratio of the two series; the common x^s e^-x prefactor cancels.
    vf.value = x / (s + 1.0) * detail::gamma_series_sum(s + 1.0, x) /
               detail::gamma_series_sum(s, x);
  } else {
    vf.value = reg_lower_incomplete_gamma(s + 1.0, x) / reg_lower_incomplete_gamma(s, x);
  }
  return vf;
}

}  // namespace rerand
