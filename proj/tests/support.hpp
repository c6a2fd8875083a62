#pragma once

// Independent oracles shared by the test suites. Nothing here calls into the
// code under test except for plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "rerand/balance.hpp"

namespace oracle {

inline rerand::CovariateMatrix normal_covariates(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) v(i, c) = normal(rng);
  }
  return rerand::CovariateMatrix::make(std::move(v));
}

/// Composite Gauss-Legendre (10 points per panel) on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, int panels) {
  static const double x[5] = {0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
                              0.8650633666889845, 0.9739065285171717};
  static const double w[5] = {0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
                              0.1494513491505806, 0.0666713443086881};
  const double h = (b - a) / panels;
  double total = 0.0;
  for (int k = 0; k < panels; ++k) {
    const double mid = a + (k + 0.5) * h;
    const double half = 0.5 * h;
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += w[i] * (f(mid - half * x[i]) + f(mid + half * x[i]));
    total += s * half;
  }
  return total;
}

/// Chi-squared CDF by quadrature of the density. For odd p the substitution
/// t = u^2 removes the half-integer power at the origin.
inline double chi2_cdf_quadrature(int p, double x) {
  const double s = 0.5 * p;
  const double log_norm = -s * std::log(2.0) - std::lgamma(s);
  if (p % 2 == 1) {
    // density(u^2) * 2u = 2 exp(log_norm) u^(p-1) exp(-u^2/2)
    const double c = 2.0 * std::exp(log_norm);
    const double root = std::sqrt(x);
    auto g = [&](double u) { return c * std::pow(u, p - 1) * std::exp(-0.5 * u * u); };
    const double split = std::min(root, 1.0);
    double total = integrate(g, 0.0, split, 400);
    if (root > split) total += integrate(g, split, root, 2000);
    return total;
  }
  auto density = [&](double t) {
    if (t <= 0.0) return p == 2 ? 0.5 : 0.0;
    return std::exp(log_norm + (s - 1.0) * std::log(t) - 0.5 * t);
  };
  // Refine near zero, where low-dof densities curve sharply.
  const double split = std::min(x, 1.0);
  double total = integrate(density, 0.0, split, 400);
  if (x > split) total += integrate(density, split, x, 2000);
  return total;
}

/// Direct group-mean difference for column `col` given a +/-1 indicator.
inline Eigen::VectorXd group_mean_difference(const Eigen::MatrixXd& x, const std::vector<int>& sign) {
  Eigen::VectorXd hi = Eigen::VectorXd::Zero(x.cols()), lo = Eigen::VectorXd::Zero(x.cols());
  int n_hi = 0, n_lo = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (sign[static_cast<std::size_t>(i)] > 0) {
      hi += x.row(i).transpose();
      ++n_hi;
    } else {
      lo += x.row(i).transpose();
      ++n_lo;
    }
  }
  return hi / n_hi - lo / n_lo;
}

/// M = (n/4) d' S^-1 d with S from a plain two-pass covariance and an LU solve.
inline double mahalanobis_lu(const Eigen::MatrixXd& x, const Eigen::VectorXd& d) {
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd s = c.transpose() * c / static_cast<double>(x.rows() - 1);
  return static_cast<double>(x.rows()) / 4.0 * d.dot(s.partialPivLu().solve(d));
}

/// One-sample Kolmogorov-Smirnov distance against `cdf`.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// Sign of combination j (0-based, factor 0 slowest) on the effect whose
/// factors are the bits of `mask` (bit k = factor k), by direct product.
inline int effect_sign(int K, std::size_t j, unsigned mask) {
  int s = 1;
  for (int k = 0; k < K; ++k) {
    if (mask & (1u << k)) {
      const bool high = (j >> (K - 1 - k)) & 1u;
      s *= high ? 1 : -1;
    }
  }
  return s;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace oracle
