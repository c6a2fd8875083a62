#pragma once

// Covariate balance between the high and low groups of each factorial effect.
//
// cov[X] is the fixed sample covariance of the full covariate matrix with
// divisor n - 1. Under a balanced design this makes cov[d_f] = (4/n) cov[X]
// exact, so M_f = (n/4) d_f' cov[X]^-1 d_f has mean p under randomization.

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "rerand/assignment.hpp"
#include "rerand/csv.hpp"
#include "rerand/design.hpp"

namespace rerand {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMaxConditionNumber = 1e12;

struct CovariateMatrix {
  Eigen::MatrixXd values;  // n x p
  std::vector<std::string> names;

  std::size_t units() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t covariates() const { return static_cast<std::size_t>(values.cols()); }

  static CovariateMatrix make(Eigen::MatrixXd values, std::vector<std::string> names = {}) {
    if (names.empty()) {
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        names.push_back("x" + std::to_string(c + 1));
      }
    }
    CovariateMatrix x{std::move(values), std::move(names)};
    x.validate();
    return x;
  }

  void validate() const {
    if (static_cast<Eigen::Index>(names.size()) != values.cols()) {
      fail(ErrorKind::Dimension, "covariate names do not match column count");
    }
    if (values.cols() == 0) fail(ErrorKind::Dimension, "no covariates");
    if (!values.allFinite()) fail(ErrorKind::Parse, "covariates must be finite");
  }

  CovariateMatrix select(const std::vector<std::string>& wanted) const {
    CovariateMatrix out;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(wanted.size()));
    for (std::size_t c = 0; c < wanted.size(); ++c) {
      std::optional<std::size_t> hit;
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] == wanted[c]) hit = k;
      }
      if (!hit) fail(ErrorKind::Parse, "unknown covariate column '" + wanted[c] + "'");
      out.values.col(static_cast<Eigen::Index>(c)) = values.col(static_cast<Eigen::Index>(*hit));
      out.names.push_back(wanted[c]);
    }
    return out;
  }
};

/// Reads every column, or only `columns` when given. Non-numeric cells are
/// errors; there is no imputation.
inline CovariateMatrix read_covariates(std::istream& in,
                                       const std::vector<std::string>& columns = {},
                                       char delimiter = 0) {
  const auto table = csv::read(in, delimiter);
  std::vector<std::size_t> idx;
  std::vector<std::string> names;
  if (columns.empty()) {
    for (std::size_t c = 0; c < table.header.size(); ++c) idx.push_back(c);
    names = table.header;
  } else {
    for (const auto& name : columns) idx.push_back(table.column(name));
    names = columns;
  }
  CovariateMatrix x;
  x.names = names;
  x.values.resize(static_cast<Eigen::Index>(table.rows.size()),
                  static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t c = 0; c < idx.size(); ++c) {
      try {
        x.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
            csv::parse_double(table.rows[i][idx[c]]);
      } catch (const Error& e) {
        fail(ErrorKind::Parse, "row " + std::to_string(i + 1) + ", column '" +
                                   names[c] + "': " + e.what());
      }
    }
  }
  x.validate();
  return x;
}

inline CovariateMatrix read_covariates_file(const std::string& path,
                                            const std::vector<std::string>& columns = {},
                                            char delimiter = 0) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return read_covariates(in, columns, delimiter);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

inline void write_covariates(std::ostream& os, const CovariateMatrix& x) {
  for (std::size_t c = 0; c < x.names.size(); ++c) os << (c ? "," : "") << x.names[c];
  os << '\n';
  for (Eigen::Index i = 0; i < x.values.rows(); ++i) {
    for (Eigen::Index c = 0; c < x.values.cols(); ++c) {
      os << (c ? "," : "") << fmt::format("{}", x.values(i, c));
    }
    os << '\n';
  }
}

struct CovarianceModel {
  std::vector<std::string> names;
  Eigen::VectorXd means;
  Eigen::MatrixXd covariance;  // divisor n - 1
  Eigen::MatrixXd lower;       // covariance = lower * lower'
  double condition_number = 1.0;  // of the correlation matrix

  std::size_t covariates() const { return static_cast<std::size_t>(means.size()); }
};

namespace detail {

inline double correlation_condition(const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  return lo <= 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;
}

}  // namespace detail

/// Centered sample covariance (divisor n - 1) and its Cholesky factor.
/// Throws SingularCovariance for constant or collinear columns, naming the
/// first column that makes the leading block ill-conditioned.
inline CovarianceModel fit_covariance(const CovariateMatrix& x) {
  x.validate();
  const auto n = x.values.rows();
  const auto p = x.values.cols();
  if (n < p + 1) {
    fail(ErrorKind::Dimension, "need at least p + 1 units to estimate a " +
                                   std::to_string(p) + "-covariate covariance");
  }
  CovarianceModel cm;
  cm.names = x.names;
  cm.means = x.values.colwise().mean();
  const Eigen::MatrixXd centered = x.values.rowwise() - cm.means.transpose();
  cm.covariance = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cm.covariance = (0.5 * (cm.covariance + cm.covariance.transpose())).eval();

  for (Eigen::Index c = 0; c < p; ++c) {
    const double scale = std::max(1.0, cm.means(c) * cm.means(c));
    if (!(cm.covariance(c, c) > 1e-24 * scale)) {
      throw SingularCovariance("covariate '" + x.names[c] + "' has zero variance",
                               x.names[c]);
    }
  }
  for (Eigen::Index k = 2; k <= p; ++k) {
    if (detail::correlation_condition(cm.covariance.topLeftCorner(k, k)) > kMaxConditionNumber) {
      const auto& name = x.names[static_cast<std::size_t>(k - 1)];
      throw SingularCovariance("covariate '" + name +
                                   "' is collinear with earlier covariates; drop or combine it",
                               name);
    }
  }
  cm.condition_number = detail::correlation_condition(cm.covariance);

  Eigen::LLT<Eigen::MatrixXd> llt(cm.covariance);
  if (llt.info() != Eigen::Success) {
    throw SingularCovariance("covariance matrix is not positive definite");
  }
  cm.lower = llt.matrixL();
  return cm;
}

/// d_f = x_bar(f+) - x_bar(f-) = (2/n) X' W_.f
inline Eigen::VectorXd mean_difference(const CovariateMatrix& x, const AssignmentMatrix& w,
                                       std::size_t f) {
  if (f == 0) fail(ErrorKind::Domain, "effect index 0 is the mean column");
  if (f >= w.columns()) fail(ErrorKind::Dimension, "effect index out of range");
  if (w.units() != x.units()) {
    fail(ErrorKind::Dimension, "assignment and covariates disagree on n");
  }
  const auto n = static_cast<double>(x.units());
  const Eigen::VectorXd col = w.entries().col(static_cast<Eigen::Index>(f)).cast<double>();
  return (2.0 / n) * (x.values.transpose() * col);
}

/// M_f = (n/4) d' cov[X]^-1 d, via a triangular solve against the Cholesky factor.
inline double mahalanobis(const CovarianceModel& cm, const Eigen::VectorXd& d, std::size_t n) {
  if (static_cast<std::size_t>(d.size()) != cm.covariates()) {
    fail(ErrorKind::Dimension, "mean-difference length does not match p");
  }
  const Eigen::VectorXd z = cm.lower.triangularView<Eigen::Lower>().solve(d);
  return 0.25 * static_cast<double>(n) * z.squaredNorm();
}

struct EffectBalance {
  std::size_t effect = 0;
  std::string label;
  Eigen::VectorXd mean_difference;
  double distance = 0.0;  // M_f
};

struct BalanceProfile {
  std::vector<EffectBalance> effects;

  const EffectBalance* find(std::size_t f) const {
    for (const auto& e : effects) {
      if (e.effect == f) return &e;
    }
    return nullptr;
  }
};

inline BalanceProfile balance_profile(const CovariateMatrix& x, const CovarianceModel& cm,
                                      const AssignmentMatrix& w,
                                      const std::vector<std::size_t>& effects) {
  if (effects.empty()) fail(ErrorKind::Domain, "balance profile needs at least one effect");
  BalanceProfile profile;
  for (auto f : effects) {
    EffectBalance eb;
    eb.effect = f;
    eb.label = f < w.labels().size() ? w.labels()[f] : std::to_string(f);
    eb.mean_difference = mean_difference(x, w, f);
    eb.distance = mahalanobis(cm, eb.mean_difference, x.units());
    profile.effects.push_back(std::move(eb));
  }
  return profile;
}

inline BalanceProfile balance_profile(const CovariateMatrix& x, const AssignmentMatrix& w,
                                      const std::vector<std::size_t>& effects) {
  return balance_profile(x, fit_covariance(x), w, effects);
}

/// out(j, :) = sum of rows(i, :) over units i assigned to combination j.
inline void combination_sums(const RowMatrix& rows, std::span<const std::uint32_t> combos,
                             RowMatrix& out, std::size_t combinations) {
  out.setZero(static_cast<Eigen::Index>(combinations), rows.cols());
  for (std::size_t i = 0; i < combos.size(); ++i) {
    out.row(combos[i]) += rows.row(static_cast<Eigen::Index>(i));
  }
}

/// sum_j G(j, f) * sums(j, :), i.e. (n/2) times the high-minus-low contrast.
inline void signed_column_sum(const ModelMatrix& mm, const RowMatrix& sums, std::size_t f,
                              Eigen::Ref<Eigen::RowVectorXd> out) {
  out.setZero();
  const auto& g = mm.entries();
  for (Eigen::Index j = 0; j < sums.rows(); ++j) {
    if (g(j, static_cast<Eigen::Index>(f)) > 0) {
      out += sums.row(j);
    } else {
      out -= sums.row(j);
    }
  }
}

/// Hot-loop evaluation of M_f straight from an allocation. Covariates are
/// whitened once (Z = X_c L^-T, a triangular solve), after which
/// M_f = |sum_j G(j, f) S_j|^2 / n with S_j the per-combination sums of Z.
class BalanceEvaluator {
 public:
  struct Workspace {
    RowMatrix sums;
    Eigen::RowVectorXd contrast;
  };

  BalanceEvaluator(const CovarianceModel& cm, const CovariateMatrix& x, const ModelMatrix& mm)
      : mm_(&mm), units_(x.units()) {
    if (cm.covariates() != x.covariates()) {
      fail(ErrorKind::Dimension, "covariance model and covariates disagree on p");
    }
    if (x.units() % (std::size_t{1} << mm.factors()) != 0) {
      fail(ErrorKind::Dimension, "n is not a multiple of 2^K");
    }
    const Eigen::MatrixXd centered = x.values.rowwise() - cm.means.transpose();
    // Solve L Z' = X_c' for Z'.
    const Eigen::MatrixXd zt =
        cm.lower.triangularView<Eigen::Lower>().solve(centered.transpose());
    whitened_ = zt.transpose();
  }

  Workspace workspace() const {
    return {RowMatrix::Zero(static_cast<Eigen::Index>(combinations()), whitened_.cols()),
            Eigen::RowVectorXd::Zero(whitened_.cols())};
  }

  std::size_t units() const { return units_; }
  std::size_t combinations() const { return std::size_t{1} << mm_->factors(); }
  const ModelMatrix& model() const { return *mm_; }

  void accumulate(std::span<const std::uint32_t> combos, Workspace& ws) const {
    if (combos.size() != units_) fail(ErrorKind::Dimension, "allocation length does not match n");
    combination_sums(whitened_, combos, ws.sums, combinations());
  }

  /// M_f for the allocation last passed to accumulate().
  double distance(std::size_t f, Workspace& ws) const {
    signed_column_sum(*mm_, ws.sums, f, ws.contrast);
    return ws.contrast.squaredNorm() / static_cast<double>(units_);
  }

 private:
  const ModelMatrix* mm_;
  std::size_t units_;
  RowMatrix whitened_;
};

/// One row per (effect, covariate) mean difference and one per effect distance.
inline void write_balance_report(std::ostream& os, const BalanceProfile& profile,
                                 const std::vector<std::string>& covariate_names) {
  os << "effect,covariate,statistic,value\n";
  for (const auto& e : profile.effects) {
    for (Eigen::Index c = 0; c < e.mean_difference.size(); ++c) {
      os << e.label << ',' << covariate_names.at(static_cast<std::size_t>(c))
         << ",mean_difference," << fmt::format("{}", e.mean_difference(c)) << '\n';
    }
    os << e.label << ",,mahalanobis," << fmt::format("{}", e.distance) << '\n';
  }
}

}  // namespace rerand
