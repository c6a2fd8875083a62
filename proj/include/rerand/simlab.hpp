#pragma once

// Monte Carlo lab: potential outcomes, variance and independence studies,
// empirical threshold calibration, and a synthetic school-district dataset.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rerand/engine.hpp"

namespace rerand {

/// Constant-effect linear outcome model
///   Y_i(j) = theta_0 + sum_f (theta_f / 2) G(j, f) + (x_i - x_bar) beta + eps_i
/// with eps_i iid normal. `effects` holds theta_0 followed by the full
/// high-minus-low effect theta_f of every column f >= 1.
struct OutcomeModel {
  Eigen::VectorXd effects;
  Eigen::VectorXd beta;
  double noise_sd = 0.0;
  std::optional<double> target_r2;  // when set, noise_sd is solved for
};

struct PotentialOutcomes {
  Eigen::MatrixXd table;         // n x 2^K, Y_i(j)
  Eigen::MatrixXd unit_effects;  // n x 2^K, (theta_i0, theta_i1 / 2, ...)
  Eigen::VectorXd baseline;      // (x_i - x_bar) beta + eps_i
  double noise_sd = 0.0;
  double covariate_r2 = 0.0;     // R^2 of baseline regressed on X

  Eigen::VectorXd observed(const Allocation& alloc) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(alloc.units()));
    for (std::size_t i = 0; i < alloc.units(); ++i) {
      y(static_cast<Eigen::Index>(i)) =
          table(static_cast<Eigen::Index>(i), alloc.combo_of_unit[i]);
    }
    return y;
  }
};

/// Squared multiple correlation of v on the columns of X (with intercept).
inline double r_squared(const Eigen::VectorXd& v, const Eigen::MatrixXd& x) {
  const Eigen::VectorXd vc = v.array() - v.mean();
  const double total = vc.squaredNorm();
  if (total <= 0.0) return 0.0;
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::VectorXd coef = xc.colPivHouseholderQr().solve(vc);
  return 1.0 - (vc - xc * coef).squaredNorm() / total;
}

inline PotentialOutcomes generate_potential_outcomes(const OutcomeModel& model,
                                                     const CovariateMatrix& x,
                                                     const ModelMatrix& mm, Engine& rng) {
  const auto n = static_cast<Eigen::Index>(x.units());
  const auto cols = static_cast<Eigen::Index>(mm.size());
  if (model.effects.size() != cols) {
    fail(ErrorKind::Dimension, "outcome model needs " + std::to_string(cols) +
                                   " effect values (mean plus every factorial effect)");
  }
  Eigen::VectorXd beta = model.beta.size() ? model.beta
                                           : Eigen::VectorXd::Zero(x.values.cols());
  if (beta.size() != x.values.cols()) {
    fail(ErrorKind::Dimension, "beta length does not match covariate count");
  }
  if (!(model.noise_sd >= 0.0)) fail(ErrorKind::Domain, "noise sd must be >= 0");

  const Eigen::MatrixXd centered = x.values.rowwise() - x.values.colwise().mean();
  const Eigen::VectorXd signal = centered * beta;
  double sigma = model.noise_sd;
  if (model.target_r2) {
    const double r2 = *model.target_r2;
    if (!(r2 >= 0.0 && r2 < 1.0)) fail(ErrorKind::Domain, "target R^2 must lie in [0, 1)");
    // var(x beta) / (var(x beta) + sigma^2) = R^2, using the realized var(x beta).
    const double signal_var = signal.squaredNorm() / static_cast<double>(n - 1);
    if (r2 == 0.0) {
      if (signal_var > 0.0) fail(ErrorKind::Domain, "R^2 = 0 requires beta = 0");
    } else {
      sigma = std::sqrt(signal_var * (1.0 - r2) / r2);
    }
  }

  PotentialOutcomes po;
  po.noise_sd = sigma;
  std::normal_distribution<double> normal(0.0, 1.0);
  po.baseline = signal;
  if (sigma > 0.0) {
    for (Eigen::Index i = 0; i < n; ++i) po.baseline(i) += sigma * normal(rng);
  }
  po.covariate_r2 = r_squared(po.baseline, x.values);

  po.unit_effects.resize(n, cols);
  po.unit_effects.col(0) = po.baseline.array() + model.effects(0);
  for (Eigen::Index f = 1; f < cols; ++f) {
    po.unit_effects.col(f).setConstant(0.5 * model.effects(f));
  }
  // Y_i = theta_i G'
  po.table = po.unit_effects * mm.entries().cast<double>().transpose();
  return po;
}

/// theta_bar_0 = Y_bar G_.0 / 2^K and theta_bar_f = Y_bar G_.f / 2^(K-1).
inline Eigen::VectorXd true_estimands(const PotentialOutcomes& po, const ModelMatrix& mm) {
  const Eigen::RowVectorXd y_bar = po.table.colwise().mean();
  const Eigen::MatrixXd g = mm.entries().cast<double>();
  const double combos = static_cast<double>(g.rows());
  Eigen::VectorXd out = (y_bar * g).transpose() / (combos / 2.0);
  out(0) = y_bar.dot(g.col(0)) / combos;
  return out;
}

/// Per-draw statistics for studies. Payload layout:
///   [accepted] [M_f for distance_effects] [for each contrast effect f, for each
///   column c of `rows`: (2/n) sum_i rows(i, c) W(i, f)]
class DrawStatistics {
 public:
  DrawStatistics(const Experiment& ex, const RowMatrix& rows,
                 std::vector<std::size_t> contrast_effects,
                 std::vector<std::size_t> distance_effects, bool accepted_only)
      : ex_(&ex),
        rows_(&rows),
        contrast_effects_(std::move(contrast_effects)),
        distance_effects_(std::move(distance_effects)),
        accepted_only_(accepted_only),
        check_(ex.rule),
        ws_(ex.evaluator.workspace()),
        contrast_(Eigen::RowVectorXd::Zero(rows.cols())) {}

  std::size_t width() const {
    return 1 + distance_effects_.size() +
           contrast_effects_.size() * static_cast<std::size_t>(rows_->cols());
  }

  std::optional<std::vector<double>> operator()(std::span<const std::uint32_t> combos) {
    ex_->evaluator.accumulate(combos, ws_);
    const bool accepted = ex_->rule.monitored.empty() || check_(ex_->evaluator, ws_);
    if (accepted_only_ && !accepted) return std::nullopt;
    std::vector<double> out;
    out.reserve(width());
    out.push_back(accepted ? 1.0 : 0.0);
    for (auto f : distance_effects_) out.push_back(ex_->evaluator.distance(f, ws_));
    if (!contrast_effects_.empty()) {
      combination_sums(*rows_, combos, sums_, ex_->evaluator.combinations());
      const double scale = 2.0 / static_cast<double>(combos.size());
      for (auto f : contrast_effects_) {
        signed_column_sum(ex_->model, sums_, f, contrast_);
        for (Eigen::Index c = 0; c < contrast_.size(); ++c) out.push_back(scale * contrast_(c));
      }
    }
    return out;
  }

 private:
  const Experiment* ex_;
  const RowMatrix* rows_;
  std::vector<std::size_t> contrast_effects_;
  std::vector<std::size_t> distance_effects_;
  bool accepted_only_;
  AcceptanceChecker check_;
  BalanceEvaluator::Workspace ws_;
  RowMatrix sums_;
  Eigen::RowVectorXd contrast_;
};

struct SampleSet {
  RowMatrix values;  // one row per draw
  std::uint64_t draws_attempted = 0;
};

inline SampleSet collect_draws(const Experiment& ex, const DrawStatistics& stats,
                               std::size_t count, StreamTag tag,
                               const RerandomizeOptions& opt) {
  SampleSet set;
  set.values.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(stats.width()));
  std::size_t filled = 0;
  const ScanOptions scan{opt.seed, tag, opt.workers, opt.max_draws};
  set.draws_attempted = scan_draws(ex.spec, scan, stats, [&](std::uint64_t, std::vector<double> v) {
    set.values.row(static_cast<Eigen::Index>(filled)) =
        Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return ++filled == count;
  });
  return set;
}

namespace stats {

inline double mean(const Eigen::Ref<const Eigen::VectorXd>& v) { return v.mean(); }

inline double variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

inline double covariance(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b) {
  return ((a.array() - a.mean()) * (b.array() - b.mean())).sum() /
         static_cast<double>(a.size() - 1);
}

inline double correlation(const Eigen::Ref<const Eigen::VectorXd>& a,
                          const Eigen::Ref<const Eigen::VectorXd>& b) {
  const double va = variance(a), vb = variance(b);
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return covariance(a, b) / std::sqrt(va * vb);
}

/// Standard error of the sample covariance, from the spread of the centered
/// cross-products.
inline double covariance_se(const Eigen::Ref<const Eigen::VectorXd>& a,
                            const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::ArrayXd prod = (a.array() - a.mean()) * (b.array() - b.mean());
  const double m = prod.mean();
  const double var = (prod - m).square().sum() / static_cast<double>(prod.size() - 1);
  return std::sqrt(var / static_cast<double>(prod.size()));
}

/// Linear interpolation between order statistics (R type 7).
inline double quantile(std::vector<double> values, double prob) {
  if (values.empty()) fail(ErrorKind::Domain, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

}  // namespace stats

struct CellStat {
  std::string covariate;
  std::size_t effect = 0;
  std::string label;
  int order = 0;
  bool monitored = false;
  double var_pure = 0.0;
  double var_rerand = 0.0;
  double percent_reduction = 0.0;
  double theoretical_reduction = 0.0;  // 100 (1 - v_a)
  double mean_rerand = 0.0;
  double se_mean_rerand = 0.0;
};

struct EstimatorStat {
  std::size_t effect = 0;
  std::string label;
  int order = 0;
  bool monitored = false;
  double truth = 0.0;  // theta_bar_f
  double mean_pure = 0.0;
  double mean_rerand = 0.0;
  double se_mean_rerand = 0.0;
  double var_pure = 0.0;
  double var_rerand = 0.0;
  double variance_ratio = 0.0;
  double theoretical_ratio = 1.0;  // 1 - (1 - v_a) R^2
  double v_a = 1.0;
};

struct StudyReport {
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  std::uint64_t draws_pure = 0;
  std::uint64_t draws_rerand = 0;
  double implied_acceptance = 1.0;
  double observed_acceptance = 0.0;
  std::optional<double> target_r2;
  std::optional<double> covariate_r2;
  std::vector<CellStat> cells;
  std::vector<EstimatorStat> estimators;
  Eigen::MatrixXd estimator_correlation;  // under rerandomization, |F| x |F|
  double max_cross_estimator_corr = 0.0;
  double max_cross_difference_corr = 0.0;  // over all cross-effect d pairs
  double max_cross_difference_z = 0.0;     // |cov| / SE, same pairs
  std::size_t cross_difference_pairs = 0;
};

struct StudyOptions {
  std::size_t reps = 1000;
  RerandomizeOptions run;
};

inline constexpr std::size_t kMinStudyReps = 1000;

/// Pure randomization versus rerandomization: per-(covariate, effect) percent
/// reduction in var(d_f), and with an outcome model the variance ratio of each
/// estimator against 1 - (1 - v_a) R^2. `report` lists the covariates whose
/// mean differences are tabulated; it may include covariates the rule ignores.
inline StudyReport variance_study(const Experiment& ex, const CovariateMatrix& report,
                                  const std::optional<OutcomeModel>& model,
                                  const StudyOptions& opt) {
  if (opt.reps < kMinStudyReps) {
    fail(ErrorKind::Usage, "variance study needs at least " + std::to_string(kMinStudyReps) +
                               " replications");
  }
  if (report.units() != ex.spec.units()) {
    fail(ErrorKind::Dimension, "report covariates disagree with the design on n");
  }
  const auto effects = ex.model.effects();
  const auto q = static_cast<Eigen::Index>(report.covariates());
  const bool with_outcomes = model.has_value();

  std::optional<PotentialOutcomes> po;
  Eigen::VectorXd truth;
  if (with_outcomes) {
    auto rng = make_stream(opt.run.seed, StreamTag::Outcomes);
    po = generate_potential_outcomes(*model, ex.covariates, ex.model, rng);
    truth = true_estimands(*po, ex.model);
  }

  // Constant effects: y_obs = theta_0 + baseline + sum_f (theta_f / 2) W_f, so
  // theta_hat_f = theta_f + (2/n) baseline' W_f. Contrasting the baseline
  // column gives the estimator up to the known constant.
  RowMatrix rows(static_cast<Eigen::Index>(ex.spec.units()), q + (with_outcomes ? 1 : 0));
  rows.leftCols(q) = report.values;
  if (with_outcomes) rows.col(q) = po->baseline;
  const auto width = rows.cols();

  DrawStatistics pure_stats(ex, rows, effects, {}, false);
  DrawStatistics rerand_stats(ex, rows, effects, {}, true);
  const auto pure = collect_draws(ex, pure_stats, opt.reps, StreamTag::PureDraws, opt.run);
  const auto rr = collect_draws(ex, rerand_stats, opt.reps, StreamTag::Rerandomize, opt.run);

  StudyReport out;
  out.seed = opt.run.seed;
  out.reps = opt.reps;
  out.draws_pure = pure.draws_attempted;
  out.draws_rerand = rr.draws_attempted;
  out.implied_acceptance = ex.rule.monitored.empty() ? 1.0 : implied_acceptance_probability(ex.rule);
  out.observed_acceptance = pure.values.col(0).mean();
  if (with_outcomes) {
    out.target_r2 = model->target_r2;
    out.covariate_r2 = po->covariate_r2;
  }

  auto column = [&](std::size_t e, Eigen::Index c) { return 1 + static_cast<Eigen::Index>(e) * width + c; };
  const double sqrt_reps = std::sqrt(static_cast<double>(opt.reps));

  for (std::size_t e = 0; e < effects.size(); ++e) {
    const auto f = effects[e];
    const auto vf = variance_factor_of(ex.rule, f);
    const bool monitored = ex.rule.threshold_of(f).has_value();
    for (Eigen::Index c = 0; c < q; ++c) {
      const Eigen::VectorXd a = pure.values.col(column(e, c));
      const Eigen::VectorXd b = rr.values.col(column(e, c));
      CellStat cell;
      cell.covariate = report.names[static_cast<std::size_t>(c)];
      cell.effect = f;
      cell.label = ex.model.label(f);
      cell.order = ex.model.effect_order(f);
      cell.monitored = monitored;
      cell.var_pure = stats::variance(a);
      cell.var_rerand = stats::variance(b);
      cell.percent_reduction =
          cell.var_pure > 0.0 ? 100.0 * (1.0 - cell.var_rerand / cell.var_pure) : 0.0;
      cell.theoretical_reduction = vf.percent_reduction();
      cell.mean_rerand = b.mean();
      cell.se_mean_rerand = std::sqrt(cell.var_rerand) / sqrt_reps;
      out.cells.push_back(cell);
    }
    if (with_outcomes) {
      const double shift = model->effects(static_cast<Eigen::Index>(f));
      const Eigen::VectorXd a = pure.values.col(column(e, q)).array() + shift;
      const Eigen::VectorXd b = rr.values.col(column(e, q)).array() + shift;
      EstimatorStat est;
      est.effect = f;
      est.label = ex.model.label(f);
      est.order = ex.model.effect_order(f);
      est.monitored = monitored;
      est.truth = truth(static_cast<Eigen::Index>(f));
      est.mean_pure = a.mean();
      est.mean_rerand = b.mean();
      est.var_pure = stats::variance(a);
      est.var_rerand = stats::variance(b);
      est.se_mean_rerand = std::sqrt(est.var_rerand) / sqrt_reps;
      est.variance_ratio = est.var_pure > 0.0 ? est.var_rerand / est.var_pure : 1.0;
      est.v_a = vf.value;
      est.theoretical_ratio = 1.0 - (1.0 - vf.value) * po->covariate_r2;
      out.estimators.push_back(est);
    }
  }

  const auto m = static_cast<Eigen::Index>(effects.size());
  if (with_outcomes) {
    out.estimator_correlation = Eigen::MatrixXd::Identity(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = a + 1; b < m; ++b) {
        const double r = stats::correlation(rr.values.col(column(a, q)), rr.values.col(column(b, q)));
        out.estimator_correlation(a, b) = out.estimator_correlation(b, a) = r;
        out.max_cross_estimator_corr = std::max(out.max_cross_estimator_corr, std::fabs(r));
      }
    }
  }
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      for (Eigen::Index c1 = 0; c1 < q; ++c1) {
        for (Eigen::Index c2 = 0; c2 < q; ++c2) {
          const auto x = rr.values.col(column(a, c1));
          const auto y = rr.values.col(column(b, c2));
          const double se = stats::covariance_se(x, y);
          const double cov = stats::covariance(x, y);
          out.max_cross_difference_corr =
              std::max(out.max_cross_difference_corr, std::fabs(stats::correlation(x, y)));
          if (se > 0.0) out.max_cross_difference_z = std::max(out.max_cross_difference_z, std::fabs(cov) / se);
          ++out.cross_difference_pairs;
        }
      }
    }
  }
  return out;
}

struct IndependenceReport {
  std::uint64_t seed = 0;
  std::size_t reps = 0;
  bool below_normal_floor = false;  // n < 16 p: normal approximation doubtful
  std::vector<std::size_t> monitored;
  std::vector<double> marginal_rates;  // per monitored effect
  std::vector<double> tier_rates;
  double joint_rate = 0.0;
  double product_of_tier_rates = 1.0;
  double nominal_joint = 1.0;  // product of tier targets
  Eigen::MatrixXd indicator_correlation;
  double max_indicator_corr = 0.0;
  double max_cross_difference_corr = 0.0;
};

/// Under pure randomization: are the acceptance indicators 1[M_f <= a_f] and
/// the mean differences of distinct effects uncorrelated, and does the joint
/// acceptance rate factor into the per-tier rates?
inline IndependenceReport independence_study(const Experiment& ex, std::size_t reps,
                                             const RerandomizeOptions& opt) {
  if (!ex.rule.resolved()) fail(ErrorKind::Domain, "independence study needs a rule");
  if (reps < 2) fail(ErrorKind::Usage, "independence study needs replications");
  const auto monitored = ex.rule.monitored_effects();
  const auto effects = ex.model.effects();
  const auto p = static_cast<Eigen::Index>(ex.covariates.covariates());
  RowMatrix rows = ex.covariates.values;
  DrawStatistics draw_stats(ex, rows, effects, monitored, false);
  const auto set = collect_draws(ex, draw_stats, reps, StreamTag::PureDraws, opt);

  IndependenceReport out;
  out.seed = opt.seed;
  out.reps = reps;
  out.below_normal_floor = ex.spec.units() < 16 * ex.covariates.covariates();
  out.monitored = monitored;
  const auto k = static_cast<Eigen::Index>(monitored.size());
  Eigen::MatrixXd ind(static_cast<Eigen::Index>(reps), k);
  for (Eigen::Index e = 0; e < k; ++e) {
    const double a = ex.rule.monitored[static_cast<std::size_t>(e)].threshold;
    ind.col(e) = (set.values.col(1 + e).array() <= a).cast<double>();
    out.marginal_rates.push_back(ind.col(e).mean());
  }
  out.joint_rate = set.values.col(0).mean();
  for (std::size_t t = 0; t < ex.rule.tiers.size(); ++t) {
    Eigen::ArrayXd pass = Eigen::ArrayXd::Ones(static_cast<Eigen::Index>(reps));
    for (Eigen::Index e = 0; e < k; ++e) {
      if (ex.rule.monitored[static_cast<std::size_t>(e)].tier == t) pass *= ind.col(e).array();
    }
    out.tier_rates.push_back(pass.mean());
    out.product_of_tier_rates *= pass.mean();
  }
  out.nominal_joint = implied_acceptance_probability(ex.rule);
  out.indicator_correlation = Eigen::MatrixXd::Identity(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      const double r = stats::correlation(ind.col(a), ind.col(b));
      out.indicator_correlation(a, b) = out.indicator_correlation(b, a) = r;
      out.max_indicator_corr = std::max(out.max_indicator_corr, std::fabs(r));
    }
  }
  const auto base = 1 + k;
  const auto m = static_cast<Eigen::Index>(effects.size());
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      for (Eigen::Index c1 = 0; c1 < p; ++c1) {
        for (Eigen::Index c2 = 0; c2 < p; ++c2) {
          const double r = stats::correlation(set.values.col(base + a * p + c1),
                                              set.values.col(base + b * p + c2));
          out.max_cross_difference_corr = std::max(out.max_cross_difference_corr, std::fabs(r));
        }
      }
    }
  }
  return out;
}

struct CalibratedThreshold {
  std::size_t effect = 0;
  double prob = 0.0;
  double threshold = 0.0;
  double chi2_threshold = 0.0;  // chi-squared reference, for comparison
};

inline constexpr std::size_t kMinCalibrationDraws = 1000;

/// a_f = empirical prob_f-quantile of M_f over pure randomizations.
inline std::vector<CalibratedThreshold> calibrate_empirical_thresholds(
    const Experiment& ex, const std::vector<std::size_t>& effects,
    const std::vector<double>& probs, std::size_t draws, const RerandomizeOptions& opt) {
  if (draws < kMinCalibrationDraws) {
    fail(ErrorKind::Usage, "calibration needs at least " + std::to_string(kMinCalibrationDraws) +
                               " draws");
  }
  if (effects.size() != probs.size()) {
    fail(ErrorKind::Dimension, "one target probability per effect is required");
  }
  for (double q : probs) {
    if (!(q > 0.0 && q <= 1.0)) fail(ErrorKind::Domain, "calibration probability must be in (0, 1]");
  }
  // Calibration only looks at pure randomizations, so the rule is not applied.
  RowMatrix no_rows(static_cast<Eigen::Index>(ex.spec.units()), 0);
  DrawStatistics draw_stats(ex, no_rows, {}, effects, false);
  const auto set = collect_draws(ex, draw_stats, draws, StreamTag::Calibration, opt);

  std::vector<CalibratedThreshold> out;
  const int p = static_cast<int>(ex.covariates.covariates());
  for (std::size_t e = 0; e < effects.size(); ++e) {
    const Eigen::VectorXd col = set.values.col(1 + static_cast<Eigen::Index>(e));
    std::vector<double> sample(col.data(), col.data() + col.size());
    CalibratedThreshold t;
    t.effect = effects[e];
    t.prob = probs[e];
    t.threshold = stats::quantile(std::move(sample), probs[e]);
    t.chi2_threshold = probs[e] < 1.0 ? chi2_quantile(p, probs[e])
                                      : std::numeric_limits<double>::infinity();
    out.push_back(t);
  }
  return out;
}

/// Resolves an empirical-mode rule by calibrating every monitored effect.
inline AcceptanceRule resolve_empirical_rule(AcceptanceRule rule, const DesignSpec& spec,
                                             const CovariateMatrix& x, std::size_t draws,
                                             const RerandomizeOptions& opt) {
  rule.covariates = static_cast<int>(x.covariates());
  // Per-effect targets first, with placeholder thresholds.
  AcceptanceRule probe = rule;
  probe.mode = ThresholdMode::Empirical;
  resolve_thresholds(probe, [](std::size_t, double) { return 1.0; });

  const Experiment ex(spec, x, AcceptanceRule{});
  std::vector<std::size_t> effects;
  std::vector<double> probs;
  for (const auto& m : probe.monitored) {
    if (m.target_prob) {
      effects.push_back(m.effect);
      probs.push_back(*m.target_prob);
    }
  }
  const auto calibrated = effects.empty()
                              ? std::vector<CalibratedThreshold>{}
                              : calibrate_empirical_thresholds(ex, effects, probs, draws, opt);
  resolve_thresholds(rule, [&](std::size_t f, double) {
    for (const auto& c : calibrated) {
      if (c.effect == f) return c.threshold;
    }
    fail(ErrorKind::Domain, "missing calibration for effect " + std::to_string(f));
  });
  return rule;
}

namespace nyde {

inline constexpr int kFactors = 5;
inline constexpr int kReplicates = 43;
inline constexpr std::size_t kSchools = 1376;

/// The nine covariates the rule balances on.
inline std::vector<std::string> balance_columns() {
  return {"total_students", "prop_white",  "prop_black",      "prop_asian",   "prop_native_american",
          "prop_latino",    "prop_female", "enrollment_rate", "poverty_rate"};
}

/// Two further covariates that the rule never sees.
inline std::vector<std::string> extra_columns() {
  return {"number_of_teachers", "students_temp_housing"};
}

}  // namespace nyde

/// Synthetic stand-in for a 1,376-school district: a Gaussian copula over
/// lognormal enrollment counts and logit-normal rates, Dirichlet race shares,
/// a teacher count with squared correlation 0.95 to total students, and a
/// temporary-housing count only mildly related (R^2 about 0.1) to the rest.
inline CovariateMatrix synthetic_nyde(std::uint64_t seed) {
  auto rng = make_stream(seed, StreamTag::Synthetic);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(nyde::kSchools);

  // Latent correlation of (log students, female, enrollment, poverty).
  Eigen::Matrix4d corr;
  corr << 1.0, 0.0, 0.25, -0.2,
          0.0, 1.0, 0.1, 0.0,
          0.25, 0.1, 1.0, -0.45,
          -0.2, 0.0, -0.45, 1.0;
  const Eigen::Matrix4d chol = corr.llt().matrixL();

  auto logistic = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const std::array<double, 6> alpha{2.0, 3.0, 1.2, 0.4, 3.5, 0.6};  // last is "other"

  Eigen::MatrixXd out(n, 11);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector4d z;
    for (int k = 0; k < 4; ++k) z(k) = normal(rng);
    const Eigen::Vector4d u = chol * z;
    out(i, 0) = std::exp(6.3 + 0.55 * u(0));

    std::array<double, 6> g{};
    double total = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      std::gamma_distribution<double> gamma(alpha[k], 1.0);
      g[k] = gamma(rng);
      total += g[k];
    }
    for (std::size_t k = 0; k < 5; ++k) out(i, 1 + static_cast<Eigen::Index>(k)) = g[k] / total;

    out(i, 6) = logistic(0.0 + 0.2 * u(1));
    out(i, 7) = logistic(2.0 + 0.6 * u(2));
    out(i, 8) = logistic(0.8 + 0.8 * u(3));
  }

  // Teachers: about one per 15 students, noise sized from the realized
  // spread so the squared correlation is 0.95.
  const Eigen::VectorXd scaled = out.col(0) / 15.0;
  const double sd_scaled = std::sqrt((scaled.array() - scaled.mean()).square().sum() / (n - 1.0));
  const double teacher_noise = sd_scaled * std::sqrt(0.05 / 0.95);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, 9) = std::max(1.0, scaled(i) + teacher_noise * normal(rng));
  }

  // Temporary housing: 10% of its variance tied to poverty.
  const Eigen::VectorXd pov = out.col(8);
  const double pov_sd = std::sqrt((pov.array() - pov.mean()).square().sum() / (n - 1.0));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mix = std::sqrt(0.1) * (pov(i) - pov.mean()) / pov_sd + std::sqrt(0.9) * normal(rng);
    out(i, 10) = std::max(0.0, 25.0 + 8.0 * mix);
  }

  auto names = nyde::balance_columns();
  for (auto& extra : nyde::extra_columns()) names.push_back(extra);
  return CovariateMatrix::make(std::move(out), std::move(names));
}

}  // namespace rerand
