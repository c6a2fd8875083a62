#pragma once

// Rerandomization loop, factorial-effect estimation, and randomization tests
// restricted to accepted allocations.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "rerand/assignment.hpp"
#include "rerand/balance.hpp"
#include "rerand/criteria.hpp"
#include "rerand/design.hpp"
#include "rerand/rng.hpp"

namespace rerand {

inline constexpr std::size_t kBatchSize = 64;
inline constexpr std::uint64_t kDefaultMaxDraws = 1'000'000;

struct ScanOptions {
  std::uint64_t seed = 0;
  StreamTag tag = StreamTag::Rerandomize;
  std::size_t workers = 1;
  std::uint64_t max_draws = kDefaultMaxDraws;
};

/// Draws balanced allocations in global index order and hands every one the
/// evaluator accepts (returns a payload for) to `consume`, strictly in index
/// order, until `consume` returns true. Returns the number of draws up to and
/// including the last consumed one.
///
/// Draw g belongs to batch g / 64, and each batch has its own stream, so the
/// sequence of draws is the same for any worker count. Workers evaluate whole
/// rounds of batches; a round is only consumed after all of it is evaluated.
template <class Evaluator, class Consume>
std::uint64_t scan_draws(const DesignSpec& spec, const ScanOptions& opt,
                         const Evaluator& prototype, Consume&& consume) {
  using Result = std::invoke_result_t<Evaluator&, std::span<const std::uint32_t>>;
  using Payload = typename Result::value_type;
  using Batch = std::vector<std::pair<std::uint64_t, Payload>>;

  spec.validate();
  if (opt.max_draws < 1) fail(ErrorKind::Domain, "max_draws must be >= 1");
  const std::size_t workers = std::max<std::size_t>(1, opt.workers);
  const std::uint64_t total_batches = (opt.max_draws + kBatchSize - 1) / kBatchSize;
  const std::uint64_t max_round = 32 * workers;

  std::uint64_t next_batch = 0;
  std::uint64_t round = workers;
  while (next_batch < total_batches) {
    const auto first = next_batch;
    const auto count = std::min<std::uint64_t>(round, total_batches - first);
    std::vector<Batch> results(count);
    std::atomic<std::uint64_t> cursor{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto work = [&] {
      try {
        Evaluator eval = prototype;
        std::vector<std::uint32_t> combos;
        for (auto k = cursor.fetch_add(1); k < count; k = cursor.fetch_add(1)) {
          auto rng = make_stream(opt.seed, opt.tag, first + k);
          for (std::size_t d = 0; d < kBatchSize; ++d) {
            const auto g = (first + k) * kBatchSize + d;
            if (g >= opt.max_draws) break;
            draw_allocation(spec, rng, combos);
            if (auto payload = eval(std::span<const std::uint32_t>(combos))) {
              results[k].emplace_back(g, std::move(*payload));
            }
          }
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        cursor.store(count);
      }
    };

    if (workers == 1 || count == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < std::min<std::uint64_t>(workers, count); ++w) {
        pool.emplace_back(work);
      }
    }
    if (error) std::rethrow_exception(error);

    for (auto& batch : results) {
      for (auto& [g, payload] : batch) {
        if (consume(g, std::move(payload))) return g + 1;
      }
    }
    next_batch += count;
    round = std::min(round * 2, max_round);
  }
  throw MaxDrawsExceeded("no acceptable allocation within max_draws = " +
                             std::to_string(opt.max_draws) +
                             "; thresholds may be too strict for these covariates",
                         opt.max_draws);
}

/// Shared, immutable inputs of a rerandomization experiment. The rule is
/// resolved on construction (chi-squared mode) unless it already is.
struct Experiment {
  DesignSpec spec;
  ModelMatrix model;
  CovariateMatrix covariates;
  CovarianceModel covariance;
  AcceptanceRule rule;
  BalanceEvaluator evaluator;

  Experiment(DesignSpec s, CovariateMatrix x, AcceptanceRule r)
      : spec(std::move(s)),
        model(build_model_matrix(spec)),
        covariates(std::move(x)),
        covariance(fit_covariance(covariates)),
        rule(std::move(r)),
        evaluator(covariance, covariates, model) {
    if (covariates.units() != spec.units()) {
      fail(ErrorKind::Dimension, "covariate file has " + std::to_string(covariates.units()) +
                                     " rows but the design needs n = r * 2^K = " +
                                     std::to_string(spec.units()));
    }
    if (rule.covariates == 0) rule.covariates = static_cast<int>(covariates.covariates());
    if (rule.covariates != static_cast<int>(covariates.covariates())) {
      fail(ErrorKind::Dimension, "acceptance rule p does not match covariate count");
    }
    // A rule without tiers monitors nothing; calibration runs use that.
    if (!rule.tiers.empty() && !rule.resolved()) resolve_thresholds(rule);
  }

  // evaluator holds a pointer to model; keep the object pinned.
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;
};

/// Evaluator for scan_draws: yields the allocation when it passes the rule.
class AcceptedAllocations {
 public:
  explicit AcceptedAllocations(const Experiment& ex)
      : ex_(&ex), check_(ex.rule), ws_(ex.evaluator.workspace()) {}

  std::optional<std::vector<std::uint32_t>> operator()(std::span<const std::uint32_t> combos) {
    ex_->evaluator.accumulate(combos, ws_);
    if (!check_(ex_->evaluator, ws_)) return std::nullopt;
    return std::vector<std::uint32_t>(combos.begin(), combos.end());
  }

 private:
  const Experiment* ex_;
  AcceptanceChecker check_;
  BalanceEvaluator::Workspace ws_;
};

struct RerandomizeOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::uint64_t max_draws = kDefaultMaxDraws;
};

struct RerandomizationResult {
  Allocation allocation;
  AssignmentMatrix assignment;
  BalanceProfile profile;  // every effect, at acceptance
  std::uint64_t draws_attempted = 0;
  double elapsed_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// Randomize until the rule accepts. With several workers the accepted draw
/// is the one with the smallest global index, so the result matches the
/// sequential loop exactly.
inline RerandomizationResult rerandomize(const Experiment& ex, const RerandomizeOptions& opt) {
  const auto start = std::chrono::steady_clock::now();
  RerandomizationResult result;
  result.seed = opt.seed;
  const auto all_effects = ex.model.effects();
  const ScanOptions scan{opt.seed, StreamTag::Rerandomize, opt.workers, opt.max_draws};

  result.draws_attempted = scan_draws(
      ex.spec, scan, AcceptedAllocations(ex),
      [&](std::uint64_t g, std::vector<std::uint32_t> combos) {
        Allocation alloc{ex.spec, std::move(combos), {opt.seed, g}};
        auto w = expand_assignment(alloc, ex.model);
        auto profile = balance_profile(ex.covariates, ex.covariance, w, all_effects);
        // The whitened fast path and the direct solve can disagree only at
        // round-off distance from a threshold; the direct solve decides.
        if (!accept(profile, ex.rule)) return false;
        result.allocation = std::move(alloc);
        result.assignment = std::move(w);
        result.profile = std::move(profile);
        return true;
      });
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline RerandomizationResult rerandomize(const CovariateMatrix& x, const DesignSpec& spec,
                                         const AcceptanceRule& rule,
                                         const RerandomizeOptions& opt) {
  const Experiment ex(spec, x, rule);
  return rerandomize(ex, opt);
}

struct EffectEstimate {
  std::size_t effect = 0;
  std::string label;
  double estimate = 0.0;  // (2/n) y' W_.f
  double mean_high = 0.0;
  double mean_low = 0.0;
};

struct EffectEstimates {
  Eigen::VectorXd observed;
  std::vector<EffectEstimate> effects;

  const EffectEstimate* find(std::size_t f) const {
    for (const auto& e : effects) {
      if (e.effect == f) return &e;
    }
    return nullptr;
  }
};

inline EffectEstimates estimate_effects(const Eigen::VectorXd& y, const AssignmentMatrix& w,
                                        const std::vector<std::size_t>& effects) {
  if (static_cast<std::size_t>(y.size()) != w.units()) {
    fail(ErrorKind::Dimension, "outcome length " + std::to_string(y.size()) +
                                   " does not match n = " + std::to_string(w.units()));
  }
  const auto n = static_cast<double>(w.units());
  EffectEstimates out;
  out.observed = y;
  for (auto f : effects) {
    if (f == 0 || f >= w.columns()) fail(ErrorKind::Domain, "invalid effect index");
    const Eigen::VectorXd col = w.entries().col(static_cast<Eigen::Index>(f)).cast<double>();
    EffectEstimate e;
    e.effect = f;
    e.label = w.labels().at(f);
    e.estimate = (2.0 / n) * y.dot(col);
    double hi = 0.0, lo = 0.0;
    std::size_t n_hi = 0, n_lo = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (col(i) > 0) {
        hi += y(i);
        ++n_hi;
      } else {
        lo += y(i);
        ++n_lo;
      }
    }
    e.mean_high = n_hi ? hi / static_cast<double>(n_hi) : 0.0;
    e.mean_low = n_lo ? lo / static_cast<double>(n_lo) : 0.0;
    out.effects.push_back(std::move(e));
  }
  return out;
}

struct EffectTest {
  std::size_t effect = 0;
  std::string label;
  double observed = 0.0;
  double p_value = 1.0;
  std::uint64_t reference_draws = 0;
  double null_mean = 0.0;
  double null_sd = 0.0;
  double null_min = 0.0;
  double null_max = 0.0;
};

struct RandomizationTestResult {
  std::vector<EffectTest> effects;
  std::uint64_t draws_attempted = 0;

  const EffectTest* find(std::size_t f) const {
    for (const auto& e : effects) {
      if (e.effect == f) return &e;
    }
    return nullptr;
  }
};

inline constexpr std::uint64_t kMinReferenceDraws = 100;

/// Fisher sharp-null test: y_obs stays fixed while the assignment is redrawn,
/// and only draws the acceptance rule admits enter the reference set.
/// Two-sided, p = (1 + #{|theta*| >= |theta_obs|}) / (1 + n_draws).
inline RandomizationTestResult randomization_test(const Eigen::VectorXd& y,
                                                  const Allocation& observed,
                                                  const Experiment& ex,
                                                  const std::vector<std::size_t>& effects,
                                                  std::uint64_t n_draws,
                                                  const RerandomizeOptions& opt) {
  if (n_draws < kMinReferenceDraws) {
    fail(ErrorKind::Usage, "randomization test needs at least " +
                               std::to_string(kMinReferenceDraws) + " reference draws");
  }
  if (effects.empty()) fail(ErrorKind::Domain, "no effects to test");
  observed.require_balanced();
  const auto w_obs = expand_assignment(observed, ex.model);
  if (!accept(balance_profile(ex.covariates, ex.covariance, w_obs, ex.rule.monitored_effects()),
              ex.rule)) {
    fail(ErrorKind::Domain, "observed allocation does not satisfy the acceptance rule");
  }
  const auto obs = estimate_effects(y, w_obs, effects);

  const auto n = ex.spec.units();
  RowMatrix y_rows(static_cast<Eigen::Index>(n), 1);
  y_rows.col(0) = y;
  const double scale = 2.0 / static_cast<double>(n);
  const double tol = 1e-10 * (1.0 + y.cwiseAbs().maxCoeff());

  struct Reference {
    const Experiment* ex;
    AcceptanceChecker check;
    BalanceEvaluator::Workspace ws;
    const RowMatrix* y;
    const std::vector<std::size_t>* effects;
    double scale;
    RowMatrix sums;
    Eigen::RowVectorXd contrast = Eigen::RowVectorXd::Zero(1);

    std::optional<std::vector<double>> operator()(std::span<const std::uint32_t> combos) {
      ex->evaluator.accumulate(combos, ws);
      if (!check(ex->evaluator, ws)) return std::nullopt;
      combination_sums(*y, combos, sums, ex->evaluator.combinations());
      std::vector<double> est(effects->size());
      for (std::size_t e = 0; e < est.size(); ++e) {
        signed_column_sum(ex->model, sums, (*effects)[e], contrast);
        est[e] = scale * contrast(0);
      }
      return est;
    }
  };

  const auto m = effects.size();
  std::vector<std::uint64_t> extreme(m, 0);
  std::vector<double> sum(m, 0.0), sum_sq(m, 0.0);
  std::vector<double> lo(m, std::numeric_limits<double>::infinity());
  std::vector<double> hi(m, -std::numeric_limits<double>::infinity());
  std::uint64_t collected = 0;

  RandomizationTestResult result;
  const ScanOptions scan{opt.seed, StreamTag::ReferenceDraws, opt.workers, opt.max_draws};
  result.draws_attempted = scan_draws(
      ex.spec, scan,
      Reference{&ex, AcceptanceChecker(ex.rule), ex.evaluator.workspace(), &y_rows, &effects,
                scale, RowMatrix()},
      [&](std::uint64_t, std::vector<double> est) {
        for (std::size_t e = 0; e < m; ++e) {
          const double v = est[e];
          if (std::fabs(v) >= std::fabs(obs.effects[e].estimate) - tol) ++extreme[e];
          sum[e] += v;
          sum_sq[e] += v * v;
          lo[e] = std::min(lo[e], v);
          hi[e] = std::max(hi[e], v);
        }
        return ++collected == n_draws;
      });

  const auto draws = static_cast<double>(n_draws);
  for (std::size_t e = 0; e < m; ++e) {
    EffectTest t;
    t.effect = effects[e];
    t.label = obs.effects[e].label;
    t.observed = obs.effects[e].estimate;
    t.reference_draws = n_draws;
    t.p_value = (1.0 + static_cast<double>(extreme[e])) / (1.0 + draws);
    t.null_mean = sum[e] / draws;
    t.null_sd = std::sqrt(std::max(0.0, (sum_sq[e] - draws * t.null_mean * t.null_mean) /
                                             (draws - 1.0)));
    t.null_min = lo[e];
    t.null_max = hi[e];
    result.effects.push_back(t);
  }
  return result;
}

}  // namespace rerand
