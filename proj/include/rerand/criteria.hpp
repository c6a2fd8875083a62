#pragma once

// Tiered acceptance rules: every monitored effect f must satisfy M_f <= a_f.
//
// A tier either fixes a threshold directly or asks for a joint acceptance
// probability q over its m effects. Joint targets are split as q^(1/m) per
// effect, which relies on the M_f being independent (large-n normal limit).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rerand/balance.hpp"
#include "rerand/design.hpp"
#include "rerand/special_functions.hpp"

namespace rerand {

enum class ThresholdMode { ChiSquared, Empirical };

inline std::string to_string(ThresholdMode mode) {
  return mode == ThresholdMode::Empirical ? "empirical" : "chi2";
}

inline ThresholdMode parse_threshold_mode(std::string_view text) {
  if (text == "chi2") return ThresholdMode::ChiSquared;
  if (text == "empirical") return ThresholdMode::Empirical;
  fail(ErrorKind::Parse, "unknown threshold mode '" + std::string(text) + "'");
}

struct Tier {
  std::string name;
  std::vector<std::size_t> effects;
  std::optional<double> threshold;   // a
  std::optional<double> joint_prob;  // q

  /// Per-effect acceptance probability implied by a joint target.
  std::optional<double> per_effect_prob() const {
    if (!joint_prob) return std::nullopt;
    return std::pow(*joint_prob, 1.0 / static_cast<double>(effects.size()));
  }
};

struct MonitoredEffect {
  std::size_t effect = 0;
  std::size_t tier = 0;
  double threshold = 0.0;
  std::optional<double> target_prob;  // per-effect probability behind the threshold
};

/// (effect, per-effect probability) -> threshold, used in empirical mode.
using QuantileProvider = std::function<double(std::size_t, double)>;

struct AcceptanceRule {
  std::vector<Tier> tiers;
  int covariates = 0;  // p, degrees of freedom of the chi-squared reference
  ThresholdMode mode = ThresholdMode::ChiSquared;
  std::vector<MonitoredEffect> monitored;  // filled by resolve_thresholds

  bool resolved() const { return !monitored.empty(); }

  std::vector<std::size_t> monitored_effects() const {
    std::vector<std::size_t> out;
    for (const auto& m : monitored) out.push_back(m.effect);
    return out;
  }

  std::optional<double> threshold_of(std::size_t f) const {
    for (const auto& m : monitored) {
      if (m.effect == f) return m.threshold;
    }
    return std::nullopt;
  }
};

/// Resolves every tier to per-effect thresholds. Chi-squared mode uses
/// chi2_quantile(p, q^(1/m)); empirical mode asks `empirical` instead.
inline void resolve_thresholds(AcceptanceRule& rule, const QuantileProvider& empirical = {}) {
  if (rule.tiers.empty()) fail(ErrorKind::Domain, "acceptance rule has no tiers");
  if (rule.covariates < 1) fail(ErrorKind::Domain, "acceptance rule needs p >= 1");
  std::vector<MonitoredEffect> monitored;
  for (std::size_t t = 0; t < rule.tiers.size(); ++t) {
    const auto& tier = rule.tiers[t];
    if (tier.effects.empty()) fail(ErrorKind::Domain, "tier '" + tier.name + "' is empty");
    if (tier.threshold.has_value() == tier.joint_prob.has_value()) {
      fail(ErrorKind::Domain, "tier '" + tier.name + "' needs exactly one of a or joint_prob");
    }
    if (tier.threshold && !(*tier.threshold > 0.0)) {
      fail(ErrorKind::Domain, "tier '" + tier.name + "' threshold must be > 0");
    }
    if (tier.joint_prob && !(*tier.joint_prob > 0.0 && *tier.joint_prob < 1.0)) {
      fail(ErrorKind::Domain, "tier '" + tier.name + "' joint_prob must lie in (0, 1)");
    }
    for (auto f : tier.effects) {
      if (f == 0) fail(ErrorKind::Domain, "the mean column cannot be monitored");
      for (const auto& m : monitored) {
        if (m.effect == f) {
          fail(ErrorKind::Domain, "effect index " + std::to_string(f) +
                                      " appears in more than one tier");
        }
      }
      MonitoredEffect m{f, t, 0.0, tier.per_effect_prob()};
      if (tier.threshold) {
        m.threshold = *tier.threshold;
      } else if (rule.mode == ThresholdMode::ChiSquared) {
        m.threshold = chi2_quantile(rule.covariates, *m.target_prob);
      } else {
        if (!empirical) {
          fail(ErrorKind::Domain, "empirical thresholds require calibration draws");
        }
        m.threshold = empirical(f, *m.target_prob);
      }
      monitored.push_back(m);
    }
  }
  rule.monitored = std::move(monitored);
}

/// Probability that a pure randomization is accepted, assuming independent
/// chi-squared(p) distances. Direct thresholds contribute chi2_cdf(p, a)^m.
inline double implied_acceptance_probability(const AcceptanceRule& rule) {
  double prob = 1.0;
  for (const auto& m : rule.monitored) {
    prob *= m.target_prob ? *m.target_prob
                          : (std::isinf(m.threshold) ? 1.0 : chi2_cdf(rule.covariates, m.threshold));
  }
  return prob;
}

inline VarianceFactor variance_factor_of(const AcceptanceRule& rule, std::size_t f) {
  const auto a = rule.threshold_of(f);
  if (!a) return VarianceFactor{rule.covariates, std::numeric_limits<double>::infinity(), 1.0};
  return variance_factor(rule.covariates, *a);
}

/// True iff M_f <= a_f for every monitored f. Unmonitored effects are ignored.
inline bool accept(const BalanceProfile& profile, const AcceptanceRule& rule) {
  if (!rule.resolved()) fail(ErrorKind::Domain, "acceptance rule is not resolved");
  bool ok = true;
  for (const auto& m : rule.monitored) {
    const auto* e = profile.find(m.effect);
    if (!e) {
      fail(ErrorKind::Domain, "balance profile lacks monitored effect index " +
                                  std::to_string(m.effect));
    }
    if (!(e->distance <= m.threshold)) ok = false;
  }
  return ok;
}

/// Acceptance check against a BalanceEvaluator workspace; tightest thresholds
/// are tried first so most rejections exit early.
class AcceptanceChecker {
 public:
  AcceptanceChecker(const AcceptanceRule& rule) : order_(rule.monitored) {
    if (!rule.resolved() && !rule.tiers.empty()) {
      fail(ErrorKind::Domain, "acceptance rule is not resolved");
    }
    std::stable_sort(order_.begin(), order_.end(),
                     [](const auto& a, const auto& b) { return a.threshold < b.threshold; });
  }

  bool operator()(const BalanceEvaluator& eval, BalanceEvaluator::Workspace& ws) const {
    for (const auto& m : order_) {
      if (!(eval.distance(m.effect, ws) <= m.threshold)) return false;
    }
    return true;
  }

 private:
  std::vector<MonitoredEffect> order_;
};

}  // namespace rerand
