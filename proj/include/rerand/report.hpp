#pragma once

// Manifests and reports: JSON for machines, flat CSV for plotting.

#include <cmath>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rerand/config.hpp"
#include "rerand/simlab.hpp"
#include "rerand/version.hpp"

namespace rerand {

using nlohmann::json;

namespace detail {

// JSON has no infinity; unbounded thresholds are written as "inf".
inline json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

inline json design_json(const DesignSpec& spec) {
  return {{"factors", spec.factors},
          {"replicates", spec.replicates},
          {"units", spec.units()},
          {"order", to_string(spec.order)},
          {"factor_names", spec.names()}};
}

}  // namespace detail

inline json rule_json(const AcceptanceRule& rule, const ModelMatrix& mm) {
  json tiers = json::array();
  for (std::size_t t = 0; t < rule.tiers.size(); ++t) {
    const auto& tier = rule.tiers[t];
    json effects = json::array();
    json thresholds = json::object();
    for (const auto& m : rule.monitored) {
      if (m.tier != t) continue;
      effects.push_back(mm.label(m.effect));
      thresholds[mm.label(m.effect)] = detail::number(m.threshold);
    }
    json jt = {{"name", tier.name}, {"effects", effects}, {"thresholds", thresholds}};
    if (tier.joint_prob) {
      jt["joint_prob"] = *tier.joint_prob;
      jt["per_effect_prob"] = *tier.per_effect_prob();
    }
    if (tier.threshold) jt["a"] = detail::number(*tier.threshold);
    tiers.push_back(jt);
  }
  return {{"mode", to_string(rule.mode)},
          {"covariates", rule.covariates},
          {"tiers", tiers},
          {"implied_acceptance_probability", implied_acceptance_probability(rule)}};
}

inline json profile_json(const BalanceProfile& profile, const AcceptanceRule& rule,
                         const std::vector<std::string>& covariates) {
  json out = json::array();
  for (const auto& e : profile.effects) {
    json diffs = json::object();
    for (std::size_t c = 0; c < covariates.size(); ++c) {
      diffs[covariates[c]] = e.mean_difference(static_cast<Eigen::Index>(c));
    }
    json je = {{"effect", e.label}, {"M", e.distance}, {"mean_differences", diffs}};
    if (const auto a = rule.threshold_of(e.effect)) {
      je["threshold"] = detail::number(*a);
      je["pass"] = e.distance <= *a;
    }
    out.push_back(je);
  }
  return out;
}

inline json allocation_manifest(const Experiment& ex, const RerandomizationResult& r,
                                const std::string& allocation_file) {
  return {{"version", kVersion},
          {"seed", r.seed},
          {"design", detail::design_json(ex.spec)},
          {"covariates", ex.covariates.names},
          {"covariance_condition_number", ex.covariance.condition_number},
          {"rule", rule_json(ex.rule, ex.model)},
          {"draws_attempted", r.draws_attempted},
          {"allocation_file", allocation_file},
          {"balance", profile_json(r.profile, ex.rule, ex.covariates.names)}};
}

inline json test_json(const RandomizationTestResult& result, std::uint64_t seed,
                      std::uint64_t n_draws) {
  json effects = json::array();
  for (const auto& e : result.effects) {
    effects.push_back({{"effect", e.label},
                       {"estimate", e.observed},
                       {"p_value", e.p_value},
                       {"null_mean", e.null_mean},
                       {"null_sd", e.null_sd},
                       {"null_min", e.null_min},
                       {"null_max", e.null_max}});
  }
  return {{"version", kVersion},
          {"seed", seed},
          {"reference_draws", n_draws},
          {"draws_attempted", result.draws_attempted},
          {"alternative", "two-sided |estimate|"},
          {"effects", effects}};
}

inline json study_json(const StudyReport& r, const Experiment& ex) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"covariate", c.covariate},
                     {"effect", c.label},
                     {"effect_order", c.order},
                     {"monitored", c.monitored},
                     {"var_randomized", c.var_pure},
                     {"var_rerandomized", c.var_rerand},
                     {"percent_reduction", c.percent_reduction},
                     {"theoretical_percent_reduction", c.theoretical_reduction},
                     {"mean_rerandomized", c.mean_rerand},
                     {"se_mean_rerandomized", c.se_mean_rerand}});
  }
  json estimators = json::array();
  for (const auto& e : r.estimators) {
    estimators.push_back({{"effect", e.label},
                          {"effect_order", e.order},
                          {"monitored", e.monitored},
                          {"truth", e.truth},
                          {"mean_randomized", e.mean_pure},
                          {"mean_rerandomized", e.mean_rerand},
                          {"se_mean_rerandomized", e.se_mean_rerand},
                          {"var_randomized", e.var_pure},
                          {"var_rerandomized", e.var_rerand},
                          {"variance_ratio", e.variance_ratio},
                          {"v_a", e.v_a},
                          {"theoretical_ratio", e.theoretical_ratio}});
  }
  json out = {{"version", kVersion},
              {"study", "variance"},
              {"seed", r.seed},
              {"reps", r.reps},
              {"design", detail::design_json(ex.spec)},
              {"rule", rule_json(ex.rule, ex.model)},
              {"draws_randomized", r.draws_pure},
              {"draws_rerandomized", r.draws_rerand},
              {"observed_acceptance_rate", r.observed_acceptance},
              {"cells", cells},
              {"max_abs_cross_effect_difference_corr", r.max_cross_difference_corr},
              {"max_cross_effect_difference_cov_z", r.max_cross_difference_z}};
  if (r.covariate_r2) {
    out["covariate_r2"] = *r.covariate_r2;
    if (r.target_r2) out["target_r2"] = *r.target_r2;
    out["estimators"] = estimators;
    out["max_abs_cross_estimator_corr"] = r.max_cross_estimator_corr;
  }
  return out;
}

/// covariate,effect,statistic,value
inline void write_study_table(std::ostream& os, const StudyReport& r) {
  os << "covariate,effect,statistic,value\n";
  auto row = [&](const std::string& cov, const std::string& eff, const char* stat, double v) {
    os << cov << ',' << eff << ',' << stat << ',' << fmt::format("{}", v) << '\n';
  };
  for (const auto& c : r.cells) {
    row(c.covariate, c.label, "var_randomized", c.var_pure);
    row(c.covariate, c.label, "var_rerandomized", c.var_rerand);
    row(c.covariate, c.label, "percent_reduction", c.percent_reduction);
    row(c.covariate, c.label, "theoretical_percent_reduction", c.theoretical_reduction);
  }
  for (const auto& e : r.estimators) {
    row("", e.label, "estimator_variance_ratio", e.variance_ratio);
    row("", e.label, "estimator_theoretical_ratio", e.theoretical_ratio);
    row("", e.label, "estimator_mean", e.mean_rerand);
    row("", e.label, "estimand", e.truth);
  }
}

/// One row per dot of a percent-reduction chart.
inline void write_plot_table(std::ostream& os, const StudyReport& r) {
  os << "covariate,effect,effect_order,percent_reduction,theoretical_line\n";
  for (const auto& c : r.cells) {
    os << c.covariate << ',' << c.label << ',' << c.order << ','
       << fmt::format("{}", c.percent_reduction) << ','
       << fmt::format("{}", c.theoretical_reduction) << '\n';
  }
}

inline json independence_json(const IndependenceReport& r, const Experiment& ex) {
  json marginal = json::object();
  for (std::size_t e = 0; e < r.monitored.size(); ++e) {
    marginal[ex.model.label(r.monitored[e])] = r.marginal_rates[e];
  }
  json tiers = json::array();
  for (std::size_t t = 0; t < r.tier_rates.size(); ++t) {
    tiers.push_back({{"name", ex.rule.tiers[t].name}, {"acceptance_rate", r.tier_rates[t]}});
  }
  json corr = json::array();
  for (Eigen::Index a = 0; a < r.indicator_correlation.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < r.indicator_correlation.cols(); ++b) {
      row.push_back(r.indicator_correlation(a, b));
    }
    corr.push_back(row);
  }
  return {{"version", kVersion},
          {"study", "independence"},
          {"seed", r.seed},
          {"reps", r.reps},
          {"design", detail::design_json(ex.spec)},
          {"rule", rule_json(ex.rule, ex.model)},
          {"below_normal_floor", r.below_normal_floor},
          {"marginal_acceptance", marginal},
          {"tiers", tiers},
          {"joint_acceptance_rate", r.joint_rate},
          {"product_of_tier_rates", r.product_of_tier_rates},
          {"nominal_joint_acceptance", r.nominal_joint},
          {"indicator_correlation", corr},
          {"max_abs_indicator_corr", r.max_indicator_corr},
          {"max_abs_cross_effect_difference_corr", r.max_cross_difference_corr}};
}

inline json calibration_json(const std::vector<CalibratedThreshold>& th, const Experiment& ex,
                             std::uint64_t seed, std::size_t draws) {
  json list = json::array();
  for (const auto& t : th) {
    list.push_back({{"effect", ex.model.label(t.effect)},
                    {"prob", t.prob},
                    {"a", detail::number(t.threshold)},
                    {"chi2_a", detail::number(t.chi2_threshold)}});
  }
  return {{"version", kVersion},
          {"seed", seed},
          {"draws", draws},
          {"covariates", ex.covariates.names},
          {"thresholds", list}};
}

}  // namespace rerand
