#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rerand/assignment.hpp"
#include "rerand/criteria.hpp"
#include "support.hpp"

using namespace rerand;

TEST(IncompleteGamma, ClosedForms) {
  EXPECT_NEAR(reg_lower_incomplete_gamma(1.0, 1.0), 1.0 - std::exp(-1.0), 1e-14);
  EXPECT_NEAR(reg_lower_incomplete_gamma(2.0, 1.0), 1.0 - 2.0 * std::exp(-1.0), 1e-14);
  EXPECT_EQ(reg_lower_incomplete_gamma(3.5, 0.0), 0.0);
  for (double x : {0.1, 0.7, 2.0, 5.0, 12.0, 40.0}) {
    EXPECT_NEAR(reg_lower_incomplete_gamma(1.0, x), 1.0 - std::exp(-x), 1e-13) << x;
    EXPECT_NEAR(reg_lower_incomplete_gamma(3.0, x),
                1.0 - std::exp(-x) * (1.0 + x + 0.5 * x * x), 1e-13) << x;
    EXPECT_NEAR(reg_lower_incomplete_gamma(0.5, x), std::erf(std::sqrt(x)), 1e-13) << x;
    EXPECT_NEAR(reg_lower_incomplete_gamma(2.5, x) + reg_upper_incomplete_gamma(2.5, x), 1.0, 1e-14);
  }
}

TEST(IncompleteGamma, DomainErrors) {
  EXPECT_THROW(reg_lower_incomplete_gamma(0.0, 1.0), Error);
  EXPECT_THROW(reg_lower_incomplete_gamma(1.0, -1.0), Error);
  EXPECT_THROW(reg_lower_incomplete_gamma(1.0, std::nan("")), Error);
}

TEST(ChiSquared, ClosedFormForTwoDegrees) {
  EXPECT_NEAR(chi2_cdf(2, 2.0), 1.0 - std::exp(-1.0), 1e-14);
  EXPECT_EQ(chi2_cdf(5, 0.0), 0.0);
  EXPECT_NEAR(chi2_quantile(2, 1.0 - std::exp(-1.0)), 2.0, 1e-9);
  EXPECT_THROW(chi2_cdf(0, 1.0), Error);
}

TEST(ChiSquared, AgreesWithQuadratureForNineDegrees) {
  for (double x : {0.5, 2.0, 5.0, 8.343, 12.0, 20.0, 35.0}) {
    EXPECT_NEAR(chi2_cdf(9, x), oracle::chi2_cdf_quadrature(9, x), 1e-10) << x;
  }
}

TEST(ChiSquared, QuantileRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0.05, 50.0);
  for (int t = 0; t < 200; ++t) {
    const int p = 1 + t % 20;
    const double x = ux(rng);
    const double prob = chi2_cdf(p, x);
    if (prob >= 1.0 - 1e-15) continue;
    EXPECT_NEAR(chi2_quantile(p, prob), x, 1e-8 * std::max(1.0, x)) << p << " " << x;
  }
  EXPECT_THROW(chi2_quantile(3, 0.0), Error);
  EXPECT_THROW(chi2_quantile(3, 1.0), Error);
}

TEST(ChiSquared, QuantileForTierProbability) {
  const double prob = std::pow(0.01, 1.0 / 5.0);
  const double a = chi2_quantile(9, prob);
  EXPECT_NEAR(oracle::chi2_cdf_quadrature(9, a), prob, 1e-10);
  EXPECT_NEAR(chi2_cdf(9, a), prob, 1e-12);
}

TEST(VarianceFactor, ClosedFormAtTwoTwo) {
  const auto vf = variance_factor(2, 2.0);
  const double e = std::exp(-1.0);
  EXPECT_NEAR(vf.value, (1.0 - 2.0 * e) / (1.0 - e), 1e-13);
  EXPECT_NEAR(vf.value, 0.4180232931, 1e-9);
  EXPECT_NEAR(vf.percent_reduction(), 100.0 * (1.0 - vf.value), 1e-12);
}

TEST(VarianceFactor, LimitAndMonotone) {
  EXPECT_NEAR(variance_factor(3, 1e6).value, 1.0, 1e-9);
  EXPECT_EQ(variance_factor(3, std::numeric_limits<double>::infinity()).value, 1.0);
  for (int p : {1, 2, 3, 9, 20}) {
    double prev = 0.0;
    for (double a = 0.01; a < 80.0; a *= 1.3) {
      const double v = variance_factor(p, a).value;
      EXPECT_GT(v, prev) << p << " " << a;
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
  EXPECT_THROW(variance_factor(2, 0.0), Error);
}

TEST(VarianceFactor, MatchesTruncatedChiSquaredMean) {
  // v_a = E[M | M <= a] / p for M ~ chi-squared(p); quadrature oracle.
  for (int p : {1, 3, 9}) {
    for (double a : {0.5, 3.0, 10.0}) {
      const double s = 0.5 * p;
      const double log_norm = -s * std::log(2.0) - std::lgamma(s);
      auto dens = [&](double t) { return t <= 0 ? 0.0 : std::exp(log_norm + (s - 1) * std::log(t) - 0.5 * t); };
      const double mass = oracle::chi2_cdf_quadrature(p, a);
      const double first = oracle::integrate([&](double t) { return t * dens(t); }, 0.0, a, 4000);
      EXPECT_NEAR(variance_factor(p, a).value, first / mass / p, 1e-8) << p << " " << a;
    }
  }
}

namespace {

AcceptanceRule rule_with(std::vector<Tier> tiers, int p) {
  AcceptanceRule r;
  r.tiers = std::move(tiers);
  r.covariates = p;
  resolve_thresholds(r);
  return r;
}

BalanceProfile profile_of(std::vector<double> distances) {
  BalanceProfile bp;
  for (std::size_t f = 0; f < distances.size(); ++f) {
    bp.effects.push_back({f + 1, "", Eigen::VectorXd(), distances[f]});
  }
  return bp;
}

}  // namespace

TEST(ResolveThresholds, JointProbabilityPerEffect) {
  const auto r = rule_with({{"mains", {1, 2, 3, 4, 5}, std::nullopt, 0.01},
                            {"twoway", {6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, std::nullopt, 0.1}},
                           9);
  ASSERT_EQ(r.monitored.size(), 15u);
  EXPECT_NEAR(*r.monitored[0].target_prob, 0.3981071706, 1e-10);
  EXPECT_NEAR(*r.monitored[5].target_prob, 0.7943282347, 1e-10);
  EXPECT_NEAR(r.monitored[0].threshold, chi2_quantile(9, std::pow(0.01, 0.2)), 1e-12);
  EXPECT_LT(r.monitored[0].threshold, r.monitored[5].threshold);
  EXPECT_NEAR(implied_acceptance_probability(r), 0.001, 1e-12);
}

TEST(ResolveThresholds, SingleEffectAndDirect) {
  const auto r = rule_with({{"one", {3}, std::nullopt, 0.25}, {"fixed", {1, 2}, 4.5, std::nullopt}}, 2);
  EXPECT_NEAR(r.threshold_of(3).value(), chi2_quantile(2, 0.25), 1e-14);
  EXPECT_EQ(r.threshold_of(1).value(), 4.5);
  EXPECT_FALSE(r.threshold_of(4).has_value());
  EXPECT_NEAR(implied_acceptance_probability(r), 0.25 * std::pow(chi2_cdf(2, 4.5), 2), 1e-14);
}

TEST(ResolveThresholds, Rejects) {
  EXPECT_THROW(rule_with({{"empty", {}, std::nullopt, 0.5}}, 2), Error);
  EXPECT_THROW(rule_with({{"q0", {1}, std::nullopt, 0.0}}, 2), Error);
  EXPECT_THROW(rule_with({{"q1", {1}, std::nullopt, 1.0}}, 2), Error);
  EXPECT_THROW(rule_with({{"both", {1}, 2.0, 0.5}}, 2), Error);
  EXPECT_THROW(rule_with({{"neither", {1}, std::nullopt, std::nullopt}}, 2), Error);
  EXPECT_THROW(rule_with({{"neg", {1}, -1.0, std::nullopt}}, 2), Error);
  EXPECT_THROW(rule_with({{"mean", {0}, 1.0, std::nullopt}}, 2), Error);
  EXPECT_THROW(rule_with({{"a", {1}, 1.0, std::nullopt}, {"b", {1}, 2.0, std::nullopt}}, 2), Error);
  EXPECT_THROW(rule_with({}, 2), Error);
}

TEST(ResolveThresholds, EmpiricalModeUsesProvider) {
  AcceptanceRule r;
  r.tiers = {{"t", {1, 2}, std::nullopt, 0.36}};
  r.covariates = 3;
  r.mode = ThresholdMode::Empirical;
  EXPECT_THROW(resolve_thresholds(r), Error);
  resolve_thresholds(r, [](std::size_t f, double q) { return 10.0 * f + q; });
  EXPECT_NEAR(r.threshold_of(1).value(), 10.6, 1e-12);
  EXPECT_NEAR(r.threshold_of(2).value(), 20.6, 1e-12);
}

TEST(Accept, Basics) {
  const auto r = rule_with({{"t", {1, 2}, 2.0, std::nullopt}}, 2);
  EXPECT_TRUE(accept(profile_of({0.0, 0.0, 0.0}), r));
  EXPECT_TRUE(accept(profile_of({2.0, 2.0, 0.0}), r));
  EXPECT_FALSE(accept(profile_of({2.0 + 1e-12, 0.0, 0.0}), r));
  // Effect 3 is unmonitored.
  EXPECT_TRUE(accept(profile_of({1.0, 1.0, 1e9}), r));
  EXPECT_THROW(accept(profile_of({1.0}), r), Error);
  AcceptanceRule unresolved;
  EXPECT_THROW(accept(profile_of({0.0}), unresolved), Error);
}

TEST(Accept, SymmetricUnderNegation) {
  const auto spec = DesignSpec::make(3, 4);
  const auto mm = build_model_matrix(spec);
  const auto x = oracle::normal_covariates(32, 3, 8);
  const auto cm = fit_covariance(x);
  const auto r = rule_with({{"m", {1, 2, 3}, std::nullopt, 0.5}, {"i", {4, 5, 6, 7}, std::nullopt, 0.5}}, 3);
  auto rng = make_stream(8, StreamTag::Rerandomize);
  int accepted = 0;
  for (int t = 0; t < 300; ++t) {
    const auto w = expand_assignment(random_allocation(spec, rng), mm);
    const bool a = accept(balance_profile(x, cm, w, mm.effects()), r);
    const bool b = accept(balance_profile(x, cm, w.negated(), mm.effects()), r);
    ASSERT_EQ(a, b);
    accepted += a;
  }
  EXPECT_GT(accepted, 0);
  EXPECT_LT(accepted, 300);
}

TEST(AcceptanceChecker, AgreesWithAccept) {
  const auto spec = DesignSpec::make(3, 4);
  const auto mm = build_model_matrix(spec);
  const auto x = oracle::normal_covariates(32, 2, 12);
  const auto cm = fit_covariance(x);
  const BalanceEvaluator eval(cm, x, mm);
  auto ws = eval.workspace();
  const auto r = rule_with({{"m", {1, 2, 3}, std::nullopt, 0.6}, {"abc", {7}, 1.0, std::nullopt}}, 2);
  const AcceptanceChecker check(r);
  auto rng = make_stream(12, StreamTag::Rerandomize);
  for (int t = 0; t < 300; ++t) {
    const auto a = random_allocation(spec, rng);
    eval.accumulate(a.combo_of_unit, ws);
    const auto profile = balance_profile(x, cm, expand_assignment(a, mm), mm.effects());
    ASSERT_EQ(check(eval, ws), accept(profile, r));
  }
}

TEST(VarianceFactorOf, UnmonitoredIsOne) {
  const auto r = rule_with({{"t", {1}, 3.0, std::nullopt}}, 2);
  EXPECT_EQ(variance_factor_of(r, 2).value, 1.0);
  EXPECT_NEAR(variance_factor_of(r, 1).value, variance_factor(2, 3.0).value, 0.0);
}
