#include <sstream>

#include <gtest/gtest.h>

#include "rerand/config.hpp"

using namespace rerand;

namespace {

const char* kFull = R"({
  "design": {"factors": 5, "replicates": 43, "order": "yates"},
  "covariates": {"path": "x.csv", "columns": ["a", "b"], "delimiter": "\\t"},
  "rule": {"mode": "chi2", "tiers": [
    {"name": "mains", "order": 1, "joint_prob": 0.01},
    {"name": "pairs", "effects": ["AB", "A:C"], "a": "inf"},
    {"effects": ["ABC"], "a": 3.5}
  ]},
  "seed": 18446744073709551615,
  "max_draws": 5000,
  "workers": 3,
  "output_dir": "out",
  "test": {"allocation": "alloc.csv", "outcomes": "y.csv", "effects": ["A"], "draws": 500},
  "simulate": {"study": "independence", "reps": 2000,
               "outcome": {"mean": 1.0, "effects": {"A": 2.0}, "beta": [1, 2], "target_r2": 0.5}},
  "calibrate": {"draws": 3000}
})";

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace

TEST(RunConfig, ParsesEveryField) {
  const auto c = parse(kFull);
  EXPECT_EQ(c.design.factors, 5);
  EXPECT_EQ(c.design.replicates, 43);
  EXPECT_EQ(c.design.order, FactorOrder::Yates);
  EXPECT_EQ(c.covariates.delimiter_char(), '\t');
  ASSERT_EQ(c.rule.tiers.size(), 3u);
  EXPECT_EQ(c.rule.tiers[0].order, 1);
  EXPECT_TRUE(std::isinf(*c.rule.tiers[1].threshold));
  EXPECT_EQ(*c.seed, 18446744073709551615ull);
  EXPECT_EQ(c.workers, 3u);
  EXPECT_EQ(c.test.draws, 500u);
  EXPECT_EQ(c.simulate.outcome->effects.at("A"), 2.0);
  EXPECT_EQ(c.calibrate.draws, 3000u);
}

TEST(RunConfig, RoundTrips) {
  const auto c = parse(kFull);
  const auto text = to_json(c).dump(2);
  const auto again = parse(text);
  EXPECT_EQ(c, again);
  EXPECT_EQ(to_json(again).dump(2), text);

  const RunConfig minimal = parse(R"({"design": {"factors": 2, "replicates": 3}})");
  EXPECT_EQ(parse(to_json(minimal).dump()), minimal);
  EXPECT_FALSE(minimal.seed.has_value());
}

TEST(RunConfig, Errors) {
  auto kind_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Usage;
  };
  EXPECT_EQ(kind_of("{"), ErrorKind::Parse);
  EXPECT_EQ(kind_of(R"({"desing": {}})"), ErrorKind::Parse);
  EXPECT_EQ(kind_of(R"({"design": {"factors": "three", "replicates": 1}})"), ErrorKind::Parse);
  EXPECT_EQ(kind_of(R"({"rule": {"mode": "exact"}})"), ErrorKind::Parse);
  EXPECT_EQ(kind_of(R"({"rule": {"tiers": [{"effects": ["A"], "order": 1, "a": 1}]}})"),
            ErrorKind::Parse);
  EXPECT_EQ(kind_of(R"({"rule": {"tiers": [{"a": "huge", "effects": ["A"]}]}})"), ErrorKind::Parse);
}

TEST(BuildRule, NamesAndOrders) {
  const auto c = parse(kFull);
  const auto mm = build_model_matrix(DesignSpec::make(3, 1));
  auto rule = build_rule(c.rule, mm, 2);
  ASSERT_EQ(rule.tiers.size(), 3u);
  EXPECT_EQ(rule.tiers[0].effects, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(rule.tiers[1].effects, (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(rule.tiers[2].name, "tier3");
  resolve_thresholds(rule);
  EXPECT_TRUE(std::isinf(rule.threshold_of(4).value()));
  EXPECT_EQ(rule.threshold_of(7).value(), 3.5);

  RuleConfig bad;
  bad.tiers.push_back({"x", {"AD"}, std::nullopt, std::nullopt, 0.5});
  EXPECT_THROW(build_rule(bad, mm, 2), Error);
  RuleConfig bad_order;
  bad_order.tiers.push_back({"x", {}, 4, std::nullopt, 0.5});
  EXPECT_THROW(build_rule(bad_order, mm, 2), Error);
}

TEST(BuildOutcomeModel, Defaults) {
  const auto mm = build_model_matrix(DesignSpec::make(2, 1));
  OutcomeConfig oc;
  oc.mean = 3.0;
  oc.effects["B"] = -1.0;
  const auto m = build_outcome_model(oc, mm, 4);
  EXPECT_EQ(m.effects(0), 3.0);
  EXPECT_EQ(m.effects(2), -1.0);
  EXPECT_EQ(m.beta.size(), 4);
  oc.beta = {1.0};
  EXPECT_THROW(build_outcome_model(oc, mm, 4), Error);
}
