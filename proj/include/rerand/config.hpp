#pragma once

// JSON run configuration shared by every CLI command.

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rerand/criteria.hpp"
#include "rerand/design.hpp"
#include "rerand/simlab.hpp"

namespace rerand {

struct TierConfig {
  std::string name;
  std::vector<std::string> effects;  // effect names, e.g. "A", "AB", "A:B"
  std::optional<int> order;          // or: every effect of this order
  std::optional<double> threshold;   // a; may be +inf
  std::optional<double> joint_prob;  // q

  friend bool operator==(const TierConfig&, const TierConfig&) = default;
};

struct RuleConfig {
  ThresholdMode mode = ThresholdMode::ChiSquared;
  std::vector<TierConfig> tiers;

  friend bool operator==(const RuleConfig&, const RuleConfig&) = default;
};

struct CovariateConfig {
  std::string path;
  std::vector<std::string> columns;  // empty: all columns
  std::string delimiter;             // empty: detect

  friend bool operator==(const CovariateConfig&, const CovariateConfig&) = default;

  char delimiter_char() const {
    if (delimiter.empty()) return 0;
    if (delimiter == "\\t" || delimiter == "tab") return '\t';
    if (delimiter.size() != 1) fail(ErrorKind::Parse, "delimiter must be one character");
    return delimiter[0];
  }
};

struct OutcomeConfig {
  double mean = 0.0;
  std::map<std::string, double> effects;  // effect name -> theta_f
  std::vector<double> beta;               // empty: all ones
  std::optional<double> noise_sd;
  std::optional<double> target_r2;

  friend bool operator==(const OutcomeConfig&, const OutcomeConfig&) = default;
};

struct TestConfig {
  std::string allocation;
  std::string outcomes;
  std::string outcome_column;      // empty: the only or last column
  std::vector<std::string> effects;  // empty: all effects
  std::uint64_t draws = 1000;

  friend bool operator==(const TestConfig&, const TestConfig&) = default;
};

struct SimulateConfig {
  std::string study = "variance";  // or "independence"
  std::size_t reps = 1000;
  std::string report_covariates;   // optional wider file for the report
  std::vector<std::string> report_columns;
  std::optional<OutcomeConfig> outcome;

  friend bool operator==(const SimulateConfig&, const SimulateConfig&) = default;
};

struct CalibrateConfig {
  std::size_t draws = 10000;

  friend bool operator==(const CalibrateConfig&, const CalibrateConfig&) = default;
};

struct RunConfig {
  DesignSpec design = DesignSpec{};
  CovariateConfig covariates;
  RuleConfig rule;
  std::optional<std::uint64_t> seed;
  std::uint64_t max_draws = kDefaultMaxDraws;
  std::size_t workers = 1;
  std::string output_dir = ".";
  TestConfig test;
  SimulateConfig simulate;
  CalibrateConfig calibrate;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::string_view where,
                       std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(ErrorKind::Parse, std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) fail(ErrorKind::Parse, "unknown key '" + key + "' in " + std::string(where));
  }
}

template <class T>
T get(const json& j, const char* key, std::string_view where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string(where) + "." + key + ": " + e.what());
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::string_view where, T& out) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

// Thresholds accept numbers or the strings "inf" / "infinity".
inline double threshold_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "Inf") return std::numeric_limits<double>::infinity();
    fail(ErrorKind::Parse, "threshold must be a number or \"inf\", got '" + s + "'");
  }
  if (!j.is_number()) fail(ErrorKind::Parse, "threshold must be a number or \"inf\"");
  return j.get<double>();
}

inline json threshold_to_json(double a) {
  if (std::isinf(a)) return "inf";
  return a;
}

}  // namespace detail

inline TierConfig parse_tier(const nlohmann::json& j) {
  using detail::get;
  detail::check_keys(j, "tier", {"name", "effects", "order", "a", "joint_prob"});
  TierConfig t;
  detail::read_opt(j, "name", "tier", t.name);
  if (j.contains("effects")) t.effects = get<std::vector<std::string>>(j, "effects", "tier");
  if (j.contains("order")) t.order = get<int>(j, "order", "tier");
  if (j.contains("a")) t.threshold = detail::threshold_from_json(j.at("a"));
  if (j.contains("joint_prob")) t.joint_prob = get<double>(j, "joint_prob", "tier");
  if (t.effects.empty() == !t.order.has_value()) {
    fail(ErrorKind::Parse, "tier '" + t.name + "' needs exactly one of effects or order");
  }
  return t;
}

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::get;
  using detail::read_opt;
  detail::check_keys(j, "config", {"design", "covariates", "rule", "seed", "max_draws", "workers",
                                   "output_dir", "test", "simulate", "calibrate"});
  RunConfig c;
  if (j.contains("design")) {
    const auto& d = j.at("design");
    detail::check_keys(d, "design", {"factors", "replicates", "order", "factor_names"});
    c.design.factors = get<int>(d, "factors", "design");
    c.design.replicates = get<int>(d, "replicates", "design");
    if (d.contains("order")) c.design.order = parse_factor_order(get<std::string>(d, "order", "design"));
    read_opt(d, "factor_names", "design", c.design.factor_names);
  }
  if (j.contains("covariates")) {
    const auto& x = j.at("covariates");
    detail::check_keys(x, "covariates", {"path", "columns", "delimiter"});
    read_opt(x, "path", "covariates", c.covariates.path);
    read_opt(x, "columns", "covariates", c.covariates.columns);
    read_opt(x, "delimiter", "covariates", c.covariates.delimiter);
  }
  if (j.contains("rule")) {
    const auto& r = j.at("rule");
    detail::check_keys(r, "rule", {"mode", "tiers"});
    if (r.contains("mode")) c.rule.mode = parse_threshold_mode(get<std::string>(r, "mode", "rule"));
    if (r.contains("tiers")) {
      if (!r.at("tiers").is_array()) fail(ErrorKind::Parse, "rule.tiers must be an array");
      for (const auto& t : r.at("tiers")) c.rule.tiers.push_back(parse_tier(t));
    }
  }
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
  read_opt(j, "max_draws", "config", c.max_draws);
  read_opt(j, "workers", "config", c.workers);
  read_opt(j, "output_dir", "config", c.output_dir);
  if (j.contains("test")) {
    const auto& t = j.at("test");
    detail::check_keys(t, "test", {"allocation", "outcomes", "outcome_column", "effects", "draws"});
    read_opt(t, "allocation", "test", c.test.allocation);
    read_opt(t, "outcomes", "test", c.test.outcomes);
    read_opt(t, "outcome_column", "test", c.test.outcome_column);
    read_opt(t, "effects", "test", c.test.effects);
    read_opt(t, "draws", "test", c.test.draws);
  }
  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    detail::check_keys(s, "simulate", {"study", "reps", "report_covariates", "report_columns", "outcome"});
    read_opt(s, "study", "simulate", c.simulate.study);
    read_opt(s, "reps", "simulate", c.simulate.reps);
    read_opt(s, "report_covariates", "simulate", c.simulate.report_covariates);
    read_opt(s, "report_columns", "simulate", c.simulate.report_columns);
    if (s.contains("outcome")) {
      const auto& o = s.at("outcome");
      detail::check_keys(o, "outcome", {"mean", "effects", "beta", "noise_sd", "target_r2"});
      OutcomeConfig oc;
      read_opt(o, "mean", "outcome", oc.mean);
      read_opt(o, "effects", "outcome", oc.effects);
      read_opt(o, "beta", "outcome", oc.beta);
      if (o.contains("noise_sd")) oc.noise_sd = get<double>(o, "noise_sd", "outcome");
      if (o.contains("target_r2")) oc.target_r2 = get<double>(o, "target_r2", "outcome");
      c.simulate.outcome = oc;
    }
  }
  if (j.contains("calibrate")) {
    const auto& k = j.at("calibrate");
    detail::check_keys(k, "calibrate", {"draws"});
    read_opt(k, "draws", "calibrate", c.calibrate.draws);
  }
  return c;
}

inline RunConfig parse_config(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path + "'");
  try {
    return parse_config(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

inline nlohmann::json to_json(const TierConfig& t) {
  nlohmann::json j;
  j["name"] = t.name;
  if (!t.effects.empty()) j["effects"] = t.effects;
  if (t.order) j["order"] = *t.order;
  if (t.threshold) j["a"] = detail::threshold_to_json(*t.threshold);
  if (t.joint_prob) j["joint_prob"] = *t.joint_prob;
  return j;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["design"] = {{"factors", c.design.factors},
                 {"replicates", c.design.replicates},
                 {"order", to_string(c.design.order)}};
  if (!c.design.factor_names.empty()) j["design"]["factor_names"] = c.design.factor_names;
  j["covariates"] = {{"path", c.covariates.path}};
  if (!c.covariates.columns.empty()) j["covariates"]["columns"] = c.covariates.columns;
  if (!c.covariates.delimiter.empty()) j["covariates"]["delimiter"] = c.covariates.delimiter;
  j["rule"]["mode"] = to_string(c.rule.mode);
  j["rule"]["tiers"] = nlohmann::json::array();
  for (const auto& t : c.rule.tiers) j["rule"]["tiers"].push_back(to_json(t));
  if (c.seed) j["seed"] = *c.seed;
  j["max_draws"] = c.max_draws;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  j["test"] = {{"allocation", c.test.allocation},
               {"outcomes", c.test.outcomes},
               {"outcome_column", c.test.outcome_column},
               {"effects", c.test.effects},
               {"draws", c.test.draws}};
  j["simulate"] = {{"study", c.simulate.study},
                   {"reps", c.simulate.reps},
                   {"report_covariates", c.simulate.report_covariates},
                   {"report_columns", c.simulate.report_columns}};
  if (c.simulate.outcome) {
    const auto& o = *c.simulate.outcome;
    auto& jo = j["simulate"]["outcome"];
    jo["mean"] = o.mean;
    jo["effects"] = o.effects;
    jo["beta"] = o.beta;
    if (o.noise_sd) jo["noise_sd"] = *o.noise_sd;
    if (o.target_r2) jo["target_r2"] = *o.target_r2;
  }
  j["calibrate"] = {{"draws", c.calibrate.draws}};
  return j;
}

/// Translates tier configs to an AcceptanceRule against the model's labels.
inline AcceptanceRule build_rule(const RuleConfig& rc, const ModelMatrix& mm, int covariates) {
  AcceptanceRule rule;
  rule.mode = rc.mode;
  rule.covariates = covariates;
  for (std::size_t i = 0; i < rc.tiers.size(); ++i) {
    const auto& tc = rc.tiers[i];
    Tier t;
    t.name = tc.name.empty() ? "tier" + std::to_string(i + 1) : tc.name;
    if (tc.order) {
      if (*tc.order < 1 || *tc.order > mm.factors()) {
        fail(ErrorKind::Domain, "tier '" + t.name + "' order outside [1, K]");
      }
      t.effects = mm.effects_of_order(*tc.order);
    } else {
      t.effects = effect_indices(mm, tc.effects);
    }
    t.threshold = tc.threshold;
    t.joint_prob = tc.joint_prob;
    rule.tiers.push_back(std::move(t));
  }
  return rule;
}

inline OutcomeModel build_outcome_model(const OutcomeConfig& oc, const ModelMatrix& mm,
                                        std::size_t covariates) {
  OutcomeModel m;
  m.effects = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mm.size()));
  m.effects(0) = oc.mean;
  for (const auto& [name, value] : oc.effects) {
    m.effects(static_cast<Eigen::Index>(effect_index(mm, name))) = value;
  }
  if (oc.beta.empty()) {
    m.beta = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(covariates));
  } else {
    if (oc.beta.size() != covariates) {
      fail(ErrorKind::Dimension, "outcome beta has " + std::to_string(oc.beta.size()) +
                                     " entries for " + std::to_string(covariates) + " covariates");
    }
    m.beta = Eigen::Map<const Eigen::VectorXd>(oc.beta.data(), static_cast<Eigen::Index>(covariates));
  }
  m.noise_sd = oc.noise_sd.value_or(0.0);
  m.target_r2 = oc.target_r2;
  return m;
}

}  // namespace rerand
