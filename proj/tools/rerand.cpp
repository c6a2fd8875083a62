// rerand: rerandomized allocation for 2^K factorial experiments.
//
// Exit codes: 0 ok, 1 allocation fails the rule (diagnose), 2 usage,
// 3 parse, 4 dimension mismatch, 5 singular covariance, 6 max draws
// exceeded, 7 I/O, 8 invalid value.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rerand/config.hpp"
#include "rerand/report.hpp"

namespace fs = std::filesystem;
using namespace rerand;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> max_draws;
  std::optional<std::string> output_dir;
  std::optional<std::string> covariates;
  std::optional<int> factors;
  std::optional<int> replicates;
  std::optional<std::string> order;
};

void add_common(CLI::App* cmd, Overrides& o, bool needs_config) {
  auto* opt = cmd->add_option("-c,--config", o.config, "JSON run configuration");
  if (needs_config) opt->required();
  cmd->add_option("--seed", o.seed, "random seed (generated and printed when absent)");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--max-draws", o.max_draws, "give up after this many draws");
  cmd->add_option("-o,--output-dir", o.output_dir, "directory for output files");
  cmd->add_option("--covariates", o.covariates, "covariate file (overrides config)");
  cmd->add_option("-k,--factors", o.factors, "number of factors K");
  cmd->add_option("-r,--replicates", o.replicates, "units per treatment combination");
  cmd->add_option("--order", o.order, "combination order: lexicographic or yates");
}

// Flags win over the config file.
RunConfig load(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : read_config_file(o.config);
  // Data paths in a config file are relative to the file itself.
  auto rebase = [&](std::string& path) {
    if (o.config.empty() || path.empty()) return;
    const fs::path p(path);
    if (p.is_relative()) path = (fs::path(o.config).parent_path() / p).string();
  };
  rebase(c.covariates.path);
  rebase(c.simulate.report_covariates);
  rebase(c.test.allocation);
  rebase(c.test.outcomes);
  if (o.seed) c.seed = o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.max_draws) c.max_draws = *o.max_draws;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.covariates) c.covariates.path = *o.covariates;
  if (o.factors) c.design.factors = *o.factors;
  if (o.replicates) c.design.replicates = *o.replicates;
  if (o.order) c.design.order = parse_factor_order(*o.order);
  return c;
}

std::uint64_t resolve_seed(RunConfig& c) {
  if (!c.seed) {
    c.seed = fresh_seed();
    fmt::print(stderr, "seed: {}\n", *c.seed);
  }
  return *c.seed;
}

RerandomizeOptions run_options(const RunConfig& c) {
  return {c.seed.value_or(0), c.workers, c.max_draws};
}

CovariateMatrix load_covariates(const RunConfig& c) {
  if (c.covariates.path.empty()) fail(ErrorKind::Usage, "no covariate file given");
  return read_covariates_file(c.covariates.path, c.covariates.columns,
                              c.covariates.delimiter_char());
}

std::unique_ptr<Experiment> make_experiment(RunConfig& c) {
  const auto spec = DesignSpec::make(c.design.factors, c.design.replicates, c.design.order,
                                     c.design.factor_names);
  auto x = load_covariates(c);
  const auto mm = build_model_matrix(spec);
  auto rule = build_rule(c.rule, mm, static_cast<int>(x.covariates()));
  if (rule.tiers.empty()) fail(ErrorKind::Usage, "config has no acceptance tiers");
  if (rule.mode == ThresholdMode::Empirical) {
    rule = resolve_empirical_rule(std::move(rule), spec, x, c.calibrate.draws, run_options(c));
  }
  auto ex = std::make_unique<Experiment>(spec, std::move(x), std::move(rule));
  const double accept_prob = implied_acceptance_probability(ex->rule);
  if (accept_prob > 0.0 && 1.0 / accept_prob > static_cast<double>(c.max_draws) / 10.0) {
    fmt::print(stderr, "warning: about {:.0f} draws expected per acceptance; max_draws is {}\n",
               1.0 / accept_prob, c.max_draws);
  }
  return ex;
}

fs::path output_path(const RunConfig& c, const std::string& name) {
  fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory '" + dir.string() + "'");
  return dir / name;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

Allocation load_allocation(const std::string& path, const Experiment& ex) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open allocation '" + path + "'");
  try {
    return read_allocation(in, ex.spec, ex.model);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

int cmd_design(const Overrides& o, const std::string& out_file) {
  auto c = load(o);
  if (c.design.factors < 1 || c.design.factors > kMaxModelFactors) {
    fail(ErrorKind::Usage, fmt::format("K must be in [1, {}]", kMaxModelFactors));
  }
  const auto mm = build_model_matrix(
      DesignSpec::make(c.design.factors, 1, c.design.order, c.design.factor_names));
  if (out_file.empty() || out_file == "-") {
    write_model_matrix(std::cout, mm);
  } else {
    auto out = open_out(out_file);
    write_model_matrix(out, mm);
  }
  return 0;
}

int cmd_allocate(const Overrides& o) {
  auto c = load(o);
  const auto seed = resolve_seed(c);
  const auto ex = make_experiment(c);
  const auto result = rerandomize(*ex, run_options(c));
  const auto alloc_path = output_path(c, "allocation.csv");
  {
    auto out = open_out(alloc_path);
    write_allocation(out, result.allocation, ex->model);
  }
  write_json(output_path(c, "manifest.json"),
             allocation_manifest(*ex, result, alloc_path.filename().string()));
  fmt::print("accepted after {} draws (seed {})\n", result.draws_attempted, seed);
  for (const auto& m : ex->rule.monitored) {
    const auto* e = result.profile.find(m.effect);
    fmt::print("  {:<8} M = {:10.4f}  a = {:.4f}\n", ex->model.label(m.effect), e->distance,
               m.threshold);
  }
  fmt::print("wrote {} and manifest.json\n", alloc_path.string());
  return 0;
}

int cmd_diagnose(const Overrides& o, std::string alloc_file) {
  auto c = load(o);
  if (alloc_file.empty()) alloc_file = c.test.allocation;
  if (alloc_file.empty()) fail(ErrorKind::Usage, "no allocation file given");
  const auto ex = make_experiment(c);
  const auto alloc = load_allocation(alloc_file, *ex);
  const auto w = expand_assignment(alloc, ex->model);
  const auto profile = balance_profile(ex->covariates, ex->covariance, w, ex->model.effects());
  const bool ok = accept(profile, ex->rule);
  {
    auto out = open_out(output_path(c, "balance.csv"));
    write_balance_report(out, profile, ex->covariates.names);
  }
  write_json(output_path(c, "balance.json"),
             {{"version", kVersion},
              {"allocation_file", alloc_file},
              {"accepted", ok},
              {"rule", rule_json(ex->rule, ex->model)},
              {"balance", profile_json(profile, ex->rule, ex->covariates.names)}});
  for (const auto& e : profile.effects) {
    const auto a = ex->rule.threshold_of(e.effect);
    fmt::print("{:<8} M = {:10.4f}", e.label, e.distance);
    if (a) fmt::print("  a = {:.4f}  {}", *a, e.distance <= *a ? "pass" : "FAIL");
    fmt::print("\n");
  }
  fmt::print("{}\n", ok ? "allocation satisfies the rule" : "allocation FAILS the rule");
  return ok ? 0 : 1;
}

Eigen::VectorXd load_outcomes(const std::string& path, const std::string& column) {
  const auto table = csv::read_file(path);
  if (table.header.empty()) fail(ErrorKind::Parse, path + ": no columns");
  const auto col = column.empty() ? table.header.size() - 1 : table.column(column);
  Eigen::VectorXd y(static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    try {
      y(static_cast<Eigen::Index>(i)) = csv::parse_double(table.rows[i][col]);
    } catch (const Error& e) {
      throw Error(e.kind(), path + " row " + std::to_string(i + 2) + ": " + e.what());
    }
  }
  return y;
}

int cmd_test(const Overrides& o, std::string alloc_file, std::string outcomes_file,
             std::optional<std::uint64_t> draws) {
  auto c = load(o);
  if (alloc_file.empty()) alloc_file = c.test.allocation;
  if (outcomes_file.empty()) outcomes_file = c.test.outcomes;
  if (alloc_file.empty() || outcomes_file.empty()) {
    fail(ErrorKind::Usage, "test needs an allocation file and an outcomes file");
  }
  if (draws) c.test.draws = *draws;
  const auto seed = resolve_seed(c);
  const auto ex = make_experiment(c);
  const auto alloc = load_allocation(alloc_file, *ex);
  const auto y = load_outcomes(outcomes_file, c.test.outcome_column);
  if (static_cast<std::size_t>(y.size()) != ex->spec.units()) {
    fail(ErrorKind::Dimension, fmt::format("outcomes file has {} rows, design needs {}", y.size(),
                                           ex->spec.units()));
  }
  const auto effects =
      c.test.effects.empty() ? ex->model.effects() : effect_indices(ex->model, c.test.effects);
  const auto result = randomization_test(y, alloc, *ex, effects, c.test.draws, run_options(c));
  write_json(output_path(c, "test.json"), test_json(result, seed, c.test.draws));
  for (const auto& e : result.effects) {
    fmt::print("{:<8} estimate = {:12.5g}  p = {:.4f}\n", e.label, e.observed, e.p_value);
  }
  return 0;
}

int cmd_simulate(const Overrides& o, std::optional<std::string> study,
                 std::optional<std::size_t> reps) {
  auto c = load(o);
  if (study) c.simulate.study = *study;
  if (reps) c.simulate.reps = *reps;
  resolve_seed(c);
  const auto ex = make_experiment(c);
  if (c.simulate.study == "independence") {
    const auto r = independence_study(*ex, c.simulate.reps, run_options(c));
    if (r.below_normal_floor) {
      fmt::print(stderr, "note: n < 16 p; the normal approximation may be poor\n");
    }
    write_json(output_path(c, "independence.json"), independence_json(r, *ex));
    fmt::print("joint acceptance {:.4f}, product of tier rates {:.4f}, nominal {:.4f}\n",
               r.joint_rate, r.product_of_tier_rates, r.nominal_joint);
    fmt::print("max |indicator correlation| {:.4f}\n", r.max_indicator_corr);
    return 0;
  }
  if (c.simulate.study != "variance") {
    fail(ErrorKind::Usage, "unknown study '" + c.simulate.study + "'");
  }
  const auto& report_path =
      c.simulate.report_covariates.empty() ? c.covariates.path : c.simulate.report_covariates;
  const auto& report_columns =
      c.simulate.report_columns.empty() ? c.covariates.columns : c.simulate.report_columns;
  const auto report = read_covariates_file(report_path, report_columns, c.covariates.delimiter_char());
  std::optional<OutcomeModel> model;
  if (c.simulate.outcome) {
    model = build_outcome_model(*c.simulate.outcome, ex->model, ex->covariates.covariates());
  }
  const auto r = variance_study(*ex, report, model, {c.simulate.reps, run_options(c)});
  write_json(output_path(c, "study.json"), study_json(r, *ex));
  {
    auto out = open_out(output_path(c, "study.csv"));
    write_study_table(out, r);
  }
  {
    auto out = open_out(output_path(c, "plot.csv"));
    write_plot_table(out, r);
  }
  fmt::print("{} replications; acceptance rate {:.4g}\n", r.reps, r.observed_acceptance);
  for (const auto& e : r.estimators) {
    fmt::print("{:<8} variance ratio {:.3f} (theory {:.3f})\n", e.label, e.variance_ratio,
               e.theoretical_ratio);
  }
  fmt::print("wrote study.json, study.csv, plot.csv\n");
  return 0;
}

int cmd_calibrate(const Overrides& o, std::optional<std::size_t> draws) {
  auto c = load(o);
  if (draws) c.calibrate.draws = *draws;
  const auto seed = resolve_seed(c);
  const auto spec = DesignSpec::make(c.design.factors, c.design.replicates, c.design.order,
                                     c.design.factor_names);
  const Experiment ex(spec, load_covariates(c), AcceptanceRule{});
  const auto rule = build_rule(c.rule, ex.model, static_cast<int>(ex.covariates.covariates()));
  std::vector<std::size_t> effects;
  std::vector<double> probs;
  for (const auto& t : rule.tiers) {
    if (!t.joint_prob) continue;
    if (!(*t.joint_prob > 0.0 && *t.joint_prob <= 1.0)) {
      fail(ErrorKind::Domain, "tier '" + t.name + "' joint_prob must lie in (0, 1]");
    }
    for (auto f : t.effects) {
      effects.push_back(f);
      probs.push_back(*t.per_effect_prob());
    }
  }
  if (effects.empty()) fail(ErrorKind::Usage, "no tier with joint_prob to calibrate");
  const auto th = calibrate_empirical_thresholds(ex, effects, probs, c.calibrate.draws,
                                                 run_options(c));
  write_json(output_path(c, "thresholds.json"), calibration_json(th, ex, seed, c.calibrate.draws));
  for (const auto& t : th) {
    fmt::print("{:<8} q = {:.4f}  a = {:.4f}  (chi-squared {:.4f})\n", ex.model.label(t.effect),
               t.prob, t.threshold, t.chi2_threshold);
  }
  return 0;
}

int cmd_synthetic(const Overrides& o, const std::string& out_file) {
  auto c = load(o);
  const auto seed = resolve_seed(c);
  const auto x = synthetic_nyde(seed);
  if (out_file.empty() || out_file == "-") {
    write_covariates(std::cout, x);
  } else {
    auto out = open_out(out_file);
    write_covariates(out, x);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rerandomized treatment allocation for 2^K factorial experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Overrides o;
  std::string out_file, alloc_file, outcomes_file;
  std::optional<std::uint64_t> test_draws;
  std::optional<std::size_t> reps, cal_draws;
  std::optional<std::string> study;

  auto* design = app.add_subcommand("design", "write the model matrix for K factors");
  add_common(design, o, false);
  design->add_option("--out", out_file, "output file (default stdout)");

  auto* allocate = app.add_subcommand("allocate", "draw an accepted allocation");
  add_common(allocate, o, true);

  auto* diagnose = app.add_subcommand("diagnose", "balance report for an allocation");
  add_common(diagnose, o, true);
  diagnose->add_option("-a,--allocation", alloc_file, "allocation file");

  auto* test = app.add_subcommand("test", "randomization test restricted to accepted draws");
  add_common(test, o, true);
  test->add_option("-a,--allocation", alloc_file, "allocation file");
  test->add_option("--outcomes", outcomes_file, "observed outcomes file");
  test->add_option("--draws", test_draws, "reference draws");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo variance or independence study");
  add_common(simulate, o, true);
  simulate->add_option("--study", study, "variance or independence");
  simulate->add_option("--reps", reps, "replications");

  auto* calibrate = app.add_subcommand("calibrate", "empirical thresholds from pure draws");
  add_common(calibrate, o, true);
  calibrate->add_option("--draws", cal_draws, "pure randomizations to sample");

  auto* synthetic = app.add_subcommand("synthetic", "generate a synthetic school-district dataset");
  add_common(synthetic, o, false);
  synthetic->add_option("--out", out_file, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
  }

  try {
    if (*design) return cmd_design(o, out_file);
    if (*allocate) return cmd_allocate(o);
    if (*diagnose) return cmd_diagnose(o, alloc_file);
    if (*test) return cmd_test(o, alloc_file, outcomes_file, test_draws);
    if (*simulate) return cmd_simulate(o, study, reps);
    if (*calibrate) return cmd_calibrate(o, cal_draws);
    if (*synthetic) return cmd_synthetic(o, out_file);
  } catch (const SingularCovariance& e) {
    fmt::print(stderr, "error (singular covariance, column '{}'): {}\n", e.column(), e.what());
    return e.exit_code();
  } catch (const Error& e) {
    fmt::print(stderr, "error ({}): {}\n", to_string(e.kind()), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(ErrorKind::Io);
  }
  return static_cast<int>(ErrorKind::Usage);
}
