// Drives the rerand executable end to end through temporary files.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "rerand/balance.hpp"
#include "support.hpp"

#ifndef RERAND_CLI
#error "RERAND_CLI must point at the rerand executable"
#endif

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rerand_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(RERAND_CLI) + " " + args + " > " + (dir_ / "stdout").string() +
                            " 2> " + (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream out(dir_ / name);
    out << text;
  }

  void write_covariates(const std::string& name, std::size_t n, std::size_t p, std::uint64_t seed) const {
    std::ofstream out(dir_ / name);
    rerand::write_covariates(out, oracle::normal_covariates(n, p, seed));
  }

  std::string config(const std::string& rule, const std::string& extra = "", int K = 2, int r = 8) const {
    std::ostringstream os;
    os << R"({"design": {"factors": )" << K << R"(, "replicates": )" << r << R"(},
      "covariates": {"path": "x.csv"}, "rule": )"
       << rule << R"(, "output_dir": ")" << (dir_ / "out").string() << R"(")" << extra << "}";
    return os.str();
  }

  nlohmann::json json_file(const std::string& name) const { return nlohmann::json::parse(read(name)); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kLooseRule = R"({"tiers": [{"name": "all", "order": 1, "joint_prob": 0.5}]})";

}  // namespace

TEST_F(Cli, DesignWritesTheModelMatrix) {
  ASSERT_EQ(run("design -k 3"), 0);
  std::istringstream in(read("stdout"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "combination,mean,A,B,C,AB,AC,BC,ABC");
  for (int j = 0; j < 8; ++j) {
    ASSERT_TRUE(std::getline(in, line));
    std::ostringstream expected;
    expected << j + 1;
    for (int f = 0; f < 8; ++f) expected << ',' << (fixtures::kTable2[j][f] > 0 ? "+1" : "-1");
    EXPECT_EQ(line, expected.str());
  }
  ASSERT_EQ(run("design -k 1"), 0);
  EXPECT_EQ(read("stdout"), "combination,mean,A\n1,+1,-1\n2,+1,+1\n");
}

TEST_F(Cli, InvalidFactorCountIsUsageError) {
  EXPECT_EQ(run("design -k 0"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("allocate"), 2);  // --config is required
}

TEST_F(Cli, AllocateWithUnboundedThresholdsTakesOneDraw) {
  write_covariates("x.csv", 32, 2, 1);
  write("run.json", config(R"({"tiers": [{"name": "all", "order": 1, "a": "inf"}]})"));
  ASSERT_EQ(run("allocate -c " + path("run.json") + " --seed 9"), 0) << read("stderr");
  const auto m = json_file("out/manifest.json");
  EXPECT_EQ(m["draws_attempted"], 1);
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["rule"]["tiers"][0]["thresholds"]["A"], "inf");
  EXPECT_TRUE(fs::exists(dir_ / "out" / "allocation.csv"));
}

TEST_F(Cli, AllocateWritesManifestAndDiagnosePasses) {
  write_covariates("x.csv", 32, 3, 2);
  write("run.json", config(R"({"tiers": [
      {"name": "mains", "order": 1, "joint_prob": 0.2},
      {"name": "pair", "effects": ["AB"], "joint_prob": 0.5}]})"));
  ASSERT_EQ(run("allocate -c " + path("run.json") + " --seed 4"), 0) << read("stderr");
  const auto m = json_file("out/manifest.json");
  EXPECT_GE(m["draws_attempted"].get<int>(), 1);
  EXPECT_NEAR(m["rule"]["implied_acceptance_probability"].get<double>(), 0.1, 1e-12);
  const auto& mains = m["rule"]["tiers"][0];
  EXPECT_EQ(mains["joint_prob"], 0.2);
  EXPECT_NEAR(mains["per_effect_prob"].get<double>(), std::sqrt(0.2), 1e-12);
  EXPECT_LT(mains["thresholds"]["A"].get<double>(), m["rule"]["tiers"][1]["thresholds"]["AB"].get<double>());
  for (const auto& e : m["balance"]) EXPECT_TRUE(e.contains("M"));
  EXPECT_FALSE(m.contains("elapsed_seconds"));

  ASSERT_EQ(run("diagnose -c " + path("run.json") + " -a " + path("out/allocation.csv")), 0)
      << read("stderr");
  EXPECT_TRUE(json_file("out/balance.json")["accepted"].get<bool>());
  EXPECT_NE(read("out/balance.csv").find("mahalanobis"), std::string::npos);

  // Same seed, same allocation.
  const auto first = read("out/allocation.csv");
  ASSERT_EQ(run("allocate -c " + path("run.json") + " --seed 4 --workers 3"), 0);
  EXPECT_EQ(read("out/allocation.csv"), first);
}

TEST_F(Cli, GeneratedSeedIsPrinted) {
  write_covariates("x.csv", 32, 2, 3);
  write("run.json", config(kLooseRule));
  ASSERT_EQ(run("allocate -c " + path("run.json")), 0);
  EXPECT_NE(read("stderr").find("seed: "), std::string::npos);
}

TEST_F(Cli, DiagnoseFailsWorstCaseAllocation) {
  // Sorted covariate, units 1..8 low A and 9..16 high A: maximal imbalance.
  std::ostringstream x;
  x << "size\n";
  for (int i = 1; i <= 16; ++i) x << i << '\n';
  write("x.csv", x.str());
  std::ostringstream a;
  a << "unit_id,combination_index,A,B\n";
  const int combos[4] = {1, 2, 1, 2};
  for (int i = 0; i < 16; ++i) {
    const int j = (i < 8 ? 0 : 2) + combos[i % 4] - 1;
    a << i + 1 << ',' << j + 1 << ',' << (j >= 2 ? "+1" : "-1") << ',' << (j % 2 ? "+1" : "-1") << '\n';
  }
  write("alloc.csv", a.str());
  write("run.json", config(R"({"tiers": [{"name": "m", "order": 1, "joint_prob": 0.5}]})", "", 2, 4));
  EXPECT_EQ(run("diagnose -c " + path("run.json") + " -a " + path("alloc.csv")), 1) << read("stderr");
  const auto b = json_file("out/balance.json");
  EXPECT_FALSE(b["accepted"].get<bool>());
  EXPECT_GT(b["balance"][0]["M"].get<double>(), 10.0);
}

TEST_F(Cli, DiagnoseRejectsUnbalancedAllocation) {
  write_covariates("x.csv", 4, 1, 5);
  write("alloc.csv", "unit_id,combination_index,A\n1,1,-1\n2,1,-1\n3,1,-1\n4,2,+1\n");
  write("run.json", config(R"({"tiers": [{"order": 1, "a": 5}]})", "", 1, 2));
  EXPECT_EQ(run("diagnose -c " + path("run.json") + " -a " + path("alloc.csv")), 4);
}

TEST_F(Cli, ErrorExitCodes) {
  write("run.json", config(kLooseRule));
  // Dimension mismatch: 31 rows for n = 32.
  write_covariates("x.csv", 31, 2, 6);
  EXPECT_EQ(run("allocate -c " + path("run.json") + " --seed 1"), 4);
  // Singular covariance, reported with the column name.
  std::ostringstream x;
  x << "good,flat\n";
  for (int i = 0; i < 32; ++i) x << i * 0.5 << ",7\n";
  write("x.csv", x.str());
  EXPECT_EQ(run("allocate -c " + path("run.json") + " --seed 1"), 5);
  EXPECT_NE(read("stderr").find("flat"), std::string::npos);
  // Parse error in the covariate file.
  write("x.csv", "a,b\n1,oops\n");
  EXPECT_EQ(run("allocate -c " + path("run.json") + " --seed 1"), 3);
  // Max draws exceeded.
  write_covariates("x.csv", 32, 2, 6);
  write("tight.json", config(R"({"tiers": [{"order": 1, "a": 1e-9}]})"));
  EXPECT_EQ(run("allocate -c " + path("tight.json") + " --seed 1 --max-draws 50"), 6);
  EXPECT_NE(read("stderr").find("warning"), std::string::npos);
  // Missing config file.
  EXPECT_EQ(run("allocate -c " + path("missing.json")), 7);
}

TEST_F(Cli, TestCommand) {
  write_covariates("x.csv", 32, 2, 7);
  write("run.json", config(kLooseRule));
  ASSERT_EQ(run("allocate -c " + path("run.json") + " --seed 7"), 0);
  std::ostringstream y;
  y << "y\n";
  for (int i = 0; i < 32; ++i) y << "2.5\n";
  write("y.csv", y.str());
  const std::string base = "test -c " + path("run.json") + " -a " + path("out/allocation.csv") +
                           " --outcomes " + path("y.csv") + " --seed 8";
  ASSERT_EQ(run(base + " --draws 200"), 0) << read("stderr");
  for (const auto& e : json_file("out/test.json")["effects"]) EXPECT_EQ(e["p_value"], 1.0);
  EXPECT_EQ(run(base + " --draws 50"), 2);

  write("short.csv", "y\n1\n2\n");
  EXPECT_EQ(run("test -c " + path("run.json") + " -a " + path("out/allocation.csv") +
                " --outcomes " + path("short.csv") + " --seed 8 --draws 200"),
            4);
}

TEST_F(Cli, SimulateIsByteIdenticalForASeed) {
  write_covariates("x.csv", 32, 2, 8);
  write("run.json", config(kLooseRule, R"(, "simulate": {"reps": 1000,
      "outcome": {"effects": {"A": 1.0}, "target_r2": 0.5}})"));
  ASSERT_EQ(run("simulate -c " + path("run.json") + " --seed 3"), 0) << read("stderr");
  const auto study = read("out/study.json");
  const auto plot = read("out/plot.csv");
  EXPECT_EQ(plot.substr(0, plot.find('\n')), "covariate,effect,effect_order,percent_reduction,theoretical_line");
  const auto j = nlohmann::json::parse(study);
  EXPECT_EQ(j["cells"].size(), 6u);
  EXPECT_TRUE(j.contains("estimators"));
  ASSERT_EQ(run("simulate -c " + path("run.json") + " --seed 3 --workers 2"), 0);
  EXPECT_EQ(read("out/study.json"), study);
  EXPECT_EQ(read("out/plot.csv"), plot);

  ASSERT_EQ(run("simulate -c " + path("run.json") + " --seed 3 --study independence --reps 2000"), 0);
  EXPECT_TRUE(json_file("out/independence.json").contains("joint_acceptance_rate"));
  EXPECT_EQ(run("simulate -c " + path("run.json") + " --seed 3 --reps 10"), 2);
}

TEST_F(Cli, CalibrateWithUnitProbabilityGivesMaxima) {
  write_covariates("x.csv", 32, 2, 9);
  write("run.json", config(R"({"tiers": [{"order": 1, "joint_prob": 1.0}]})"));
  ASSERT_EQ(run("calibrate -c " + path("run.json") + " --seed 2 --draws 1000"), 0) << read("stderr");
  const auto j = json_file("out/thresholds.json");
  ASSERT_EQ(j["thresholds"].size(), 2u);
  for (const auto& t : j["thresholds"]) {
    EXPECT_EQ(t["prob"], 1.0);
    EXPECT_GT(t["a"].get<double>(), 5.0);  // far into the chi-squared(2) tail
  }
}

TEST_F(Cli, EmpiricalModeAllocates) {
  write_covariates("x.csv", 32, 2, 10);
  write("run.json", config(R"({"mode": "empirical", "tiers": [{"order": 1, "joint_prob": 0.3}]})",
                           R"(, "calibrate": {"draws": 2000})"));
  ASSERT_EQ(run("allocate -c " + path("run.json") + " --seed 5"), 0) << read("stderr");
  EXPECT_EQ(json_file("out/manifest.json")["rule"]["mode"], "empirical");
}

TEST_F(Cli, SyntheticData) {
  ASSERT_EQ(run("synthetic --seed 1 --out " + path("nyde.csv")), 0);
  const auto text = read("nyde.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1377);
  EXPECT_EQ(text.substr(0, text.find(',')), "total_students");
  ASSERT_EQ(run("synthetic --seed 1 --out " + path("again.csv")), 0);
  EXPECT_EQ(read("again.csv"), text);
}
