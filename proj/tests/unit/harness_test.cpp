// Copyright 2026 The gelunet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gelunet/harness.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gelunet/errors.h"
#include "json.hpp"

namespace gelunet {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gelunet_harness_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

TEST(ConfigTest, DefaultsAndOverrides) {
  const auto c = ExperimentConfig::from_json(
      R"({"experiment": "error-curve", "params": {"r": 6, "N_div": 20}, "eps_sweep": [0.5, 0.25], "seed": 7})");
  EXPECT_EQ(c.experiment, "error-curve");
  EXPECT_EQ(c.r, 6);
  EXPECT_EQ(c.N_div, 20);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.quad_order, 20);
  EXPECT_EQ(c.eps_sweep, (std::vector<double>{0.5, 0.25}));
  EXPECT_NO_THROW(c.validate());
  const auto j = nlohmann::json::parse(c.to_json());
  EXPECT_EQ(j["params"]["r"], 6);
  EXPECT_EQ(j["mc_samples"], 10000);
  EXPECT_EQ(j["model"]["family"], "trigonometric");
}

TEST(ConfigTest, ParseErrorsNameTheProblem) {
  try {
    ExperimentConfig::from_json("{\n \"seed\": 1,\n \"eps_sweep\": [0.1,\n}");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  try {
    ExperimentConfig::from_json(R"({"seed": "abc"})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'seed'"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::from_json(R"({"nonsense": 1})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"params": {"rr": 1}})"), ConfigError);
}

TEST(ConfigTest, ValidationRules) {
  ExperimentConfig c;
  c.experiment = "no-such-kind";
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(run(c), ConfigError);
  c.experiment = "error-curve";
  c.eps_sweep = {0.1, 0.2};
  EXPECT_THROW(c.validate(), ConfigError);
  c.eps_sweep = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c.eps_sweep = {0.2};
  c.model_path = "/nonexistent/model.json";
  EXPECT_THROW(c.validate(), ConfigError);
  c.model_path.clear();
  c.mc_samples = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ReportTest, CsvSchemaAndFormatting) {
  ErrorReport r;
  r.rows.push_back({"x", 0.1, 1, "2-0-1", 0.25, 1e-300, 3, 4, 5, 0.5, 0.0, 9});
  EXPECT_EQ(r.to_csv(),
            "experiment,eps,m,k,l2_error_sq,sup_error,L,width,S,logB,runtime_s,seed\n"
            "x,0.1,1,2-0-1,0.25,1e-300,3,4,5,0.5,0,9\n");
  EXPECT_EQ(format_double(1.0 / 3.0), "0.3333333333333333");
  EXPECT_EQ(std::stod(format_double(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(ReportTest, Slope) {
  EXPECT_NEAR(loglog_slope({1, 2, 4}, {1, 8, 64}), 3.0, 1e-12);
  EXPECT_THROW(loglog_slope({1}, {1}), ParameterError);
}

TEST(ParallelForTest, CoversAllIndices) {
  std::vector<int> hit(100, 0);
  parallel_for(100, 3, [&](int i) { hit[static_cast<size_t>(i)] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 2, [](int i) {
                 if (i == 7) throw NumericError("x");
               }),
               NumericError);
}

TEST(MonteCarloTest, ExactOracleGivesZero) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const ScoreOracle o(m);
  const ScoreDerivFn exact = [&](std::span<const double> y, const MultiIndex& k) {
    return o.score_derivative(y, k, DerivBackend::kPRecursion);
  };
  const auto r = l2_error_mc(m, exact, MultiIndex{1, 0}, 1000, 1);
  EXPECT_EQ(r.estimate, 0.0);
  EXPECT_EQ(r.skipped, 0);
  EXPECT_THROW(l2_error_mc(m, exact, MultiIndex{0, 0}, 10, 1), ParameterError);
}

TEST(MonteCarloTest, SeedStability) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const ScoreDerivFn zero = [](std::span<const double>, const MultiIndex&) { return std::vector<double>(2, 0.0); };
  const auto a = l2_error_mc(m, zero, MultiIndex{0, 0}, 4000, 1);
  const auto b = l2_error_mc(m, zero, MultiIndex{0, 0}, 4000, 2);
  EXPECT_LE(std::abs(a.estimate - b.estimate), 3 * std::hypot(a.stderr_, b.stderr_));
  const auto c = l2_error_mc(m, zero, MultiIndex{0, 0}, 4000, 1, 3);
  EXPECT_EQ(a.estimate, c.estimate);
}

TEST(MonteCarloTest, HandBuiltGaussianScoreNet) {
  const ScoreModel m(SmoothMapSpec::constant(1, {0.25, -0.5}), 0.5);
  // f = c exactly, as a depth-1 network with zero weights.
  const GeluNetwork f(2, {Layer(2, 2, {}, {-0.25, 0.5})});
  const ScoreNetwork s(f, 0.5);
  const auto r = l2_errors_mc(m, s, {MultiIndex{0, 0}, MultiIndex{1, 0}}, 2000, 5);
  EXPECT_LE(r[0].estimate, 1e-9 * 1e-9);
  EXPECT_LE(r[1].estimate, 1e-9 * 1e-9);
}

TEST(RunTest, VerifyPrimitivesPasses) {
  ExperimentConfig c;
  c.experiment = "verify-primitives";
  c.out_dir = temp_dir("vp").string();
  const auto r = run(c);
  EXPECT_EQ(r.exit_code, 0);
  for (const auto& f : r.failures) ADD_FAILURE() << f;
  const std::string csv = slurp(std::filesystem::path(c.out_dir) / "verify-primitives.csv");
  for (const char* name : {"identity", "clip", "square", "mul", "poly", "exp", "pou", "div"})
    EXPECT_NE(csv.find(std::string("verify-primitives/") + name + ","), std::string::npos) << name;
  const auto j = nlohmann::json::parse(slurp(std::filesystem::path(c.out_dir) / "verify-primitives.json"));
  EXPECT_EQ(j["config"]["experiment"], "verify-primitives");
  EXPECT_TRUE(j["passed"].get<bool>());
}

TEST(RunTest, OracleSelftestOnConstantMap) {
  ExperimentConfig c;
  c.experiment = "oracle-selftest";
  c.model_json = ScoreModel(SmoothMapSpec::constant(1, {0.1, 0.2}), 0.8).to_json();
  c.out_dir = temp_dir("os").string();
  const auto r = run(c);
  EXPECT_EQ(r.exit_code, 0);
  bool closed_form = false;
  for (const auto& row : r.report.rows)
    if (row.experiment == "oracle-selftest/constant-map-closed-form") {
      closed_form = true;
      EXPECT_LE(row.sup_error, 1e-10);
    }
  EXPECT_TRUE(closed_form);
}

TEST(RunTest, TailCheckPasses) {
  ExperimentConfig c;
  c.experiment = "tail-check";
  c.tail_samples = 20000;
  c.out_dir = temp_dir("tc").string();
  const auto r = run(c);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.report.rows.size(), 4u);
}

TEST(RunTest, FailedAssertionGivesExitOne) {
  ExperimentConfig c;
  c.experiment = "config-scaling";
  // A single tiny eps makes the denominator floor fail.
  c.eps_sweep = {0.5};
  c.N_div = 3;
  c.eps_prime = 1e-3;
  c.out_dir = temp_dir("cs").string();
  const auto r = run(c);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_FALSE(r.failures.empty());
}

}  // namespace
}  // namespace gelunet
