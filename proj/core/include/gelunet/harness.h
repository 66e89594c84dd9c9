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

// Experiment orchestration: configuration, runners and report files.

#ifndef GELUNET_HARNESS_H_
#define GELUNET_HARNESS_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gelunet/constructor.h"
#include "gelunet/score_oracle.h"

namespace gelunet {

// Bad configuration; maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"verify-primitives", "oracle-selftest", "build-score",
                                          "error-curve",       "tail-check",      "config-scaling"};
  return k;
}

struct ExperimentConfig {
  std::string experiment;
  // Path of a model file; empty uses `model_json` or the default circle.
  std::string model_path;
  std::string model_json;
  // Construction parameters (practical mode unless mode == "theorem").
  std::string mode = "practical";
  int m = 1;
  int r = 8;
  int N_div = 24;
  int quad_order = 20;
  double R = 2.5;
  double eps_prime = 1e-9;
  double R_inf = 0.0;
  int subcells = 4;
  std::vector<double> eps_sweep{0.25, 0.125, 0.0625};
  int mc_samples = 10000;
  int k_grid = 41;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
  // verify-primitives sweep.
  std::vector<double> primitive_eps{1e-2, 1e-3};
  std::vector<int> primitive_orders{1, 2};
  // tail-check sweep.
  std::vector<int> tail_D{1, 2};
  std::vector<double> tail_sigma{0.5, 1.0};
  int tail_samples = 100000;
  // Wall times go to the JSON mirror always; to the CSV only when set.
  bool timings_in_csv = false;

  // Throws ConfigError naming the offending field.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
  std::string to_json() const;
  ScoreModel load_model() const;
};

struct ErrorRow {
  std::string experiment;
  double eps = 0.0;
  int m = 0;
  std::string k;
  double l2_error_sq = 0.0;
  double sup_error = 0.0;
  int L = 0;
  int width = 0;
  long long S = 0;
  double logB = 0.0;
  double runtime_s = 0.0;
  std::uint64_t seed = 0;
};

struct ErrorReport {
  std::vector<ErrorRow> rows;
  std::string to_csv() const;
};

struct RunResult {
  int exit_code = 0;
  std::vector<std::string> failures;
  ErrorReport report;
  // JSON object with experiment-specific details.
  std::string details = "{}";
};

// Runs the configured experiment, writes <out_dir>/<experiment>.csv and
// .json, and returns exit status 0 (all assertions hold) or 1.
RunResult run(const ExperimentConfig& config);

struct McResult {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double sup = 0.0;
  int skipped = 0;
};

using ScoreDerivFn = std::function<std::vector<double>(std::span<const double>, const MultiIndex&)>;

// Mean over n samples of max_l |d^k approx_l - d^k s*_l|^2 and its standard
// error. Points where the oracle fails are skipped; more than 1% skipped
// throws NumericError. n >= 1000.
McResult l2_error_mc(const ScoreModel& model, const ScoreDerivFn& approx, const MultiIndex& k, int n,
                     std::uint64_t seed, int threads = 1);
McResult l2_error_mc(const ScoreModel& model, const ScoreNetwork& net, const MultiIndex& k, int n,
                     std::uint64_t seed, int threads = 1);
// All of `ks` from one Taylor pass of the network per sample.
std::vector<McResult> l2_errors_mc(const ScoreModel& model, const ScoreNetwork& net,
                                   const std::vector<MultiIndex>& ks, int n, std::uint64_t seed, int threads = 1);

// Runs fn(i) for i in [0, n) on `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// Shortest round-trip decimal.
std::string format_double(double v);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gelunet

#endif  // GELUNET_HARNESS_H_
