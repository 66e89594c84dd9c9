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

// gelunet <experiment> [--config PATH] [--seed U64] [--out-dir PATH]
//                      [--threads N] [--quad-order N]
//
// Exit status: 0 all assertions hold, 1 an assertion failed, 2 bad config.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gelunet/errors.h"
#include "gelunet/harness.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<int> quad_order;
};

int run_experiment(const std::string& kind, const Flags& f) {
  gelunet::ExperimentConfig cfg;
  try {
    if (!f.config.empty()) cfg = gelunet::ExperimentConfig::from_file(f.config);
    cfg.experiment = kind;
    if (f.seed) cfg.seed = *f.seed;
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    if (f.threads) cfg.threads = *f.threads;
    if (f.quad_order) cfg.quad_order = *f.quad_order;
    const gelunet::RunResult r = gelunet::run(cfg);
    for (const auto& msg : r.failures) std::cerr << "FAILED: " << msg << "\n";
    std::cout << kind << ": " << (r.exit_code == 0 ? "pass" : "fail") << " (" << r.report.rows.size()
              << " rows, " << cfg.out_dir << "/" << kind << ".csv)\n";
    return r.exit_code;
  } catch (const gelunet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constructive GELU score networks: experiments and checks"};
  app.require_subcommand(1);
  Flags flags;
  std::string chosen;
  for (const auto& kind : gelunet::experiment_kinds()) {
    CLI::App* sub = app.add_subcommand(kind, "Run the " + kind + " experiment");
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Random seed");
    sub->add_option("--out-dir", flags.out_dir, "Directory for the CSV and JSON reports");
    sub->add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--quad-order", flags.quad_order, "Gauss-Legendre nodes per cell and axis")
        ->check(CLI::PositiveNumber);
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return run_experiment(chosen, flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
