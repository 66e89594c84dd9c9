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

#include <benchmark/benchmark.h>

#include <vector>

#include "gelunet/constructor.h"
#include "gelunet/primitives.h"
#include "gelunet/score_oracle.h"

namespace {

using namespace gelunet;

void BM_GeluDerivatives(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<double> out(static_cast<size_t>(n + 1));
  double x = 0.3;
  for (auto _ : state) {
    gelu_derivatives(x, n, out.data());
    benchmark::DoNotOptimize(out.data());
    x += 1e-9;
  }
}
BENCHMARK(BM_GeluDerivatives)->Arg(1)->Arg(4)->Arg(12);

void BM_JetMultiply(benchmark::State& state) {
  const auto sp = JetSpace::get(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  std::vector<double> a(static_cast<size_t>(sp->size()), 0.5), b(a), c(a.size());
  for (auto _ : state) {
    sp->multiply(a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["coeffs"] = sp->size();
}
BENCHMARK(BM_JetMultiply)->Args({1, 3})->Args({2, 2})->Args({2, 4})->Args({3, 3});

void BM_BuildPrimitive(benchmark::State& state) {
  const double eps = 1e-6;
  for (auto _ : state) {
    switch (state.range(0)) {
      case 0: benchmark::DoNotOptimize(build_square(eps, 2)); break;
      case 1: benchmark::DoNotOptimize(build_exp_neg(eps, 2, 1.0)); break;
      default: benchmark::DoNotOptimize(build_div(12, eps, 2)); break;
    }
  }
}
BENCHMARK(BM_BuildPrimitive)->Arg(0)->Arg(1)->Arg(2);

void BM_DivTaylor(benchmark::State& state) {
  const auto div = build_div(16, 1e-6, 2).net;
  const std::vector<double> x{0.3, 0.01};
  const int deg = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(div.taylor(x, deg));
  state.counters["S"] = static_cast<double>(div.config().S);
}
BENCHMARK(BM_DivTaylor)->Arg(0)->Arg(1)->Arg(2);

void BM_OracleScore(benchmark::State& state) {
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), 0.5));
  const std::vector<double> y{0.4, -0.7};
  for (auto _ : state) benchmark::DoNotOptimize(o.score(y));
}
BENCHMARK(BM_OracleScore);

void BM_OracleScoreJacobian(benchmark::State& state) {
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), 0.5));
  const std::vector<double> y{0.4, -0.7};
  const auto backend = state.range(0) ? DerivBackend::kPRecursion : DerivBackend::kFiniteDifference;
  for (auto _ : state) benchmark::DoNotOptimize(o.score_derivative(y, MultiIndex{1, 0}, backend));
}
BENCHMARK(BM_OracleScoreJacobian)->Arg(0)->Arg(1);

void BM_AssembleCircle(benchmark::State& state) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const double eps = 1.0 / static_cast<double>(state.range(0));
  const auto p = ConstructionParams::practical(m, eps, 1, 8, 24, 20, 2.5, 1e-9, 0.0, 4);
  AssemblyOptions o;
  o.k_grid = 11;
  o.upsilon_points = 0;
  long long S = 0;
  for (auto _ : state) {
    auto b = assemble_score_network(m, p, o);
    S = b.report.config.S;
    benchmark::DoNotOptimize(b);
  }
  state.counters["S"] = static_cast<double>(S);
}
BENCHMARK(BM_AssembleCircle)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ScoreNetworkJet(benchmark::State& state) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const auto p = ConstructionParams::practical(m, 0.25, 1, 8, 24, 20, 2.5, 1e-9, 0.0, 4);
  AssemblyOptions o;
  o.k_grid = 11;
  o.upsilon_points = 0;
  const auto b = assemble_score_network(m, p, o);
  const std::vector<double> y{0.4, -0.7};
  const int deg = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(b.s_bar.taylor(y, deg));
}
BENCHMARK(BM_ScoreNetworkJet)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
