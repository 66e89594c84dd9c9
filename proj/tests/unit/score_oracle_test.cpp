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

#include "gelunet/score_oracle.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gelunet/errors.h"

namespace gelunet {
namespace {

ScoreModel zero_model(int D, double sigma) { return ScoreModel(SmoothMapSpec::constant(1, std::vector<double>(static_cast<size_t>(D), 0.0)), sigma); }

SmoothMapSpec identity_map() {
  std::vector<std::vector<SmoothMapSpec::PolyTerm>> t(1);
  t[0].push_back({MultiIndex{1}, 1.0});
  return SmoothMapSpec::polynomial(1, std::move(t), 2.0, 1.0);
}

TEST(MapTest, CircleDerivativesAndDegree) {
  const auto c = SmoothMapSpec::circle();
  EXPECT_EQ(c.d(), 1);
  EXPECT_EQ(c.D(), 2);
  EXPECT_EQ(c.taylor_degree(), 2);
  EXPECT_EQ(SmoothMapSpec::circle(3.5).taylor_degree(), 3);
  const double u[1] = {0.1};
  const double w = 2 * std::numbers::pi;
  const auto d3 = c.derivative(u, MultiIndex{3});
  EXPECT_NEAR(d3[0], w * w * w * std::sin(w * 0.1), 1e-9);
  EXPECT_NEAR(d3[1], -w * w * w * std::cos(w * 0.1), 1e-9);
  EXPECT_NO_THROW(c.validate());
}

TEST(MapTest, ValidateCatchesViolations) {
  EXPECT_THROW(SmoothMapSpec::constant(1, {2.0}).validate(), ParameterError);
  std::vector<std::vector<SmoothMapSpec::PolyTerm>> t(1);
  t[0].push_back({MultiIndex{2}, 1.0});
  EXPECT_THROW(SmoothMapSpec::polynomial(1, t, 3.0, 0.5).validate(), ParameterError);
}

TEST(MapTest, JsonRoundTrip) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const auto back = ScoreModel::from_json(m.to_json());
  EXPECT_EQ(back.sigma, 0.5);
  EXPECT_EQ(back.map.D(), 2);
  const double u[1] = {0.37};
  EXPECT_EQ(back.map.evaluate(u), m.map.evaluate(u));
  EXPECT_THROW(ScoreModel::from_json("{\"family\":\"poly\"}"), ParameterError);
}

TEST(QuadratureTest, GaussLegendreExactness) {
  std::vector<double> x, w;
  gauss_legendre(5, x, w);
  double s = 0, s8 = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    s += w[i];
    s8 += w[i] * std::pow(x[i], 8);
  }
  EXPECT_NEAR(s, 2.0, 1e-14);
  EXPECT_NEAR(s8, 2.0 / 9.0, 1e-14);
  const auto r = QuadratureRule::make(2, 3, 4);
  EXPECT_EQ(r.size(), 144);
  double tot = 0;
  for (double v : r.weights) tot += v;
  EXPECT_NEAR(tot, 1.0, 1e-14);
}

TEST(DensityTest, StandardNormalValues) {
  const ScoreOracle o1(zero_model(1, 1.0)), o2(zero_model(2, 1.0));
  const double y0[1] = {0.0}, y1[1] = {1.0}, z[2] = {0.0, 0.0};
  EXPECT_NEAR(o1.density(y0), 0.3989422804014327, 1e-12);
  EXPECT_NEAR(o2.density(z), 1.0 / (2 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(o1.density(y1), std::exp(-0.5) / std::sqrt(2 * std::numbers::pi), 1e-12);
  const double far[1] = {60.0};
  EXPECT_THROW(o1.density(far), NumericError);
  EXPECT_TRUE(std::isfinite(o1.log_density(far)));
}

TEST(FStarTest, ConstantAndSymmetry) {
  const ScoreOracle oc(ScoreModel(SmoothMapSpec::constant(1, {0.3, -0.4}), 0.7));
  const double y[2] = {1.5, 2.0};
  const auto f = oc.f_star(y);
  EXPECT_NEAR(f[0], 0.3, 1e-14);
  EXPECT_NEAR(f[1], -0.4, 1e-14);
  const ScoreOracle oi(ScoreModel(identity_map(), 0.5));
  const double h[1] = {0.5};
  EXPECT_NEAR(oi.f_star(h)[0], 0.5, 1e-12);
}

TEST(FStarTest, ConvexCombination) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const ScoreOracle o(m);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-3, 3);
  for (int i = 0; i < 100; ++i) {
    const double y[2] = {U(rng), U(rng)};
    const auto f = o.f_star(y);
    EXPECT_LE(std::hypot(f[0], f[1]), 1.0 + 1e-12);
  }
}

TEST(ScoreTest, GaussianScore) {
  const double c[2] = {0.2, -0.1};
  const double s = 0.8;
  const ScoreOracle o(ScoreModel(SmoothMapSpec::constant(1, {c[0], c[1]}), s));
  const double y[2] = {1.0, 0.5};
  const auto sc = o.score(y);
  EXPECT_NEAR(sc[0], (c[0] - y[0]) / (s * s), 1e-12);
  EXPECT_NEAR(sc[1], (c[1] - y[1]) / (s * s), 1e-12);
  const auto at = o.score(c);
  EXPECT_NEAR(at[0], 0.0, 1e-14);
  const auto j = o.score_derivative(y, MultiIndex{1, 0}, DerivBackend::kPRecursion);
  EXPECT_NEAR(j[0], -1 / (s * s), 1e-10);
  EXPECT_NEAR(j[1], 0.0, 1e-10);
  const auto df = o.f_derivative(y, MultiIndex{1, 1}, DerivBackend::kFiniteDifference);
  EXPECT_NEAR(df[0], 0.0, 1e-8);
}

TEST(ScoreTest, MatchesGradientOfLogDensity) {
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), 0.5));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> y{U(rng), U(rng)};
    const auto sc = o.score(y);
    for (int l = 0; l < 2; ++l) {
      const double g = fd_derivative([&](std::span<const double> p) { return std::vector<double>{o.log_density(p)}; }, y,
                                     MultiIndex::unit(2, l), 0.05)[0];
      EXPECT_NEAR(sc[static_cast<size_t>(l)], g, 1e-5 * std::max(1.0, std::abs(g)));
    }
  }
}

TEST(ScoreDerivativeTest, BackendsAgreeOnCircle) {
  const double s = 0.5;
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), s));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1.2, 1.2);
  for (int i = 0; i < 10; ++i) {
    const std::vector<double> y{U(rng), U(rng)};
    for (const auto& k : enumerate_multiindices(2, 2)) {
      if (k.order() == 0) continue;
      const auto a = o.f_derivative(y, k, DerivBackend::kPRecursion);
      const auto b = o.f_derivative(y, k, DerivBackend::kFiniteDifference);
      const double scale = std::pow(s, -2.0 * k.order());
      for (int l = 0; l < 2; ++l)
        EXPECT_NEAR(a[static_cast<size_t>(l)], b[static_cast<size_t>(l)], 1e-4 * std::max(1e-3 * scale, std::abs(b[static_cast<size_t>(l)])));
    }
  }
  const double y[2] = {0.1, 0.2};
  EXPECT_THROW(o.f_derivative(y, MultiIndex{3, 0}, DerivBackend::kPRecursion), ParameterError);
}

TEST(ScoreDerivativeTest, SeminormEnvelope) {
  // |d^k f*_l| <= 4^{|k|+1} |k|! sigma^{-2|k|} on a grid of K.
  const double s = 0.5;
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), s));
  for (int i = 0; i <= 12; ++i)
    for (int j = 0; j <= 12; ++j) {
      const std::vector<double> y{-2.5 + 5.0 * i / 12, -2.5 + 5.0 * j / 12};
      for (const auto& k : enumerate_multiindices(2, 2)) {
        const double env = std::pow(4.0, k.order() + 1) * k.factorial() * std::pow(s, -2.0 * k.order());
        const auto v = o.f_derivative(y, k, DerivBackend::kPRecursion);
        for (double x : v) EXPECT_LE(std::abs(x), env);
      }
    }
}

TEST(ScoreDerivativeTest, PathIndependence) {
  const ScoreOracle o(ScoreModel(SmoothMapSpec::circle(), 0.5));
  const double y[2] = {0.4, -0.9};
  const auto a = p_recursion_derivative(o.ratio(), y, MultiIndex{1, 1}, {0, 1});
  const auto b = p_recursion_derivative(o.ratio(), y, MultiIndex{1, 1}, {1, 0});
  for (int l = 0; l < 2; ++l) EXPECT_NEAR(a[static_cast<size_t>(l)], b[static_cast<size_t>(l)], 1e-10 * 16);
}

TEST(SampleTest, DeterministicPerSeed) {
  const ScoreModel m(SmoothMapSpec::circle(), 0.5);
  const auto a = sample_data(m, 100, 42), b = sample_data(m, 100, 42), c = sample_data(m, 100, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const auto prefix = sample_data(m, 10, 42);
  EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), a.begin()));
}

TEST(SampleTest, MeanAndVariance) {
  const int n = 100000;
  const double s = 0.5;
  const auto x = sample_data(ScoreModel(identity_map(), s), n, 9);
  double mean = 0;
  for (double v : x) mean += v / n;
  EXPECT_NEAR(mean, 0.5, 4 * std::sqrt(1.0 / 12 + s * s) / std::sqrt(n));
  const auto z = sample_data(zero_model(2, 1.0), n, 11);
  for (int l = 0; l < 2; ++l) {
    double m2 = 0;
    for (int i = 0; i < n; ++i) m2 += z[static_cast<size_t>(2 * i + l)] * z[static_cast<size_t>(2 * i + l)] / n;
    EXPECT_NEAR(m2, 1.0, 0.02);
  }
}

TEST(RngTest, UniformInOpenInterval) {
  CounterRng r(1, 2);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(TailTest, BoundFormula) {
  EXPECT_NEAR(tail_mass(zero_model(1, 1.0), 1.0, TailMode::kBound).value, 1.0, 1e-15);
  EXPECT_NEAR(tail_mass(zero_model(1, 1.0), 2.0, TailMode::kBound).value, std::exp(-std::sqrt(3.0) / 16), 1e-12);
  EXPECT_NEAR(tail_mass(zero_model(1, 1.0), 2.0, TailMode::kBound).value, 0.8974, 1e-4);
  EXPECT_THROW(tail_mass(zero_model(2, 1.0), 1.0, TailMode::kBound), ParameterError);
}

TEST(TailTest, EstimateBelowBound) {
  const auto m = zero_model(2, 1.0);
  const auto b = tail_mass(m, 3.0, TailMode::kBound);
  const auto e = tail_mass(m, 3.0, TailMode::kEstimate, 100000, 1);
  EXPECT_LE(e.value, b.value + 3 * e.stderr_);
  // P(chi_2 > 3) = exp(-9/2).
  EXPECT_NEAR(e.value, std::exp(-4.5), 4 * std::sqrt(std::exp(-4.5) / 100000));
}

TEST(DistanceTest, CircleImage) {
  const auto c = SmoothMapSpec::circle();
  const double y[2] = {2.0, 0.0};
  EXPECT_NEAR(distance_to_image(c, y), 1.0, 1e-9);
  const double o[2] = {0.0, 0.0};
  EXPECT_NEAR(distance_to_image(c, o), 1.0, 1e-12);
}

}  // namespace
}  // namespace gelunet
