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

#include "gelunet/network.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "common/random_nets.h"
#include "gelunet/errors.h"
#include "gelunet/primitives.h"
#include "gelunet/score_oracle.h"

namespace gelunet {
namespace {

GeluNetwork identity2() {
  const double a[4] = {1, 0, 0, 1};
  return GeluNetwork(2, {Layer::dense(2, 2, a, {0, 0})});
}

GeluNetwork one_neuron() {
  return GeluNetwork(1, {Layer(1, 1, {{0, 0, 1.0}}, {0.0}), Layer(1, 1, {{0, 0, 1.0}}, {0.0})});
}

TEST(LayerTest, ShapesAreChecked) {
  EXPECT_THROW(Layer(2, 2, {{2, 0, 1.0}}, {0, 0}), ParameterError);
  EXPECT_THROW(Layer(2, 2, {}, {0}), ParameterError);
  const Layer l1(3, 2, {}, {0, 0, 0});
  const Layer l2(1, 2, {}, {0});
  EXPECT_THROW(GeluNetwork(2, {l1, l2}), ParameterError);
}

TEST(EvaluateTest, AffineDepthOne) {
  const double x[2] = {1.0, 2.0};
  const auto y = identity2().evaluate(x);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
}

TEST(EvaluateTest, OneNeuron) {
  const double z[1] = {0.0}, o[1] = {1.0};
  EXPECT_DOUBLE_EQ(one_neuron().evaluate(z)[0], 0.0);
  EXPECT_NEAR(one_neuron().evaluate(o)[0], 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-15);
}

TEST(EvaluateTest, BiasIsSubtracted) {
  const GeluNetwork n(1, {Layer(1, 1, {{0, 0, 2.0}}, {3.0})});
  const double x[1] = {1.0};
  EXPECT_DOUBLE_EQ(n.evaluate(x)[0], -1.0);
  const double bad[2] = {1.0, 2.0};
  EXPECT_THROW(n.evaluate(bad), ParameterError);
}

TEST(DerivativeTest, AffineNet) {
  const double a[6] = {1, 2, 3, 4, 5, 6};
  const GeluNetwork n(2, {Layer::dense(3, 2, a, {0.5, 0, -1})});
  const double x[2] = {0.3, -0.2};
  const auto d0 = n.derivative(x, MultiIndex{1, 0});
  const auto d1 = n.derivative(x, MultiIndex{0, 1});
  const auto d2 = n.derivative(x, MultiIndex{1, 1});
  for (int r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(d0[static_cast<size_t>(r)], a[2 * r]);
    EXPECT_DOUBLE_EQ(d1[static_cast<size_t>(r)], a[2 * r + 1]);
    EXPECT_DOUBLE_EQ(d2[static_cast<size_t>(r)], 0.0);
  }
}

TEST(DerivativeTest, SecondDerivativeOfGelu) {
  const double x[1] = {0.0};
  // Richardson FD on the network itself.
  auto f = [&](double t) {
    const double p[1] = {t};
    return one_neuron().evaluate(p)[0];
  };
  auto fd = [&](double h) { return (f(h) - 2 * f(0) + f(-h)) / (h * h); };
  const double ref = (4 * fd(5e-3) - fd(1e-2)) / 3;
  EXPECT_NEAR(one_neuron().derivative(x, MultiIndex{2})[0], ref, 1e-8);
  EXPECT_NEAR(one_neuron().derivative(x, MultiIndex{2})[0], 0.7978846, 1e-7);
}

TEST(DerivativeTest, ZeroOrderEqualsEvaluate) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto net = testing::random_net(rng, testing::random_widths(rng, 3, 2, 4, 5));
    const auto x = testing::random_point(rng, 3);
    const auto e = net.evaluate(x);
    const auto d = net.derivative(x, MultiIndex(3));
    for (size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(d[i], e[i], 1e-14 * (1 + std::abs(e[i])));
  }
}

TEST(DerivativeTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 5; ++t) {
    const auto net = testing::random_net(rng, {2, 4, 3, 1});
    const auto x = testing::random_point(rng, 2);
    auto fn = [&](std::span<const double> p) { return net.evaluate(p); };
    for (const auto& k : enumerate_multiindices(2, 3)) {
      if (k.order() == 0) continue;
      const double got = net.derivative(x, k)[0];
      const double want = fd_derivative(fn, x, k, 0.05)[0];
      EXPECT_NEAR(got, want, 1e-6 * (1 + std::abs(want))) << k.to_string();
    }
  }
}

TEST(DerivativeTest, TaylorLayout) {
  std::mt19937_64 rng(5);
  const auto net = testing::random_net(rng, {2, 3, 2});
  const auto x = testing::random_point(rng, 2);
  const auto t = net.taylor(x, 2);
  const auto sp = JetSpace::get(2, 2);
  for (int o = 0; o < 2; ++o)
    for (const auto& k : sp->indices()) {
      const double v = t[static_cast<size_t>(o * sp->size() + sp->find(k))] * k.factorial();
      EXPECT_NEAR(v, net.derivative(x, k)[static_cast<size_t>(o)], 1e-13);
    }
}

TEST(ConfigTest, CountsNonzeros) {
  const auto c = identity2().config();
  EXPECT_EQ(c.L, 1);
  EXPECT_EQ(c.S, 2);
  EXPECT_DOUBLE_EQ(c.B, 1.0);
  const double a[4] = {1, 0, 0, 0};
  const GeluNetwork z(2, {Layer::dense(2, 2, a, {0, 0})});
  EXPECT_EQ(z.config().S, 1);
}

TEST(ConfigTest, SquareStructure) {
  const auto sq = build_square(1e-3, 1);
  EXPECT_EQ(sq.net.config().L, 2);
  EXPECT_LE(sq.net.config().S, 6);
}

TEST(ConfigTest, RecomputedStatsMatchCache) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const auto net = testing::random_net(rng, testing::random_widths(rng, 2, 3, 5, 6));
    const auto a = net.config(), b = config_stats(net);
    EXPECT_EQ(a.L, b.L);
    EXPECT_EQ(a.widths, b.widths);
    EXPECT_EQ(a.S, b.S);
    EXPECT_DOUBLE_EQ(a.B, b.B);
  }
}

TEST(SerializationTest, RoundTrip) {
  std::mt19937_64 rng(21);
  const auto net = testing::random_net(rng, {3, 5, 4, 2});
  const auto back = GeluNetwork::from_json(net.to_json());
  EXPECT_EQ(back.config().widths, net.config().widths);
  EXPECT_EQ(back.config().S, net.config().S);
  const auto x = testing::random_point(rng, 3);
  const auto a = net.evaluate(x), b = back.evaluate(x);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
  EXPECT_THROW(GeluNetwork::from_json("{\"layers\": []}"), ParameterError);
  EXPECT_THROW(GeluNetwork::from_json("not json"), ParameterError);
}

}  // namespace
}  // namespace gelunet
