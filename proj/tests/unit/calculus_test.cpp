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

#include "gelunet/calculus.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "common/random_nets.h"
#include "gelunet/errors.h"

namespace gelunet {
namespace {

using testing::random_net;
using testing::random_point;

GeluNetwork affine(int rows, int cols, std::vector<double> a, std::vector<double> b) {
  return GeluNetwork(cols, {Layer::dense(rows, cols, a, std::move(b))});
}

GeluNetwork constant_net(int in, double c) { return GeluNetwork(in, {Layer(1, in, {}, {-c})}); }

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol * (1 + std::abs(b[i])));
}

TEST(ConcatenateTest, AffineComposition) {
  const auto f = affine(2, 2, {1, 2, 3, 4}, {0.5, -1});
  const auto g = affine(1, 2, {2, -1}, {0.25});
  const auto h = concatenate(f, g);
  EXPECT_EQ(h.depth(), 1);
  const double x[2] = {0.7, -0.3};
  const double y0 = 1 * 0.7 + 2 * -0.3 - 0.5, y1 = 3 * 0.7 + 4 * -0.3 + 1;
  EXPECT_NEAR(h.evaluate(x)[0], 2 * y0 - y1 - 0.25, 1e-15);
}

TEST(ConcatenateTest, DepthBoundAndEquivalence) {
  std::mt19937_64 rng(1);
  const auto a = random_net(rng, {2, 4, 3});
  const auto b = random_net(rng, {3, 5, 2, 2});
  const auto c = concatenate(a, b);
  EXPECT_LE(c.depth(), 1 + (a.depth() - 1) + (b.depth() - 1));
  for (int i = 0; i < 50; ++i) {
    const auto x = random_point(rng, 2);
    expect_close(c.evaluate(x), b.evaluate(a.evaluate(x)), 1e-12);
  }
  EXPECT_THROW(concatenate(a, a), ParameterError);
}

TEST(ParallelizeTest, SharedInputDuplicates) {
  const auto id = affine(2, 2, {1, 0, 0, 1}, {0, 0});
  const auto p = parallelize({id, id}, ParallelMode::kSharedInput);
  EXPECT_EQ(p.input_width(), 2);
  const double x[2] = {3, -4};
  const auto y = p.evaluate(x);
  EXPECT_EQ(y, (std::vector<double>{3, -4, 3, -4}));
}

TEST(ParallelizeTest, WidthsAddAndDistinctInputs) {
  std::mt19937_64 rng(2);
  const auto a = random_net(rng, {2, 3, 1});
  const auto b = random_net(rng, {3, 4, 2});
  const auto p = parallelize({a, b}, ParallelMode::kDistinctInputs);
  EXPECT_EQ(p.input_width(), 5);
  EXPECT_LE(p.config().max_width(), a.config().max_width() + b.config().max_width());
  EXPECT_EQ(p.config().S, a.config().S + b.config().S);
  const auto x = random_point(rng, 5);
  const auto ya = a.evaluate(std::span<const double>(x.data(), 2));
  const auto yb = b.evaluate(std::span<const double>(x.data() + 2, 3));
  const auto y = p.evaluate(x);
  EXPECT_NEAR(y[0], ya[0], 1e-15);
  EXPECT_NEAR(y[1], yb[0], 1e-15);
  EXPECT_NEAR(y[2], yb[1], 1e-15);
  EXPECT_THROW(parallelize({a, random_net(rng, {2, 3, 3, 1})}, ParallelMode::kDistinctInputs), ParameterError);
}

TEST(SumParallelTest, ConstantsAdd) {
  const auto c = constant_net(2, 0.75);
  const auto s = sum_parallel({c, c, c}, ParallelMode::kSharedInput);
  const double x[2] = {1, 2};
  EXPECT_NEAR(s.evaluate(x)[0], 2.25, 1e-15);
}

TEST(SumParallelTest, CancellationAndBBound) {
  std::mt19937_64 rng(4);
  const auto f = random_net(rng, {2, 5, 1});
  const auto neg = affine_wrap(f, AffineMap::identity(2), AffineMap::diagonal({-1.0}, {0.0}));
  const auto s = sum_parallel({f, neg}, ParallelMode::kSharedInput);
  for (int i = 0; i < 20; ++i) EXPECT_LE(std::abs(s.evaluate(random_point(rng, 2))[0]), 1e-12);
  const auto g = random_net(rng, {2, 3, 1});
  const auto t = sum_parallel({f, g}, ParallelMode::kSharedInput);
  EXPECT_LE(t.config().B, 2 * std::max(f.config().B, g.config().B));
}

TEST(AffineWrapTest, IdentityIsBitwise) {
  std::mt19937_64 rng(6);
  const auto f = random_net(rng, {3, 4, 2});
  const auto w = affine_wrap(f, AffineMap::identity(3), AffineMap::identity(2));
  ASSERT_EQ(w.depth(), f.depth());
  for (int j = 0; j < f.depth(); ++j) {
    const auto& a = f.layers()[static_cast<size_t>(j)];
    const auto& b = w.layers()[static_cast<size_t>(j)];
    ASSERT_EQ(a.entries().size(), b.entries().size());
    for (size_t e = 0; e < a.entries().size(); ++e) EXPECT_EQ(a.entries()[e].value, b.entries()[e].value);
    EXPECT_EQ(a.bias(), b.bias());
  }
}

TEST(AffineWrapTest, PreScalingScalesWeights) {
  const auto f = affine(1, 2, {1.5, -2}, {0.0});
  const double s2 = 0.25;
  const auto w = affine_wrap(f, AffineMap::diagonal({1 / s2, 1 / s2}, {0, 0}), AffineMap::identity(1));
  EXPECT_DOUBLE_EQ(w.layers()[0].entries()[0].value, 1.5 / s2);
  EXPECT_DOUBLE_EQ(w.layers()[0].entries()[1].value, -2 / s2);
}

TEST(AffineWrapTest, MatchesUnfusedEvaluation) {
  std::mt19937_64 rng(8);
  const auto f = random_net(rng, {2, 4, 3, 2});
  AffineMap pre{2, 3, {0.5, -1, 2, 1, 0, -0.5}, {0.1, -0.2}};
  AffineMap post{1, 2, {2, -3}, {0.7}};
  const auto w = affine_wrap(f, pre, post);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_point(rng, 3);
    expect_close(w.evaluate(x), post.apply(f.evaluate(pre.apply(x))), 1e-12);
  }
}

TEST(AffineMapTest, SelectAndApply) {
  const auto s = AffineMap::select(4, {3, 1}, 2.0);
  const double x[4] = {1, 2, 3, 4};
  EXPECT_EQ(s.apply(x), (std::vector<double>{8, 4}));
  EXPECT_TRUE(AffineMap::identity(3).is_identity());
  EXPECT_THROW(AffineMap::select(2, {2}), ParameterError);
  const auto n = affine_network(s);
  EXPECT_EQ(n.depth(), 1);
  EXPECT_EQ(n.evaluate(x), (std::vector<double>{8, 4}));
}

TEST(PadDepthTest, SameDepthUnchanged) {
  std::mt19937_64 rng(10);
  const auto f = random_net(rng, {2, 3, 1});
  const auto p = pad_depth(f, f.depth(), 1e-6, 2.0, 1);
  EXPECT_EQ(p.depth(), f.depth());
  EXPECT_EQ(p.config().S, f.config().S);
  EXPECT_THROW(pad_depth(f, 1, 1e-6, 2.0, 1), ParameterError);
}

TEST(PadDepthTest, ZeroNetStaysNearZero) {
  const auto z = GeluNetwork(1, {Layer(1, 1, {{0, 0, 0.0}}, {0.0}), Layer(1, 1, {}, {0.0})});
  const double eps = 1e-4;
  const auto p = pad_depth(z, z.depth() + 3, eps, 2.0, 1);
  EXPECT_EQ(p.depth(), z.depth() + 3);
  for (int i = 0; i <= 200; ++i) {
    const double x[1] = {-2.0 + 4.0 * i / 200};
    EXPECT_LE(std::abs(p.evaluate(x)[0]), eps);
  }
}

TEST(PadDepthTest, EnablesParallelize) {
  std::mt19937_64 rng(12);
  const auto a = random_net(rng, {2, 3, 1});
  const auto b = random_net(rng, {2, 3, 3, 3, 1});
  const auto pa = pad_depth(a, b.depth(), 1e-8, 4.0, 1);
  const auto p = parallelize({pa, b}, ParallelMode::kSharedInput);
  EXPECT_EQ(p.depth(), b.depth());
  for (int i = 0; i < 20; ++i) {
    const auto x = random_point(rng, 2);
    EXPECT_NEAR(p.evaluate(x)[0], a.evaluate(x)[0], 1e-7);
  }
}

}  // namespace
}  // namespace gelunet
