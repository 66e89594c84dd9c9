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

#include "gelunet/primitives.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numbers>
#include <limits>
#include <string>

#include "gelunet/calculus.h"
#include "gelunet/errors.h"

namespace gelunet {

namespace {

constexpr double kUnitRoundoff = 1.1102230246251565e-16;
// Smallest scale of the symmetric square pair; below it rounding dominates.
constexpr double kMinSquareScale = 5e-6;

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

void check_order(int m) {
  if (m < 0 || m > kMaxOrder) throw ParameterError("Sobolev order outside [0, 12]");
}

void check_eps(double eps, const char* who) {
  if (!(eps > 0.0 && eps < 1.0)) throw ParameterError(std::string(who) + ": eps must lie in (0, 1)");
}

// Per-order bounds: v[n] bounds every partial derivative of total order n.
using Orders = std::vector<double>;

Orders constant_orders(int m, double v) { return Orders(static_cast<size_t>(m + 1), v); }

Orders operator+(Orders a, const Orders& b) {
  for (size_t n = 0; n < a.size(); ++n) a[n] += b[n];
  return a;
}

Orders scaled(Orders a, double s) {
  for (double& v : a) v *= s;
  return a;
}

// v[n] * s^n: effect of an inner linear map with slope s.
Orders rescaled(Orders a, double s) {
  for (size_t n = 0; n < a.size(); ++n) a[n] *= std::pow(s, static_cast<double>(n));
  return a;
}

double max_of(const Orders& a) {
  double m = 0.0;
  for (double v : a) m = std::isnan(v) ? std::numeric_limits<double>::infinity() : std::max(m, v);
  return m;
}

// Partial Bell polynomials B_{n,k}(x_1, x_2, ...) for n, k <= m.
std::vector<Orders> partial_bell(const Orders& x) {
  const int m = static_cast<int>(x.size()) - 1;
  std::vector<Orders> B(static_cast<size_t>(m + 1), Orders(static_cast<size_t>(m + 1), 0.0));
  B[0][0] = 1.0;
  for (int n = 1; n <= m; ++n)
    for (int k = 1; k <= n; ++k) {
      double s = 0.0;
      for (int i = 1; i <= n - k + 1; ++i)
        s += binomial(n - 1, i - 1) * x[static_cast<size_t>(i)] * B[static_cast<size_t>(n - i)][static_cast<size_t>(k - 1)];
      B[static_cast<size_t>(n)][static_cast<size_t>(k)] = s;
    }
  return B;
}

// Derivative bounds of f o g from bounds F on f (orders 0..m) and G on g.
Orders compose_norm(const Orders& F, const Orders& G) {
  const int m = static_cast<int>(G.size()) - 1;
  const auto B = partial_bell(G);
  Orders out(static_cast<size_t>(m + 1), 0.0);
  out[0] = F[0];
  for (int n = 1; n <= m; ++n)
    for (int k = 1; k <= n; ++k) out[static_cast<size_t>(n)] += F[static_cast<size_t>(k)] * B[static_cast<size_t>(n)][static_cast<size_t>(k)];
  return out;
}

// Error bounds of f~ o g~ against f o g. e_out: error of f~ on the range of
// g~; F: bounds on f up to order m + 1; G, E: bounds on g and on g~ - g.
// Inner maps with several components pass summed component bounds.
Orders compose_error(const Orders& e_out, const Orders& F, const Orders& G, const Orders& E) {
  const int m = static_cast<int>(G.size()) - 1;
  const Orders Gh = G + E;
  const auto Bh = partial_bell(Gh);
  const auto B = partial_bell(G);
  Orders out(static_cast<size_t>(m + 1), 0.0);
  out[0] = e_out[0] + F[1] * E[0];
  for (int n = 1; n <= m; ++n) {
    double s = 0.0;
    for (int k = 1; k <= n; ++k) {
      const double bh = Bh[static_cast<size_t>(n)][static_cast<size_t>(k)];
      s += e_out[static_cast<size_t>(k)] * bh + F[static_cast<size_t>(k + 1)] * E[0] * bh +
           F[static_cast<size_t>(k)] * (bh - B[static_cast<size_t>(n)][static_cast<size_t>(k)]);
    }
    out[static_cast<size_t>(n)] = s;
  }
  return out;
}

// Leibniz bound for f g.
Orders product_norm(const Orders& F, const Orders& G) {
  const int m = static_cast<int>(F.size()) - 1;
  Orders out(static_cast<size_t>(m + 1), 0.0);
  for (int n = 0; n <= m; ++n)
    for (int j = 0; j <= n; ++j)
      out[static_cast<size_t>(n)] += binomial(n, j) * F[static_cast<size_t>(j)] * G[static_cast<size_t>(n - j)];
  return out;
}

// Error of a product node fed with a~ = a + da, b~ = b + db: the node error
// on [-C, C]^2 composed with the inputs, plus a db + da b + da db.
Orders mul_error(double e_node, const Orders& Ga, const Orders& Ea, const Orders& Gb, const Orders& Eb) {
  const int m = static_cast<int>(Ga.size()) - 1;
  const double C = std::max({1.0, Ga[0] + Ea[0], Gb[0] + Eb[0]});
  const Orders node = compose_error(constant_orders(m + 1, e_node * C * C * C), constant_orders(m + 1, 0.0), Ga + Gb, Ea + Eb);
  return node + product_norm(Ga, Eb) + product_norm(Ea, Gb) + product_norm(Ea, Eb);
}

Orders square_error(double e_node, const Orders& G, const Orders& E) {
  const int m = static_cast<int>(G.size()) - 1;
  const double C = std::max(1.0, G[0] + E[0]);
  const Orders node = compose_error(constant_orders(m + 1, e_node * C * C * C), constant_orders(m + 1, 0.0), G, E);
  return node + scaled(product_norm(G, E), 2.0) + product_norm(E, E);
}

Orders identity_profile(int m, double K) {
  Orders F(static_cast<size_t>(m + 2), 0.0);
  F[0] = K;
  F[1] = 1.0;
  return F;
}

// Iterates lambda = root(lambda) from lambda0 to a fixed point.
template <class F>
double fixed_point(F root, double lambda0) {
  double lambda = lambda0;
  for (int i = 0; i < 60; ++i) {
    double next = root(lambda);
    if (std::abs(next - lambda) < 1e-12 * lambda) return next;
    lambda = next;
  }
  return lambda;
}

// Picks the internal tolerance t so that claim(t) <= target, when the floors
// of the construction allow it.
template <class F>
double solve_tolerance(F claim, double target) {
  double t = std::min(1e-3, target);
  for (int i = 0; i < 8; ++i) {
    const double c = claim(t);
    if (!(c > 0.0)) break;
    const double next = std::clamp(t * target / c * 0.8, 1e-18, 0.1);
    if (std::abs(next - t) < 1e-3 * t) break;
    t = next;
  }
  return t;
}

// ----- claims without building -------------------------------------------

double identity_shift(int L, double eps, double K, int m) {
  return K + 1.0 + 2.0 * std::sqrt(std::log(std::pow(2.0, m + 2) * (L - 1) * std::sqrt(factorial(m)) / eps));
}

double identity_claim(int L, double eps, double K, int m) {
  const double T = identity_shift(L, eps, K, m);
  return std::max(eps, 16.0 * kUnitRoundoff * (K + T) * L);
}

double clip_lambda(double eps, int m) {
  const double c = 8.0 * std::sqrt(factorial(m));
  return fixed_point(
      [&](double l) { return std::max(4.0, std::sqrt(16.0 * std::log(c * std::max(1.0, std::pow(l, m - 1)) / eps))); },
      4.0);
}

double clip_claim(double A, double eps) { return std::max(eps, 8.0 * kUnitRoundoff * (2.0 * A + 1.0)); }

double square_kappa(int m) { return m <= 2 ? 8.0 : 16.0; }

double square_scale(double eps, int m) { return std::max(std::sqrt(eps / square_kappa(m)), kMinSquareScale); }

double square_claim(double eps, int m) {
  const double s = square_scale(eps, m);
  return std::max(eps, square_kappa(m) * s * s);
}

double mul_claim(double eps, int m) { return 4.0 * square_claim(eps / 4.0, m); }

// Reference oracles used by the checked flag and by the tests.
std::vector<double> monomial_derivative(std::span<const double> x, const MultiIndex& mono, const MultiIndex& k) {
  double v = 1.0;
  for (int i = 0; i < mono.size(); ++i) {
    if (k[i] > mono[i]) return {0.0};
    v *= factorial(mono[i]) / factorial(mono[i] - k[i]) * std::pow(x[static_cast<size_t>(i)], mono[i] - k[i]);
  }
  return {v};
}

void verify(const Primitive& p, const DerivOracle& ref, const char* who,
            const std::function<bool(std::span<const double>)>& keep = {}) {
  const auto table = measure_sobolev_error(p.net, ref, p.cert.region, p.cert.order, 32, keep);
  const double measured = table.max();
  if (!(measured <= 2.0 * p.cert.claimed_error))
    throw ConstructionError(std::string(who) + ": measured W^{m,inf} error " + std::to_string(measured) +
                            " exceeds twice the claim " + std::to_string(p.cert.claimed_error));
}

}  // namespace

Box Box::cube(int dim, double lo, double hi) {
  Box b;
  b.lo.assign(static_cast<size_t>(dim), lo);
  b.hi.assign(static_cast<size_t>(dim), hi);
  return b;
}

double SobolevErrorTable::max() const {
  double m = 0.0;
  for (double v : per_order) m = std::max(m, v);
  return m;
}

double gelu_derivative_sup(int n) {
  static std::once_flag once;
  static std::array<double, kMaxOrder + 1> sup{};
  std::call_once(once, [] {
    double d[kMaxOrder + 1];
    for (int i = -24000; i <= 24000; ++i) {
      gelu_derivatives(i * 5e-4, kMaxOrder, d);
      for (int k = 0; k <= kMaxOrder; ++k) sup[static_cast<size_t>(k)] = std::max(sup[static_cast<size_t>(k)], std::abs(d[k]));
    }
    for (auto& v : sup) v *= 1.001;
  });
  if (n == 0) return std::numeric_limits<double>::infinity();
  return sup[static_cast<size_t>(std::clamp(n, 0, kMaxOrder))];
}

// ---------------------------------------------------------------------------

Primitive build_identity(int L, double eps, double K, int m, bool checked) {
  check_eps(eps, "build_identity");
  check_order(m);
  if (L < 2) throw ParameterError("build_identity: depth must be >= 2");
  if (K < 1.0) throw ParameterError("build_identity: K must be >= 1");
  const double T = identity_shift(L, eps, K, m);
  std::vector<Layer> layers;
  layers.emplace_back(1, 1, std::vector<Triplet>{{0, 0, 1.0}}, std::vector<double>{-T});
  for (int j = 2; j < L; ++j) layers.emplace_back(1, 1, std::vector<Triplet>{{0, 0, 1.0}}, std::vector<double>{0.0});
  layers.emplace_back(1, 1, std::vector<Triplet>{{0, 0, 1.0}}, std::vector<double>{T});
  Primitive p{GeluNetwork(1, std::move(layers)), {}};
  p.cert.region = Box::cube(1, -K, K);
  p.cert.order = m;
  p.cert.claimed_error = identity_claim(L, eps, K, m);
  if (checked) {
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      return std::vector<double>{k[0] == 0 ? x[0] : (k[0] == 1 ? 1.0 : 0.0)};
    }, "build_identity");
  }
  return p;
}

Primitive build_clip(double A, double eps, int m, bool checked) {
  check_eps(eps, "build_clip");
  check_order(m);
  if (A < 1.0) throw ParameterError("build_clip: A must be >= 1");
  const double lambda = clip_lambda(eps, m);
  const double h = A + 0.5;
  std::vector<Layer> layers;
  layers.emplace_back(2, 1, std::vector<Triplet>{{0, 0, lambda}, {1, 0, lambda}},
                      std::vector<double>{-lambda * h, lambda * h});
  layers.emplace_back(1, 2, std::vector<Triplet>{{0, 0, 1.0 / lambda}, {0, 1, -1.0 / lambda}},
                      std::vector<double>{h});
  Primitive p{GeluNetwork(1, std::move(layers)), {}};
  p.cert.region = Box::cube(1, -A, A);
  p.cert.order = m;
  p.cert.claimed_error = clip_claim(A, eps);
  p.cert.claimed_whole_line_bound = A + 2.5;
  if (checked) {
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      return std::vector<double>{k[0] == 0 ? x[0] : (k[0] == 1 ? 1.0 : 0.0)};
    }, "build_clip");
  }
  return p;
}

Primitive build_square(double eps, int m, bool checked) {
  check_eps(eps, "build_square");
  check_order(m);
  const double s = square_scale(eps, m);
  // [GELU(s x) + GELU(-s x)] / (2 phi(0) s^2) = x^2 - s^2 x^4 / 6 + ...
  const double c = 1.0 / (2.0 * normal_pdf(0.0) * s * s);
  std::vector<Layer> layers;
  layers.emplace_back(2, 1, std::vector<Triplet>{{0, 0, s}, {1, 0, -s}}, std::vector<double>{0.0, 0.0});
  layers.emplace_back(1, 2, std::vector<Triplet>{{0, 0, c}, {0, 1, c}}, std::vector<double>{0.0});
  Primitive p{GeluNetwork(1, std::move(layers)), {}};
  p.cert.region = Box::cube(1, -1.0, 1.0);
  p.cert.order = m;
  p.cert.claimed_error = square_claim(eps, m);
  p.cert.cubic_scaling = true;
  p.cert.c_max = 8.0;
  if (checked) {
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      const double v = k[0] == 0 ? x[0] * x[0] : (k[0] == 1 ? 2.0 * x[0] : (k[0] == 2 ? 2.0 : 0.0));
      return std::vector<double>{v};
    }, "build_square");
  }
  return p;
}

Primitive build_mul(double eps, int m, bool checked) {
  check_eps(eps, "build_mul");
  check_order(m);
  // x y = [(x + y)^2 - (x - y)^2] / 4 over two square pairs.
  const double s = square_scale(eps / 4.0, m);
  const double c = 1.0 / (2.0 * normal_pdf(0.0) * s * s) / 4.0;
  std::vector<Layer> layers;
  layers.emplace_back(4, 2,
                      std::vector<Triplet>{{0, 0, s}, {0, 1, s}, {1, 0, -s}, {1, 1, -s},
                                           {2, 0, s}, {2, 1, -s}, {3, 0, -s}, {3, 1, s}},
                      std::vector<double>(4, 0.0));
  layers.emplace_back(1, 4, std::vector<Triplet>{{0, 0, c}, {0, 1, c}, {0, 2, -c}, {0, 3, -c}},
                      std::vector<double>{0.0});
  Primitive p{GeluNetwork(2, std::move(layers)), {}};
  p.cert.region = Box::cube(2, -1.0, 1.0);
  p.cert.order = m;
  p.cert.claimed_error = mul_claim(eps, m);
  p.cert.cubic_scaling = true;
  p.cert.c_max = 4.0;
  if (checked) {
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      double v = 0.0;
      if (k[0] == 0 && k[1] == 0) v = x[0] * x[1];
      else if (k[0] == 1 && k[1] == 0) v = x[1];
      else if (k[0] == 0 && k[1] == 1) v = x[0];
      else if (k[0] == 1 && k[1] == 1) v = 1.0;
      return std::vector<double>{v};
    }, "build_mul");
  }
  return p;
}

// ----- polynomials ---------------------------------------------------------

namespace {

int tree_levels(int degree) {
  int T = 0;
  while ((1 << T) < degree) ++T;
  return T;
}

// Bounds on the derivatives of z^k, |k| = p, over [-1, 1]^I.
Orders monomial_norm(int p, int m) {
  Orders v(static_cast<size_t>(m + 1), 0.0);
  double f = 1.0;
  for (int n = 0; n <= std::min(p, m); ++n) {
    v[static_cast<size_t>(n)] = f;
    f *= p - n;
  }
  return v;
}

}  // namespace

double monomial_error_bound(int degree, double node_eps, int m) {
  const int T = tree_levels(degree);
  const double e_node = std::max(mul_claim(node_eps, m), square_claim(node_eps, m));
  const Orders e_id = constant_orders(m + 1, identity_claim(2, node_eps, 1.5, m));
  Orders E = constant_orders(m, 0.0);
  for (int t = 1; t <= T; ++t) {
    const Orders G = monomial_norm(1 << (t - 1), m);
    const Orders via_mul = mul_error(e_node, G, E, G, E);
    const Orders via_sq = square_error(e_node, G, E);
    const Orders via_id = compose_error(e_id, identity_profile(m, 1.5), G, E);
    for (int n = 0; n <= m; ++n) {
      const auto k = static_cast<size_t>(n);
      E[k] = std::max({via_mul[k], via_sq[k], via_id[k]});
    }
  }
  return max_of(E);
}

MonomialNet build_monomials(int input_dim, int degree, double node_eps, int m) {
  if (input_dim < 1) throw ParameterError("build_monomials: input dimension must be >= 1");
  if (degree < 1) throw ParameterError("build_monomials: degree must be >= 1");
  check_order(m);
  MonomialNet out;
  out.order = m;
  std::vector<MultiIndex> cur;
  for (int i = 0; i < input_dim; ++i) cur.push_back(MultiIndex::unit(input_dim, i));
  if (degree == 1) {
    out.net = affine_network(AffineMap::identity(input_dim));
    out.monomials = cur;
    out.claimed_error = 0.0;
    return out;
  }
  const GeluNetwork mul = build_mul(node_eps, m).net;
  const GeluNetwork sq = build_square(node_eps, m).net;
  const GeluNetwork id = build_identity(2, node_eps, 1.5, m).net;
  const auto all = enumerate_multiindices(input_dim, degree);
  const int T = tree_levels(degree);
  std::vector<GeluNetwork> levels;
  for (int t = 1; t <= T; ++t) {
    const int carry_max = 1 << (t - 1);
    const int hi = std::min(1 << t, degree);
    auto pos = [&](const MultiIndex& k) {
      for (size_t i = 0; i < cur.size(); ++i)
        if (cur[i] == k) return static_cast<int>(i);
      throw ConstructionError("build_monomials: missing factor " + k.to_string());
    };
    const int width = static_cast<int>(cur.size());
    std::vector<GeluNetwork> pieces;
    std::vector<MultiIndex> next;
    for (const MultiIndex& k : all) {
      const int o = k.order();
      if (o < 1 || o > hi) continue;
      next.push_back(k);
      if (o <= carry_max) {
        pieces.push_back(affine_wrap(id, AffineMap::select(width, {pos(k)}), AffineMap::identity(1)));
        continue;
      }
      MultiIndex ka(input_dim);
      int need = carry_max;
      for (int i = 0; i < input_dim && need > 0; ++i) {
        ka[i] = std::min(k[i], need);
        need -= ka[i];
      }
      MultiIndex kb(input_dim);
      for (int i = 0; i < input_dim; ++i) kb[i] = k[i] - ka[i];
      if (ka == kb) {
        pieces.push_back(affine_wrap(sq, AffineMap::select(width, {pos(ka)}), AffineMap::identity(1)));
      } else {
        pieces.push_back(affine_wrap(mul, AffineMap::select(width, {pos(ka), pos(kb)}), AffineMap::identity(1)));
      }
    }
    levels.push_back(parallelize(pieces, ParallelMode::kSharedInput));
    cur = std::move(next);
  }
  out.net = concatenate(levels);
  out.monomials = cur;
  out.claimed_error = monomial_error_bound(degree, node_eps, m);
  return out;
}

Primitive poly_from_monomials(const MonomialNet& mono, const std::vector<PolyCoeffs>& coeffs,
                              const std::vector<double>& K) {
  const int I = mono.net.input_width();
  if (static_cast<int>(K.size()) != I) throw ParameterError("poly_from_monomials: K has wrong length");
  const int nm = static_cast<int>(mono.monomials.size());
  const int O = static_cast<int>(coeffs.size());
  AffineMap post;
  post.rows = O;
  post.cols = nm;
  post.M.assign(static_cast<size_t>(O * nm), 0.0);
  post.c.assign(static_cast<size_t>(O), 0.0);
  double sum_abs = 0.0;
  for (int o = 0; o < O; ++o) {
    double s = 0.0;
    for (const auto& [k, a] : coeffs[static_cast<size_t>(o)]) {
      if (k.size() != I) throw ParameterError("poly_from_monomials: multi-index length mismatch");
      if (k.order() == 0) {
        post.c[static_cast<size_t>(o)] += a;
        continue;
      }
      int idx = -1;
      for (int i = 0; i < nm; ++i)
        if (mono.monomials[static_cast<size_t>(i)] == k) idx = i;
      if (idx < 0) throw ParameterError("poly_from_monomials: degree exceeds the monomial network");
      double c = a;
      for (int p = 0; p < I; ++p) c *= std::pow(K[static_cast<size_t>(p)], k[p]);
      post.M[static_cast<size_t>(o * nm + idx)] += c;
      s += std::abs(c);
    }
    sum_abs = std::max(sum_abs, s);
  }
  std::vector<double> scale(static_cast<size_t>(I)), shift(static_cast<size_t>(I), 0.0);
  double kmin = 1.0;
  for (int p = 0; p < I; ++p) {
    if (!(K[static_cast<size_t>(p)] > 0.0)) throw ParameterError("poly_from_monomials: K must be positive");
    scale[static_cast<size_t>(p)] = 1.0 / K[static_cast<size_t>(p)];
    kmin = std::min(kmin, K[static_cast<size_t>(p)]);
  }
  Primitive p{affine_wrap(mono.net, AffineMap::diagonal(scale, shift), post), {}};
  p.cert.region.lo.resize(static_cast<size_t>(I));
  p.cert.region.hi.resize(static_cast<size_t>(I));
  for (int q = 0; q < I; ++q) {
    p.cert.region.lo[static_cast<size_t>(q)] = -K[static_cast<size_t>(q)];
    p.cert.region.hi[static_cast<size_t>(q)] = K[static_cast<size_t>(q)];
  }
  p.cert.order = mono.order;
  p.cert.claimed_error = std::max(sum_abs * mono.claimed_error * std::pow(1.0 / kmin, mono.order),
                                  std::numeric_limits<double>::min());
  return p;
}

Primitive build_poly_multi(const std::vector<PolyCoeffs>& coeffs, int input_dim, int degree, double eps,
                           int m, const std::vector<double>& K) {
  check_eps(eps, "build_poly");
  check_order(m);
  if (input_dim < 1) throw ParameterError("build_poly: input dimension must be >= 1");
  if (degree < 0) throw ParameterError("build_poly: negative degree");
  if (static_cast<int>(K.size()) != input_dim) throw ParameterError("build_poly: K has wrong length");
  for (double k : K)
    if (!(k > 0.0)) throw ParameterError("build_poly: K must be positive");
  int top = 0;
  double sum_abs = 0.0;
  double kmin = 1.0;
  for (double k : K) kmin = std::min(kmin, k);
  for (const auto& c : coeffs) {
    double s = 0.0;
    for (const auto& [k, a] : c) {
      if (k.size() != input_dim) throw ParameterError("build_poly: multi-index length mismatch");
      if (k.order() > degree) throw ParameterError("build_poly: coefficient above the declared degree");
      if (a != 0.0) top = std::max(top, k.order());
      if (k.order() == 0) continue;
      double v = std::abs(a);
      for (int p = 0; p < input_dim; ++p) v *= std::pow(K[static_cast<size_t>(p)], k[p]);
      s += v;
    }
    sum_abs = std::max(sum_abs, s);
  }
  Primitive p;
  if (top <= 1) {
    // Affine polynomials are exact.
    AffineMap a;
    a.rows = static_cast<int>(coeffs.size());
    a.cols = input_dim;
    a.M.assign(static_cast<size_t>(a.rows * a.cols), 0.0);
    a.c.assign(static_cast<size_t>(a.rows), 0.0);
    for (int o = 0; o < a.rows; ++o)
      for (const auto& [k, v] : coeffs[static_cast<size_t>(o)]) {
        if (k.order() == 0) a.c[static_cast<size_t>(o)] += v;
        else if (k.order() == 1)
          for (int q = 0; q < input_dim; ++q)
            if (k[q] == 1) a.M[static_cast<size_t>(o * input_dim + q)] += v;
      }
    p.net = affine_network(a);
    p.cert.region.lo.resize(static_cast<size_t>(input_dim));
    p.cert.region.hi.resize(static_cast<size_t>(input_dim));
    for (int q = 0; q < input_dim; ++q) {
      p.cert.region.lo[static_cast<size_t>(q)] = -K[static_cast<size_t>(q)];
      p.cert.region.hi[static_cast<size_t>(q)] = K[static_cast<size_t>(q)];
    }
    p.cert.order = m;
    p.cert.claimed_error = std::max(eps * 1e-3, 4.0 * kUnitRoundoff * (1.0 + sum_abs));
    return p;
  }
  const double amp = std::max(sum_abs, 1e-300) * std::pow(1.0 / kmin, m);
  const double node = solve_tolerance([&](double t) { return amp * monomial_error_bound(top, t, m); }, eps);
  MonomialNet mono = build_monomials(input_dim, top, node, m);
  return poly_from_monomials(mono, coeffs, K);
}

Primitive build_poly(const PolyCoeffs& coeffs, int input_dim, int degree, double eps, int m, double K,
                     bool checked) {
  for (const auto& [k, a] : coeffs)
    if (std::abs(a) > 1.0) throw ParameterError("build_poly: coefficient magnitude > 1 (rescale first)");
  if (K < 1.0) throw ParameterError("build_poly: K must be >= 1");
  Primitive p = build_poly_multi({coeffs}, input_dim, degree, eps, m, std::vector<double>(static_cast<size_t>(input_dim), K));
  if (checked) {
    verify(p, [&](std::span<const double> x, const MultiIndex& k) {
      double v = 0.0;
      for (const auto& [mono, a] : coeffs) v += a * monomial_derivative(x, mono, k)[0];
      return std::vector<double>{v};
    }, "build_poly");
  }
  return p;
}

// ----- exponential -------------------------------------------------------

namespace {

struct ExpPlan {
  double eps_int = 0.0;
  double lambda = 0.0;
  double x_max = 0.0;
  int q = 0;
  double w_c = 0.0;
  double h = 0.0;
  int degree = 0;
  double taylor_err = 0.0;
  double claim = 0.0;
};

ExpPlan plan_exp(double eps, int m, double A, double eps_int) {
  ExpPlan pl;
  pl.eps_int = eps_int;
  pl.lambda = clip_lambda(eps_int, m);
  pl.x_max = std::log(4.0 / eps) + m * std::log(2.0 * (1.0 + pl.lambda));
  pl.q = static_cast<int>(std::ceil(std::log2(1.0 + pl.x_max)));
  const double scale = std::ldexp(1.0, pl.q);
  const double w_lo = (-A - 0.51) / scale, w_hi = (pl.x_max + 0.51) / scale;
  pl.w_c = 0.5 * (w_lo + w_hi);
  pl.h = 0.5 * (w_hi - w_lo);
  // Remainder of the Taylor polynomial of e^{-w} in W^{m,inf}.
  const double front = std::exp(-pl.w_c + pl.h);
  pl.degree = std::max(2, m + 1);
  auto rem = [&](int r) {
    double worst = 0.0;
    for (int j = 0; j <= m; ++j)
      worst = std::max(worst, front * std::pow(pl.h, r + 1 - j) / factorial(r + 1 - j));
    return worst;
  };
  while (rem(pl.degree) > eps_int && pl.degree < 40) ++pl.degree;
  pl.taylor_err = rem(pl.degree);

  // Propagate: clip, polynomial, q squarings.
  const double zs = 1.0 / (scale * pl.h);
  const Orders e_clip = constant_orders(m, clip_claim(0.5 * (pl.x_max + A), eps_int));
  Orders Gz = constant_orders(m, 0.0);
  Gz[0] = 1.0;
  if (m >= 1) Gz[1] = zs;
  const Orders Ez = scaled(e_clip, zs);
  double sum_abs = 0.0;
  for (int n = 1; n <= pl.degree; ++n) sum_abs += std::exp(-pl.w_c) * std::pow(pl.h, n) / factorial(n);
  const double e_poly = std::max(eps_int * 1e-3, sum_abs * monomial_error_bound(pl.degree, eps_int, m)) + pl.taylor_err;
  Orders Fp(static_cast<size_t>(m + 2));
  for (int k = 0; k <= m + 1; ++k) Fp[static_cast<size_t>(k)] = front * std::pow(pl.h, k);
  Orders E = compose_error(constant_orders(m + 1, e_poly), Fp, Gz, Ez);
  // Exact factor u_i = e^{-x / 2^{q-i}} on [-A, inf).
  auto u_norm = [&](int i) {
    const double r = std::ldexp(1.0, i - pl.q);
    return rescaled(constant_orders(m, std::exp(A * r)), r);
  };
  for (int i = 0; i < pl.q; ++i) {
    E = square_error(square_claim(eps_int, m), u_norm(i), E);
  }
  pl.claim = max_of(E);
  return pl;
}

}  // namespace

Primitive build_exp_neg(double eps, int m, double A, bool checked) {
  check_eps(eps, "build_exp_neg");
  check_order(m);
  if (!(A >= 0.0 && A <= 1.0)) throw ParameterError("build_exp_neg: A must lie in [0, 1]");
  const double eps_int = solve_tolerance([&](double t) { return plan_exp(eps, m, A, t).claim; }, eps);
  const ExpPlan pl = plan_exp(eps, m, A, eps_int);
  const double scale = std::ldexp(1.0, pl.q);

  // Asymmetric clip: identity on [-A, x_max], plateau x_max + 1/2 on the right.
  const double half = 0.5 * (pl.x_max + A), center = 0.5 * (pl.x_max - A);
  GeluNetwork clip = affine_wrap(build_clip(half, eps_int, m).net, AffineMap::diagonal({1.0}, {-center}),
                                 AffineMap::diagonal({1.0}, {center}));
  // e^{-w}, w = w_c + h z, as a polynomial in z in [-1, 1].
  PolyCoeffs coeffs;
  for (int n = 0; n <= pl.degree; ++n)
    coeffs.push_back({MultiIndex{n}, std::exp(-pl.w_c) * std::pow(-pl.h, n) / factorial(n)});
  Primitive poly = build_poly(coeffs, 1, pl.degree, eps_int, m, 1.0);
  // z = (x_c / 2^q - w_c) / h
  GeluNetwork head = concatenate(affine_wrap(clip, AffineMap::identity(1),
                                             AffineMap::diagonal({1.0 / (scale * pl.h)}, {-pl.w_c / pl.h})),
                                 poly.net);
  std::vector<GeluNetwork> chain{head};
  const GeluNetwork sq = build_square(eps_int, m).net;
  for (int i = 0; i < pl.q; ++i) chain.push_back(sq);
  Primitive p{concatenate(chain), {}};
  p.cert.region = Box::cube(1, -A, pl.x_max);
  p.cert.order = m;
  p.cert.claimed_error = std::max(eps, pl.claim);
  if (checked) {
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      return std::vector<double>{(k[0] % 2 ? -1.0 : 1.0) * std::exp(-x[0])};
    }, "build_exp_neg");
  }
  return p;
}

// ----- partition of unity --------------------------------------------------

namespace {

// Step S_i(x) = R((x - a_i)/a_i): zero for v <= -1/2, one for v >= 1.
constexpr double kStepCenter = 0.25;
constexpr double kStepHalfWidth = 0.35;
constexpr double kStepMargin = 0.4;

double pou_lambda(int N, double eps, int m) {
  // 4 tails * lambda^{n-1} a_1^{-n} / (2 delta) <= eps for n <= m.
  const double inv_a1 = std::ldexp(1.0, N - 1);
  return fixed_point(
      [&](double l) {
        double need = 0.0;
        for (int n = 0; n <= m; ++n)
          need = std::max(need, 8.0 * std::sqrt(factorial(n)) * std::pow(l, n - 1) * std::pow(inv_a1, n) /
                                    (2.0 * kStepHalfWidth));
        return std::max(4.0, 2.0 / kStepMargin * std::sqrt(std::log(std::max(need / eps, 1.0001))));
      },
      10.0);
}

// Sup of |psi_i^{(n)}| over R, n <= m, for knot a.
// Derivative bounds of psi_i over R for knot a = a_i; the left step sits at a / 2.
Orders pou_norm(double lambda, double a, int m) {
  Orders v(static_cast<size_t>(m + 1), 1.0);
  for (int n = 1; n <= m; ++n)
    v[static_cast<size_t>(n)] = 2.0 * gelu_derivative_sup(n) * std::pow(lambda, n - 1) / (2.0 * kStepHalfWidth) *
                                (std::pow(2.0 / a, n) + std::pow(1.0 / a, n));
  return v;
}

void add_step(int i, int N, double lambda, double sign, std::vector<Triplet>& hid, std::vector<double>& hb,
              std::vector<Triplet>& out) {
  const double a = std::ldexp(1.0, i - N);
  const double w = lambda / a;
  const double off = lambda * (1.0 + kStepCenter);
  const int r = static_cast<int>(hb.size());
  hid.push_back({r, 0, w});
  hb.push_back(off - lambda * kStepHalfWidth);
  hid.push_back({r + 1, 0, w});
  hb.push_back(off + lambda * kStepHalfWidth);
  const double c = sign / (2.0 * lambda * kStepHalfWidth);
  out.push_back({0, r, c});
  out.push_back({0, r + 1, -c});
}

}  // namespace

PartitionOfUnity build_partition_of_unity(int N, double eps, int m, bool checked) {
  check_eps(eps, "build_partition_of_unity");
  check_order(m);
  if (N < 3) throw ParameterError("build_partition_of_unity: N must be >= 3");
  if (N > 60) throw ParameterError("build_partition_of_unity: N too large for double knots");
  const double lambda = pou_lambda(N, eps, m);
  PartitionOfUnity pu;
  for (int i = 0; i <= N; ++i) pu.knots.push_back(std::ldexp(1.0, i - N));
  for (int i = 1; i <= N; ++i) {
    std::vector<Triplet> hid, out;
    std::vector<double> hb;
    double bias = 0.0;
    // psi_i = S_{i-1} - S_i with S_0 = 1 and S_N = 0.
    if (i - 1 >= 1) add_step(i - 1, N, lambda, 1.0, hid, hb, out);
    else bias = -1.0;
    if (i <= N - 1) add_step(i, N, lambda, -1.0, hid, hb, out);
    const int w = static_cast<int>(hb.size());
    std::vector<Layer> layers;
    layers.emplace_back(w, 1, std::move(hid), std::move(hb));
    layers.emplace_back(1, w, std::move(out), std::vector<double>{bias});
    pu.nets.emplace_back(1, std::move(layers));
  }
  pu.cert.region = Box::cube(1, 0.0, 1.0);
  pu.cert.order = m;
  pu.cert.claimed_error = std::max(eps, 40.0 * kUnitRoundoff * std::ldexp(1.0, N - 1) / (2.0 * kStepHalfWidth));
  if (checked) {
    for (int s = 0; s <= 1000; ++s) {
      const double x[1] = {s / 1000.0};
      double sum = 0.0;
      for (const auto& net : pu.nets) sum += net.evaluate(x)[0];
      if (std::abs(sum - 1.0) > 1e-12) throw ConstructionError("build_partition_of_unity: sum deviates from 1");
    }
    for (int i = 1; i <= N; ++i) {
      const double lo = i >= 2 ? pu.knots[static_cast<size_t>(i - 2)] : -1.0;
      const double hi = i + 1 <= N ? pu.knots[static_cast<size_t>(i + 1)] : 2.0;
      Primitive tmp{pu.nets[static_cast<size_t>(i - 1)], pu.cert};
      tmp.cert.region = Box::cube(1, 0.0, 1.0);
      auto zero = [](std::span<const double>, const MultiIndex&) { return std::vector<double>{0.0}; };
      verify(tmp, zero, "build_partition_of_unity", [&](std::span<const double> x) {
        return (i >= 2 && x[0] <= lo) || (i + 1 <= N && x[0] >= hi);
      });
    }
  }
  return pu;
}

// ----- division ------------------------------------------------------------

namespace {

// 1/t = (1/c) sum_j e^j with e = 1 - t/c, as prod_{i<k} (1 + e^{2^i}).
constexpr double kTLo = 0.24;    // identity region of the t-clip
constexpr double kTHi = 2.01;
constexpr double kTSlope = 0.08;  // plateaus at kTLo - kTSlope/2, kTHi + kTSlope/2
constexpr int kGeomLevels = 8;

struct DivPlan {
  double eps_int = 0.0;
  double pou_lambda = 0.0;
  double claim = 0.0;
};

double t_plateau_lo() { return kTLo - 0.5 * kTSlope; }
double t_plateau_hi() { return kTHi + 0.5 * kTSlope; }
double t_center() { return 0.5 * (t_plateau_lo() + t_plateau_hi()); }
double e_max() { return (t_plateau_hi() - t_center()) / t_center(); }

double falling(int p, int n) {
  if (n > p) return 0.0;
  double f = 1.0;
  for (int i = 0; i < n; ++i) f *= p - i;
  return f;
}

// Derivative bounds of e^p, e = 1 - t / c, |e| <= q.
Orders geom_power_norm(int p, int m) {
  const double c = t_center(), q = e_max();
  Orders v(static_cast<size_t>(m + 1));
  for (int n = 0; n <= m; ++n) v[static_cast<size_t>(n)] = falling(p, n) * std::pow(q, std::max(0, p - n)) / std::pow(c, n);
  return v;
}

// Derivative bounds of sum_{lo <= j < hi} e^j.
Orders geom_sum_norm(int lo, int hi, int m) {
  Orders v = constant_orders(m, 0.0);
  for (int j = lo; j < hi; ++j) v = v + geom_power_norm(j, m);
  return v;
}

// Derivative bounds of 1/t for t >= t_min.
Orders reciprocal_norm(double t_min, int m) {
  Orders v(static_cast<size_t>(m + 2));
  for (int n = 0; n <= m + 1; ++n) v[static_cast<size_t>(n)] = factorial(n) / std::pow(t_min, n + 1);
  return v;
}

// Error of the reciprocal chain against 1/t on the t-clip plateau range,
// as a function of its input t.
Orders reciprocal_error(double eps_int, int m) {
  const double c = t_center(), q = e_max();
  const double fs = 1.0 / (1.0 - q) * 1.05;
  const double e_sq = square_claim(eps_int, m), e_mul = mul_claim(eps_int, m);
  Orders Ge = geom_power_norm(1, m);
  Orders Ee = constant_orders(m, 0.0);
  Orders Ef = compose_error(constant_orders(m + 1, identity_claim(2, eps_int, 1.5, m)), identity_profile(m, 1.5), Ge, Ee);
  Ee = square_error(e_sq, Ge, Ee);
  for (int i = 1; i < kGeomLevels; ++i) {
    Ge = geom_power_norm(1 << i, m);
    const Orders Gf = geom_sum_norm(0, 1 << i, m);
    Orders Gb = scaled(Ge, 0.5);
    Gb[0] += 0.5;
    const Orders Ga = scaled(Gf, 1.0 / fs), Ea = scaled(Ef, 1.0 / fs), Eb = scaled(Ee, 0.5);
    Ef = scaled(mul_error(e_mul, Ga, Ea, Gb, Eb), 2.0 * fs);
    if (i + 1 < kGeomLevels) Ee = square_error(e_sq, Ge, Ee);
  }
  const int terms = 1 << kGeomLevels;
  return scaled(Ef + geom_sum_norm(terms, terms + 4000, m), 1.0 / c);
}

// Derivative bounds of the clip construction over R.
Orders clip_whole_line(double A, double eps_int, int m) {
  const double lambda = clip_lambda(eps_int, m);
  Orders v(static_cast<size_t>(m + 1));
  v[0] = A + 2.5;
  for (int n = 1; n <= m; ++n) v[static_cast<size_t>(n)] = 2.0 * gelu_derivative_sup(n) * std::pow(lambda, n - 1);
  return v;
}

}  // namespace

Primitive build_div(int N, double eps, int m, const DivOptions& opts) {
  check_eps(eps, "build_div");
  check_order(m);
  if (N < 3) throw ParameterError("build_div: N must be >= 3");
  if (opts.cone < 0.0) throw ParameterError("build_div: cone must be >= 0");
  const double a0 = std::ldexp(1.0, -N);
  const double c = t_center();
  const double q = e_max();
  const double fs = 1.0 / (1.0 - q) * 1.05;
  const double gs = fs / c;  // bound on the reciprocal branch
  auto x_clip_level = [&](double a) {
    return opts.cone > 0.0 ? std::max(1.0, 2.0 * opts.cone * 1.02) : std::max(1.0, 1.0 / a);
  };

  const double x_hi = opts.cone > 0.0 ? opts.cone : 1.0;
  // Derivative bounds of x / y on the certified region.
  Orders target_norm(static_cast<size_t>(m + 1));
  for (int n = 0; n <= m; ++n)
    target_norm[static_cast<size_t>(n)] = factorial(n) * std::max(1.0, opts.cone > 0.0 ? x_hi / std::pow(a0, n)
                                                                                      : x_hi / std::pow(a0, n + 1));

  // Per scale, on the support of psi_i the error is that of psi_i * tau_i;
  // off the support psi_i is small and tau_i stays bounded.
  auto claim_of = [&](double t) {
    const double lam = pou_lambda(N, t, m);
    const Orders e_pou = constant_orders(m, std::max(t, 40.0 * kUnitRoundoff * std::ldexp(1.0, N - 1) / (2.0 * kStepHalfWidth)));
    const double e_mul = mul_claim(t, m);
    const Orders e_clip = constant_orders(m, clip_claim(1.0, t));
    const Orders recip_err = reciprocal_error(t, m);
    // t-clip error in t units, then through the reciprocal chain.
    const double half = 0.5 * (kTHi - kTLo) / kTSlope;
    const Orders e_tc = rescaled(scaled(constant_orders(m, clip_claim(half, t)), kTSlope), 1.0 / kTSlope);
    Orders t_id = constant_orders(m, 0.0);
    t_id[0] = t_plateau_hi();
    if (m >= 1) t_id[1] = 1.0;
    const Orders g_t = compose_error(recip_err, reciprocal_norm(t_plateau_lo(), m), t_id, e_tc);
    // Whole-line bounds of the reciprocal branch.
    Orders tc_whole = rescaled(scaled(clip_whole_line(half, t, m), kTSlope), 1.0 / kTSlope);
    tc_whole[0] = t_plateau_hi() + kTSlope;
    const Orders g_whole_t = compose_norm(reciprocal_norm(t_plateau_lo() - 0.01, m), tc_whole);
    Orders total = constant_orders(m, 0.0);
    for (int i = 1; i <= N; ++i) {
      const double a = std::ldexp(1.0, i - N);
      const double AX = x_clip_level(a);
      const double Xs = AX + 0.6;
      const double Ts = Xs * gs;
      // X branch, normalized by Xs, then padded.
      Orders GX = constant_orders(m, 0.0);
      GX[0] = AX / Xs;
      if (m >= 1) GX[1] = 1.0 / (a * Xs);
      Orders EX = scaled(rescaled(e_clip, 1.0 / a), 1.0 / Xs);
      EX = compose_error(constant_orders(m + 1, identity_claim(kGeomLevels + 1, t, 1.05, m)), identity_profile(m, 1.05), GX, EX);
      // Reciprocal branch in y, normalized by gs.
      const Orders GG = scaled(rescaled(reciprocal_norm(0.25, m), 1.0 / a), 1.0 / gs);
      const Orders EG = scaled(rescaled(g_t, 1.0 / a), 1.0 / gs);
      const Orders Etau = mul_error(e_mul, GX, EX, GG, EG);
      const Orders Gtau(product_norm(GX, GG));
      const Orders Npsi = pou_norm(lam, a, m);
      const Orders on = scaled(mul_error(e_mul, Npsi, constant_orders(m, 0.0), Gtau, Etau), Ts);
      // Off the support.
      Orders Xw = scaled(rescaled(clip_whole_line(AX, t, m), 1.0 / a), 1.0 / Xs);
      const Orders Gw = scaled(rescaled(g_whole_t, 1.0 / a), 1.0 / gs);
      const Orders tau_w = product_norm(Xw, Gw);
      const Orders zero = constant_orders(m, 0.0);
      const Orders node = mul_error(e_mul, Npsi, zero, tau_w, zero);
      const Orders off = scaled(node, Ts) + product_norm(e_pou, scaled(tau_w, Ts) + target_norm);
      for (int n = 0; n <= m; ++n) total[static_cast<size_t>(n)] += std::max(on[static_cast<size_t>(n)], off[static_cast<size_t>(n)]);
    }
    return max_of(total);
  };
  const double eps_int = solve_tolerance(claim_of, eps);
  const PartitionOfUnity pou = build_partition_of_unity(N, eps_int, m);

  // Reciprocal branch on the t-clip output: input t_c, output G/gs.
  GeluNetwork recip;
  {
    const GeluNetwork sq = build_square(eps_int, m).net;
    const GeluNetwork mul = build_mul(eps_int, m).net;
    const GeluNetwork id = build_identity(2, eps_int, 1.5, m).net;
    // state (e_i, f_i / fs); level 0 maps e_0 to (e_1, (1 + e_0)/fs).
    std::vector<GeluNetwork> levels;
    {
      GeluNetwork e1 = sq;
      GeluNetwork f1 = affine_wrap(id, AffineMap::identity(1), AffineMap::diagonal({1.0 / fs}, {1.0 / fs}));
      levels.push_back(parallelize({e1, f1}, ParallelMode::kSharedInput));
    }
    for (int i = 1; i < kGeomLevels; ++i) {
      // f_{i+1}/fs = 2 * mul(f_i/fs, (1 + e_i)/2)
      AffineMap pre;
      pre.rows = 2;
      pre.cols = 2;
      pre.M = {0.0, 1.0, 0.5, 0.0};
      pre.c = {0.0, 0.5};
      GeluNetwork f = affine_wrap(mul, pre, AffineMap::diagonal({2.0}, {0.0}));
      if (i + 1 < kGeomLevels) {
        GeluNetwork e = affine_wrap(sq, AffineMap::select(2, {0}), AffineMap::identity(1));
        levels.push_back(parallelize({e, f}, ParallelMode::kSharedInput));
      } else {
        levels.push_back(f);
      }
    }
    // e_0 = 1 - t_c / c
    GeluNetwork head = concatenate(levels);
    recip = affine_wrap(head, AffineMap::diagonal({-1.0 / c}, {1.0}), AffineMap::diagonal({fs / c / gs}, {0.0}));
  }

  const GeluNetwork mul = build_mul(eps_int, m).net;
  std::vector<GeluNetwork> scales;
  for (int i = 1; i <= N; ++i) {
    const double a = pou.knots[static_cast<size_t>(i)];
    const double AX = x_clip_level(a);
    const double Xs = AX + 0.6;
    // X branch: clip(x / a) / Xs
    GeluNetwork xb = affine_wrap(build_clip(AX, eps_int, m).net, AffineMap::select(2, {0}, 1.0 / a),
                                 AffineMap::diagonal({1.0 / Xs}, {0.0}));
    // t branch: asymmetric clip of t = y / a, then the reciprocal chain.
    const double half = 0.5 * (kTHi - kTLo) / kTSlope, mid = 0.5 * (kTHi + kTLo);
    AffineMap tin = AffineMap::select(2, {1}, 1.0 / (a * kTSlope));
    tin.c[0] = -mid / kTSlope;
    GeluNetwork tclip = affine_wrap(build_clip(half, eps_int, m).net, tin, AffineMap::diagonal({kTSlope}, {mid}));
    GeluNetwork gb = concatenate(tclip, recip);
    const int Lg = std::max(xb.depth(), gb.depth());
    xb = pad_depth(xb, Lg, eps_int, 1.05, m);
    gb = pad_depth(gb, Lg, eps_int, 1.05, m);
    GeluNetwork tau = concatenate(parallelize({xb, gb}, ParallelMode::kSharedInput), mul);  // x / (y Xs gs)
    GeluNetwork psi = affine_wrap(pou.nets[static_cast<size_t>(i - 1)], AffineMap::select(2, {1}), AffineMap::identity(1));
    psi = pad_depth(psi, tau.depth(), eps_int, 1.05, m);
    GeluNetwork term = concatenate(parallelize({psi, tau}, ParallelMode::kSharedInput), mul);
    scales.push_back(affine_wrap(term, AffineMap::identity(2), AffineMap::diagonal({Xs * gs}, {0.0})));
  }
  Primitive p{sum_parallel(scales, ParallelMode::kSharedInput), {}};
  p.cert.region.lo = {-1.0, a0};
  p.cert.region.hi = {1.0, 1.0};
  p.cert.order = m;
  p.cert.cone = opts.cone;
  p.cert.claimed_error = std::max(eps, claim_of(eps_int));
  if (opts.checked) {
    const double cone = opts.cone;
    verify(p, [](std::span<const double> x, const MultiIndex& k) {
      // d_x^a d_y^b (x / y)
      const int ax = k[0], by = k[1];
      if (ax >= 2) return std::vector<double>{0.0};
      const double dy = (by % 2 ? -1.0 : 1.0) * factorial(by) / std::pow(x[1], by + 1);
      return std::vector<double>{ax == 1 ? dy : x[0] * dy};
    }, "build_div", [cone](std::span<const double> x) { return cone <= 0.0 || std::abs(x[0]) <= cone * x[1]; });
  }
  return p;
}

// ---------------------------------------------------------------------------

SobolevErrorTable measure_sobolev_error(const GeluNetwork& net, const DerivOracle& reference, const Box& region,
                                        int m, int grid, const std::function<bool(std::span<const double>)>& keep) {
  check_order(m);
  if (grid < 16) throw ParameterError("measure_sobolev_error: grid must have >= 16 points per axis");
  const int dim = region.dim();
  if (dim != net.input_width()) throw ParameterError("measure_sobolev_error: region dimension mismatch");
  auto space = JetSpace::get(dim, m);
  const auto& idx = space->indices();
  SobolevErrorTable table;
  table.per_order.assign(static_cast<size_t>(m + 1), 0.0);
  std::vector<int> counter(static_cast<size_t>(dim), 0);
  std::vector<double> x(static_cast<size_t>(dim));
  const int M = space->size();
  while (true) {
    for (int i = 0; i < dim; ++i)
      x[static_cast<size_t>(i)] = region.lo[static_cast<size_t>(i)] +
          (region.hi[static_cast<size_t>(i)] - region.lo[static_cast<size_t>(i)]) * counter[static_cast<size_t>(i)] / (grid - 1);
    if (!keep || keep(x)) {
      const std::vector<double> jets = net.taylor(x, m);
      for (int j = 0; j < M; ++j) {
        const MultiIndex& k = idx[static_cast<size_t>(j)];
        const std::vector<double> ref = reference(x, k);
        const double kf = k.factorial();
        for (int o = 0; o < net.output_width(); ++o) {
          const double got = jets[static_cast<size_t>(o * M + j)] * kf;
          const double err = std::abs(got - ref[static_cast<size_t>(o)]);
          double& slot = table.per_order[static_cast<size_t>(k.order())];
          slot = std::max(slot, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
        }
      }
    }
    int d = 0;
    while (d < dim && ++counter[static_cast<size_t>(d)] == grid) counter[static_cast<size_t>(d++)] = 0;
    if (d == dim) break;
  }
  return table;
}

}  // namespace gelunet
