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

#include "gelunet/constructor.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "gelunet/errors.h"
#include "gelunet/primitives.h"
#include "json.hpp"

namespace gelunet {

namespace {

double falling(int p, int n) {
  if (n > p) return 0.0;
  double f = 1.0;
  for (int i = 0; i < n; ++i) f *= p - i;
  return f;
}

long long ipow(int b, int e) {
  long long r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// Tensor Gauss-Legendre nodes on a box.
void box_rule(const std::vector<double>& lo, const std::vector<double>& hi, int order, std::vector<double>& nodes,
              std::vector<double>& weights) {
  const int d = static_cast<int>(lo.size());
  std::vector<double> gx, gw;
  gauss_legendre(order, gx, gw);
  const long long total = ipow(order, d);
  nodes.assign(static_cast<size_t>(total * d), 0.0);
  weights.assign(static_cast<size_t>(total), 1.0);
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d; ++i) {
      const auto q = static_cast<size_t>(rem % order);
      rem /= order;
      const double half = 0.5 * (hi[static_cast<size_t>(i)] - lo[static_cast<size_t>(i)]);
      nodes[static_cast<size_t>(p * d + i)] = lo[static_cast<size_t>(i)] + half * (gx[q] + 1.0);
      weights[static_cast<size_t>(p)] *= half * gw[q];
    }
  }
}

}  // namespace

// ----- local polynomial decomposition ---------------------------------------

LocalPolyDecomposition::LocalPolyDecomposition(const SmoothMapSpec& map, double eps)
    : d_(map.d()), D_(map.D()), degree_(map.taylor_degree()) {
  if (!(eps > 0.0 && eps < 1.0)) throw ParameterError("local_poly_decompose: eps must lie in (0, 1)");
  N_ = static_cast<int>(std::ceil(1.0 / eps - 1e-12));
  ks_ = enumerate_multiindices(d_, degree_);
  const long long C = ipow(N_, d_);
  if (C > 10'000'000) throw ParameterError("local_poly_decompose: too many cells");
  anchors_.resize(static_cast<size_t>(C));
  coef_.resize(static_cast<size_t>(C));
  for (long long c = 0; c < C; ++c) {
    const auto j = cell_index(static_cast<int>(c));
    auto& a = anchors_[static_cast<size_t>(c)];
    a.resize(static_cast<size_t>(d_));
    for (int i = 0; i < d_; ++i) a[static_cast<size_t>(i)] = static_cast<double>(j[static_cast<size_t>(i)]) / N_;
    auto& cf = coef_[static_cast<size_t>(c)];
    cf.assign(ks_.size() * static_cast<size_t>(D_), 0.0);
    for (size_t ki = 0; ki < ks_.size(); ++ki) {
      const auto dk = map.derivative(a, ks_[ki]);
      const double kf = ks_[ki].factorial();
      for (int l = 0; l < D_; ++l) cf[ki * static_cast<size_t>(D_) + static_cast<size_t>(l)] = dk[static_cast<size_t>(l)] / kf;
    }
  }
  const int G = d_ == 1 ? 2048 : d_ == 2 ? 192 : d_ == 3 ? 32 : 8;
  const long long total = ipow(G, d_);
  std::vector<double> u(static_cast<size_t>(d_));
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d_; ++i) {
      u[static_cast<size_t>(i)] = static_cast<double>(rem % G) / (G - 1);
      rem /= G;
    }
    const auto gc = evaluate(u);
    const auto g = map.evaluate(u);
    double s = 0.0;
    for (int l = 0; l < D_; ++l) {
      s += (gc[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]) * (gc[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]);
      sup_abs_ = std::max(sup_abs_, std::abs(gc[static_cast<size_t>(l)]));
    }
    sup_error_ = std::max(sup_error_, std::sqrt(s));
  }
}

LocalPolyDecomposition local_poly_decompose(const SmoothMapSpec& map, double eps) {
  return LocalPolyDecomposition(map, eps);
}

std::vector<int> LocalPolyDecomposition::cell_index(int cell) const {
  std::vector<int> j(static_cast<size_t>(d_));
  for (int i = 0; i < d_; ++i) {
    j[static_cast<size_t>(i)] = cell % N_ + 1;
    cell /= N_;
  }
  return j;
}

std::vector<double> LocalPolyDecomposition::cell_lo(int cell) const {
  auto j = cell_index(cell);
  std::vector<double> lo(static_cast<size_t>(d_));
  for (int i = 0; i < d_; ++i) lo[static_cast<size_t>(i)] = (j[static_cast<size_t>(i)] - 1.0) / N_;
  return lo;
}

std::vector<double> LocalPolyDecomposition::cell_hi(int cell) const { return anchor(cell); }

int LocalPolyDecomposition::locate(std::span<const double> u) const {
  if (static_cast<int>(u.size()) != d_) throw ParameterError("g_circ: input length != d");
  int cell = 0, stride = 1;
  for (int i = 0; i < d_; ++i) {
    const int j = std::clamp(static_cast<int>(std::ceil(u[static_cast<size_t>(i)] * N_)), 1, N_);
    cell += (j - 1) * stride;
    stride *= N_;
  }
  return cell;
}

std::vector<double> LocalPolyDecomposition::evaluate_cell(int cell, std::span<const double> u) const {
  std::vector<double> out(static_cast<size_t>(D_), 0.0);
  const auto& a = anchors_[static_cast<size_t>(cell)];
  const auto& cf = coef_[static_cast<size_t>(cell)];
  std::vector<double> du(static_cast<size_t>(d_));
  for (int i = 0; i < d_; ++i) du[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] - a[static_cast<size_t>(i)];
  for (size_t ki = 0; ki < ks_.size(); ++ki) {
    const double mono = monomial_eval(du, ks_[ki]);
    for (int l = 0; l < D_; ++l) out[static_cast<size_t>(l)] += cf[ki * static_cast<size_t>(D_) + static_cast<size_t>(l)] * mono;
  }
  return out;
}

std::vector<double> LocalPolyDecomposition::derivative_cell(int cell, std::span<const double> u,
                                                            const MultiIndex& k) const {
  if (k.size() != d_) throw ParameterError("g_circ: multi-index length != d");
  std::vector<double> out(static_cast<size_t>(D_), 0.0);
  const auto& a = anchors_[static_cast<size_t>(cell)];
  const auto& cf = coef_[static_cast<size_t>(cell)];
  for (size_t ki = 0; ki < ks_.size(); ++ki) {
    double v = 1.0;
    for (int i = 0; i < d_ && v != 0.0; ++i) {
      const int p = ks_[ki][i];
      v *= falling(p, k[i]);
      if (p > k[i]) v *= std::pow(u[static_cast<size_t>(i)] - a[static_cast<size_t>(i)], p - k[i]);
    }
    if (v == 0.0) continue;
    for (int l = 0; l < D_; ++l) out[static_cast<size_t>(l)] += cf[ki * static_cast<size_t>(D_) + static_cast<size_t>(l)] * v;
  }
  return out;
}

std::vector<double> LocalPolyDecomposition::evaluate(std::span<const double> u) const {
  return evaluate_cell(locate(u), u);
}

GaussianRatioOracle make_f_circ_oracle(const LocalPolyDecomposition& decomp, double sigma, int order, int refine) {
  const QuadratureRule rule = QuadratureRule::make(decomp.d(), decomp.N() * refine, order);
  const int d = decomp.d(), D = decomp.D();
  std::vector<double> pts(static_cast<size_t>(rule.size()) * static_cast<size_t>(D));
  for (int q = 0; q < rule.size(); ++q) {
    const std::span<const double> u(rule.nodes.data() + static_cast<size_t>(q) * static_cast<size_t>(d),
                                    static_cast<size_t>(d));
    const auto g = decomp.evaluate(u);
    std::copy(g.begin(), g.end(), pts.begin() + static_cast<std::ptrdiff_t>(q) * D);
  }
  return GaussianRatioOracle(D, sigma, std::move(pts), rule.weights);
}

std::vector<double> f_circ_oracle(const LocalPolyDecomposition& decomp, double sigma, std::span<const double> y,
                                  int order) {
  return make_f_circ_oracle(decomp, sigma, order).f(y);
}

// ----- parameters -----------------------------------------------------------

namespace {

double sup_abs_image_plus(const SmoothMapSpec& map, double R) {
  const int d = map.d();
  const int G = d == 1 ? 1024 : d == 2 ? 128 : 16;
  const long long total = ipow(G, d);
  std::vector<double> u(static_cast<size_t>(d));
  double s = 0.0;
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d; ++i) {
      u[static_cast<size_t>(i)] = static_cast<double>(rem % G) / (G - 1);
      rem /= G;
    }
    for (double v : map.evaluate(u)) s = std::max(s, std::abs(v));
  }
  return s + R;
}

void fill_model(ConstructionParams& p, const ScoreModel& model, double eps, int m) {
  p.eps = eps;
  p.m = m;
  p.sigma = model.sigma;
  p.d = model.map.d();
  p.D = model.map.D();
  p.beta = model.map.beta();
  p.H = model.map.H();
}

}  // namespace

int ConstructionParams::taylor_degree() const {
  const double f = std::floor(beta);
  return static_cast<int>(f == beta ? f - 1.0 : f);
}

int ConstructionParams::P() const { return static_cast<int>(std::lround(binomial(d + taylor_degree(), d))); }

double ConstructionParams::eps0() const { return std::exp(-log_inv_eps0); }
double ConstructionParams::eps_prime() const { return std::exp(-log_inv_eps_prime); }

ConstructionParams ConstructionParams::theorem(const ScoreModel& model, double eps, int m) {
  if (!(eps > 0.0 && eps < 1.0)) throw ParameterError("params: eps must lie in (0, 1)");
  if (m < 0) throw ParameterError("params: m must be >= 0");
  ConstructionParams p;
  p.mode = ConstructionMode::kTheorem;
  fill_model(p, model, eps, m);
  const double mm = std::max(m, 1);
  const double s2 = p.sigma * p.sigma;
  p.log_inv_eps0 = mm * mm * (std::log(1.0 / eps) + std::log(mm * p.D / s2));
  const double lr = std::max(0.0, 2.0 * p.beta * p.log_inv_eps0 - std::log(static_cast<double>(p.D)));
  p.R = p.sigma * std::sqrt(static_cast<double>(p.D)) + 16.0 * p.sigma * std::max(std::sqrt(p.D * lr), lr);
  p.r = static_cast<int>(std::ceil(mm + 1.0 + std::exp(2.0) + p.log_inv_eps0));
  p.N_div = static_cast<int>(std::ceil((2.0 * p.R * p.R + 36.0) / (s2 * std::numbers::ln2)));
  p.log_inv_eps_prime = std::pow(mm, 6) * p.N_div * std::log(mm * p.D * p.R / s2) * std::log(1.0 / eps);
  p.quad_order = 20;
  p.R_inf = p.R + 4.0;
  p.subcells = 1;
  return p;
}

ConstructionParams ConstructionParams::practical(const ScoreModel& model, double eps, int m, int r, int N_div,
                                                 int quad_order, double R, double eps_prime, double R_inf,
                                                 int subcells) {
  ConstructionParams p;
  p.mode = ConstructionMode::kPractical;
  fill_model(p, model, eps, m);
  p.r = r;
  p.N_div = N_div;
  p.quad_order = quad_order;
  p.R = R;
  if (!(eps_prime > 0.0 && eps_prime < 1.0)) throw ParameterError("params: eps_prime must lie in (0, 1)");
  p.log_inv_eps_prime = -std::log(eps_prime);
  // The tolerance that the Taylor degree r would have been chosen for.
  p.log_inv_eps0 = std::max(0.0, r - std::max(m, 1) - 1.0 - std::exp(2.0));
  p.R_inf = R_inf > 0.0 ? R_inf : std::max(2.5, sup_abs_image_plus(model.map, R));
  p.subcells = subcells;
  return p;
}

std::vector<std::string> ConstructionParams::validate() const {
  if (!(eps > 0.0 && eps < 1.0)) throw ParameterError("params: eps must lie in (0, 1)");
  if (m < 0) throw ParameterError("params: m must be >= 0");
  if (!(sigma > 0.0)) throw ParameterError("params: sigma must be positive");
  if (!(R > 0.0)) throw ParameterError("params: R must be positive");
  if (r < 1) throw ParameterError("params: r must be >= 1");
  if (N_div < 1) throw ParameterError("params: N_div must be >= 1");
  if (quad_order < 1) throw ParameterError("params: quad_order must be >= 1");
  if (!(R_inf >= 1.0)) throw ParameterError("params: R_inf must be >= 1");
  if (subcells < 1) throw ParameterError("params: subcells must be >= 1");
  if (!(log_inv_eps_prime > 0.0)) throw ParameterError("params: eps_prime must lie in (0, 1)");
  if (log_inv_eps_prime < (N_div + 1) * std::numbers::ln2)
    throw ParameterError("params: eps_prime must not exceed 2^-(N_div+1)");
  std::vector<std::string> w;
  const double mm = std::max(m, 1);
  const int deg = taylor_degree();
  const double logs = std::log(1.0 / eps) + std::log(mm * D / (sigma * sigma));
  double fact = 1.0;
  for (int i = 2; i <= deg; ++i) fact *= i;
  const double rhs1 = fact / (H * std::pow(d, deg) * std::sqrt(static_cast<double>(D))) *
                      std::min(1.0, sigma * sigma / (std::sqrt(static_cast<double>(D)) * mm * mm * logs));
  if (std::pow(eps, beta) > rhs1)
    w.push_back("smallness precondition on eps^beta fails with C1 = 1 (advisory)");
  const double Pd = P();
  const double lhs2 = std::pow(std::max(H, 1.0), 2) * Pd * Pd * D * mm * mm * logs * eps;
  if (lhs2 > sigma * sigma) w.push_back("smallness precondition on eps fails with C2 = 1 (advisory)");
  return w;
}

std::string ConstructionParams::to_json() const {
  nlohmann::json j;
  j["mode"] = mode == ConstructionMode::kTheorem ? "theorem" : "practical";
  j["eps"] = eps;
  j["m"] = m;
  j["sigma"] = sigma;
  j["d"] = d;
  j["D"] = D;
  j["beta"] = beta;
  j["H"] = H;
  j["R"] = R;
  j["log_inv_eps0"] = log_inv_eps0;
  j["log_inv_eps_prime"] = log_inv_eps_prime;
  j["r"] = r;
  j["N_div"] = N_div;
  j["quad_order"] = quad_order;
  j["R_inf"] = R_inf;
  j["subcells"] = subcells;
  j["P"] = P();
  if (mode == ConstructionMode::kTheorem) j["note"] = "structurally faithful, constants nominal";
  return j.dump();
}

// ----- pieces and V networks ------------------------------------------------

std::vector<ExpansionPiece> expansion_pieces(const LocalPolyDecomposition& decomp, int subcells) {
  if (subcells < 1) throw ParameterError("expansion_pieces: subcells must be >= 1");
  const int d = decomp.d();
  const double h = 1.0 / (static_cast<double>(decomp.N()) * subcells);
  const long long per_cell = ipow(subcells, d);
  std::vector<ExpansionPiece> out;
  for (int c = 0; c < decomp.cells(); ++c) {
    const auto lo = decomp.cell_lo(c);
    for (long long s = 0; s < per_cell; ++s) {
      ExpansionPiece p;
      p.cell = c;
      p.lo.resize(static_cast<size_t>(d));
      p.hi.resize(static_cast<size_t>(d));
      long long rem = s;
      for (int i = 0; i < d; ++i) {
        const auto si = static_cast<double>(rem % subcells);
        rem /= subcells;
        p.lo[static_cast<size_t>(i)] = lo[static_cast<size_t>(i)] + si * h;
        p.hi[static_cast<size_t>(i)] = lo[static_cast<size_t>(i)] + (si + 1.0) * h;
      }
      if (subcells == 1) p.hi = decomp.anchor(c);
      p.anchor = p.hi;
      p.volume = std::pow(h, d);
      out.push_back(std::move(p));
    }
  }
  return out;
}

namespace {

// Shared building blocks for all pieces.
struct Kit {
  double tol = 0.0;
  int m = 0;
  GeluNetwork square;
  GeluNetwork mul;
  GeluNetwork exp;
  GeluNetwork clip1;
  MonomialNet mono;
  int P = 0;
};

Kit make_kit(const ConstructionParams& params) {
  Kit k;
  k.tol = std::max(params.eps_prime(), 1e-13);
  k.m = params.m;
  k.P = params.P();
  k.square = build_square(k.tol, k.m).net;
  k.mul = build_mul(k.tol, k.m).net;
  k.exp = build_exp_neg(k.tol, k.m, 0.5).net;
  k.clip1 = build_clip(1.0, k.tol, k.m).net;
  k.mono = build_monomials(k.P, std::max(params.r - 1, 1), k.tol, k.m);
  return k;
}

// Half-width of the coordinate box seen after the input clip.
double clipped_box(const ConstructionParams& params) { return params.R_inf + 0.5 + 1e-6; }

VNets v_net_with(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, double sigma,
                 const ConstructionParams& params, const GeluNetwork& square) {
  const int D = decomp.D();
  VNets v;
  v.center = decomp.evaluate_cell(piece.cell, piece.anchor);
  const double s2 = sigma * sigma;
  double cmax = 0.0;
  for (double c : v.center) cmax = std::max(cmax, std::abs(c));
  const double Z = clipped_box(params) + cmax + 0.1;
  std::vector<GeluNetwork> terms;
  for (int l = 0; l < D; ++l) {
    AffineMap pre = AffineMap::select(D, {l}, 1.0 / Z);
    pre.c[0] = -v.center[static_cast<size_t>(l)] / Z;
    terms.push_back(affine_wrap(square, pre, AffineMap::identity(1)));
  }
  v.v0 = affine_wrap(sum_parallel(terms, ParallelMode::kSharedInput), AffineMap::identity(D),
                     AffineMap::diagonal({Z * Z / (2.0 * s2)}, {0.0}));
  // Rows: V_{j,k} for 1 <= |k| <= degree, then the constant 1 / (2 sigma^2).
  const auto& ks = decomp.ks();
  const int P = static_cast<int>(ks.size());
  v.R.rows = P;
  v.R.cols = D;
  v.R.M.assign(static_cast<size_t>(P * D), 0.0);
  v.R.c.assign(static_cast<size_t>(P), 0.0);
  int row = 0;
  for (const auto& k : ks) {
    if (k.order() == 0) continue;
    const auto dk = decomp.derivative_cell(piece.cell, piece.anchor, k);
    double cv = 0.0;
    for (int l = 0; l < D; ++l) {
      v.R.M[static_cast<size_t>(row * D + l)] = -dk[static_cast<size_t>(l)] / s2;
      cv += v.center[static_cast<size_t>(l)] * dk[static_cast<size_t>(l)];
    }
    v.R.c[static_cast<size_t>(row)] = cv / s2;
    ++row;
  }
  v.R.c[static_cast<size_t>(row)] = 1.0 / (2.0 * s2);
  return v;
}

}  // namespace

VNets build_v_net(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, double sigma,
                  const ConstructionParams& params) {
  return v_net_with(decomp, piece, sigma, params,
                    build_square(std::max(params.eps_prime(), 1e-13), params.m).net);
}

std::vector<VNets> build_v_nets(const LocalPolyDecomposition& decomp, double sigma, const ConstructionParams& params) {
  const GeluNetwork sq = build_square(std::max(params.eps_prime(), 1e-13), params.m).net;
  std::vector<VNets> out;
  for (const auto& piece : expansion_pieces(decomp, params.subcells))
    out.push_back(v_net_with(decomp, piece, sigma, params, sq));
  return out;
}

// ----- integral coefficients ------------------------------------------------

PsiCoeffs compute_psi_coeffs(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, int psi_index, int r,
                             int order) {
  if (r < 1) throw ParameterError("compute_psi_coeffs: r must be >= 1");
  if (psi_index >= decomp.D()) throw ParameterError("compute_psi_coeffs: psi index out of range");
  const int d = decomp.d(), D = decomp.D();
  const auto& ks = decomp.ks();
  const int P = static_cast<int>(ks.size());
  PsiCoeffs out;
  out.ks = enumerate_multiindices(P, r - 1);
  out.a.assign(out.ks.size(), 0.0);
  std::vector<double> nodes, weights;
  box_rule(piece.lo, piece.hi, order, nodes, weights);
  const auto c0 = decomp.evaluate_cell(piece.cell, piece.anchor);
  std::vector<double> a(static_cast<size_t>(P)), du(static_cast<size_t>(d));
  std::vector<double> kf(out.ks.size());
  for (size_t i = 0; i < out.ks.size(); ++i) kf[i] = (out.ks[i].order() % 2 ? -1.0 : 1.0) / out.ks[i].factorial();
  for (size_t q = 0; q < weights.size(); ++q) {
    const std::span<const double> u(nodes.data() + q * static_cast<size_t>(d), static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) du[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] - piece.anchor[static_cast<size_t>(i)];
    const auto g = decomp.evaluate_cell(piece.cell, u);
    int p = 0;
    for (const auto& k : ks) {
      if (k.order() == 0) continue;
      a[static_cast<size_t>(p++)] = monomial_eval(du, k) / k.factorial();
    }
    double dist = 0.0;
    for (int l = 0; l < D; ++l) dist += (g[static_cast<size_t>(l)] - c0[static_cast<size_t>(l)]) * (g[static_cast<size_t>(l)] - c0[static_cast<size_t>(l)]);
    a[static_cast<size_t>(p)] = dist;
    const double psi = psi_index < 0 ? 1.0 : g[static_cast<size_t>(psi_index)];
    const double w = weights[q] * psi;
    for (size_t i = 0; i < out.ks.size(); ++i) out.a[i] += w * kf[i] * monomial_eval(a, out.ks[i]);
  }
  double mx = 0.0;
  for (double v : out.a) mx = std::max(mx, std::abs(v));
  out.bound_ratio = mx / (2.0 * piece.volume);
  return out;
}

double upsilon_exact(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, int psi_index, double sigma,
                     std::span<const double> y, int order) {
  std::vector<double> nodes, weights;
  box_rule(piece.lo, piece.hi, order, nodes, weights);
  const int d = decomp.d(), D = decomp.D();
  double s = 0.0;
  for (size_t q = 0; q < weights.size(); ++q) {
    const std::span<const double> u(nodes.data() + q * static_cast<size_t>(d), static_cast<size_t>(d));
    const auto g = decomp.evaluate_cell(piece.cell, u);
    double e = 0.0;
    for (int l = 0; l < D; ++l) e += (y[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]) * (y[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]);
    s += weights[q] * (psi_index < 0 ? 1.0 : g[static_cast<size_t>(psi_index)]) * std::exp(-e / (2.0 * sigma * sigma));
  }
  return s;
}

// ----- Upsilon networks -----------------------------------------------------

namespace {

UpsilonBlock block_with(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece,
                        const ConstructionParams& params, const Kit& kit) {
  const int D = decomp.D();
  const VNets v = v_net_with(decomp, piece, params.sigma, params, kit.square);
  const int P = v.R.rows;
  // exp(-V_{j,0})
  GeluNetwork branch_a = concatenate(v.v0, kit.exp);
  // Normalized R_j, clipped, then monomials.
  const double B = clipped_box(params);
  std::vector<double> Kp(static_cast<size_t>(P));
  AffineMap Rn = v.R;
  for (int p = 0; p < P; ++p) {
    double k = std::abs(v.R.c[static_cast<size_t>(p)]);
    for (int l = 0; l < D; ++l) k += std::abs(v.R.M[static_cast<size_t>(p * D + l)]) * B;
    if (!(k > 0.0)) k = 1.0;
    Kp[static_cast<size_t>(p)] = k;
    for (int l = 0; l < D; ++l) Rn.M[static_cast<size_t>(p * D + l)] /= k;
    Rn.c[static_cast<size_t>(p)] /= k;
  }
  std::vector<GeluNetwork> clips(static_cast<size_t>(P), kit.clip1);
  GeluNetwork clip = affine_wrap(parallelize(clips, ParallelMode::kDistinctInputs), Rn, AffineMap::identity(P));
  UpsilonBlock out;
  std::vector<PolyCoeffs> coeffs;
  std::vector<double> scale;
  for (int o = 0; o <= D; ++o) {
    const PsiCoeffs pc = compute_psi_coeffs(decomp, piece, o - 1, params.r, params.quad_order);
    out.coeff_ratio = std::max(out.coeff_ratio, pc.bound_ratio);
    PolyCoeffs c;
    double sum = 0.0;
    for (size_t i = 0; i < pc.ks.size(); ++i) {
      double v = pc.a[i];
      for (int p = 0; p < P; ++p) v *= std::pow(Kp[static_cast<size_t>(p)], pc.ks[i][p]);
      c.push_back({pc.ks[i], v});
      sum += std::abs(v);
    }
    const double S = std::max(sum, 1e-300);
    for (auto& [k, v] : c) v /= S;
    coeffs.push_back(std::move(c));
    scale.push_back(S);
  }
  // The clip plateau is 1.5; normalized inputs stay inside [-1, 1].
  const Primitive poly = poly_from_monomials(kit.mono, coeffs, std::vector<double>(static_cast<size_t>(P), 1.5));
  GeluNetwork branch_b = concatenate(clip, poly.net);
  const int L = std::max(branch_a.depth(), branch_b.depth());
  branch_a = pad_depth(branch_a, L, kit.tol, 1.5, kit.m);
  branch_b = pad_depth(branch_b, L, kit.tol, 1.5, kit.m);
  GeluNetwork both = parallelize({branch_a, branch_b}, ParallelMode::kSharedInput);
  std::vector<GeluNetwork> muls;
  for (int o = 0; o <= D; ++o)
    muls.push_back(affine_wrap(kit.mul, AffineMap::select(D + 2, {0, o + 1}),
                               AffineMap::diagonal({scale[static_cast<size_t>(o)]}, {0.0})));
  out.net = concatenate(both, parallelize(muls, ParallelMode::kSharedInput));
  return out;
}

}  // namespace

UpsilonBlock build_upsilon_block(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece,
                                 const ConstructionParams& params) {
  return block_with(decomp, piece, params, make_kit(params));
}

GeluNetwork build_upsilon_net(const LocalPolyDecomposition& decomp, int cell, int psi_index,
                              const ConstructionParams& params) {
  if (cell < 0 || cell >= decomp.cells()) throw ParameterError("build_upsilon_net: cell out of range");
  if (psi_index >= decomp.D()) throw ParameterError("build_upsilon_net: psi index out of range");
  const Kit kit = make_kit(params);
  std::vector<GeluNetwork> parts;
  for (const auto& piece : expansion_pieces(decomp, params.subcells))
    if (piece.cell == cell) parts.push_back(block_with(decomp, piece, params, kit).net);
  GeluNetwork sum = sum_parallel(parts, ParallelMode::kSharedInput);
  return affine_wrap(sum, AffineMap::identity(decomp.D()), AffineMap::select(decomp.D() + 1, {psi_index + 1}));
}

// ----- score network --------------------------------------------------------

std::vector<double> ScoreNetwork::evaluate(std::span<const double> y) const {
  auto f = f_.evaluate(y);
  const double s2 = sigma_ * sigma_;
  for (size_t i = 0; i < f.size(); ++i) f[i] = -y[i] / s2 + f[i] / s2;
  return f;
}

std::vector<double> ScoreNetwork::derivative(std::span<const double> y, const MultiIndex& k) const {
  auto f = f_.derivative(y, k);
  const double s2 = sigma_ * sigma_;
  for (auto& v : f) v /= s2;
  if (k.order() == 0) {
    for (size_t i = 0; i < f.size(); ++i) f[i] -= y[i] / s2;
  } else if (k.order() == 1) {
    for (int i = 0; i < k.size(); ++i)
      if (k[i] == 1) f[static_cast<size_t>(i)] -= 1.0 / s2;
  }
  return f;
}

std::vector<double> ScoreNetwork::taylor(std::span<const double> y, int degree) const {
  auto t = f_.taylor(y, degree);
  const auto space = JetSpace::get(f_.input_width(), degree);
  const auto M = static_cast<size_t>(space->size());
  const double s2 = sigma_ * sigma_;
  for (auto& v : t) v /= s2;
  for (size_t o = 0; o < y.size(); ++o) {
    t[o * M] -= y[o] / s2;
    if (degree > 0) t[o * M + static_cast<size_t>(space->unit(static_cast<int>(o)))] -= 1.0 / s2;
  }
  return t;
}

// ----- bounds and report ----------------------------------------------------

TheoreticalBounds theoretical_bounds(const ConstructionParams& params) {
  TheoreticalBounds b;
  const double e = params.eps, s = params.sigma, D = params.D;
  const double mm = std::max(params.m, 1);
  const double lmd = std::log(mm * D / (s * s));
  const double le = std::log(1.0 / e);
  b.P = params.P();
  b.eps_exponent_error = 2.0 * params.beta;
  b.eps_exponent_S = -params.d;
  for (int k = 0; k <= params.m; ++k)
    b.error_shape.push_back(std::pow(s, -4.0 * k - 8.0) * D * D * std::pow(e, 2.0 * params.beta) * le * le * lmd * lmd);
  b.L_shape = std::log(mm * D / (s * s) * le);
  const double P = b.P;
  b.log_S_shape = -params.d * std::log(e) + (16.0 + P) * std::log(D) + (132.0 + 17.0 * P) * std::log(mm) +
                  (-48.0 - 4.0 * P) * std::log(s) + (38.0 + 4.0 * P) * std::log(std::abs(lmd * le));
  b.logB_shape = std::pow(mm, 85) * std::pow(D, 8) * std::pow(lmd, 26) * std::pow(le, 21);
  return b;
}

std::string TheoreticalBounds::to_json() const {
  nlohmann::json j;
  j["error_shape"] = error_shape;
  j["eps_exponent_error"] = eps_exponent_error;
  j["eps_exponent_S"] = eps_exponent_S;
  j["P"] = P;
  j["L_shape"] = L_shape;
  j["log_S_shape"] = log_S_shape;
  j["logB_shape"] = logB_shape;
  j["note"] = note;
  return j.dump();
}

std::string BuildReport::to_json() const {
  nlohmann::json j;
  j["params"] = nlohmann::json::parse(params.to_json());
  j["stage_errors"] = {{"g_circ", g_circ},
                       {"f_circ_vs_f_star", f_circ_vs_f_star},
                       {"upsilon_max", upsilon_max},
                       {"q_floor", q_floor}};
  j["config"] = {{"L", config.L}, {"width", config.max_width()}, {"S", config.S}, {"logB", std::log(config.B)}};
  j["warnings"] = warnings;
  j["theoretical_bounds"] = nlohmann::json::parse(bounds.to_json());
  j["division_rescale"] = {{"x", div_x_scale}, {"y", div_y_scale}};
  j["pieces"] = pieces;
  j["build_seconds"] = build_seconds;
  return j.dump(2);
}

std::vector<double> k_grid_points(const ScoreModel& model, double R, int per_axis) {
  const int d = model.map.d(), D = model.map.D();
  if (per_axis < 2) throw ParameterError("k_grid_points: need at least 2 points per axis");
  const long long total = ipow(per_axis, D);
  if (total > 5'000'000) throw ParameterError("k_grid_points: grid too large for this D");
  const int G = d == 1 ? 256 : d == 2 ? 64 : 12;
  const long long ni = ipow(G, d);
  std::vector<double> img(static_cast<size_t>(ni * D));
  std::vector<double> lo(static_cast<size_t>(D), std::numeric_limits<double>::infinity());
  std::vector<double> hi(static_cast<size_t>(D), -std::numeric_limits<double>::infinity());
  std::vector<double> u(static_cast<size_t>(d));
  for (long long p = 0; p < ni; ++p) {
    long long rem = p;
    for (int i = 0; i < d; ++i) {
      u[static_cast<size_t>(i)] = static_cast<double>(rem % G) / (G - 1);
      rem /= G;
    }
    model.map.evaluate_into(u, img.data() + p * D);
    for (int l = 0; l < D; ++l) {
      lo[static_cast<size_t>(l)] = std::min(lo[static_cast<size_t>(l)], img[static_cast<size_t>(p * D + l)]);
      hi[static_cast<size_t>(l)] = std::max(hi[static_cast<size_t>(l)], img[static_cast<size_t>(p * D + l)]);
    }
  }
  std::vector<double> out, y(static_cast<size_t>(D));
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int l = 0; l < D; ++l) {
      const double a = lo[static_cast<size_t>(l)] - R, b = hi[static_cast<size_t>(l)] + R;
      y[static_cast<size_t>(l)] = a + (b - a) * static_cast<double>(rem % per_axis) / (per_axis - 1);
      rem /= per_axis;
    }
    bool inside = false;
    for (long long q = 0; q < ni && !inside; ++q) {
      double s = 0.0;
      for (int l = 0; l < D; ++l) {
        const double t = y[static_cast<size_t>(l)] - img[static_cast<size_t>(q * D + l)];
        s += t * t;
      }
      inside = s <= R * R;
    }
    if (inside) out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

ScoreBuild assemble_score_network(const ScoreModel& model, const ConstructionParams& params,
                                  const AssemblyOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  if (params.d != model.map.d() || params.D != model.map.D() || params.sigma != model.sigma)
    throw ParameterError("assemble: params were made for a different model");
  ScoreBuild out;
  out.report.params = params;
  out.report.warnings = params.validate();
  if (params.N_div > 400 || params.r > 40)
    throw ParameterError("assemble: N_div = " + std::to_string(params.N_div) + ", r = " + std::to_string(params.r) +
                         " is too large to build; use practical mode");
  const int D = params.D;
  const LocalPolyDecomposition decomp(model.map, params.eps);
  out.report.g_circ = decomp.sup_error();
  const double cone = 2.5;
  if (decomp.sup_abs() > 0.98 * cone)
    out.report.warnings.push_back("sup |g_circ| exceeds the certified division cone");
  const auto pieces = expansion_pieces(decomp, params.subcells);
  out.report.pieces = static_cast<int>(pieces.size());
  const Kit kit = make_kit(params);

  std::vector<GeluNetwork> blocks;
  double ratio = 0.0;
  for (const auto& piece : pieces) {
    UpsilonBlock b = block_with(decomp, piece, params, kit);
    ratio = std::max(ratio, b.coeff_ratio);
    blocks.push_back(std::move(b.net));
  }
  if (ratio > 1.0) {
    const std::string msg = "integral coefficients exceed 2 vol(U_j) (max ratio " + std::to_string(ratio) +
                            "); eps is too large for the expansion";
    if (params.mode == ConstructionMode::kTheorem) throw ConstructionError(msg);
    out.report.warnings.push_back(msg);
  }
  std::vector<GeluNetwork> clips(static_cast<size_t>(D), build_clip(params.R_inf, kit.tol, kit.m).net);
  const GeluNetwork in_clip = parallelize(clips, ParallelMode::kDistinctInputs);
  out.pq = concatenate(in_clip, sum_parallel(blocks, ParallelMode::kSharedInput));

  // f_l = P_l / Q with inputs (P_l / 2, Q / 2) in [-1, 1] x [2^-(N_div+2), 1].
  const GeluNetwork div = build_div(params.N_div + 2, kit.tol, kit.m, {cone, false}).net;
  std::vector<GeluNetwork> divs;
  for (int l = 0; l < D; ++l) {
    AffineMap pre = AffineMap::select(D + 1, {l + 1, 0}, 1.0);
    pre.M[static_cast<size_t>(l + 1)] = out.report.div_x_scale;
    pre.M[static_cast<size_t>(D + 1)] = out.report.div_y_scale;
    divs.push_back(affine_wrap(div, pre, AffineMap::identity(1)));
  }
  GeluNetwork f_bar = concatenate(out.pq, parallelize(divs, ParallelMode::kSharedInput));
  out.report.config = config_stats(f_bar);
  out.s_bar = ScoreNetwork(std::move(f_bar), params.sigma);

  // Checks on the K grid.
  int per_axis = options.k_grid;
  while (per_axis > 2 && std::pow(per_axis, D) > 200000.0) per_axis /= 2;
  const auto K = k_grid_points(model, params.R, per_axis);
  const size_t nk = K.size() / static_cast<size_t>(D);
  double qmin = std::numeric_limits<double>::infinity();
  const ScoreOracle star(model);
  const GaussianRatioOracle circ = make_f_circ_oracle(decomp, params.sigma, params.quad_order);
  double fdiff = 0.0;
  for (size_t i = 0; i < nk; ++i) {
    const std::span<const double> y(K.data() + i * static_cast<size_t>(D), static_cast<size_t>(D));
    qmin = std::min(qmin, out.pq.evaluate(y)[0]);
    const auto a = star.f_star(y);
    const auto b = circ.f(y);
    for (int l = 0; l < D; ++l) fdiff = std::max(fdiff, std::abs(a[static_cast<size_t>(l)] - b[static_cast<size_t>(l)]));
  }
  out.report.q_floor = qmin;
  out.report.f_circ_vs_f_star = fdiff;
  if (options.upsilon_points > 0 && nk > 0) {
    const size_t stride = std::max<size_t>(1, nk / static_cast<size_t>(options.upsilon_points));
    double worst = 0.0;
    for (size_t pi = 0; pi < pieces.size(); ++pi)
      for (size_t i = 0; i < nk; i += stride) {
        std::vector<double> y(K.begin() + static_cast<std::ptrdiff_t>(i) * D,
                              K.begin() + static_cast<std::ptrdiff_t>(i + 1) * D);
        const auto got = blocks[pi].evaluate(y);
        for (int o = 0; o <= D; ++o) {
          const double want = upsilon_exact(decomp, pieces[pi], o - 1, params.sigma, y, params.quad_order);
          worst = std::max(worst, std::abs(got[static_cast<size_t>(o)] - want) / pieces[pi].volume);
        }
      }
    out.report.upsilon_max = worst;
  }
  if (options.keep_blocks) out.blocks = std::move(blocks);
  out.report.bounds = theoretical_bounds(params);
  out.report.build_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (nk > 0 && qmin < std::ldexp(1.0, -params.N_div))
    throw ConstructionError("denominator lower bound violated: min Q over the K grid is " + std::to_string(qmin) +
                            " < 2^-" + std::to_string(params.N_div));
  return out;
}

}  // namespace gelunet
