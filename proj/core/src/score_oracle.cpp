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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "gelunet/errors.h"
#include "json.hpp"

namespace gelunet {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double falling(int p, int n) {
  if (n > p) return 0.0;
  double f = 1.0;
  for (int i = 0; i < n; ++i) f *= p - i;
  return f;
}

}  // namespace

// ----- SmoothMapSpec --------------------------------------------------------

SmoothMapSpec SmoothMapSpec::polynomial(int d, std::vector<std::vector<PolyTerm>> terms, double beta, double H) {
  if (d < 1) throw ParameterError("map: d must be >= 1");
  if (terms.empty()) throw ParameterError("map: D must be >= 1");
  if (!(beta > 0.0) || !(H > 0.0)) throw ParameterError("map: beta and H must be positive");
  for (const auto& l : terms)
    for (const auto& t : l)
      if (t.k.size() != d) throw ParameterError("map: polynomial multi-index length != d");
  SmoothMapSpec s;
  s.family_ = Family::kPolynomial;
  s.d_ = d;
  s.D_ = static_cast<int>(terms.size());
  s.beta_ = beta;
  s.H_ = H;
  s.poly_ = std::move(terms);
  return s;
}

SmoothMapSpec SmoothMapSpec::trigonometric(int d, std::vector<std::vector<TrigTerm>> terms, double beta, double H) {
  if (d < 1) throw ParameterError("map: d must be >= 1");
  if (terms.empty()) throw ParameterError("map: D must be >= 1");
  if (!(beta > 0.0) || !(H > 0.0)) throw ParameterError("map: beta and H must be positive");
  for (const auto& l : terms)
    for (const auto& t : l)
      if (static_cast<int>(t.freq.size()) != d) throw ParameterError("map: trigonometric frequency length != d");
  SmoothMapSpec s;
  s.family_ = Family::kTrigonometric;
  s.d_ = d;
  s.D_ = static_cast<int>(terms.size());
  s.beta_ = beta;
  s.H_ = H;
  s.trig_ = std::move(terms);
  return s;
}

SmoothMapSpec SmoothMapSpec::circle(double beta) {
  std::vector<std::vector<TrigTerm>> t(2);
  t[0].push_back({{kTwoPi}, 1.0, 0.0});
  t[1].push_back({{kTwoPi}, 0.0, 1.0});
  return trigonometric(1, std::move(t), beta, std::pow(kTwoPi, 3));
}

SmoothMapSpec SmoothMapSpec::constant(int d, std::vector<double> c) {
  std::vector<std::vector<PolyTerm>> t;
  for (double v : c) t.push_back({PolyTerm{MultiIndex(d), v}});
  return polynomial(d, std::move(t), 3.0, 1.0);
}

int SmoothMapSpec::taylor_degree() const {
  const double f = std::floor(beta_);
  return static_cast<int>(f == beta_ ? f - 1.0 : f);
}

void SmoothMapSpec::evaluate_into(std::span<const double> u, double* out) const {
  if (static_cast<int>(u.size()) != d_) throw ParameterError("map: input length != d");
  for (int l = 0; l < D_; ++l) {
    double s = 0.0;
    if (family_ == Family::kPolynomial) {
      for (const auto& t : poly_[static_cast<size_t>(l)]) s += t.c * monomial_eval(u, t.k);
    } else {
      for (const auto& t : trig_[static_cast<size_t>(l)]) {
        double ph = 0.0;
        for (int i = 0; i < d_; ++i) ph += t.freq[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
        s += t.cos_coef * std::cos(ph) + t.sin_coef * std::sin(ph);
      }
    }
    out[l] = s;
  }
}

std::vector<double> SmoothMapSpec::evaluate(std::span<const double> u) const {
  std::vector<double> out(static_cast<size_t>(D_));
  evaluate_into(u, out.data());
  return out;
}

std::vector<double> SmoothMapSpec::derivative(std::span<const double> u, const MultiIndex& k) const {
  if (static_cast<int>(u.size()) != d_ || k.size() != d_) throw ParameterError("map: derivative length mismatch");
  std::vector<double> out(static_cast<size_t>(D_), 0.0);
  for (int l = 0; l < D_; ++l) {
    double s = 0.0;
    if (family_ == Family::kPolynomial) {
      for (const auto& t : poly_[static_cast<size_t>(l)]) {
        double v = t.c;
        for (int i = 0; i < d_ && v != 0.0; ++i) {
          v *= falling(t.k[i], k[i]);
          if (t.k[i] > k[i]) v *= std::pow(u[static_cast<size_t>(i)], t.k[i] - k[i]);
        }
        s += v;
      }
    } else {
      // d^k cos(w.u) = w^k cos(w.u + |k| pi/2), likewise for sin.
      const int n = k.order();
      for (const auto& t : trig_[static_cast<size_t>(l)]) {
        double ph = 0.0, wk = 1.0;
        for (int i = 0; i < d_; ++i) {
          ph += t.freq[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
          wk *= std::pow(t.freq[static_cast<size_t>(i)], k[i]);
        }
        const double shift = n * std::numbers::pi / 2.0;
        s += wk * (t.cos_coef * std::cos(ph + shift) + t.sin_coef * std::sin(ph + shift));
      }
    }
    out[static_cast<size_t>(l)] = s;
  }
  return out;
}

void SmoothMapSpec::validate() const {
  const int G = 64;
  const int r = taylor_degree();
  const auto ks = enumerate_multiindices(d_, r);
  long long total = 1;
  for (int i = 0; i < d_; ++i) total *= G;
  std::vector<int> idx(static_cast<size_t>(d_));
  std::vector<double> u(static_cast<size_t>(d_)), v(static_cast<size_t>(d_));
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d_; ++i) {
      idx[static_cast<size_t>(i)] = static_cast<int>(rem % G);
      rem /= G;
      u[static_cast<size_t>(i)] = idx[static_cast<size_t>(i)] / double(G - 1);
    }
    const auto g = evaluate(u);
    double nrm = 0.0;
    for (double x : g) nrm += x * x;
    if (std::sqrt(nrm) > 1.0 + 1e-12) throw ParameterError("map: sup-norm invariant ||g(u)|| <= 1 violated");
    for (const auto& k : ks) {
      const auto dk = derivative(u, k);
      for (double x : dk)
        if (std::abs(x) > H_ * (1.0 + 1e-9)) throw ParameterError("map: derivative bound |d^k g| <= H violated");
      if (k.order() != r) continue;
      for (int i = 0; i < d_; ++i) {
        if (idx[static_cast<size_t>(i)] + 1 >= G) continue;
        v = u;
        v[static_cast<size_t>(i)] = (idx[static_cast<size_t>(i)] + 1) / double(G - 1);
        const auto dv = derivative(v, k);
        const double dist = std::pow(std::min(1.0, 1.0 / (G - 1)), beta_ - r);
        for (int l = 0; l < D_; ++l)
          if (std::abs(dv[static_cast<size_t>(l)] - dk[static_cast<size_t>(l)]) / dist > H_ * (1.0 + 1e-9))
            throw ParameterError("map: Hoelder constant H violated on the validation grid");
      }
    }
  }
}

std::string SmoothMapSpec::to_json() const {
  nlohmann::json j;
  j["family"] = family_ == Family::kPolynomial ? "polynomial" : "trigonometric";
  j["d"] = d_;
  j["D"] = D_;
  j["beta"] = beta_;
  j["H"] = H_;
  nlohmann::json c = nlohmann::json::array();
  for (int l = 0; l < D_; ++l) {
    nlohmann::json row = nlohmann::json::array();
    if (family_ == Family::kPolynomial) {
      for (const auto& t : poly_[static_cast<size_t>(l)]) row.push_back({{"k", t.k.entries()}, {"c", t.c}});
    } else {
      for (const auto& t : trig_[static_cast<size_t>(l)])
        row.push_back({{"freq", t.freq}, {"cos", t.cos_coef}, {"sin", t.sin_coef}});
    }
    c.push_back(std::move(row));
  }
  j["coeffs"] = std::move(c);
  return j.dump();
}

namespace {

SmoothMapSpec map_from_json(const nlohmann::json& j) {
  for (const char* key : {"family", "coeffs", "d", "D", "beta", "H"})
    if (!j.contains(key)) throw ParameterError(std::string("model file: missing field '") + key + "'");
  const std::string fam = j["family"].get<std::string>();
  const int d = j["d"].get<int>();
  const int D = j["D"].get<int>();
  const double beta = j["beta"].get<double>();
  const double H = j["H"].get<double>();
  const auto& c = j["coeffs"];
  if (!c.is_array() || static_cast<int>(c.size()) != D)
    throw ParameterError("model file: 'coeffs' must hold one list per output coordinate (D)");
  SmoothMapSpec s;
  if (fam == "polynomial") {
    std::vector<std::vector<SmoothMapSpec::PolyTerm>> t(static_cast<size_t>(D));
    for (int l = 0; l < D; ++l)
      for (const auto& e : c[static_cast<size_t>(l)])
        t[static_cast<size_t>(l)].push_back({MultiIndex(e.at("k").get<std::vector<int>>()), e.at("c").get<double>()});
    s = SmoothMapSpec::polynomial(d, std::move(t), beta, H);
  } else if (fam == "trigonometric") {
    std::vector<std::vector<SmoothMapSpec::TrigTerm>> t(static_cast<size_t>(D));
    for (int l = 0; l < D; ++l)
      for (const auto& e : c[static_cast<size_t>(l)])
        t[static_cast<size_t>(l)].push_back({e.at("freq").get<std::vector<double>>(), e.value("cos", 0.0), e.value("sin", 0.0)});
    s = SmoothMapSpec::trigonometric(d, std::move(t), beta, H);
  } else {
    throw ParameterError("model file: 'family' must be polynomial or trigonometric, got '" + fam + "'");
  }
  return s;
}

nlohmann::json parse_or_throw(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

SmoothMapSpec SmoothMapSpec::from_json(const std::string& text) {
  try {
    return map_from_json(parse_or_throw(text, "model file"));
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("model file: ") + e.what());
  }
}

ScoreModel::ScoreModel(SmoothMapSpec m, double s) : map(std::move(m)), sigma(s) {
  if (!(sigma > 0.0)) throw ParameterError("model: sigma must be positive");
}

ScoreModel ScoreModel::from_json(const std::string& text) {
  auto j = parse_or_throw(text, "model file");
  if (!j.contains("sigma")) throw ParameterError("model file: missing field 'sigma'");
  try {
    return ScoreModel(map_from_json(j), j["sigma"].get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("model file: ") + e.what());
  }
}

std::string ScoreModel::to_json() const {
  auto j = nlohmann::json::parse(map.to_json());
  j["sigma"] = sigma;
  return j.dump();
}

// ----- quadrature -----------------------------------------------------------

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  if (n < 1) throw ParameterError("gauss_legendre: n must be >= 1");
  x.assign(static_cast<size_t>(n), 0.0);
  w.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[static_cast<size_t>(i)] = -z;
    x[static_cast<size_t>(n - 1 - i)] = z;
    const double wi = 2.0 / ((1.0 - z * z) * dp * dp);
    w[static_cast<size_t>(i)] = wi;
    w[static_cast<size_t>(n - 1 - i)] = wi;
  }
}

QuadratureRule QuadratureRule::make(int d, int cells, int order) {
  if (d < 1 || cells < 1 || order < 1) throw ParameterError("quadrature: d, cells and order must be >= 1");
  std::vector<double> gx, gw;
  gauss_legendre(order, gx, gw);
  const int per_axis = cells * order;
  std::vector<double> ax(static_cast<size_t>(per_axis)), aw(static_cast<size_t>(per_axis));
  std::vector<int> acell(static_cast<size_t>(per_axis));
  for (int c = 0; c < cells; ++c)
    for (int q = 0; q < order; ++q) {
      const auto i = static_cast<size_t>(c * order + q);
      ax[i] = (c + 0.5 * (gx[static_cast<size_t>(q)] + 1.0)) / cells;
      aw[i] = 0.5 * gw[static_cast<size_t>(q)] / cells;
      acell[i] = c;
    }
  long long total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;
  if (total > 50'000'000) throw ParameterError("quadrature: rule too large");
  QuadratureRule r;
  r.d = d;
  r.cells = cells;
  r.order = order;
  r.nodes.resize(static_cast<size_t>(total * d));
  r.weights.resize(static_cast<size_t>(total));
  r.cell_of.resize(static_cast<size_t>(total));
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    double w = 1.0;
    int cell = 0, stride = 1;
    for (int i = 0; i < d; ++i) {
      const auto a = static_cast<size_t>(rem % per_axis);
      rem /= per_axis;
      r.nodes[static_cast<size_t>(p * d + i)] = ax[a];
      w *= aw[a];
      cell += acell[a] * stride;
      stride *= cells;
    }
    r.weights[static_cast<size_t>(p)] = w;
    r.cell_of[static_cast<size_t>(p)] = cell;
  }
  return r;
}

// ----- Gaussian ratio -------------------------------------------------------

GaussianRatioOracle::GaussianRatioOracle(int D, double sigma, std::vector<double> points, std::vector<double> weights)
    : D_(D), sigma_(sigma), points_(std::move(points)), weights_(std::move(weights)) {
  if (D < 1) throw ParameterError("ratio oracle: D must be >= 1");
  if (!(sigma > 0.0)) throw ParameterError("ratio oracle: sigma must be positive");
  if (points_.size() != weights_.size() * static_cast<size_t>(D))
    throw ParameterError("ratio oracle: points/weights size mismatch");
  log_w_.resize(weights_.size());
  for (size_t q = 0; q < weights_.size(); ++q) {
    if (!(weights_[q] > 0.0)) throw ParameterError("ratio oracle: weights must be positive");
    log_w_[q] = std::log(weights_[q]);
  }
}

std::vector<double> GaussianRatioOracle::posterior(std::span<const double> y) const {
  if (static_cast<int>(y.size()) != D_) throw ParameterError("ratio oracle: y has wrong length");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("ratio oracle: non-finite query");
  const size_t Q = weights_.size();
  std::vector<double> e(Q);
  const double inv = 1.0 / (2.0 * sigma_ * sigma_);
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t q = 0; q < Q; ++q) {
    double s = 0.0;
    for (int i = 0; i < D_; ++i) {
      const double t = y[static_cast<size_t>(i)] - points_[q * static_cast<size_t>(D_) + static_cast<size_t>(i)];
      s += t * t;
    }
    e[q] = log_w_[q] - s * inv;
    mx = std::max(mx, e[q]);
  }
  double z = 0.0;
  for (size_t q = 0; q < Q; ++q) {
    e[q] = std::exp(e[q] - mx);
    z += e[q];
  }
  for (double& v : e) v /= z;
  return e;
}

double GaussianRatioOracle::log_density(std::span<const double> y) const {
  if (static_cast<int>(y.size()) != D_) throw ParameterError("ratio oracle: y has wrong length");
  const double inv = 1.0 / (2.0 * sigma_ * sigma_);
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> e(weights_.size());
  for (size_t q = 0; q < weights_.size(); ++q) {
    double s = 0.0;
    for (int i = 0; i < D_; ++i) {
      const double t = y[static_cast<size_t>(i)] - points_[q * static_cast<size_t>(D_) + static_cast<size_t>(i)];
      s += t * t;
    }
    e[q] = log_w_[q] - s * inv;
    mx = std::max(mx, e[q]);
  }
  double z = 0.0;
  for (double v : e) z += std::exp(v - mx);
  return mx + std::log(z) - D_ * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma_);
}

double GaussianRatioOracle::density(std::span<const double> y) const {
  const double lp = log_density(y);
  const double p = std::exp(lp);
  if (!(p > 0.0) || !std::isnormal(p))
    throw NumericError("density underflows at this point (log density " + std::to_string(lp) + "); use log_density");
  return p;
}

std::vector<double> GaussianRatioOracle::f(std::span<const double> y) const {
  const auto w = posterior(y);
  std::vector<double> out(static_cast<size_t>(D_), 0.0);
  for (size_t q = 0; q < w.size(); ++q)
    for (int i = 0; i < D_; ++i) out[static_cast<size_t>(i)] += w[q] * points_[q * static_cast<size_t>(D_) + static_cast<size_t>(i)];
  return out;
}

std::vector<double> GaussianRatioOracle::score(std::span<const double> y) const {
  auto out = f(y);
  const double s2 = sigma_ * sigma_;
  for (int i = 0; i < D_; ++i) out[static_cast<size_t>(i)] = (out[static_cast<size_t>(i)] - y[static_cast<size_t>(i)]) / s2;
  return out;
}

std::vector<double> GaussianRatioOracle::moments(std::span<const double> y, const std::vector<MultiIndex>& alphas) const {
  const auto w = posterior(y);
  std::vector<double> out(alphas.size(), 0.0);
  for (size_t q = 0; q < w.size(); ++q) {
    const std::span<const double> z(points_.data() + q * static_cast<size_t>(D_), static_cast<size_t>(D_));
    for (size_t a = 0; a < alphas.size(); ++a) out[a] += w[q] * monomial_eval(z, alphas[a]);
  }
  return out;
}

GaussianRatioOracle make_ratio_oracle(const SmoothMapSpec& map, double sigma, const QuadratureRule& rule) {
  if (rule.d != map.d()) throw ParameterError("quadrature dimension != latent dimension");
  const int D = map.D();
  std::vector<double> pts(static_cast<size_t>(rule.size()) * static_cast<size_t>(D));
  for (int q = 0; q < rule.size(); ++q)
    map.evaluate_into(std::span<const double>(rule.nodes.data() + static_cast<size_t>(q) * static_cast<size_t>(rule.d),
                                              static_cast<size_t>(rule.d)),
                      pts.data() + static_cast<size_t>(q) * static_cast<size_t>(D));
  return GaussianRatioOracle(D, sigma, std::move(pts), rule.weights);
}

// ----- derivative backends --------------------------------------------------

std::vector<double> fd_derivative(const std::function<std::vector<double>(std::span<const double>)>& fn,
                                  std::span<const double> x, const MultiIndex& k, double h) {
  if (k.size() != static_cast<int>(x.size())) throw ParameterError("fd_derivative: multi-index length mismatch");
  for (int i = 0; i < k.size(); ++i)
    if (k[i] > 4) throw ParameterError("fd_derivative: per-coordinate order above 4");
  // Central stencils with O(h^2) error: offsets and weights (times h^-n).
  static const std::vector<std::pair<int, double>> st[5] = {
      {{0, 1.0}},
      {{-1, -0.5}, {1, 0.5}},
      {{-1, 1.0}, {0, -2.0}, {1, 1.0}},
      {{-2, -0.5}, {-1, 1.0}, {1, -1.0}, {2, 0.5}},
      {{-2, 1.0}, {-1, -4.0}, {0, 6.0}, {1, -4.0}, {2, 1.0}}};
  auto at_step = [&](double step) {
    const int n = k.size();
    std::vector<size_t> pos(static_cast<size_t>(n), 0);
    std::vector<double> acc;
    std::vector<double> p(x.begin(), x.end());
    while (true) {
      double w = 1.0;
      for (int i = 0; i < n; ++i) {
        const auto& e = st[k[i]][pos[static_cast<size_t>(i)]];
        p[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + e.first * step;
        w *= e.second / std::pow(step, k[i]);
      }
      const auto v = fn(p);
      if (acc.empty()) acc.assign(v.size(), 0.0);
      for (size_t o = 0; o < v.size(); ++o) acc[o] += w * v[o];
      int i = 0;
      while (i < n && ++pos[static_cast<size_t>(i)] == st[k[i]].size()) pos[static_cast<size_t>(i++)] = 0;
      if (i == n) break;
    }
    return acc;
  };
  const auto d0 = at_step(h), d1 = at_step(h / 2.0), d2 = at_step(h / 4.0);
  std::vector<double> out(d0.size());
  for (size_t o = 0; o < d0.size(); ++o) {
    const double r0 = (4.0 * d1[o] - d0[o]) / 3.0;
    const double r1 = (4.0 * d2[o] - d1[o]) / 3.0;
    out[o] = (16.0 * r1 - r0) / 15.0;
  }
  return out;
}

namespace {

// Polynomial in z_{j,i} (copy j, coordinate i), exponent vectors of length
// copies * D.
using Poly = std::map<std::vector<int>, double>;

}  // namespace

std::vector<double> p_recursion_derivative(const GaussianRatioOracle& oracle, std::span<const double> y,
                                           const MultiIndex& k, const std::vector<int>& path) {
  const int D = oracle.D();
  if (k.size() != D) throw ParameterError("p-recursion: multi-index length != D");
  const int K = k.order();
  if (K > 2) throw ParameterError("p-recursion: backend supports |k| <= 2");
  std::vector<int> steps = path;
  if (steps.empty())
    for (int i = 0; i < D; ++i)
      for (int r = 0; r < k[i]; ++r) steps.push_back(i);
  {
    MultiIndex chk(D);
    for (int e : steps) {
      if (e < 0 || e >= D) throw ParameterError("p-recursion: path step out of range");
      chk[e] += 1;
    }
    if (!(chk == k)) throw ParameterError("p-recursion: path does not sum to k");
  }
  const int copies = K + 1;
  const int nv = copies * D;
  std::vector<double> out(static_cast<size_t>(D));
  for (int l = 0; l < D; ++l) {
    Poly P;
    {
      std::vector<int> e(static_cast<size_t>(nv), 0);
      e[static_cast<size_t>(l)] = 1;  // z_{1,l}
      P[e] = 1.0;
    }
    for (int s = 0; s < K; ++s) {
      const int e = steps[static_cast<size_t>(s)];
      // times sum_{j<=s+1} z_{j,e} - (s+1) z_{s+2,e}
      Poly next;
      for (const auto& [mono, c] : P) {
        for (int j = 0; j <= s; ++j) {
          auto m2 = mono;
          m2[static_cast<size_t>(j * D + e)] += 1;
          next[m2] += c;
        }
        auto m2 = mono;
        m2[static_cast<size_t>((s + 1) * D + e)] += 1;
        next[m2] -= (s + 1.0) * c;
      }
      P = std::move(next);
    }
    // Independent copies: E[prod_j m_j(z_j)] = prod_j E[m_j(z)].
    std::vector<MultiIndex> alphas;
    std::map<std::vector<int>, size_t> where;
    for (const auto& [mono, c] : P)
      for (int j = 0; j < copies; ++j) {
        std::vector<int> a(mono.begin() + j * D, mono.begin() + (j + 1) * D);
        if (where.emplace(a, alphas.size()).second) alphas.emplace_back(a);
      }
    const auto mom = oracle.moments(y, alphas);
    double v = 0.0;
    for (const auto& [mono, c] : P) {
      double t = c;
      for (int j = 0; j < copies; ++j) {
        std::vector<int> a(mono.begin() + j * D, mono.begin() + (j + 1) * D);
        t *= mom[where[a]];
      }
      v += t;
    }
    out[static_cast<size_t>(l)] = v / std::pow(oracle.sigma(), 2 * K);
  }
  return out;
}

// ----- ScoreOracle ----------------------------------------------------------

namespace {

double rel_change(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1e-300);
}

}  // namespace

ScoreOracle::ScoreOracle(const ScoreModel& model, int cells, int order)
    : model_(model), rule_(QuadratureRule::make(model.map.d(), cells, std::max(order, 1))),
      ratio_(make_ratio_oracle(model.map, model.sigma, rule_)) {
  if (order > 0) return;
  // Probe points near and away from the image of g.
  const int d = model.map.d(), D = model.map.D();
  std::vector<std::vector<double>> probes;
  for (int p = 0; p < 5; ++p) {
    std::vector<double> u(static_cast<size_t>(d), (p + 0.37) / 5.0);
    auto y = model.map.evaluate(u);
    for (int i = 0; i < D; ++i) y[static_cast<size_t>(i)] += model.sigma * (0.5 * p - 1.0) * (i % 2 ? -1.0 : 1.0);
    probes.push_back(std::move(y));
  }
  auto snapshot = [&](const GaussianRatioOracle& o) {
    std::vector<double> v;
    for (const auto& y : probes) {
      v.push_back(o.log_density(y));
      for (double x : o.f(y)) v.push_back(x);
      for (double x : o.score(y)) v.push_back(x);
    }
    return v;
  };
  int n = 4;
  auto prev = snapshot(make_ratio_oracle(model.map, model.sigma, QuadratureRule::make(d, cells, n)));
  while (true) {
    const int n2 = 2 * n;
    QuadratureRule r2 = QuadratureRule::make(d, cells, n2);
    GaussianRatioOracle o2 = make_ratio_oracle(model.map, model.sigma, r2);
    auto cur = snapshot(o2);
    const bool done = rel_change(prev, cur) < 1e-8 || n2 >= 128;
    rule_ = std::move(r2);
    ratio_ = std::move(o2);
    if (done) break;
    prev = std::move(cur);
    n = n2;
  }
}

std::vector<double> ScoreOracle::f_derivative(std::span<const double> y, const MultiIndex& k, DerivBackend backend) const {
  if (k.order() == 0) return f_star(y);
  if (backend == DerivBackend::kPRecursion) {
    if (model_.map.d() > 2) throw ParameterError("p-recursion: backend supports d <= 2");
    return p_recursion_derivative(ratio_, y, k);
  }
  if (k.order() > 4) throw ParameterError("finite differences: backend supports |k| <= 4");
  return fd_derivative([this](std::span<const double> p) { return ratio_.f(p); }, y, k, 0.1 * model_.sigma);
}

std::vector<double> ScoreOracle::score_derivative(std::span<const double> y, const MultiIndex& k,
                                                  DerivBackend backend) const {
  auto out = f_derivative(y, k, backend);
  const double s2 = model_.sigma * model_.sigma;
  for (auto& v : out) v /= s2;
  if (k.order() == 0) {
    for (size_t i = 0; i < out.size(); ++i) out[i] -= y[i] / s2;
  } else if (k.order() == 1) {
    for (int i = 0; i < k.size(); ++i)
      if (k[i] == 1) out[static_cast<size_t>(i)] -= 1.0 / s2;
  }
  return out;
}

// ----- sampling -------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t CounterRng::next_u64() {
  return splitmix(splitmix(seed_ ^ splitmix(stream_)) + 0x9E3779B97F4A7C15ULL * ++counter_);
}

double CounterRng::uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform(), u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(kTwoPi * u2);
  has_spare_ = true;
  return r * std::cos(kTwoPi * u2);
}

std::vector<double> sample_data(const ScoreModel& model, int n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("sample_data: n must be >= 1");
  const int d = model.map.d(), D = model.map.D();
  std::vector<double> out(static_cast<size_t>(n) * static_cast<size_t>(D));
  std::vector<double> u(static_cast<size_t>(d));
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    for (double& v : u) v = rng.uniform();
    double* x = out.data() + static_cast<size_t>(i) * static_cast<size_t>(D);
    model.map.evaluate_into(u, x);
    for (int l = 0; l < D; ++l) x[l] += model.sigma * rng.normal();
  }
  return out;
}

double distance_to_image(const SmoothMapSpec& map, std::span<const double> y, int grid) {
  const int d = map.d(), D = map.D();
  long long total = 1;
  for (int i = 0; i < d; ++i) total *= grid;
  std::vector<double> u(static_cast<size_t>(d)), g(static_cast<size_t>(D));
  double best = std::numeric_limits<double>::infinity();
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d; ++i) {
      u[static_cast<size_t>(i)] = static_cast<double>(rem % grid) / (grid - 1);
      rem /= grid;
    }
    map.evaluate_into(u, g.data());
    double s = 0.0;
    for (int l = 0; l < D; ++l) s += (y[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]) * (y[static_cast<size_t>(l)] - g[static_cast<size_t>(l)]);
    best = std::min(best, s);
  }
  return std::sqrt(best);
}

TailResult tail_mass(const ScoreModel& model, double R, TailMode mode, int n, std::uint64_t seed, int grid) {
  const int D = model.map.D();
  const double s = model.sigma;
  if (mode == TailMode::kBound) {
    const double base = R * R - D * s * s;
    if (base < -1e-12 * R * R) throw ParameterError("tail_mass: bound requires R >= sigma sqrt(D)");
    const double b = std::max(base, 0.0);
    return {std::exp(-std::min(b / (D * s * s), std::sqrt(b) / s) / 16.0), 0.0};
  }
  if (n < 1) throw ParameterError("tail_mass: n must be >= 1");
  const auto x = sample_data(model, n, seed);
  // Image samples shared by all points.
  const int d = model.map.d();
  long long total = 1;
  for (int i = 0; i < d; ++i) total *= grid;
  std::vector<double> img(static_cast<size_t>(total) * static_cast<size_t>(D));
  std::vector<double> u(static_cast<size_t>(d));
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < d; ++i) {
      u[static_cast<size_t>(i)] = static_cast<double>(rem % grid) / (grid - 1);
      rem /= grid;
    }
    model.map.evaluate_into(u, img.data() + static_cast<size_t>(p) * static_cast<size_t>(D));
  }
  long long outside = 0;
  const double R2 = R * R;
  for (int i = 0; i < n; ++i) {
    const double* y = x.data() + static_cast<size_t>(i) * static_cast<size_t>(D);
    bool inside = false;
    for (long long p = 0; p < total && !inside; ++p) {
      double s2 = 0.0;
      for (int l = 0; l < D; ++l) {
        const double t = y[l] - img[static_cast<size_t>(p) * static_cast<size_t>(D) + static_cast<size_t>(l)];
        s2 += t * t;
      }
      inside = s2 <= R2;
    }
    if (!inside) ++outside;
  }
  const double pr = static_cast<double>(outside) / n;
  return {pr, std::sqrt(std::max(pr * (1.0 - pr), 1.0 / n) / n)};
}

}  // namespace gelunet
