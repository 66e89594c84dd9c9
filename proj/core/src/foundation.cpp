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

#include "gelunet/foundation.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "gelunet/errors.h"

namespace gelunet {

MultiIndex::MultiIndex(std::initializer_list<int> entries) : e_(entries) {
  for (int v : e_)
    if (v < 0) throw ParameterError("multi-index entries must be non-negative");
}

MultiIndex::MultiIndex(std::vector<int> entries) : e_(std::move(entries)) {
  for (int v : e_)
    if (v < 0) throw ParameterError("multi-index entries must be non-negative");
}

MultiIndex MultiIndex::unit(int dim, int i) {
  MultiIndex k(dim);
  k[i] = 1;
  return k;
}

int MultiIndex::order() const {
  int s = 0;
  for (int v : e_) s += v;
  return s;
}

double MultiIndex::factorial() const {
  if (order() > 170) throw ParameterError("multi-index factorial overflows double");
  double f = 1.0;
  for (int v : e_)
    for (int i = 2; i <= v; ++i) f *= i;
  return f;
}

MultiIndex MultiIndex::operator+(const MultiIndex& o) const {
  if (o.size() != size()) throw ParameterError("multi-index length mismatch");
  MultiIndex r(*this);
  for (size_t i = 0; i < e_.size(); ++i) r.e_[i] += o.e_[i];
  return r;
}

std::string MultiIndex::to_string() const {
  std::string s;
  for (size_t i = 0; i < e_.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(e_[i]);
  }
  return s;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

namespace {

void fill_degree(int dim, int pos, int remaining, std::vector<int>& cur,
                 std::vector<MultiIndex>& out) {
  if (pos == dim - 1) {
    cur[static_cast<size_t>(pos)] = remaining;
    out.emplace_back(cur);
    return;
  }
  for (int v = remaining; v >= 0; --v) {
    cur[static_cast<size_t>(pos)] = v;
    fill_degree(dim, pos + 1, remaining - v, cur, out);
  }
}

}  // namespace

std::vector<MultiIndex> enumerate_multiindices(int dim, int max_total_degree) {
  if (dim < 1) throw ParameterError("enumerate_multiindices: dimension must be >= 1");
  if (max_total_degree < 0) throw ParameterError("enumerate_multiindices: negative degree");
  double count = binomial(dim + max_total_degree, dim);
  if (count > 5e7) throw ParameterError("enumerate_multiindices: index count overflow");
  std::vector<MultiIndex> out;
  out.reserve(static_cast<size_t>(count));
  std::vector<int> cur(static_cast<size_t>(dim), 0);
  for (int t = 0; t <= max_total_degree; ++t) fill_degree(dim, 0, t, cur, out);
  return out;
}

double monomial_eval(std::span<const double> v, const MultiIndex& k) {
  if (static_cast<int>(v.size()) != k.size())
    throw ParameterError("monomial_eval: length mismatch");
  double p = 1.0;
  for (int i = 0; i < k.size(); ++i)
    for (int j = 0; j < k[i]; ++j) p *= v[static_cast<size_t>(i)];
  return p;
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * (0.5 * std::numbers::sqrt2)); }

double gelu(double x) { return x * normal_cdf(x); }

void gelu_derivatives(double x, int n, double* out) {
  if (!std::isfinite(x)) throw NumericError("gelu_derivative: non-finite argument");
  if (n < 0 || n > kMaxOrder) throw ParameterError("gelu_derivative: order outside [0, 12]");
  const double Phi = normal_cdf(x);
  out[0] = x * Phi;
  if (n == 0) return;
  const double phi = normal_pdf(x);
  out[1] = Phi + x * phi;
  if (n == 1) return;
  // phi^(j) = (-1)^j He_j(x) phi(x); He_{j+1} = x He_j - j He_{j-1}.
  double he_prev = 1.0, he = x;  // He_0, He_1
  double dphi_prev = phi;        // phi^(0)
  double dphi = -x * phi;        // phi^(1)
  for (int order = 2; order <= n; ++order) {
    // GELU^(order) = order * phi^(order-2) + x * phi^(order-1)
    out[order] = order * dphi_prev + x * dphi;
    double he_next = x * he - (order - 1) * he_prev;
    he_prev = he;
    he = he_next;
    dphi_prev = dphi;
    dphi = ((order % 2) ? -he : he) * phi;
  }
}

double gelu_derivative(double x, int n) {
  double buf[kMaxOrder + 1];
  gelu_derivatives(x, n, buf);
  return buf[n];
}

// ---------------------------------------------------------------------------

JetSpace::JetSpace(int vars, int degree) : vars_(vars), degree_(degree) {
  if (vars < 1) throw ParameterError("JetSpace: at least one variable required");
  if (degree < 0 || degree > kMaxOrder) throw ParameterError("JetSpace: degree outside [0, 12]");
  index_ = enumerate_multiindices(vars, degree);
  degree_start_.assign(static_cast<size_t>(degree + 2), 0);
  for (size_t i = 0; i < index_.size(); ++i) degree_start_[static_cast<size_t>(index_[i].order() + 1)]++;
  for (int t = 1; t <= degree + 1; ++t) degree_start_[t] += degree_start_[t - 1];
  std::map<MultiIndex, int> pos;
  for (size_t i = 0; i < index_.size(); ++i) pos[index_[i]] = static_cast<int>(i);
  for (size_t a = 0; a < index_.size(); ++a) {
    int da = index_[a].order();
    int end = degree_start_[static_cast<size_t>(degree - da + 1)];
    for (int b = 0; b < end; ++b) {
      table_.push_back({static_cast<int32_t>(a), b, pos.at(index_[a] + index_[static_cast<size_t>(b)])});
    }
  }
}

std::shared_ptr<const JetSpace> JetSpace::get(int vars, int degree) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const JetSpace>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(vars, degree);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto sp = std::make_shared<const JetSpace>(vars, degree);
  cache.emplace(key, sp);
  return sp;
}

int JetSpace::find(const MultiIndex& k) const {
  if (k.size() != vars_) return -1;
  int t = k.order();
  if (t > degree_) return -1;
  for (int i = degree_start_[static_cast<size_t>(t)]; i < degree_start_[static_cast<size_t>(t + 1)]; ++i)
    if (index_[static_cast<size_t>(i)] == k) return i;
  return -1;
}

void JetSpace::multiply(const double* a, const double* b, double* out) const {
  std::fill(out, out + size(), 0.0);
  for (const Term& t : table_) out[t.out] += a[t.a] * b[t.b];
}

void JetSpace::compose(const double* c, double* jet) const {
  const int n = size();
  if (degree_ == 0) {
    jet[0] = c[0];
    return;
  }
  if (degree_ == 1) {
    jet[0] = c[0];
    for (int i = 1; i < n; ++i) jet[i] *= c[1];
    return;
  }
  std::vector<double> h(jet, jet + n), r(static_cast<size_t>(n), 0.0), tmp(static_cast<size_t>(n));
  h[0] = 0.0;
  r[0] = c[degree_];
  for (int p = degree_ - 1; p >= 0; --p) {
    multiply(r.data(), h.data(), tmp.data());
    tmp[0] += c[p];
    r.swap(tmp);
  }
  std::copy(r.begin(), r.end(), jet);
}

// ---------------------------------------------------------------------------

Jet::Jet(std::shared_ptr<const JetSpace> space)
    : space_(std::move(space)), c_(static_cast<size_t>(space_->size()), 0.0) {}

Jet Jet::constant(std::shared_ptr<const JetSpace> space, double c) {
  Jet j(std::move(space));
  j.c_[0] = c;
  return j;
}

Jet Jet::variable(std::shared_ptr<const JetSpace> space, int i, double value) {
  Jet j(std::move(space));
  j.c_[0] = value;
  if (j.degree() >= 1) j.c_[static_cast<size_t>(j.space_->unit(i))] = 1.0;
  return j;
}

double Jet::coeff(const MultiIndex& k) const {
  int i = space_->find(k);
  if (i < 0) throw ParameterError("Jet::coeff: index outside jet");
  return c_[static_cast<size_t>(i)];
}

double& Jet::coeff_ref(const MultiIndex& k) {
  int i = space_->find(k);
  if (i < 0) throw ParameterError("Jet::coeff_ref: index outside jet");
  return c_[static_cast<size_t>(i)];
}

double Jet::derivative(const MultiIndex& k) const { return coeff(k) * k.factorial(); }

void Jet::check_same(const Jet& o) const {
  if (space_ != o.space_ && (space_->vars() != o.space_->vars() || space_->degree() != o.space_->degree()))
    throw ParameterError("Jet: mismatched jet spaces");
}

Jet Jet::operator+(const Jet& o) const {
  check_same(o);
  Jet r(*this);
  for (size_t i = 0; i < c_.size(); ++i) r.c_[i] += o.c_[i];
  return r;
}

Jet Jet::operator-(const Jet& o) const {
  check_same(o);
  Jet r(*this);
  for (size_t i = 0; i < c_.size(); ++i) r.c_[i] -= o.c_[i];
  return r;
}

Jet Jet::operator*(const Jet& o) const {
  check_same(o);
  Jet r(space_);
  space_->multiply(c_.data(), o.c_.data(), r.c_.data());
  return r;
}

Jet Jet::operator*(double s) const {
  Jet r(*this);
  for (double& v : r.c_) v *= s;
  return r;
}

Jet jet_compose_univariate(std::span<const double> outer_derivs, const Jet& inner) {
  const int deg = inner.degree();
  if (static_cast<int>(outer_derivs.size()) < deg + 1)
    throw ParameterError("jet_compose_univariate: outer derivative sequence too short");
  std::vector<double> c(static_cast<size_t>(deg + 1));
  double fact = 1.0;
  for (int n = 0; n <= deg; ++n) {
    if (n > 1) fact *= n;
    c[static_cast<size_t>(n)] = outer_derivs[static_cast<size_t>(n)] / fact;
  }
  Jet r(inner);
  inner.space().compose(c.data(), r.coeffs().data());
  return r;
}

// ---------------------------------------------------------------------------

int NetworkConfig::max_width() const {
  int w = 0;
  for (int v : widths) w = std::max(w, v);
  return w;
}

bool NetworkConfig::within(int L_max, int W_max, long long S_max, double B_max) const {
  return L <= L_max && max_width() <= W_max && S <= S_max && B <= B_max;
}

}  // namespace gelunet
