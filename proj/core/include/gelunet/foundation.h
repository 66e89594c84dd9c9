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

// Multi-indices, GELU derivatives and truncated Taylor jets.

#ifndef GELUNET_FOUNDATION_H_
#define GELUNET_FOUNDATION_H_

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gelunet {

// Highest derivative / jet order supported anywhere in the library.
inline constexpr int kMaxOrder = 12;

class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(int dim) : e_(static_cast<size_t>(dim), 0) {}
  MultiIndex(std::initializer_list<int> entries);
  explicit MultiIndex(std::vector<int> entries);

  static MultiIndex unit(int dim, int i);

  int size() const { return static_cast<int>(e_.size()); }
  int operator[](int i) const { return e_[static_cast<size_t>(i)]; }
  int& operator[](int i) { return e_[static_cast<size_t>(i)]; }
  const std::vector<int>& entries() const { return e_; }

  // |k|
  int order() const;
  // k!; exact in double for |k| <= 18, throws beyond 170.
  double factorial() const;

  MultiIndex operator+(const MultiIndex& o) const;
  bool operator==(const MultiIndex& o) const = default;
  bool operator<(const MultiIndex& o) const { return e_ < o.e_; }

  // "2-0-1"
  std::string to_string() const;

 private:
  std::vector<int> e_;
};

// All k with |k| <= max_total_degree, graded; inside one degree the first
// coordinate decreases: (0,0),(1,0),(0,1),(2,0),(1,1),(0,2).
std::vector<MultiIndex> enumerate_multiindices(int dim, int max_total_degree);

// C(n, k) as double; exact for the sizes used here.
double binomial(int n, int k);

// prod_i v_i^{k_i}
double monomial_eval(std::span<const double> v, const MultiIndex& k);

double normal_pdf(double x);
double normal_cdf(double x);
double gelu(double x);

// n-th derivative of x * Phi(x); n <= kMaxOrder.
double gelu_derivative(double x, int n);
// Fills out[0..n] with the derivatives of orders 0..n.
void gelu_derivatives(double x, int n, double* out);

// Sizes and multiplication table for jets in `vars` variables truncated at
// total degree `degree`. Shared, immutable, cached by (vars, degree).
class JetSpace {
 public:
  static std::shared_ptr<const JetSpace> get(int vars, int degree);

  int vars() const { return vars_; }
  int degree() const { return degree_; }
  int size() const { return static_cast<int>(index_.size()); }
  const std::vector<MultiIndex>& indices() const { return index_; }
  int find(const MultiIndex& k) const;
  // Position of the unit monomial t_i.
  int unit(int i) const { return 1 + i; }

  // out = a * b (truncated). out must not alias a or b.
  void multiply(const double* a, const double* b, double* out) const;
  // Replaces jet h (zero constant term) by sum_n c[n] h^n, n <= degree.
  void compose(const double* c, double* jet) const;

  JetSpace(int vars, int degree);

 private:
  struct Term {
    int32_t a, b, out;
  };
  int vars_;
  int degree_;
  std::vector<MultiIndex> index_;
  std::vector<int> degree_start_;
  std::vector<Term> table_;
};

// Truncated multivariate Taylor polynomial; coefficient of prod t_i^{k_i}.
class Jet {
 public:
  Jet(std::shared_ptr<const JetSpace> space);
  static Jet constant(std::shared_ptr<const JetSpace> space, double c);
  static Jet variable(std::shared_ptr<const JetSpace> space, int i, double value);

  const JetSpace& space() const { return *space_; }
  std::shared_ptr<const JetSpace> space_ptr() const { return space_; }
  int degree() const { return space_->degree(); }
  double constant_term() const { return c_[0]; }
  double coeff(const MultiIndex& k) const;
  double& coeff_ref(const MultiIndex& k);
  // Partial derivative d^k at the expansion point (= coeff * k!).
  double derivative(const MultiIndex& k) const;
  const std::vector<double>& coeffs() const { return c_; }
  std::vector<double>& coeffs() { return c_; }

  Jet operator+(const Jet& o) const;
  Jet operator-(const Jet& o) const;
  Jet operator*(const Jet& o) const;
  Jet operator*(double s) const;

 private:
  void check_same(const Jet& o) const;
  std::shared_ptr<const JetSpace> space_;
  std::vector<double> c_;
};

// Jet of f o inner truncated at inner.degree(), where outer_derivs holds
// f(a), f'(a), ..., f^(p)(a) and a is the constant term of inner.
Jet jet_compose_univariate(std::span<const double> outer_derivs, const Jet& inner);

// Configuration of a network: depth, widths W_0..W_L, nonzero count, max |entry|.
struct NetworkConfig {
  int L = 0;
  std::vector<int> widths;
  long long S = 0;
  double B = 0.0;

  int max_width() const;
  bool within(int L_max, int W_max, long long S_max, double B_max) const;
};

}  // namespace gelunet

#endif  // GELUNET_FOUNDATION_H_
