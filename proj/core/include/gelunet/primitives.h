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

// Certified GELU approximators: identity, clip, square, product, polynomial,
// exponential, partition of unity and division.
//
// Every builder returns the network together with a Certificate: a region, a
// Sobolev order m and a claimed W^{m,inf} error on that region. The claim is
// propagated from the analytic tail bounds of GELU and never drops below the
// floating-point floor of the construction. Passing `checked = true` measures
// the claim on a 32-per-axis grid and throws ConstructionError when the
// measured error exceeds twice the claim.

#ifndef GELUNET_PRIMITIVES_H_
#define GELUNET_PRIMITIVES_H_

#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gelunet/foundation.h"
#include "gelunet/network.h"

namespace gelunet {

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  static Box cube(int dim, double lo, double hi);
  int dim() const { return static_cast<int>(lo.size()); }
};

struct Certificate {
  Box region;
  int order = 0;
  double claimed_error = 0.0;
  std::optional<double> claimed_whole_line_bound;
  // When set, the claim on [-C, C]^n is C^3 * claimed_error for 1 <= C <= c_max.
  bool cubic_scaling = false;
  double c_max = 1.0;
  // Nonzero: the region is restricted to |x_0| <= cone * x_1 (division).
  double cone = 0.0;
};

struct Primitive {
  GeluNetwork net;
  Certificate cert;
};

struct PartitionOfUnity {
  std::vector<GeluNetwork> nets;  // psi_1 .. psi_N
  std::vector<double> knots;      // a_0 .. a_N
  Certificate cert;               // claimed_error bounds psi_i off its support
};

// Returns d^k ref(x) for every output of the reference function.
using DerivOracle = std::function<std::vector<double>(std::span<const double>, const MultiIndex&)>;

using PolyCoeffs = std::vector<std::pair<MultiIndex, double>>;

Primitive build_identity(int L, double eps, double K, int m, bool checked = false);
Primitive build_clip(double A, double eps, int m, bool checked = false);
Primitive build_square(double eps, int m, bool checked = false);
Primitive build_mul(double eps, int m, bool checked = false);
Primitive build_poly(const PolyCoeffs& coeffs, int input_dim, int degree, double eps, int m,
                     double K, bool checked = false);
Primitive build_exp_neg(double eps, int m, double A, bool checked = false);
PartitionOfUnity build_partition_of_unity(int N, double eps, int m, bool checked = false);

struct DivOptions {
  // 0: full box [-1,1] x [a_0,1]. Positive: only |x| <= cone * y is certified.
  double cone = 0.0;
  bool checked = false;
};
Primitive build_div(int N, double eps, int m, const DivOptions& opts = {});

// Monomials z^k, 1 <= |k| <= degree, of z in [-1,1]^I via a binary product
// tree. `claimed_error` bounds every output in W^{m,inf}([-1,1]^I).
struct MonomialNet {
  GeluNetwork net;
  std::vector<MultiIndex> monomials;
  double claimed_error = 0.0;
  int order = 0;
};
MonomialNet build_monomials(int input_dim, int degree, double node_eps, int m);
// Claimed W^{m,inf} error of build_monomials for a given node tolerance.
double monomial_error_bound(int degree, double node_eps, int m);

// Several polynomials sharing one monomial network. coeffs[o] holds the
// coefficients of output o, inputs live in prod_p [-K_p, K_p].
Primitive build_poly_multi(const std::vector<PolyCoeffs>& coeffs, int input_dim, int degree,
                           double eps, int m, const std::vector<double>& K);
// Same, reusing a prebuilt monomial network.
Primitive poly_from_monomials(const MonomialNet& mono, const std::vector<PolyCoeffs>& coeffs,
                              const std::vector<double>& K);

struct SobolevErrorTable {
  std::vector<double> per_order;  // index = total derivative order
  double max() const;
};

// Grid sup of |d^k net - d^k ref| for each order 0..m; grid >= 16 per axis.
// `keep` optionally filters grid points.
SobolevErrorTable measure_sobolev_error(const GeluNetwork& net, const DerivOracle& reference,
                                        const Box& region, int m, int grid,
                                        const std::function<bool(std::span<const double>)>& keep = {});

// sup over R of |GELU^(n)|.
double gelu_derivative_sup(int n);

}  // namespace gelunet

#endif  // GELUNET_PRIMITIVES_H_
