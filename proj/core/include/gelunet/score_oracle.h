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

// Ground truth for the noisy manifold model X = g(U) + sigma Z with U uniform
// on [0,1]^d: density, posterior mean f, score and their derivatives.
//
// All Gaussian integrals are evaluated as weighted sums over a tensor
// Gauss-Legendre rule whose cells can be aligned with a piecewise map. The
// exponents are shifted by their per-query maximum before exponentiation.

#ifndef GELUNET_SCORE_ORACLE_H_
#define GELUNET_SCORE_ORACLE_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gelunet/foundation.h"

namespace gelunet {

// A closed-form map g : [0,1]^d -> R^D.
//   polynomial:    g_l(u) = sum_t c_t u^{k_t}
//   trigonometric: g_l(u) = sum_t a_t cos(w_t . u) + b_t sin(w_t . u)
class SmoothMapSpec {
 public:
  enum class Family { kPolynomial, kTrigonometric };
  struct PolyTerm {
    MultiIndex k;
    double c = 0.0;
  };
  struct TrigTerm {
    std::vector<double> freq;
    double cos_coef = 0.0;
    double sin_coef = 0.0;
  };

  static SmoothMapSpec polynomial(int d, std::vector<std::vector<PolyTerm>> terms, double beta, double H);
  static SmoothMapSpec trigonometric(int d, std::vector<std::vector<TrigTerm>> terms, double beta, double H);
  // u -> (cos 2 pi u, sin 2 pi u), d = 1, D = 2, H = (2 pi)^3.
  static SmoothMapSpec circle(double beta = 3.0);
  // u -> c for every u.
  static SmoothMapSpec constant(int d, std::vector<double> c);

  Family family() const { return family_; }
  int d() const { return d_; }
  int D() const { return D_; }
  double beta() const { return beta_; }
  double H() const { return H_; }
  // Largest integer strictly below beta.
  int taylor_degree() const;

  std::vector<double> evaluate(std::span<const double> u) const;
  void evaluate_into(std::span<const double> u, double* out) const;
  // d^k g(u), every output coordinate.
  std::vector<double> derivative(std::span<const double> u, const MultiIndex& k) const;

  // Checks sup ||g|| <= 1 on a 64^d grid and the declared Hoelder constant
  // on grid neighbours; throws ParameterError naming the violated invariant.
  void validate() const;

  std::string to_json() const;
  // Schema: {family, coeffs, d, D, beta, H}; polynomial coeffs hold one list
  // of {"k": [...], "c": v} per output, trigonometric ones one list of
  // {"freq": [...], "cos": a, "sin": b}.
  static SmoothMapSpec from_json(const std::string& text);

  const std::vector<std::vector<PolyTerm>>& poly_terms() const { return poly_; }
  const std::vector<std::vector<TrigTerm>>& trig_terms() const { return trig_; }

 private:
  Family family_ = Family::kPolynomial;
  int d_ = 1;
  int D_ = 1;
  double beta_ = 1.0;
  double H_ = 1.0;
  std::vector<std::vector<PolyTerm>> poly_;
  std::vector<std::vector<TrigTerm>> trig_;
};

struct ScoreModel {
  SmoothMapSpec map;
  double sigma = 1.0;

  ScoreModel(SmoothMapSpec m, double s);
  // Also reads "sigma" from the model file.
  static ScoreModel from_json(const std::string& text);
  std::string to_json() const;
};

// Tensor Gauss-Legendre rule on [0,1]^d with `cells` equal cells per axis
// and `order` nodes per cell and axis.
struct QuadratureRule {
  int d = 1;
  int cells = 1;
  int order = 1;
  std::vector<double> nodes;    // point-major, d values per node
  std::vector<double> weights;  // sum to 1
  std::vector<int> cell_of;     // flat cell index per node

  static QuadratureRule make(int d, int cells, int order);
  int size() const { return static_cast<int>(weights.size()); }
};

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

// Posterior of a discrete latent law: point masses z_q with weights w_q,
// observed through N(z, sigma^2 I). Shared by g* and the local polynomial map.
class GaussianRatioOracle {
 public:
  GaussianRatioOracle(int D, double sigma, std::vector<double> points, std::vector<double> weights);

  int D() const { return D_; }
  double sigma() const { return sigma_; }
  int size() const { return static_cast<int>(weights_.size()); }

  double log_density(std::span<const double> y) const;
  // Throws NumericError when the density underflows; use log_density there.
  double density(std::span<const double> y) const;
  std::vector<double> f(std::span<const double> y) const;
  std::vector<double> score(std::span<const double> y) const;
  // Posterior moments E[prod_i z_i^{alpha_i}] for every alpha in `alphas`.
  std::vector<double> moments(std::span<const double> y, const std::vector<MultiIndex>& alphas) const;
  // Posterior weights normalized to sum 1.
  std::vector<double> posterior(std::span<const double> y) const;

 private:
  int D_;
  double sigma_;
  std::vector<double> points_;
  std::vector<double> log_w_;
  std::vector<double> weights_;
};

enum class DerivBackend { kFiniteDifference, kPRecursion };

// Oracle for a ScoreModel with an adaptively chosen rule.
class ScoreOracle {
 public:
  // order 0 picks the rule adaptively: doubling until density, f and score
  // change by less than 1e-8 relative on probe points (cap 128).
  ScoreOracle(const ScoreModel& model, int cells = 8, int order = 0);

  const ScoreModel& model() const { return model_; }
  const QuadratureRule& rule() const { return rule_; }
  const GaussianRatioOracle& ratio() const { return ratio_; }

  double log_density(std::span<const double> y) const { return ratio_.log_density(y); }
  double density(std::span<const double> y) const { return ratio_.density(y); }
  std::vector<double> f_star(std::span<const double> y) const { return ratio_.f(y); }
  std::vector<double> score(std::span<const double> y) const { return ratio_.score(y); }

  // d^k f*(y); finite differences allow |k| <= 4, the recursion |k| <= 2 and
  // d <= 2.
  std::vector<double> f_derivative(std::span<const double> y, const MultiIndex& k, DerivBackend backend) const;
  // d^k s*(y) = d^k f* / sigma^2 minus the identity part for |k| <= 1.
  std::vector<double> score_derivative(std::span<const double> y, const MultiIndex& k, DerivBackend backend) const;

 private:
  ScoreModel model_;
  QuadratureRule rule_;
  GaussianRatioOracle ratio_;
};

GaussianRatioOracle make_ratio_oracle(const SmoothMapSpec& map, double sigma, const QuadratureRule& rule);

// Richardson-extrapolated nested central differences of a vector function.
// h is the base step; three levels h, h/2, h/4.
std::vector<double> fd_derivative(const std::function<std::vector<double>(std::span<const double>)>& fn,
                                  std::span<const double> x, const MultiIndex& k, double h);

// Derivatives of the posterior mean from the moment recursion. `path` orders
// the unit steps; empty means coordinate order.
std::vector<double> p_recursion_derivative(const GaussianRatioOracle& oracle, std::span<const double> y,
                                           const MultiIndex& k, const std::vector<int>& path = {});

// Counter-based generator: SplitMix64 on (seed, stream, counter).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
  std::uint64_t next_u64();
  double uniform();   // in (0, 1)
  double normal();    // Box-Muller

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// n points of g(U) + sigma Z, row-major; point i uses substream i.
std::vector<double> sample_data(const ScoreModel& model, int n, std::uint64_t seed);

enum class TailMode { kBound, kEstimate };
struct TailResult {
  double value = 0.0;
  double stderr_ = 0.0;
};
// Bound: exp(-min((R^2 - D s^2)/(D s^2), sqrt(R^2 - D s^2)/s)/16).
// Estimate: Monte Carlo fraction of samples farther than R from g([0,1]^d),
// the distance taken over a `grid`-per-axis lattice.
TailResult tail_mass(const ScoreModel& model, double R, TailMode mode, int n = 100000, std::uint64_t seed = 1,
                     int grid = 256);

// min over a grid-per-axis lattice of ||y - g(u)||.
double distance_to_image(const SmoothMapSpec& map, std::span<const double> y, int grid = 256);

}  // namespace gelunet

#endif  // GELUNET_SCORE_ORACLE_H_
