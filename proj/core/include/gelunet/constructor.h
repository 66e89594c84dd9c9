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

// Score network construction: local polynomial approximation of g, per-cell
// Gaussian integrals as GELU networks, parallel sums P_l and Q and a final
// division f = P / Q behind an input clip.

#ifndef GELUNET_CONSTRUCTOR_H_
#define GELUNET_CONSTRUCTOR_H_

#include <span>
#include <string>
#include <vector>

#include "gelunet/calculus.h"
#include "gelunet/network.h"
#include "gelunet/score_oracle.h"

namespace gelunet {

// Piecewise Taylor expansion of g of degree floor(beta) on N^d cells with
// anchors at the upper corners u_j = j / N.
class LocalPolyDecomposition {
 public:
  LocalPolyDecomposition(const SmoothMapSpec& map, double eps);

  int N() const { return N_; }
  int d() const { return d_; }
  int D() const { return D_; }
  int degree() const { return degree_; }
  int cells() const { return static_cast<int>(anchors_.size()); }
  // Multi-indices |k| <= degree in graded order.
  const std::vector<MultiIndex>& ks() const { return ks_; }

  // j in {1..N}^d of a flat cell index.
  std::vector<int> cell_index(int cell) const;
  const std::vector<double>& anchor(int cell) const { return anchors_[static_cast<size_t>(cell)]; }
  std::vector<double> cell_lo(int cell) const;
  std::vector<double> cell_hi(int cell) const;
  // Flat index of the cell containing u (boundaries go to the lower cell).
  int locate(std::span<const double> u) const;

  std::vector<double> evaluate(std::span<const double> u) const;
  // The polynomial of `cell`, evaluated anywhere.
  std::vector<double> evaluate_cell(int cell, std::span<const double> u) const;
  std::vector<double> derivative_cell(int cell, std::span<const double> u, const MultiIndex& k) const;

  // Grid sup of ||g_circ - g|| measured at construction.
  double sup_error() const { return sup_error_; }
  // Grid sup of |g_circ_l| over all l.
  double sup_abs() const { return sup_abs_; }

 private:
  int N_, d_, D_, degree_;
  std::vector<MultiIndex> ks_;
  std::vector<std::vector<double>> anchors_;
  // coef_[cell][ki * D + l] = d^k g_l(u_j) / k!
  std::vector<std::vector<double>> coef_;
  double sup_error_ = 0.0;
  double sup_abs_ = 0.0;
};

LocalPolyDecomposition local_poly_decompose(const SmoothMapSpec& map, double eps);

// The ratio oracle of g_circ: a cell-aligned rule with `refine` sub-cells per
// cell and axis and `order` nodes each.
GaussianRatioOracle make_f_circ_oracle(const LocalPolyDecomposition& decomp, double sigma, int order, int refine = 2);
std::vector<double> f_circ_oracle(const LocalPolyDecomposition& decomp, double sigma, std::span<const double> y,
                                  int order = 20);

enum class ConstructionMode { kTheorem, kPractical };

struct ConstructionParams {
  ConstructionMode mode = ConstructionMode::kPractical;
  double eps = 0.25;
  int m = 1;
  double sigma = 1.0;
  int d = 1;
  int D = 1;
  double beta = 3.0;
  double H = 1.0;
  double R = 1.0;
  // Logs are kept because theorem-mode tolerances underflow.
  double log_inv_eps0 = 0.0;
  double log_inv_eps_prime = 0.0;
  int r = 8;
  int N_div = 24;
  int quad_order = 20;
  double R_inf = 2.5;
  // Expansion sub-cells per cell and axis for the integral networks.
  int subcells = 1;

  double eps0() const;
  double eps_prime() const;
  // floor(beta) and P(d, beta).
  int taylor_degree() const;
  int P() const;

  // All derived quantities from (eps, m) with unit constants.
  static ConstructionParams theorem(const ScoreModel& model, double eps, int m);
  // Explicit values; R_inf <= 0 picks 5/2 v sup_K |y|_inf.
  static ConstructionParams practical(const ScoreModel& model, double eps, int m, int r, int N_div, int quad_order,
                                      double R, double eps_prime, double R_inf = 0.0, int subcells = 1);

  // Throws ParameterError on invalid values; returns advisory warnings for
  // the smallness preconditions (evaluated with C1 = C2 = 1).
  std::vector<std::string> validate() const;
  std::string to_json() const;
};

// Pieces on which the exponential is expanded: each cell split into
// `subcells`^d boxes, each anchored at its upper corner.
struct ExpansionPiece {
  int cell = 0;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<double> anchor;
  double volume = 0.0;
};
std::vector<ExpansionPiece> expansion_pieces(const LocalPolyDecomposition& decomp, int subcells);

// V_{j,0} network and the exact affine R_j of one piece.
struct VNets {
  GeluNetwork v0;
  AffineMap R;
  // Anchor value g_circ_j(u_j).
  std::vector<double> center;
};
std::vector<VNets> build_v_nets(const LocalPolyDecomposition& decomp, double sigma, const ConstructionParams& params);
VNets build_v_net(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, double sigma,
                  const ConstructionParams& params);

// psi = 1 (psi_index < 0) or g_circ_{j,l} (psi_index = l).
struct PsiCoeffs {
  std::vector<MultiIndex> ks;  // over the P(d, beta) coordinates, |k| <= r - 1
  std::vector<double> a;
  // max |a| / (2 vol); above 1 the expansion precondition is broken.
  double bound_ratio = 0.0;
};
PsiCoeffs compute_psi_coeffs(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, int psi_index, int r,
                             int order);

// Upsilon networks of one piece for psi = 1, g_circ_1, ..., g_circ_D, sharing
// V_{j,0}, R_j, the clip and the monomials. Input y in R^D (already clipped).
struct UpsilonBlock {
  GeluNetwork net;  // D + 1 outputs
  double coeff_ratio = 0.0;
};
UpsilonBlock build_upsilon_block(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece,
                                 const ConstructionParams& params);
// Upsilon_j[psi] summed over the pieces of cell j.
GeluNetwork build_upsilon_net(const LocalPolyDecomposition& decomp, int cell, int psi_index,
                              const ConstructionParams& params);
// Exact Upsilon of a piece by quadrature.
double upsilon_exact(const LocalPolyDecomposition& decomp, const ExpansionPiece& piece, int psi_index, double sigma,
                     std::span<const double> y, int order);

// s(y) = -y / sigma^2 + f(y) / sigma^2 around a GELU network f.
class ScoreNetwork {
 public:
  ScoreNetwork() = default;
  ScoreNetwork(GeluNetwork f_bar, double sigma) : f_(std::move(f_bar)), sigma_(sigma) {}

  const GeluNetwork& f_bar() const { return f_; }
  double sigma() const { return sigma_; }
  std::vector<double> evaluate(std::span<const double> y) const;
  std::vector<double> derivative(std::span<const double> y, const MultiIndex& k) const;
  // Jets of s up to `degree`, laid out as GeluNetwork::taylor.
  std::vector<double> taylor(std::span<const double> y, int degree) const;

 private:
  GeluNetwork f_;
  double sigma_ = 1.0;
};

struct TheoreticalBounds {
  // Error shape per |k| = 0..m.
  std::vector<double> error_shape;
  double eps_exponent_error = 0.0;
  double eps_exponent_S = 0.0;
  int P = 0;
  double L_shape = 0.0;
  double log_S_shape = 0.0;
  double logB_shape = 0.0;
  std::string note = "shape-only, constants unspecified";
  std::string to_json() const;
};
TheoreticalBounds theoretical_bounds(const ConstructionParams& params);

struct BuildReport {
  ConstructionParams params;
  double g_circ = 0.0;
  double f_circ_vs_f_star = 0.0;
  double upsilon_max = 0.0;
  double q_floor = 0.0;
  NetworkConfig config;
  std::vector<std::string> warnings;
  TheoreticalBounds bounds;
  // Division inputs are (P_l * x_scale, Q * y_scale).
  double div_x_scale = 0.5;
  double div_y_scale = 0.5;
  int pieces = 0;
  double build_seconds = 0.0;
  std::string to_json() const;
};

struct AssemblyOptions {
  // Points per axis of the grid on which K is sampled for the checks.
  int k_grid = 41;
  // Points used for the per-piece Upsilon check (0 skips it).
  int upsilon_points = 24;
  bool keep_blocks = false;
};

struct ScoreBuild {
  ScoreNetwork s_bar;
  // Clip followed by the piece sums; outputs (Q, P_1, ..., P_D).
  GeluNetwork pq;
  std::vector<GeluNetwork> blocks;
  BuildReport report;
};

// Throws ConstructionError when the denominator floor Q >= 2^-N_div fails on
// the K grid.
ScoreBuild assemble_score_network(const ScoreModel& model, const ConstructionParams& params,
                                  const AssemblyOptions& options = {});

// Points of a per-axis grid over the bounding box of K that lie in K.
std::vector<double> k_grid_points(const ScoreModel& model, double R, int per_axis);

}  // namespace gelunet

#endif  // GELUNET_CONSTRUCTOR_H_
