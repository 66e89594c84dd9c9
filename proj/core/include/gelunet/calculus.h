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

// Structural composition of networks.

#ifndef GELUNET_CALCULUS_H_
#define GELUNET_CALCULUS_H_

#include <vector>

#include "gelunet/network.h"

namespace gelunet {

enum class ParallelMode { kDistinctInputs, kSharedInput };

// x -> M x + c with a dense row-major M.
struct AffineMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> M;
  std::vector<double> c;

  static AffineMap identity(int n);
  static AffineMap diagonal(std::vector<double> scale, std::vector<double> shift);
  // Picks coordinates `idx` of an input of width n, scaled by `scale`.
  static AffineMap select(int n, const std::vector<int>& idx, double scale = 1.0);
  bool is_identity() const;
  std::vector<double> apply(std::span<const double> x) const;
};

// nets[K-1] o ... o nets[0]; adjacent affine maps are fused.
GeluNetwork concatenate(const std::vector<GeluNetwork>& nets);
GeluNetwork concatenate(const GeluNetwork& first, const GeluNetwork& second);

GeluNetwork parallelize(const std::vector<GeluNetwork>& nets, ParallelMode mode);

// Sum of member outputs; final affine maps are fused.
GeluNetwork sum_parallel(const std::vector<GeluNetwork>& nets, ParallelMode mode);

// post o net o pre, fused into the first and last layers.
GeluNetwork affine_wrap(const GeluNetwork& net, const AffineMap& pre, const AffineMap& post);

// A depth-1 network computing the affine map exactly.
GeluNetwork affine_network(const AffineMap& map);

// Appends shifted-GELU identity layers until the depth is target_L. K bounds
// the outputs on the region of interest; eps and m set the identity tolerance.
GeluNetwork pad_depth(const GeluNetwork& net, int target_L, double eps, double K, int m);

}  // namespace gelunet

#endif  // GELUNET_CALCULUS_H_
