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

// Sparse GELU feedforward networks
//
//   f(x) = A_L x_{L-1} - b_L,   x_j = GELU(A_j x_{j-1} - b_j),   x_0 = x.

#ifndef GELUNET_NETWORK_H_
#define GELUNET_NETWORK_H_

#include <span>
#include <string>
#include <vector>

#include "gelunet/foundation.h"

namespace gelunet {

struct Triplet {
  int row;
  int col;
  double value;
};

// One affine map. Entries are kept sorted row-major with zeros dropped and
// duplicates summed, so iteration order and nonzero counts are canonical.
class Layer {
 public:
  Layer() = default;
  Layer(int rows, int cols, std::vector<Triplet> entries, std::vector<double> bias);
  static Layer dense(int rows, int cols, std::span<const double> row_major,
                     std::vector<double> bias);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const std::vector<Triplet>& entries() const { return entries_; }
  const std::vector<double>& bias() const { return bias_; }
  // Entry range of row r in entries().
  int row_begin(int r) const { return row_ptr_[static_cast<size_t>(r)]; }
  int row_end(int r) const { return row_ptr_[static_cast<size_t>(r) + 1]; }

  long long nonzeros() const;
  double max_abs() const;

  // out = A in - b
  void apply(const double* in, double* out) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Triplet> entries_;
  std::vector<int> row_ptr_;
  std::vector<double> bias_;
};

class GeluNetwork {
 public:
  GeluNetwork() = default;
  GeluNetwork(int input_width, std::vector<Layer> layers);

  int depth() const { return static_cast<int>(layers_.size()); }
  int input_width() const { return input_width_; }
  int output_width() const { return layers_.back().rows(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const NetworkConfig& config() const { return config_; }

  std::vector<double> evaluate(std::span<const double> x) const;
  // d^k f(x) for every output; |k| <= kMaxOrder.
  std::vector<double> derivative(std::span<const double> x, const MultiIndex& k) const;
  // Output jets in all input variables up to total degree `degree`:
  // result[o * space.size() + i] is the Taylor coefficient of index i.
  std::vector<double> taylor(std::span<const double> x, int degree) const;

  // {"architecture":[W_0..W_L],"layers":[{"triplets":[[r,c,v],...],"bias":[...]}]}
  std::string to_json() const;
  static GeluNetwork from_json(const std::string& text);

 private:
  // Pushes jets (width x jet size, row-major) through the network.
  std::vector<double> propagate(std::vector<double> state, const JetSpace& space) const;

  int input_width_ = 0;
  std::vector<Layer> layers_;
  NetworkConfig config_;
};

// Recomputes the configuration from storage.
NetworkConfig config_stats(const GeluNetwork& net);

}  // namespace gelunet

#endif  // GELUNET_NETWORK_H_
