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

#include "gelunet/calculus.h"

#include <string>
#include <utility>

#include "gelunet/errors.h"
#include "gelunet/primitives.h"

namespace gelunet {

AffineMap AffineMap::identity(int n) {
  AffineMap a;
  a.rows = a.cols = n;
  a.M.assign(static_cast<size_t>(n * n), 0.0);
  for (int i = 0; i < n; ++i) a.M[static_cast<size_t>(i * n + i)] = 1.0;
  a.c.assign(static_cast<size_t>(n), 0.0);
  return a;
}

AffineMap AffineMap::diagonal(std::vector<double> scale, std::vector<double> shift) {
  if (scale.size() != shift.size()) throw ParameterError("AffineMap::diagonal: size mismatch");
  const int n = static_cast<int>(scale.size());
  AffineMap a;
  a.rows = a.cols = n;
  a.M.assign(static_cast<size_t>(n * n), 0.0);
  for (int i = 0; i < n; ++i) a.M[static_cast<size_t>(i * n + i)] = scale[static_cast<size_t>(i)];
  a.c = std::move(shift);
  return a;
}

AffineMap AffineMap::select(int n, const std::vector<int>& idx, double scale) {
  AffineMap a;
  a.rows = static_cast<int>(idx.size());
  a.cols = n;
  a.M.assign(static_cast<size_t>(a.rows * n), 0.0);
  for (int r = 0; r < a.rows; ++r) {
    if (idx[static_cast<size_t>(r)] < 0 || idx[static_cast<size_t>(r)] >= n)
      throw ParameterError("AffineMap::select: index out of range");
    a.M[static_cast<size_t>(r * n + idx[static_cast<size_t>(r)])] = scale;
  }
  a.c.assign(static_cast<size_t>(a.rows), 0.0);
  return a;
}

bool AffineMap::is_identity() const {
  if (rows != cols) return false;
  for (int r = 0; r < rows; ++r) {
    if (c[static_cast<size_t>(r)] != 0.0) return false;
    for (int k = 0; k < cols; ++k)
      if (M[static_cast<size_t>(r * cols + k)] != (r == k ? 1.0 : 0.0)) return false;
  }
  return true;
}

std::vector<double> AffineMap::apply(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != cols) throw ParameterError("AffineMap::apply: shape mismatch");
  std::vector<double> y(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int k = 0; k < cols; ++k) s += M[static_cast<size_t>(r * cols + k)] * x[static_cast<size_t>(k)];
    y[static_cast<size_t>(r)] = s + c[static_cast<size_t>(r)];
  }
  return y;
}

namespace {

// Sparse product left * right, with a scratch row of width right.cols().
std::vector<Triplet> sparse_product(const Layer& left, const Layer& right) {
  std::vector<Triplet> out;
  std::vector<double> acc(static_cast<size_t>(right.cols()), 0.0);
  std::vector<char> used(static_cast<size_t>(right.cols()), 0);
  std::vector<int> touched;
  const auto& le = left.entries();
  const auto& re = right.entries();
  for (int r = 0; r < left.rows(); ++r) {
    touched.clear();
    for (int e = left.row_begin(r); e < left.row_end(r); ++e) {
      const double v = le[static_cast<size_t>(e)].value;
      const int k = le[static_cast<size_t>(e)].col;
      for (int f = right.row_begin(k); f < right.row_end(k); ++f) {
        const int c = re[static_cast<size_t>(f)].col;
        if (!used[static_cast<size_t>(c)]) {
          used[static_cast<size_t>(c)] = 1;
          touched.push_back(c);
        }
        acc[static_cast<size_t>(c)] += v * re[static_cast<size_t>(f)].value;
      }
    }
    for (int c : touched) {
      out.push_back({r, c, acc[static_cast<size_t>(c)]});
      acc[static_cast<size_t>(c)] = 0.0;
      used[static_cast<size_t>(c)] = 0;
    }
  }
  return out;
}

// left.A * right_bias + left.b: the bias of the fused layer.
std::vector<double> fused_bias(const Layer& left, const std::vector<double>& right_bias) {
  std::vector<double> b(static_cast<size_t>(left.rows()));
  const auto& le = left.entries();
  for (int r = 0; r < left.rows(); ++r) {
    double s = 0.0;
    for (int e = left.row_begin(r); e < left.row_end(r); ++e)
      s += le[static_cast<size_t>(e)].value * right_bias[static_cast<size_t>(le[static_cast<size_t>(e)].col)];
    b[static_cast<size_t>(r)] = s + left.bias()[static_cast<size_t>(r)];
  }
  return b;
}

void check_equal_depth(const std::vector<GeluNetwork>& nets, const char* op) {
  if (nets.empty()) throw ParameterError(std::string(op) + ": no networks");
  for (const auto& n : nets)
    if (n.depth() != nets.front().depth())
      throw ParameterError(std::string(op) + ": unequal depths (pad first)");
}

}  // namespace

GeluNetwork concatenate(const GeluNetwork& first, const GeluNetwork& second) {
  if (first.output_width() != second.input_width())
    throw ParameterError("concatenate: output width " + std::to_string(first.output_width()) +
                         " != input width " + std::to_string(second.input_width()));
  const Layer& last = first.layers().back();
  const Layer& head = second.layers().front();
  // head(A_L h - b_L) - b'_1 = (A'_1 A_L) h - (A'_1 b_L + b'_1)
  Layer fused(head.rows(), last.cols(), sparse_product(head, last), fused_bias(head, last.bias()));
  std::vector<Layer> layers(first.layers().begin(), first.layers().end() - 1);
  layers.push_back(std::move(fused));
  layers.insert(layers.end(), second.layers().begin() + 1, second.layers().end());
  return GeluNetwork(first.input_width(), std::move(layers));
}

GeluNetwork concatenate(const std::vector<GeluNetwork>& nets) {
  if (nets.empty()) throw ParameterError("concatenate: no networks");
  GeluNetwork acc = nets.front();
  for (size_t i = 1; i < nets.size(); ++i) acc = concatenate(acc, nets[i]);
  return acc;
}

GeluNetwork parallelize(const std::vector<GeluNetwork>& nets, ParallelMode mode) {
  check_equal_depth(nets, "parallelize");
  if (nets.size() == 1) return nets.front();
  const int L = nets.front().depth();
  int in_width = 0;
  if (mode == ParallelMode::kSharedInput) {
    in_width = nets.front().input_width();
    for (const auto& n : nets)
      if (n.input_width() != in_width) throw ParameterError("parallelize: shared input needs equal input widths");
  } else {
    for (const auto& n : nets) in_width += n.input_width();
  }
  std::vector<Layer> layers;
  for (int j = 0; j < L; ++j) {
    std::vector<Triplet> t;
    std::vector<double> bias;
    int row_off = 0, col_off = 0;
    for (const auto& n : nets) {
      const Layer& l = n.layers()[static_cast<size_t>(j)];
      const bool shared_cols = (j == 0 && mode == ParallelMode::kSharedInput);
      for (const Triplet& e : l.entries()) t.push_back({e.row + row_off, e.col + (shared_cols ? 0 : col_off), e.value});
      bias.insert(bias.end(), l.bias().begin(), l.bias().end());
      row_off += l.rows();
      col_off += l.cols();
    }
    const int cols = (j == 0 && mode == ParallelMode::kSharedInput) ? in_width : col_off;
    layers.emplace_back(row_off, cols, std::move(t), std::move(bias));
  }
  return GeluNetwork(in_width, std::move(layers));
}

GeluNetwork sum_parallel(const std::vector<GeluNetwork>& nets, ParallelMode mode) {
  check_equal_depth(nets, "sum_parallel");
  const int o = nets.front().output_width();
  for (const auto& n : nets)
    if (n.output_width() != o) throw ParameterError("sum_parallel: unequal output widths");
  if (nets.size() == 1) return nets.front();
  GeluNetwork par = parallelize(nets, mode);
  const int K = static_cast<int>(nets.size());
  AffineMap sum;
  sum.rows = o;
  sum.cols = K * o;
  sum.M.assign(static_cast<size_t>(o * K * o), 0.0);
  for (int k = 0; k < K; ++k)
    for (int r = 0; r < o; ++r) sum.M[static_cast<size_t>(r * K * o + k * o + r)] = 1.0;
  sum.c.assign(static_cast<size_t>(o), 0.0);
  return affine_wrap(par, AffineMap::identity(par.input_width()), sum);
}

GeluNetwork affine_wrap(const GeluNetwork& net, const AffineMap& pre, const AffineMap& post) {
  if (pre.rows != net.input_width()) throw ParameterError("affine_wrap: pre-map output width mismatch");
  if (post.cols != net.output_width()) throw ParameterError("affine_wrap: post-map input width mismatch");
  std::vector<Layer> layers = net.layers();
  if (!pre.is_identity()) {
    const Layer& l = layers.front();
    // A (M x + c) - b = (A M) x - (b - A c)
    std::vector<Triplet> t;
    std::vector<double> bias(static_cast<size_t>(l.rows()));
    std::vector<double> row(static_cast<size_t>(pre.cols));
    for (int r = 0; r < l.rows(); ++r) {
      std::fill(row.begin(), row.end(), 0.0);
      double ac = 0.0;
      for (int e = l.row_begin(r); e < l.row_end(r); ++e) {
        const Triplet& en = l.entries()[static_cast<size_t>(e)];
        for (int k = 0; k < pre.cols; ++k) row[static_cast<size_t>(k)] += en.value * pre.M[static_cast<size_t>(en.col * pre.cols + k)];
        ac += en.value * pre.c[static_cast<size_t>(en.col)];
      }
      for (int k = 0; k < pre.cols; ++k)
        if (row[static_cast<size_t>(k)] != 0.0) t.push_back({r, k, row[static_cast<size_t>(k)]});
      bias[static_cast<size_t>(r)] = l.bias()[static_cast<size_t>(r)] - ac;
    }
    layers.front() = Layer(l.rows(), pre.cols, std::move(t), std::move(bias));
  }
  if (!post.is_identity()) {
    const Layer& l = layers.back();
    // M' (A h - b) + c' = (M' A) h - (M' b - c')
    std::vector<Triplet> t;
    std::vector<double> bias(static_cast<size_t>(post.rows));
    std::vector<double> row(static_cast<size_t>(l.cols()));
    for (int r = 0; r < post.rows; ++r) {
      std::fill(row.begin(), row.end(), 0.0);
      double mb = 0.0;
      for (int q = 0; q < post.cols; ++q) {
        const double m = post.M[static_cast<size_t>(r * post.cols + q)];
        if (m == 0.0) continue;
        for (int e = l.row_begin(q); e < l.row_end(q); ++e) {
          const Triplet& en = l.entries()[static_cast<size_t>(e)];
          row[static_cast<size_t>(en.col)] += m * en.value;
        }
        mb += m * l.bias()[static_cast<size_t>(q)];
      }
      for (int k = 0; k < l.cols(); ++k)
        if (row[static_cast<size_t>(k)] != 0.0) t.push_back({r, k, row[static_cast<size_t>(k)]});
      bias[static_cast<size_t>(r)] = mb - post.c[static_cast<size_t>(r)];
    }
    layers.back() = Layer(post.rows, l.cols(), std::move(t), std::move(bias));
  }
  return GeluNetwork(pre.cols, std::move(layers));
}

GeluNetwork affine_network(const AffineMap& map) {
  std::vector<double> b(map.c.size());
  for (size_t i = 0; i < b.size(); ++i) b[i] = -map.c[i];
  return GeluNetwork(map.cols, {Layer::dense(map.rows, map.cols, map.M, std::move(b))});
}

GeluNetwork pad_depth(const GeluNetwork& net, int target_L, double eps, double K, int m) {
  if (target_L < net.depth()) throw ParameterError("pad_depth: target depth below current depth");
  if (target_L == net.depth()) return net;
  const int extra = target_L - net.depth();
  GeluNetwork id = build_identity(extra + 1, eps, K, m).net;
  std::vector<GeluNetwork> ids(static_cast<size_t>(net.output_width()), id);
  return concatenate(net, parallelize(ids, ParallelMode::kDistinctInputs));
}

}  // namespace gelunet
