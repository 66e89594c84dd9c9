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

#include "gelunet/network.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "gelunet/errors.h"
#include "json.hpp"

namespace gelunet {

Layer::Layer(int rows, int cols, std::vector<Triplet> entries, std::vector<double> bias)
    : rows_(rows), cols_(cols), bias_(std::move(bias)) {
  if (rows < 1 || cols < 1) throw ParameterError("Layer: dimensions must be positive");
  if (static_cast<int>(bias_.size()) != rows) throw ParameterError("Layer: bias length != rows");
  for (const Triplet& t : entries)
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
      throw ParameterError("Layer: triplet index out of range");
  std::stable_sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  entries_.reserve(entries.size());
  for (size_t i = 0; i < entries.size();) {
    Triplet acc = entries[i++];
    while (i < entries.size() && entries[i].row == acc.row && entries[i].col == acc.col)
      acc.value += entries[i++].value;
    if (acc.value != 0.0) entries_.push_back(acc);
  }
  row_ptr_.assign(static_cast<size_t>(rows) + 1, 0);
  for (const Triplet& t : entries_) row_ptr_[static_cast<size_t>(t.row) + 1]++;
  for (int r = 0; r < rows; ++r) row_ptr_[static_cast<size_t>(r) + 1] += row_ptr_[static_cast<size_t>(r)];
}

Layer Layer::dense(int rows, int cols, std::span<const double> row_major, std::vector<double> bias) {
  if (static_cast<int>(row_major.size()) != rows * cols) throw ParameterError("Layer::dense: size mismatch");
  std::vector<Triplet> t;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double v = row_major[static_cast<size_t>(r * cols + c)];
      if (v != 0.0) t.push_back({r, c, v});
    }
  return Layer(rows, cols, std::move(t), std::move(bias));
}

long long Layer::nonzeros() const {
  long long s = static_cast<long long>(entries_.size());
  for (double b : bias_)
    if (b != 0.0) ++s;
  return s;
}

double Layer::max_abs() const {
  double m = 0.0;
  for (const Triplet& t : entries_) m = std::max(m, std::abs(t.value));
  for (double b : bias_) m = std::max(m, std::abs(b));
  return m;
}

void Layer::apply(const double* in, double* out) const {
  for (int r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (int e = row_ptr_[static_cast<size_t>(r)]; e < row_ptr_[static_cast<size_t>(r) + 1]; ++e)
      s += entries_[static_cast<size_t>(e)].value * in[entries_[static_cast<size_t>(e)].col];
    out[r] = s - bias_[static_cast<size_t>(r)];
  }
}

// ---------------------------------------------------------------------------

GeluNetwork::GeluNetwork(int input_width, std::vector<Layer> layers)
    : input_width_(input_width), layers_(std::move(layers)) {
  if (layers_.empty()) throw ParameterError("GeluNetwork: at least one layer required");
  int w = input_width;
  for (size_t j = 0; j < layers_.size(); ++j) {
    if (layers_[j].cols() != w)
      throw ParameterError("GeluNetwork: layer " + std::to_string(j + 1) + " expects width " +
                           std::to_string(layers_[j].cols()) + ", got " + std::to_string(w));
    w = layers_[j].rows();
  }
  config_ = config_stats(*this);
}

NetworkConfig config_stats(const GeluNetwork& net) {
  NetworkConfig c;
  c.L = net.depth();
  c.widths.push_back(net.input_width());
  for (const Layer& l : net.layers()) {
    c.widths.push_back(l.rows());
    c.S += l.nonzeros();
    c.B = std::max(c.B, l.max_abs());
  }
  return c;
}

std::vector<double> GeluNetwork::evaluate(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_width_)
    throw ParameterError("evaluate: input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(input_width_));
  std::vector<double> cur(x.begin(), x.end()), next;
  const int L = depth();
  for (int j = 0; j < L; ++j) {
    const Layer& layer = layers_[static_cast<size_t>(j)];
    next.resize(static_cast<size_t>(layer.rows()));
    layer.apply(cur.data(), next.data());
    bool hidden = j + 1 < L;
    for (double& v : next) {
      if (!std::isfinite(v))
        throw NumericError("evaluate: non-finite value at layer " + std::to_string(j + 1));
      if (hidden) v = gelu(v);
    }
    cur.swap(next);
  }
  return cur;
}

std::vector<double> GeluNetwork::propagate(std::vector<double> state, const JetSpace& space) const {
  const int M = space.size();
  const int deg = space.degree();
  const int L = depth();
  std::vector<double> next;
  double derivs[kMaxOrder + 1];
  double coef[kMaxOrder + 1];
  for (int j = 0; j < L; ++j) {
    const Layer& layer = layers_[static_cast<size_t>(j)];
    next.assign(static_cast<size_t>(layer.rows()) * static_cast<size_t>(M), 0.0);
    const auto& ent = layer.entries();
    for (int r = 0; r < layer.rows(); ++r) {
      double* o = next.data() + static_cast<size_t>(r) * static_cast<size_t>(M);
      for (int e = layer.row_begin(r); e < layer.row_end(r); ++e) {
        const double a = ent[static_cast<size_t>(e)].value;
        const double* in = state.data() + static_cast<size_t>(ent[static_cast<size_t>(e)].col) * static_cast<size_t>(M);
        for (int i = 0; i < M; ++i) o[i] += a * in[i];
      }
      o[0] -= layer.bias()[static_cast<size_t>(r)];
      if (!std::isfinite(o[0]))
        throw NumericError("derivative: non-finite value at layer " + std::to_string(j + 1));
      if (j + 1 < L) {
        gelu_derivatives(o[0], deg, derivs);
        double fact = 1.0;
        for (int n = 0; n <= deg; ++n) {
          if (n > 1) fact *= n;
          coef[n] = derivs[n] / fact;
        }
        space.compose(coef, o);
      }
    }
    state.swap(next);
  }
  return state;
}

std::vector<double> GeluNetwork::derivative(std::span<const double> x, const MultiIndex& k) const {
  if (static_cast<int>(x.size()) != input_width_ || k.size() != input_width_)
    throw ParameterError("derivative: input or multi-index length mismatch");
  const int order = k.order();
  if (order > kMaxOrder) throw ParameterError("derivative: order cap exceeded");
  if (order == 0) return evaluate(x);
  std::vector<int> active;
  for (int i = 0; i < k.size(); ++i)
    if (k[i] > 0) active.push_back(i);
  const int s = static_cast<int>(active.size());
  auto space = JetSpace::get(s, order);
  const int M = space->size();
  std::vector<double> state(static_cast<size_t>(input_width_) * static_cast<size_t>(M), 0.0);
  for (int i = 0; i < input_width_; ++i) state[static_cast<size_t>(i) * static_cast<size_t>(M)] = x[static_cast<size_t>(i)];
  for (int a = 0; a < s; ++a)
    state[static_cast<size_t>(active[static_cast<size_t>(a)]) * static_cast<size_t>(M) + static_cast<size_t>(space->unit(a))] = 1.0;
  std::vector<double> out = propagate(std::move(state), *space);
  MultiIndex reduced(s);
  for (int a = 0; a < s; ++a) reduced[a] = k[active[static_cast<size_t>(a)]];
  const int pos = space->find(reduced);
  const double kf = k.factorial();
  std::vector<double> result(static_cast<size_t>(output_width()));
  for (int o = 0; o < output_width(); ++o)
    result[static_cast<size_t>(o)] = out[static_cast<size_t>(o) * static_cast<size_t>(M) + static_cast<size_t>(pos)] * kf;
  return result;
}

std::vector<double> GeluNetwork::taylor(std::span<const double> x, int degree) const {
  if (static_cast<int>(x.size()) != input_width_) throw ParameterError("taylor: input length mismatch");
  auto space = JetSpace::get(input_width_, degree);
  const int M = space->size();
  std::vector<double> state(static_cast<size_t>(input_width_) * static_cast<size_t>(M), 0.0);
  for (int i = 0; i < input_width_; ++i) {
    state[static_cast<size_t>(i) * static_cast<size_t>(M)] = x[static_cast<size_t>(i)];
    if (degree > 0) state[static_cast<size_t>(i) * static_cast<size_t>(M) + static_cast<size_t>(space->unit(i))] = 1.0;
  }
  return propagate(std::move(state), *space);
}

std::string GeluNetwork::to_json() const {
  nlohmann::json j;
  j["architecture"] = config_.widths;
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : layers_) {
    nlohmann::json lj;
    nlohmann::json trip = nlohmann::json::array();
    for (const Triplet& t : l.entries()) trip.push_back({t.row, t.col, t.value});
    lj["triplets"] = std::move(trip);
    lj["bias"] = l.bias();
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

GeluNetwork GeluNetwork::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("network JSON: ") + e.what());
  }
  if (!j.contains("architecture") || !j.contains("layers"))
    throw ParameterError("network JSON: missing 'architecture' or 'layers'");
  auto arch = j["architecture"].get<std::vector<int>>();
  const auto& lj = j["layers"];
  if (arch.size() != lj.size() + 1) throw ParameterError("network JSON: architecture/layers length mismatch");
  std::vector<Layer> layers;
  for (size_t i = 0; i < lj.size(); ++i) {
    std::vector<Triplet> t;
    for (const auto& e : lj[i]["triplets"]) t.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
    layers.emplace_back(arch[i + 1], arch[i], std::move(t), lj[i]["bias"].get<std::vector<double>>());
  }
  return GeluNetwork(arch[0], std::move(layers));
}

}  // namespace gelunet
