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

// Random sparse GELU networks for tests.

#ifndef GELUNET_TESTS_COMMON_RANDOM_NETS_H_
#define GELUNET_TESTS_COMMON_RANDOM_NETS_H_

#include <random>
#include <vector>

#include "gelunet/network.h"

namespace gelunet::testing {

// widths = {in, hidden..., out}; each weight kept with probability `density`.
inline GeluNetwork random_net(std::mt19937_64& rng, const std::vector<int>& widths, double density = 0.6,
                              double scale = 0.8) {
  std::uniform_real_distribution<double> U(-scale, scale);
  std::bernoulli_distribution keep(density);
  std::vector<Layer> layers;
  for (size_t j = 1; j < widths.size(); ++j) {
    std::vector<Triplet> t;
    std::vector<double> b(static_cast<size_t>(widths[j]));
    for (int r = 0; r < widths[j]; ++r) {
      bool any = false;
      for (int c = 0; c < widths[j - 1]; ++c)
        if (keep(rng)) {
          t.push_back({r, c, U(rng)});
          any = true;
        }
      if (!any) t.push_back({r, static_cast<int>(rng() % static_cast<unsigned>(widths[j - 1])), U(rng)});
      b[static_cast<size_t>(r)] = keep(rng) ? U(rng) : 0.0;
    }
    layers.emplace_back(widths[j], widths[j - 1], std::move(t), std::move(b));
  }
  return GeluNetwork(widths.front(), std::move(layers));
}

inline std::vector<int> random_widths(std::mt19937_64& rng, int in, int out, int max_depth, int max_width) {
  const int L = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_depth));
  std::vector<int> w{in};
  for (int j = 1; j < L; ++j) w.push_back(1 + static_cast<int>(rng() % static_cast<unsigned>(max_width)));
  w.push_back(out);
  return w;
}

inline std::vector<double> random_point(std::mt19937_64& rng, int n, double r = 1.0) {
  std::uniform_real_distribution<double> U(-r, r);
  std::vector<double> x(static_cast<size_t>(n));
  for (double& v : x) v = U(rng);
  return x;
}

}  // namespace gelunet::testing

#endif  // GELUNET_TESTS_COMMON_RANDOM_NETS_H_
