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

// Acceptance checks. Prints one line per criterion:
//
//   criterion N: PASS|FAIL  <measured> vs <threshold>  (<seconds> s)
//
// Usage: acceptance [--criterion N] [--out-dir PATH]. Exit 0 iff every
// selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "common/random_nets.h"
#include "gelunet/calculus.h"
#include "gelunet/constructor.h"
#include "gelunet/harness.h"
#include "gelunet/score_oracle.h"

namespace {

using namespace gelunet;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string out_root = "acceptance_out";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_kind(const std::string& kind, const std::string& sub, ExperimentConfig cfg = {}) {
  cfg.experiment = kind;
  cfg.out_dir = (std::filesystem::path(out_root) / sub).string();
  return run(cfg);
}

std::string first_failure(const RunResult& r) { return r.failures.empty() ? "" : "; " + r.failures.front(); }

// 1. Primitive certificates and structure. Time limit 60 s.
Outcome c1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_kind("verify-primitives", "c1");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0.0;
  for (const auto& row : r.report.rows) worst = std::max(worst, row.sup_error);
  return {r.exit_code == 0 && secs < 60.0,
          std::to_string(r.report.rows.size()) + " rows, " + std::to_string(r.failures.size()) +
              " certificate/structure failures, runtime " + fmt(secs) + " s < 60 s" + first_failure(r)};
}

// 2. Network derivatives against nested central differences, |k| <= 3.
Outcome c2() {
  std::mt19937_64 rng(2026);
  double worst = 0.0;
  const double tol = 1e-5;
  for (int n = 0; n < 20; ++n) {
    const int in = 1 + n % 3;
    const auto net = testing::random_net(rng, testing::random_widths(rng, in, 2, 4, 6), 0.5, 0.9);
    auto fn = [&](std::span<const double> x) { return net.evaluate(x); };
    const auto ks = enumerate_multiindices(in, 3);
    for (int p = 0; p < 50; ++p) {
      const auto x = testing::random_point(rng, in, 1.5);
      const auto jets = net.taylor(x, 3);
      const auto space = JetSpace::get(in, 3);
      for (const auto& k : ks) {
        if (k.order() == 0) continue;
        const auto ref = fd_derivative(fn, x, k, 0.05);
        const auto got = net.derivative(x, k);
        for (size_t o = 0; o < ref.size(); ++o) {
          const double denom = std::max(1.0, std::abs(ref[o]));
          worst = std::max(worst, std::abs(got[o] - ref[o]) / denom);
          const double tay = jets[o * static_cast<size_t>(space->size()) + static_cast<size_t>(space->find(k))] * k.factorial();
          worst = std::max(worst, std::abs(tay - got[o]) / denom);
        }
      }
    }
  }
  return {worst <= tol, "max relative error " + fmt(worst) + " <= " + fmt(tol) + " (20 nets x 50 points, |k| <= 3)"};
}

// 3. Oracle self-consistency on the circle (sigma 0.5) and a constant map.
Outcome c3() {
  const auto a = run_kind("oracle-selftest", "c3_circle");
  ExperimentConfig cc;
  cc.model_json = ScoreModel(SmoothMapSpec::constant(1, {0.3, -0.4}), 0.5).to_json();
  const auto b = run_kind("oracle-selftest", "c3_constant", cc);
  std::string d;
  for (const auto* r : {&a, &b})
    for (const auto& row : r->report.rows) {
      if (row.experiment == "oracle-selftest/score-vs-grad-log-density" && r == &a) d += "score " + fmt(row.sup_error) + " <= 1e-5, ";
      if (row.experiment == "oracle-selftest/constant-map-closed-form") d += "closed form " + fmt(row.sup_error) + " <= 1e-10, ";
    }
  double prec = 0.0;
  for (const auto& row : a.report.rows)
    if (row.experiment == "oracle-selftest/p-recursion-vs-fd") prec = std::max(prec, row.sup_error);
  d += "p-recursion vs fd " + fmt(prec) + " <= 1e-4";
  return {a.exit_code == 0 && b.exit_code == 0, d + first_failure(a) + first_failure(b)};
}

// 4. Local polynomial sup error against the Taylor bound and its rate.
Outcome c4() {
  const auto map = SmoothMapSpec::circle();
  const std::vector<double> eps{0.25, 0.125, 0.0625};
  std::vector<double> sup;
  bool ok = true;
  std::string d;
  for (double e : eps) {
    const auto dec = local_poly_decompose(map, e);
    const int deg = map.taylor_degree();
    double f = 1.0;
    for (int i = 2; i <= deg; ++i) f *= i;
    const double bound = map.H() * std::pow(map.d(), deg) * std::pow(e, map.beta()) * std::sqrt(map.D()) / f;
    ok = ok && dec.sup_error() <= bound;
    sup.push_back(dec.sup_error());
    d += "eps " + fmt(e) + ": " + fmt(dec.sup_error()) + " <= " + fmt(bound) + ", ";
  }
  const double slope = loglog_slope(eps, sup);
  ok = ok && std::abs(slope - map.beta()) <= 0.3;
  return {ok, d + "slope " + fmt(slope) + " in [2.7, 3.3]"};
}

// 5. f_circ vs f* rate per halving and the seminorm envelope.
Outcome c5() {
  const ScoreModel model(SmoothMapSpec::circle(), 0.5);
  const ScoreOracle o(model);
  const auto pts = k_grid_points(model, 2.5, 41);
  const double beta = model.map.beta();
  std::vector<double> sup;
  bool env_ok = true;
  for (double e : {0.25, 0.125, 0.0625}) {
    const auto dec = local_poly_decompose(model.map, e);
    const auto fo = make_f_circ_oracle(dec, model.sigma, 20);
    double s = 0.0;
    for (size_t i = 0; i < pts.size(); i += 2) {
      const std::span<const double> y(pts.data() + i, 2);
      const auto a = fo.f(y), b = o.f_star(y);
      s = std::max({s, std::abs(a[0] - b[0]), std::abs(a[1] - b[1])});
      if (i % 8 == 0)
        for (const auto& k : enumerate_multiindices(2, 2)) {
          const double env = std::pow(4.0, k.order() + 1) * k.factorial() * std::pow(model.sigma, -2.0 * k.order());
          for (const auto* src : {&o.ratio(), &fo}) {
            const auto v = k.order() == 0 ? src->f(y) : p_recursion_derivative(*src, y, k);
            for (double x : v) env_ok = env_ok && std::abs(x) <= env;
          }
        }
    }
    sup.push_back(s);
  }
  const double lo = std::pow(2.0, beta - 1), hi = std::pow(2.0, beta + 1);
  bool ok = env_ok;
  std::string d = "sup |f_circ - f*|: " + fmt(sup[0]) + ", " + fmt(sup[1]) + ", " + fmt(sup[2]) + "; ratios ";
  for (size_t i = 1; i < sup.size(); ++i) {
    const double r = sup[i - 1] / sup[i];
    ok = ok && r >= lo && r <= hi;
    d += fmt(r) + (i + 1 < sup.size() ? ", " : "");
  }
  d += " in [" + fmt(lo) + ", " + fmt(hi) + "]; envelope " + std::string(env_ok ? "holds" : "violated");
  return {ok, d};
}

RunResult run_c6(const std::string& sub) {
  ExperimentConfig c;
  c.mc_samples = 10000;
  return run_kind("error-curve", sub, c);
}

// 6. End-to-end error curve in practical mode.
Outcome c6() {
  const auto r = run_c6("c6");
  const auto j = slurp(std::filesystem::path(out_root) / "c6" / "error-curve.json");
  std::string slope = "n/a";
  const auto p = j.find("\"k0_slope\":");
  if (p != std::string::npos) slope = fmt(std::atof(j.c_str() + p + 11));
  std::string d = "k=0 slope " + slope + " >= 5, ";
  for (const auto& row : r.report.rows)
    if (row.k == "0-0") d += "eps " + fmt(row.eps) + ": " + fmt(row.l2_error_sq) + ", ";
  return {r.exit_code == 0, d + std::to_string(r.failures.size()) + " failed checks" + first_failure(r)};
}

// 7. Tail mass estimate against the analytic bound.
Outcome c7() {
  const auto r = run_kind("tail-check", "c7");
  std::string d;
  for (const auto& row : r.report.rows) d += row.experiment.substr(11) + ": " + fmt(row.l2_error_sq) + " <= " + fmt(row.sup_error) + ", ";
  return {r.exit_code == 0, d + "n = 1e5" + first_failure(r)};
}

// 8. Growth of the nonzero count with 1/eps.
Outcome c8() {
  const auto r = run_kind("config-scaling", "c8");
  std::vector<double> x, y;
  for (const auto& row : r.report.rows) {
    x.push_back(1.0 / row.eps);
    y.push_back(static_cast<double>(row.S));
  }
  const double s = x.size() >= 2 ? loglog_slope(x, y) : NAN;
  return {r.exit_code == 0, "slope of log S " + fmt(s) + " <= 1.5" + first_failure(r)};
}

// 9. Composition calculus on random networks.
Outcome c9() {
  std::mt19937_64 rng(99);
  int bad = 0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int kind = t % 3;
    const int in = 1 + static_cast<int>(rng() % 3);
    const int K = 2 + static_cast<int>(rng() % 2);
    std::vector<GeluNetwork> nets;
    if (kind == 0) {
      int w = in;
      for (int i = 0; i < K; ++i) {
        const int out = 1 + static_cast<int>(rng() % 3);
        nets.push_back(testing::random_net(rng, testing::random_widths(rng, w, out, 4, 5)));
        w = out;
      }
      const auto c = concatenate(nets);
      int Lsum = 1;
      for (const auto& n : nets) Lsum += n.depth() - 1;
      if (c.depth() > Lsum) ++bad;
      for (int p = 0; p < 10; ++p) {
        const auto x = testing::random_point(rng, in);
        std::vector<double> y = x;
        for (const auto& n : nets) y = n.evaluate(y);
        const auto z = c.evaluate(x);
        for (size_t o = 0; o < y.size(); ++o) worst = std::max(worst, std::abs(z[o] - y[o]) / std::max(1.0, std::abs(y[o])));
      }
    } else {
      const auto widths = testing::random_widths(rng, in, 2, 4, 5);
      const int L = static_cast<int>(widths.size()) - 1;
      for (int i = 0; i < K; ++i) {
        auto w = widths;
        for (size_t j = 1; j + 1 < w.size(); ++j) w[j] = 1 + static_cast<int>(rng() % 5);
        nets.push_back(testing::random_net(rng, w));
      }
      const auto mode = ParallelMode::kSharedInput;
      const auto p = kind == 1 ? parallelize(nets, mode) : sum_parallel(nets, mode);
      long long S = 0;
      int W = 0;
      double B = 0.0;
      for (const auto& n : nets) {
        S += n.config().S;
        W += n.config().max_width();
        B = std::max(B, n.config().B);
      }
      if (p.depth() != L || p.config().max_width() > W) ++bad;
      if (kind == 1 && (p.config().S > S || p.config().B > B)) ++bad;
      if (kind == 2 && p.config().B > static_cast<double>(K) * B) ++bad;
      for (int q = 0; q < 10; ++q) {
        const auto x = testing::random_point(rng, in);
        const auto z = p.evaluate(x);
        std::vector<double> want;
        if (kind == 1) {
          for (const auto& n : nets)
            for (double v : n.evaluate(x)) want.push_back(v);
        } else {
          want.assign(2, 0.0);
          for (const auto& n : nets) {
            const auto v = n.evaluate(x);
            want[0] += v[0];
            want[1] += v[1];
          }
        }
        for (size_t o = 0; o < want.size(); ++o)
          worst = std::max(worst, std::abs(z[o] - want[o]) / std::max(1.0, std::abs(want[o])));
      }
    }
  }
  return {bad == 0 && worst <= 1e-12,
          std::to_string(bad) + " configuration violations, max functional gap " + fmt(worst) + " <= 1e-12 (100 compositions)"};
}

// 10. Byte-identical CSV on a rerun of criterion 6.
Outcome c10() {
  run_c6("c10_a");
  run_c6("c10_b");
  const auto a = slurp(std::filesystem::path(out_root) / "c10_a" / "error-curve.csv");
  const auto b = slurp(std::filesystem::path(out_root) / "c10_b" / "error-curve.csv");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (a == "--out-dir" && i + 1 < argc) out_root = argv[++i];
    else {
      std::cerr << "usage: acceptance [--criterion N] [--out-dir PATH]\n";
      return 2;
    }
  }
  const std::vector<std::function<Outcome()>> all{c1, c2, c3, c4, c5, c6, c7, c8, c9, c10};
  if (only < 0 || only > static_cast<int>(all.size())) {
    std::cerr << "criterion must be 1.." << all.size() << "\n";
    return 2;
  }
  bool ok = true;
  for (int c = 1; c <= static_cast<int>(all.size()); ++c) {
    if (only != 0 && c != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[static_cast<size_t>(c - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  (" << fmt(secs)
              << " s)" << std::endl;
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
