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

#include "gelunet/harness.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "gelunet/errors.h"
#include "gelunet/primitives.h"
#include "json.hpp"

namespace gelunet {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string(what) + ": cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

// ----- configuration --------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::vector<std::string> known{
      "experiment", "model",      "params",       "eps_sweep",       "mc_samples", "k_grid",
      "seed",       "threads",    "out_dir",      "primitive_eps",   "primitive_orders",
      "tail_D",     "tail_sigma", "tail_samples", "timings_in_csv"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("config: unknown field '" + it.key() + "'");
  ExperimentConfig c;
  read_field(j, "experiment", c.experiment);
  if (j.contains("model")) {
    if (j["model"].is_string()) c.model_path = j["model"].get<std::string>();
    else if (j["model"].is_object()) c.model_json = j["model"].dump();
    else throw ConfigError("config field 'model': expected a path or an object");
  }
  if (j.contains("params")) {
    const json& p = j["params"];
    if (!p.is_object()) throw ConfigError("config field 'params': expected an object");
    static const std::vector<std::string> pk{"mode", "m", "r", "N_div", "quad_order", "R", "eps_prime", "R_inf",
                                             "subcells"};
    for (auto it = p.begin(); it != p.end(); ++it)
      if (std::find(pk.begin(), pk.end(), it.key()) == pk.end())
        throw ConfigError("config: unknown field 'params." + it.key() + "'");
    read_field(p, "mode", c.mode);
    read_field(p, "m", c.m);
    read_field(p, "r", c.r);
    read_field(p, "N_div", c.N_div);
    read_field(p, "quad_order", c.quad_order);
    read_field(p, "R", c.R);
    read_field(p, "eps_prime", c.eps_prime);
    read_field(p, "R_inf", c.R_inf);
    read_field(p, "subcells", c.subcells);
  }
  read_field(j, "eps_sweep", c.eps_sweep);
  read_field(j, "mc_samples", c.mc_samples);
  read_field(j, "k_grid", c.k_grid);
  read_field(j, "seed", c.seed);
  read_field(j, "threads", c.threads);
  read_field(j, "out_dir", c.out_dir);
  read_field(j, "primitive_eps", c.primitive_eps);
  read_field(j, "primitive_orders", c.primitive_orders);
  read_field(j, "tail_D", c.tail_D);
  read_field(j, "tail_sigma", c.tail_sigma);
  read_field(j, "tail_samples", c.tail_samples);
  read_field(j, "timings_in_csv", c.timings_in_csv);
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_json(read_file(path, "config"));
}

void ExperimentConfig::validate() const {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), experiment) == kinds.end())
    throw ConfigError("config field 'experiment': unknown experiment kind '" + experiment + "'");
  if (mode != "practical" && mode != "theorem")
    throw ConfigError("config field 'params.mode': expected practical or theorem");
  if (!model_path.empty() && !std::filesystem::exists(model_path))
    throw ConfigError("config field 'model': file '" + model_path + "' does not exist");
  if (eps_sweep.empty()) throw ConfigError("config field 'eps_sweep': must be nonempty");
  for (size_t i = 0; i < eps_sweep.size(); ++i) {
    if (!(eps_sweep[i] > 0.0 && eps_sweep[i] < 1.0))
      throw ConfigError("config field 'eps_sweep': values must lie in (0, 1)");
    if (i > 0 && !(eps_sweep[i] < eps_sweep[i - 1]))
      throw ConfigError("config field 'eps_sweep': must be strictly decreasing");
  }
  if (m < 0) throw ConfigError("config field 'params.m': must be >= 0");
  if (mc_samples < 1000) throw ConfigError("config field 'mc_samples': must be >= 1000");
  if (k_grid < 2) throw ConfigError("config field 'k_grid': must be >= 2");
  if (threads < 1) throw ConfigError("config field 'threads': must be >= 1");
  if (quad_order < 1) throw ConfigError("config field 'params.quad_order': must be >= 1");
  if (primitive_eps.empty() || primitive_orders.empty())
    throw ConfigError("config fields 'primitive_eps' and 'primitive_orders' must be nonempty");
  if (tail_samples < 1) throw ConfigError("config field 'tail_samples': must be >= 1");
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = experiment;
  if (!model_path.empty()) j["model"] = model_path;
  else if (!model_json.empty()) j["model"] = json::parse(model_json);
  else j["model"] = json::parse(ScoreModel(SmoothMapSpec::circle(), 0.5).to_json());
  j["params"] = {{"mode", mode}, {"m", m},           {"r", r},         {"N_div", N_div},      {"quad_order", quad_order},
                 {"R", R},       {"eps_prime", eps_prime}, {"R_inf", R_inf}, {"subcells", subcells}};
  j["eps_sweep"] = eps_sweep;
  j["mc_samples"] = mc_samples;
  j["k_grid"] = k_grid;
  j["seed"] = seed;
  j["threads"] = threads;
  j["out_dir"] = out_dir;
  j["primitive_eps"] = primitive_eps;
  j["primitive_orders"] = primitive_orders;
  j["tail_D"] = tail_D;
  j["tail_sigma"] = tail_sigma;
  j["tail_samples"] = tail_samples;
  j["timings_in_csv"] = timings_in_csv;
  return j.dump(2);
}

ScoreModel ExperimentConfig::load_model() const {
  try {
    if (!model_path.empty()) return ScoreModel::from_json(read_file(model_path, "model"));
    if (!model_json.empty()) return ScoreModel::from_json(model_json);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return ScoreModel(SmoothMapSpec::circle(), 0.5);
}

// ----- reports --------------------------------------------------------------

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string ErrorReport::to_csv() const {
  std::string s = "experiment,eps,m,k,l2_error_sq,sup_error,L,width,S,logB,runtime_s,seed\n";
  for (const auto& r : rows) {
    s += r.experiment + "," + format_double(r.eps) + "," + std::to_string(r.m) + "," + r.k + "," +
         format_double(r.l2_error_sq) + "," + format_double(r.sup_error) + "," + std::to_string(r.L) + "," +
         std::to_string(r.width) + "," + std::to_string(r.S) + "," + format_double(r.logB) + "," +
         format_double(r.runtime_s) + "," + std::to_string(r.seed) + "\n";
  }
  return s;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ParameterError("loglog_slope: need two or more points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n < 2) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errs[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// ----- Monte Carlo L2 error -------------------------------------------------

namespace {

std::vector<double> oracle_score_derivative(const ScoreOracle& o, std::span<const double> y, const MultiIndex& k) {
  const bool rec = k.order() <= 2 && o.model().map.d() <= 2;
  return o.score_derivative(y, k, rec ? DerivBackend::kPRecursion : DerivBackend::kFiniteDifference);
}

McResult reduce(const std::vector<double>& err, const std::vector<char>& ok, int n) {
  McResult r;
  double sum = 0.0, sq = 0.0;
  int used = 0;
  for (int i = 0; i < n; ++i) {
    if (!ok[static_cast<size_t>(i)]) {
      ++r.skipped;
      continue;
    }
    const double e = err[static_cast<size_t>(i)];
    sum += e;
    sq += e * e;
    r.sup = std::max(r.sup, std::sqrt(e));
    ++used;
  }
  if (r.skipped > n / 100)
    throw NumericError("l2_error_mc: oracle failed at " + std::to_string(r.skipped) + " of " + std::to_string(n) +
                       " samples");
  r.estimate = sum / used;
  const double var = std::max(0.0, sq / used - r.estimate * r.estimate);
  r.stderr_ = std::sqrt(var / used);
  return r;
}

}  // namespace

std::vector<McResult> l2_errors_mc(const ScoreModel& model, const ScoreNetwork& net, const std::vector<MultiIndex>& ks,
                                   int n, std::uint64_t seed, int threads) {
  if (n < 1000) throw ParameterError("l2_error_mc: n must be >= 1000");
  const int D = model.map.D();
  int deg = 0;
  for (const auto& k : ks) {
    if (k.size() != D) throw ParameterError("l2_error_mc: multi-index length != D");
    deg = std::max(deg, k.order());
  }
  const ScoreOracle oracle(model);
  const auto xs = sample_data(model, n, seed);
  const auto space = JetSpace::get(D, deg);
  const auto M = static_cast<size_t>(space->size());
  const size_t nk = ks.size();
  std::vector<double> err(static_cast<size_t>(n) * nk, 0.0);
  std::vector<char> ok(static_cast<size_t>(n), 1);
  parallel_for(n, threads, [&](int i) {
    const std::span<const double> y(xs.data() + static_cast<size_t>(i) * static_cast<size_t>(D), static_cast<size_t>(D));
    try {
      const auto t = net.taylor(y, deg);
      for (size_t q = 0; q < nk; ++q) {
        const auto want = oracle_score_derivative(oracle, y, ks[q]);
        const auto idx = static_cast<size_t>(space->find(ks[q]));
        const double kf = ks[q].factorial();
        double worst = 0.0;
        for (int l = 0; l < D; ++l) {
          const double got = t[static_cast<size_t>(l) * M + idx] * kf;
          worst = std::max(worst, (got - want[static_cast<size_t>(l)]) * (got - want[static_cast<size_t>(l)]));
        }
        if (!std::isfinite(worst)) throw NumericError("non-finite error");
        err[static_cast<size_t>(i) * nk + q] = worst;
      }
    } catch (const NumericError&) {
      ok[static_cast<size_t>(i)] = 0;
    }
  });
  std::vector<McResult> out;
  for (size_t q = 0; q < nk; ++q) {
    std::vector<double> e(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) e[static_cast<size_t>(i)] = err[static_cast<size_t>(i) * nk + q];
    out.push_back(reduce(e, ok, n));
  }
  return out;
}

McResult l2_error_mc(const ScoreModel& model, const ScoreNetwork& net, const MultiIndex& k, int n, std::uint64_t seed,
                     int threads) {
  return l2_errors_mc(model, net, {k}, n, seed, threads).front();
}

McResult l2_error_mc(const ScoreModel& model, const ScoreDerivFn& approx, const MultiIndex& k, int n,
                     std::uint64_t seed, int threads) {
  if (n < 1000) throw ParameterError("l2_error_mc: n must be >= 1000");
  const int D = model.map.D();
  if (k.size() != D) throw ParameterError("l2_error_mc: multi-index length != D");
  const ScoreOracle oracle(model);
  const auto xs = sample_data(model, n, seed);
  std::vector<double> err(static_cast<size_t>(n), 0.0);
  std::vector<char> ok(static_cast<size_t>(n), 1);
  parallel_for(n, threads, [&](int i) {
    const std::span<const double> y(xs.data() + static_cast<size_t>(i) * static_cast<size_t>(D), static_cast<size_t>(D));
    try {
      const auto got = approx(y, k);
      const auto want = oracle_score_derivative(oracle, y, k);
      double worst = 0.0;
      for (int l = 0; l < D; ++l)
        worst = std::max(worst, (got[static_cast<size_t>(l)] - want[static_cast<size_t>(l)]) *
                                    (got[static_cast<size_t>(l)] - want[static_cast<size_t>(l)]));
      if (!std::isfinite(worst)) throw NumericError("non-finite error");
      err[static_cast<size_t>(i)] = worst;
    } catch (const NumericError&) {
      ok[static_cast<size_t>(i)] = 0;
    }
  });
  return reduce(err, ok, n);
}

// ----- experiments ----------------------------------------------------------

namespace {

struct Ctx {
  const ExperimentConfig& cfg;
  RunResult& res;
  json details = json::object();

  void fail(const std::string& what) { res.failures.push_back(what); }
  double time_cell(double t) const { return cfg.timings_in_csv ? t : 0.0; }
};

struct GridErrors {
  std::vector<double> sup;
  std::vector<double> msq;
};

// Per-order sup and mean square of the derivative error on a grid.
GridErrors grid_errors(const GeluNetwork& net, const DerivOracle& ref, const Box& region, int m, int grid,
                       const std::function<bool(std::span<const double>)>& keep = {}) {
  const int n = region.dim();
  const auto space = JetSpace::get(n, m);
  const auto M = static_cast<size_t>(space->size());
  GridErrors g{std::vector<double>(static_cast<size_t>(m + 1), 0.0), std::vector<double>(static_cast<size_t>(m + 1), 0.0)};
  long long total = 1;
  for (int i = 0; i < n; ++i) total *= grid;
  std::vector<double> x(static_cast<size_t>(n));
  long long used = 0;
  for (long long p = 0; p < total; ++p) {
    long long rem = p;
    for (int i = 0; i < n; ++i) {
      const auto q = static_cast<double>(rem % grid);
      rem /= grid;
      x[static_cast<size_t>(i)] = region.lo[static_cast<size_t>(i)] +
                                  (region.hi[static_cast<size_t>(i)] - region.lo[static_cast<size_t>(i)]) * q / (grid - 1);
    }
    if (keep && !keep(x)) continue;
    ++used;
    const auto t = net.taylor(x, m);
    std::vector<double> worst(static_cast<size_t>(m + 1), 0.0);
    for (int idx = 0; idx < space->size(); ++idx) {
      const MultiIndex& k = space->indices()[static_cast<size_t>(idx)];
      const double got = t[static_cast<size_t>(idx)] * k.factorial();
      const double want = ref(x, k)[0];
      const auto o = static_cast<size_t>(k.order());
      worst[o] = std::max(worst[o], std::abs(got - want));
    }
    for (int o = 0; o <= m; ++o) {
      g.sup[static_cast<size_t>(o)] = std::max(g.sup[static_cast<size_t>(o)], worst[static_cast<size_t>(o)]);
      g.msq[static_cast<size_t>(o)] += worst[static_cast<size_t>(o)] * worst[static_cast<size_t>(o)];
    }
    (void)M;
  }
  for (auto& v : g.msq) v /= static_cast<double>(std::max<long long>(used, 1));
  return g;
}

double poly_eval_derivative(const PolyCoeffs& c, std::span<const double> x, const MultiIndex& k) {
  double v = 0.0;
  for (const auto& [mono, a] : c) {
    double t = a;
    for (int i = 0; i < mono.size() && t != 0.0; ++i) {
      if (k[i] > mono[i]) {
        t = 0.0;
        break;
      }
      for (int j = 0; j < k[i]; ++j) t *= mono[i] - j;
      t *= std::pow(x[static_cast<size_t>(i)], mono[i] - k[i]);
    }
    v += t;
  }
  return v;
}

void run_verify_primitives(Ctx& c) {
  const auto t_all = std::chrono::steady_clock::now();
  json items = json::array();
  for (double eps : c.cfg.primitive_eps)
    for (int m : c.cfg.primitive_orders) {
      struct Item {
        std::string name;
        Primitive p;
        DerivOracle ref;
        std::function<bool(std::span<const double>)> keep;
      };
      std::vector<Item> list;
      auto ident = [](std::span<const double> x, const MultiIndex& k) {
        return std::vector<double>{k[0] == 0 ? x[0] : (k[0] == 1 ? 1.0 : 0.0)};
      };
      auto t0 = std::chrono::steady_clock::now();
      list.push_back({"identity", build_identity(3, eps, 1.0, m), ident, {}});
      list.push_back({"clip", build_clip(2.0, eps, m), ident, {}});
      list.push_back({"square", build_square(eps, m), [](std::span<const double> x, const MultiIndex& k) {
                        return std::vector<double>{k[0] == 0 ? x[0] * x[0] : k[0] == 1 ? 2.0 * x[0] : k[0] == 2 ? 2.0 : 0.0};
                      }, {}});
      const PolyCoeffs mulc{{MultiIndex{1, 1}, 1.0}};
      list.push_back({"mul", build_mul(eps, m), [mulc](std::span<const double> x, const MultiIndex& k) {
                        return std::vector<double>{poly_eval_derivative(mulc, x, k)};
                      }, {}});
      const PolyCoeffs pc{{MultiIndex{0, 0}, 0.5}, {MultiIndex{1, 0}, -0.3}, {MultiIndex{1, 1}, 0.7},
                          {MultiIndex{2, 1}, -0.4}, {MultiIndex{0, 3}, 0.25}};
      list.push_back({"poly", build_poly(pc, 2, 3, eps, m, 1.0), [pc](std::span<const double> x, const MultiIndex& k) {
                        return std::vector<double>{poly_eval_derivative(pc, x, k)};
                      }, {}});
      list.push_back({"exp", build_exp_neg(eps, m, 1.0), [](std::span<const double> x, const MultiIndex& k) {
                        return std::vector<double>{(k[0] % 2 ? -1.0 : 1.0) * std::exp(-x[0])};
                      }, {}});
      const double cone = 2.5;
      list.push_back({"div", build_div(8, eps, m, {cone, false}), [](std::span<const double> x, const MultiIndex& k) {
                        const int ax = k[0], by = k[1];
                        if (ax >= 2) return std::vector<double>{0.0};
                        double f = 1.0;
                        for (int i = 2; i <= by; ++i) f *= i;
                        const double dy = (by % 2 ? -1.0 : 1.0) * f / std::pow(x[1], by + 1);
                        return std::vector<double>{ax == 1 ? dy : x[0] * dy};
                      }, [cone](std::span<const double> x) { return std::abs(x[0]) <= cone * x[1]; }});
      const double build_time = seconds_since(t0);
      for (const auto& it : list) {
        const auto te = std::chrono::steady_clock::now();
        const GridErrors ge = grid_errors(it.p.net, it.ref, it.p.cert.region, m, 32, it.keep);
        double measured = 0.0;
        for (double v : ge.sup) measured = std::max(measured, v);
        bool ok = measured <= it.p.cert.claimed_error;
        json rec = {{"name", it.name}, {"eps", eps}, {"m", m}, {"claim", it.p.cert.claimed_error}, {"measured", measured}};
        if (it.p.cert.cubic_scaling) {
          const double C = 2.0;
          Box big = it.p.cert.region;
          for (auto& v : big.lo) v *= C;
          for (auto& v : big.hi) v *= C;
          const GridErrors gb = grid_errors(it.p.net, it.ref, big, m, 32);
          double mb = 0.0;
          for (double v : gb.sup) mb = std::max(mb, v);
          rec["measured_C2"] = mb;
          rec["claim_C2"] = C * C * C * it.p.cert.claimed_error;
          ok = ok && mb <= C * C * C * it.p.cert.claimed_error;
        }
        const auto cfgn = it.p.net.config();
        if (it.name == "square" && !(cfgn.L == 2 && cfgn.S <= 6)) {
          c.fail("square: structure L=2, S<=6 violated");
          ok = false;
        }
        if (it.name == "mul" && !(cfgn.max_width() <= 4 && cfgn.S <= 12)) {
          c.fail("mul: structure width<=4, S<=12 violated");
          ok = false;
        }
        rec["pass"] = ok;
        items.push_back(rec);
        if (!ok)
          c.fail(it.name + " at eps=" + format_double(eps) + ", m=" + std::to_string(m) + ": measured " +
                 format_double(measured) + " exceeds claim " + format_double(it.p.cert.claimed_error));
        const double rt = build_time / static_cast<double>(list.size()) + seconds_since(te);
        for (int o = 0; o <= m; ++o)
          c.res.report.rows.push_back({"verify-primitives/" + it.name, eps, m, std::to_string(o),
                                       ge.msq[static_cast<size_t>(o)], ge.sup[static_cast<size_t>(o)], cfgn.L,
                                       cfgn.max_width(), cfgn.S, std::log(cfgn.B), c.time_cell(rt), c.cfg.seed});
      }
      // Partition of unity: sum to one and localization.
      const auto tp = std::chrono::steady_clock::now();
      const int N = 8;
      const PartitionOfUnity pu = build_partition_of_unity(N, eps, m);
      double sum_dev = 0.0;
      for (int s = 0; s <= 1000; ++s) {
        const double x[1] = {s / 1000.0};
        double sum = 0.0;
        for (const auto& net : pu.nets) sum += net.evaluate(x)[0];
        sum_dev = std::max(sum_dev, std::abs(sum - 1.0));
      }
      std::vector<double> sup(static_cast<size_t>(m + 1), 0.0), msq(static_cast<size_t>(m + 1), 0.0);
      for (int i = 1; i <= N; ++i) {
        const double lo = i >= 2 ? pu.knots[static_cast<size_t>(i - 2)] : -1.0;
        const double hi = i + 1 <= N ? pu.knots[static_cast<size_t>(i + 1)] : 2.0;
        const auto ge = grid_errors(pu.nets[static_cast<size_t>(i - 1)],
                                    [](std::span<const double>, const MultiIndex&) { return std::vector<double>{0.0}; },
                                    Box::cube(1, 0.0, 1.0), m, 32, [&](std::span<const double> x) {
                                      return (i >= 2 && x[0] <= lo) || (i + 1 <= N && x[0] >= hi);
                                    });
        for (int o = 0; o <= m; ++o) {
          sup[static_cast<size_t>(o)] = std::max(sup[static_cast<size_t>(o)], ge.sup[static_cast<size_t>(o)]);
          msq[static_cast<size_t>(o)] = std::max(msq[static_cast<size_t>(o)], ge.msq[static_cast<size_t>(o)]);
        }
      }
      double measured = 0.0;
      for (double v : sup) measured = std::max(measured, v);
      const bool ok = sum_dev <= 1e-12 && measured <= pu.cert.claimed_error;
      if (sum_dev > 1e-12) c.fail("pou: sum deviates from 1 by " + format_double(sum_dev));
      if (measured > pu.cert.claimed_error)
        c.fail("pou at eps=" + format_double(eps) + ": off-support error " + format_double(measured) +
               " exceeds claim " + format_double(pu.cert.claimed_error));
      items.push_back({{"name", "pou"}, {"eps", eps}, {"m", m}, {"claim", pu.cert.claimed_error},
                       {"measured", measured}, {"sum_deviation", sum_dev}, {"pass", ok}});
      int L = 0, W = 0;
      long long S = 0;
      double B = 0.0;
      for (const auto& net : pu.nets) {
        L = std::max(L, net.config().L);
        W = std::max(W, net.config().max_width());
        S += net.config().S;
        B = std::max(B, net.config().B);
      }
      for (int o = 0; o <= m; ++o)
        c.res.report.rows.push_back({"verify-primitives/pou", eps, m, std::to_string(o), msq[static_cast<size_t>(o)],
                                     sup[static_cast<size_t>(o)], L, W, S, std::log(B), c.time_cell(seconds_since(tp)),
                                     c.cfg.seed});
    }
  c.details["primitives"] = items;
  c.details["runtime_s"] = seconds_since(t_all);
}

bool is_constant_map(const SmoothMapSpec& map) {
  if (map.family() != SmoothMapSpec::Family::kPolynomial) return false;
  for (const auto& l : map.poly_terms())
    for (const auto& t : l)
      if (t.k.order() > 0 && t.c != 0.0) return false;
  return true;
}

double vec_rel(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double num = 0.0, den = floor;
  for (size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

void run_oracle_selftest(Ctx& c) {
  const ScoreModel model = c.cfg.load_model();
  const int d = model.map.d(), D = model.map.D();
  const double s = model.sigma;
  const auto t0 = std::chrono::steady_clock::now();
  const ScoreOracle o(model);
  const int npts = 50;
  const auto xs = sample_data(model, npts, c.cfg.seed);
  auto pt = [&](int i) {
    return std::span<const double>(xs.data() + static_cast<size_t>(i) * static_cast<size_t>(D), static_cast<size_t>(D));
  };
  auto row = [&](const std::string& name, const std::string& k, double worst, double tol) {
    c.res.report.rows.push_back({"oracle-selftest/" + name, 0.0, 0, k, 0.0, worst, 0, 0, 0, 0.0,
                                 c.time_cell(seconds_since(t0)), c.cfg.seed});
    if (!(worst <= tol)) c.fail("oracle " + name + " (k=" + k + "): error " + format_double(worst) + " > " + format_double(tol));
  };
  // Score against the gradient of the log density.
  double w = 0.0;
  for (int i = 0; i < npts; ++i) {
    std::vector<double> g(static_cast<size_t>(D));
    for (int l = 0; l < D; ++l)
      g[static_cast<size_t>(l)] = fd_derivative([&](std::span<const double> y) { return std::vector<double>{o.log_density(y)}; },
                                                pt(i), MultiIndex::unit(D, l), 0.1 * s)[0];
    w = std::max(w, vec_rel(o.score(pt(i)), g, 1e-12));
  }
  row("score-vs-grad-log-density", MultiIndex(D).to_string(), w, 1e-5);
  // Derivative backends.
  if (d <= 2) {
    for (const auto& k : enumerate_multiindices(D, 2)) {
      if (k.order() == 0) continue;
      double worst = 0.0;
      for (int i = 0; i < npts; ++i) {
        const auto a = o.f_derivative(pt(i), k, DerivBackend::kPRecursion);
        const auto b = o.f_derivative(pt(i), k, DerivBackend::kFiniteDifference);
        worst = std::max(worst, vec_rel(a, b, 1e-3 * std::pow(s, -2.0 * k.order())));
      }
      row("p-recursion-vs-fd", k.to_string(), worst, 1e-4);
    }
    if (D >= 2) {
      MultiIndex k(D);
      k[0] = 1;
      k[1] = 1;
      double worst = 0.0;
      for (int i = 0; i < npts; ++i) {
        const auto a = p_recursion_derivative(o.ratio(), pt(i), k, {0, 1});
        const auto b = p_recursion_derivative(o.ratio(), pt(i), k, {1, 0});
        worst = std::max(worst, vec_rel(a, b, std::pow(s, -4.0)));
      }
      row("path-independence", k.to_string(), worst, 1e-10);
    }
  }
  // Convex hull box.
  {
    std::vector<double> lo(static_cast<size_t>(D), 1e300), hi(static_cast<size_t>(D), -1e300);
    const int G = d == 1 ? 1024 : d == 2 ? 64 : 8;
    long long total = 1;
    for (int i = 0; i < d; ++i) total *= G;
    std::vector<double> u(static_cast<size_t>(d));
    for (long long p = 0; p < total; ++p) {
      long long rem = p;
      for (int i = 0; i < d; ++i) {
        u[static_cast<size_t>(i)] = static_cast<double>(rem % G) / (G - 1);
        rem /= G;
      }
      const auto g = model.map.evaluate(u);
      for (int l = 0; l < D; ++l) {
        lo[static_cast<size_t>(l)] = std::min(lo[static_cast<size_t>(l)], g[static_cast<size_t>(l)]);
        hi[static_cast<size_t>(l)] = std::max(hi[static_cast<size_t>(l)], g[static_cast<size_t>(l)]);
      }
    }
    double out = 0.0;
    for (int i = 0; i < npts; ++i) {
      const auto f = o.f_star(pt(i));
      for (int l = 0; l < D; ++l)
        out = std::max({out, lo[static_cast<size_t>(l)] - f[static_cast<size_t>(l)], f[static_cast<size_t>(l)] - hi[static_cast<size_t>(l)]});
    }
    row("convex-hull", MultiIndex(D).to_string(), out, 1e-3);
  }
  // Quadrature convergence at the chosen order.
  if (o.rule().order < 128) {
    const ScoreOracle o2(model, o.rule().cells, 2 * o.rule().order);
    double worst = 0.0;
    for (int i = 0; i < npts; ++i) {
      worst = std::max(worst, std::abs(o.log_density(pt(i)) - o2.log_density(pt(i))) /
                                  std::max(1.0, std::abs(o2.log_density(pt(i)))));
      worst = std::max(worst, vec_rel(o.f_star(pt(i)), o2.f_star(pt(i)), 1e-12));
      worst = std::max(worst, vec_rel(o.score(pt(i)), o2.score(pt(i)), 1e-12));
    }
    row("quadrature-convergence", MultiIndex(D).to_string(), worst, 1e-8);
  }
  // Closed forms for a constant map.
  if (is_constant_map(model.map)) {
    const std::vector<double> u(static_cast<size_t>(d), 0.5);
    const auto cvec = model.map.evaluate(u);
    double worst = 0.0;
    for (int i = 0; i < npts; ++i) {
      const auto y = pt(i);
      double r2 = 0.0;
      std::vector<double> sc(static_cast<size_t>(D));
      for (int l = 0; l < D; ++l) {
        const double t = y[static_cast<size_t>(l)] - cvec[static_cast<size_t>(l)];
        r2 += t * t;
        sc[static_cast<size_t>(l)] = -t / (s * s);
      }
      const double p = std::exp(-r2 / (2 * s * s)) / std::pow(std::sqrt(2 * std::numbers::pi) * s, D);
      worst = std::max(worst, std::abs(o.density(y) - p) / p);
      worst = std::max(worst, vec_rel(o.score(y), sc, 1.0));
      worst = std::max(worst, vec_rel(o.f_star(y), cvec, 1.0));
    }
    row("constant-map-closed-form", MultiIndex(D).to_string(), worst, 1e-10);
  }
  c.details["rule"] = {{"cells", o.rule().cells}, {"order", o.rule().order}};
}

ConstructionParams make_params(const ExperimentConfig& cfg, const ScoreModel& model, double eps) {
  if (cfg.mode == "theorem") return ConstructionParams::theorem(model, eps, cfg.m);
  return ConstructionParams::practical(model, eps, cfg.m, cfg.r, cfg.N_div, cfg.quad_order, cfg.R, cfg.eps_prime,
                                       cfg.R_inf, cfg.subcells);
}

std::vector<MultiIndex> error_indices(int D, int m) { return enumerate_multiindices(D, std::max(m, 0)); }

void run_build_score(Ctx& c) {
  const ScoreModel model = c.cfg.load_model();
  const double eps = c.cfg.eps_sweep.front();
  const auto t0 = std::chrono::steady_clock::now();
  const auto params = make_params(c.cfg, model, eps);
  AssemblyOptions opt;
  opt.k_grid = c.cfg.k_grid;
  ScoreBuild b = assemble_score_network(model, params, opt);
  std::filesystem::create_directories(c.cfg.out_dir);
  std::ofstream(std::filesystem::path(c.cfg.out_dir) / "build_report.json") << b.report.to_json() << "\n";
  std::ofstream(std::filesystem::path(c.cfg.out_dir) / "f_bar.json") << b.s_bar.f_bar().to_json() << "\n";
  const auto mc = l2_error_mc(model, b.s_bar, MultiIndex(model.map.D()), c.cfg.mc_samples, c.cfg.seed, c.cfg.threads);
  const auto& cf = b.report.config;
  c.res.report.rows.push_back({"build-score", eps, params.m, MultiIndex(model.map.D()).to_string(), mc.estimate, mc.sup,
                               cf.L, cf.max_width(), cf.S, std::log(cf.B), c.time_cell(seconds_since(t0)), c.cfg.seed});
  c.details["build_report"] = json::parse(b.report.to_json());
}

void run_error_curve(Ctx& c) {
  const ScoreModel model = c.cfg.load_model();
  const int D = model.map.D();
  const auto ks = error_indices(D, c.cfg.m);
  std::vector<std::vector<double>> l2(ks.size());
  json builds = json::array();
  for (double eps : c.cfg.eps_sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto params = make_params(c.cfg, model, eps);
    AssemblyOptions opt;
    opt.k_grid = c.cfg.k_grid;
    ScoreBuild b;
    try {
      b = assemble_score_network(model, params, opt);
    } catch (const ConstructionError& e) {
      c.fail("eps=" + format_double(eps) + ": " + e.what());
      for (auto& v : l2) v.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double floor = std::ldexp(1.0, -params.N_div - 1);
    if (!(b.report.q_floor >= floor))
      c.fail("eps=" + format_double(eps) + ": denominator floor " + format_double(b.report.q_floor) + " < 2^-(N_div+1)");
    const auto mc = l2_errors_mc(model, b.s_bar, ks, c.cfg.mc_samples, c.cfg.seed, c.cfg.threads);
    const double rt = seconds_since(t0);
    const auto& cf = b.report.config;
    for (size_t q = 0; q < ks.size(); ++q) {
      l2[q].push_back(mc[q].estimate);
      c.res.report.rows.push_back({"error-curve", eps, params.m, ks[q].to_string(), mc[q].estimate, mc[q].sup, cf.L,
                                   cf.max_width(), cf.S, std::log(cf.B), c.time_cell(rt), c.cfg.seed});
    }
    json bj = json::parse(b.report.to_json());
    json mj = json::array();
    for (size_t q = 0; q < ks.size(); ++q)
      mj.push_back({{"k", ks[q].to_string()}, {"estimate", mc[q].estimate}, {"stderr", mc[q].stderr_},
                    {"sup", mc[q].sup}, {"skipped", mc[q].skipped}});
    bj["mc"] = mj;
    builds.push_back(bj);
  }
  c.details["builds"] = builds;
  for (size_t q = 0; q < ks.size(); ++q)
    for (size_t i = 1; i < l2[q].size(); ++i)
      if (!(l2[q][i] < l2[q][i - 1]))
        c.fail("k=" + ks[q].to_string() + ": error does not decrease from eps=" + format_double(c.cfg.eps_sweep[i - 1]) +
               " to eps=" + format_double(c.cfg.eps_sweep[i]));
  if (c.cfg.eps_sweep.size() >= 2 && c.res.failures.empty()) {
    const double slope = loglog_slope(c.cfg.eps_sweep, l2[0]);
    c.details["k0_slope"] = slope;
    const double need = 2.0 * model.map.beta() - 1.0;
    c.details["k0_slope_required"] = need;
    if (!(slope >= need)) c.fail("k=0 log-log slope " + format_double(slope) + " < 2 beta - 1 = " + format_double(need));
  }
}

SmoothMapSpec tail_map(int D) {
  if (D == 1) {
    std::vector<std::vector<SmoothMapSpec::PolyTerm>> t(1);
    t[0].push_back({MultiIndex{0}, -1.0});
    t[0].push_back({MultiIndex{1}, 2.0});
    return SmoothMapSpec::polynomial(1, std::move(t), 2.0, 2.0);
  }
  if (D == 2) return SmoothMapSpec::circle();
  throw ConfigError("config field 'tail_D': supported values are 1 and 2");
}

void run_tail_check(Ctx& c) {
  json items = json::array();
  for (int D : c.cfg.tail_D)
    for (double sigma : c.cfg.tail_sigma) {
      const auto t0 = std::chrono::steady_clock::now();
      const ScoreModel model(tail_map(D), sigma);
      const auto tp = ConstructionParams::theorem(model, c.cfg.eps_sweep.front(), std::max(c.cfg.m, 1));
      const double R = std::min(tp.R, 10.0 * sigma * std::sqrt(static_cast<double>(D)));
      const auto bound = tail_mass(model, R, TailMode::kBound);
      const auto est = tail_mass(model, R, TailMode::kEstimate, c.cfg.tail_samples, c.cfg.seed);
      const bool ok = est.value <= bound.value + 3.0 * est.stderr_;
      const std::string name = "tail-check/D=" + std::to_string(D) + "/sigma=" + format_double(sigma);
      if (!ok) c.fail(name + ": estimate " + format_double(est.value) + " exceeds bound " + format_double(bound.value));
      items.push_back({{"D", D}, {"sigma", sigma}, {"R", R}, {"R_theorem", tp.R}, {"estimate", est.value},
                       {"stderr", est.stderr_}, {"bound", bound.value}, {"pass", ok}});
      c.res.report.rows.push_back({name, c.cfg.eps_sweep.front(), std::max(c.cfg.m, 1), "0", est.value, bound.value, 0, 0,
                                   0, 0.0, c.time_cell(seconds_since(t0)), c.cfg.seed});
    }
  c.details["tail"] = items;
}

void run_config_scaling(Ctx& c) {
  const ScoreModel model = c.cfg.load_model();
  std::vector<double> inv, S;
  json items = json::array();
  for (double eps : c.cfg.eps_sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto params = make_params(c.cfg, model, eps);
    AssemblyOptions opt;
    opt.k_grid = std::min(c.cfg.k_grid, 21);
    opt.upsilon_points = 0;
    ScoreBuild b;
    try {
      b = assemble_score_network(model, params, opt);
    } catch (const ConstructionError& e) {
      c.fail("eps=" + format_double(eps) + ": " + e.what());
      continue;
    }
    const auto& cf = b.report.config;
    inv.push_back(1.0 / eps);
    S.push_back(static_cast<double>(cf.S));
    items.push_back({{"eps", eps}, {"L", cf.L}, {"width", cf.max_width()}, {"S", cf.S}, {"logB", std::log(cf.B)},
                     {"pieces", b.report.pieces}});
    c.res.report.rows.push_back({"config-scaling", eps, params.m, MultiIndex(model.map.D()).to_string(), 0.0, 0.0, cf.L,
                                 cf.max_width(), cf.S, std::log(cf.B), c.time_cell(seconds_since(t0)), c.cfg.seed});
  }
  c.details["configs"] = items;
  if (inv.size() >= 2) {
    const double slope = loglog_slope(inv, S);
    c.details["S_slope"] = slope;
    c.details["S_slope_max"] = model.map.d() + 0.5;
    if (!(slope <= model.map.d() + 0.5))
      c.fail("log S slope " + format_double(slope) + " exceeds d + 0.5");
  }
}

}  // namespace

RunResult run(const ExperimentConfig& config) {
  config.validate();
  RunResult res;
  Ctx c{config, res};
  const auto t0 = std::chrono::steady_clock::now();
  const std::string& e = config.experiment;
  try {
    if (e == "verify-primitives") run_verify_primitives(c);
    else if (e == "oracle-selftest") run_oracle_selftest(c);
    else if (e == "build-score") run_build_score(c);
    else if (e == "error-curve") run_error_curve(c);
    else if (e == "tail-check") run_tail_check(c);
    else if (e == "config-scaling") run_config_scaling(c);
  } catch (const ConfigError&) {
    throw;
  } catch (const ParameterError& ex) {
    throw ConfigError(ex.what());
  } catch (const std::exception& ex) {
    c.fail(ex.what());
  }
  res.exit_code = res.failures.empty() ? 0 : 1;
  json out;
  out["config"] = json::parse(config.to_json());
  out["passed"] = res.failures.empty();
  out["failures"] = res.failures;
  out["details"] = c.details;
  out["wall_seconds"] = seconds_since(t0);
  json rows = json::array();
  for (const auto& r : res.report.rows)
    rows.push_back({{"experiment", r.experiment}, {"eps", r.eps},       {"m", r.m},         {"k", r.k},
                    {"l2_error_sq", r.l2_error_sq}, {"sup_error", r.sup_error}, {"L", r.L}, {"width", r.width},
                    {"S", r.S},     {"logB", r.logB},     {"runtime_s", r.runtime_s}, {"seed", r.seed}});
  out["rows"] = rows;
  res.details = c.details.dump();
  std::filesystem::create_directories(config.out_dir);
  const auto base = std::filesystem::path(config.out_dir) / config.experiment;
  std::ofstream(base.string() + ".csv") << res.report.to_csv();
  std::ofstream(base.string() + ".json") << out.dump(2) << "\n";
  return res;
}

}  // namespace gelunet
