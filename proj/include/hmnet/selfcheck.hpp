#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hmnet/gradcheck.hpp"
#include "hmnet/model.hpp"
#include "hmnet/pattern_memory.hpp"

namespace hmnet {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  std::string detail;
};

struct SelfcheckOptions {
  /// Test hook: writes a non-zero value onto the W_v diagonal before the
  /// invariant checks run.
  bool corrupt_mask = false;
  std::uint64_t seed = 17;
};

namespace detail {

inline HMNetConfig selfcheck_config() {
  HMNetConfig cfg;
  cfg.input_length = 8;
  cfg.horizon = 2;
  cfg.num_variables = 2;
  cfg.hidden_dim = 4;
  cfg.levels = {LevelConfig{2, true, true, 32, 4}, LevelConfig{2, true, true, 32, 4}};
  cfg.seed = 7;
  return cfg;
}

inline Tensor random_input(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline CheckResult guarded(const std::string& name, const std::function<CheckResult()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {name, false, INFINITY, e.what()};
  }
}

}  // namespace detail

/// Gradient checks, retrieval against a brute-force scan, FIFO retention,
/// the zero-diagonal invariant and output shape contracts.
inline std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt = {}) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(opt.seed);

  // Model used by the invariant and gradient checks.
  HMNet model(detail::selfcheck_config());
  if (opt.corrupt_mask) model.params().levels[0].interact_v.tensor.mutable_values()[0] = 0.5;
  const auto& cfg = model.config();

  out.push_back(detail::guarded("zero-diagonal mask", [&] {
    CheckResult r{"zero-diagonal mask", true, 0.0, "diag(W_v) == 0 at every level"};
    for (const auto& lp : model.params().levels) {
      const auto v = lp.interact_v.tensor.values();
      for (std::size_t i = 0; i < cfg.num_variables; ++i) {
        r.max_error = std::max(r.max_error, std::abs(v[i * cfg.num_variables + i]));
      }
      if (!lp.interact_v.mask_holds()) {
        r.passed = false;
        r.detail = "invariant violated: diag(W_v) == 0 for " + lp.interact_v.name;
      }
    }
    return r;
  }));

  out.push_back(detail::guarded("gradient check (full model)", [&] {
    const Tensor x = detail::random_input({2, cfg.input_length, cfg.num_variables}, rng, 2.0);
    const Tensor tf = detail::random_input({2, cfg.input_length, cfg.time_feature_dim}, rng, 0.5);
    const Tensor y = detail::random_input({2, cfg.horizon, cfg.num_variables}, rng, 2.0);
    // Populate memories once, then differentiate in eval mode so the store is fixed.
    model.forward(detail::random_input(x.shape(), rng, 2.0), tf, Mode::train);
    auto loss = [&] { return mse_loss(model.forward(x, tf, Mode::eval), y); };
    CheckResult r{"gradient check (full model)", true, 0.0, ""};
    std::size_t checked = 0;
    for (auto* p : model.parameters()) {
      const auto rep = finite_diff_check(loss, *p, 1e-5, 1e-4);
      checked += rep.checked;
      if (rep.max_rel_error > r.max_error) {
        r.max_error = rep.max_rel_error;
        r.detail = "worst: " + p->name;
      }
    }
    r.passed = r.max_error < 1e-4;
    r.detail = std::to_string(checked) + " entries, " + r.detail;
    return r;
  }));

  out.push_back(detail::guarded("retrieval vs exhaustive scan", [&] {
    CheckResult r{"retrieval vs exhaustive scan", true, 0.0, ""};
    std::size_t mismatches = 0;
    const std::size_t cases = 200;
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t dim = 1 + rng() % 8, cap = 1 + rng() % 32, inserts = rng() % 80, k = 1 + rng() % 12;
      PatternMemory mem(cap, dim);
      std::deque<std::vector<double>> kept;
      std::normal_distribution<double> g;
      for (std::size_t i = 0; i < inserts; ++i) {
        std::vector<double> p(dim);
        // Small integer grid so exact score ties occur.
        for (auto& v : p) v = double(int(rng() % 5) - 2);
        if (mem.insert(p)) {
          kept.push_back(*normalize_pattern(p));
          if (kept.size() > cap) kept.pop_front();
        }
      }
      std::vector<double> q(dim);
      for (auto& v : q) v = g(rng);
      const auto got = mem.top_k(q, k);
      // Brute force over buffer slots, ties to the lower slot.
      std::vector<std::pair<double, std::size_t>> scored;
      for (std::size_t s = 0; s < mem.count(); ++s) {
        double dot = 0;
        for (std::size_t j = 0; j < dim; ++j) dot += q[j] * mem.row(s)[j];
        scored.emplace_back(-dot, s);
      }
      std::sort(scored.begin(), scored.end());
      const std::size_t k_eff = std::min(k, scored.size());
      bool same = got.k == k_eff;
      for (std::size_t i = 0; same && i < k_eff; ++i) {
        same = got.indices[i] == scored[i].second;
        r.max_error = std::max(r.max_error, std::abs(got.similarities[i] + scored[i].first));
      }
      // Retained rows are exactly the last `cap` accepted inserts.
      std::vector<std::vector<double>> rows;
      for (std::size_t s = 0; s < mem.count(); ++s) rows.emplace_back(mem.row(s).begin(), mem.row(s).end());
      std::vector<std::vector<double>> expect(kept.begin(), kept.end());
      std::sort(rows.begin(), rows.end());
      std::sort(expect.begin(), expect.end());
      same = same && rows == expect;
      mismatches += !same;
    }
    r.passed = mismatches == 0;
    r.detail = std::to_string(cases) + " cases, " + std::to_string(mismatches) + " mismatches";
    return r;
  }));

  out.push_back(detail::guarded("FIFO retention and unit norm", [&] {
    CheckResult r{"FIFO retention and unit norm", true, 0.0, ""};
    const std::size_t cap = 16, dim = 3;
    PatternMemory mem(cap, dim);
    std::size_t accepted = 0, zeros = 0;
    for (std::size_t i = 0; i < 3 * cap; ++i) {
      std::vector<double> p{double(i + 1), 0.0, 0.0};
      if (i % 7 == 3) {
        p.assign(dim, 0.0);
        ++zeros;
      } else {
        p[1] = double(i);  // makes each accepted row distinct
      }
      accepted += mem.insert(p);
    }
    r.passed = accepted == 3 * cap - zeros && mem.count() == cap && mem.cursor() == accepted % cap;
    for (std::size_t s = 0; s < mem.count(); ++s) {
      double n = 0;
      for (double v : mem.row(s)) n += v * v;
      r.max_error = std::max(r.max_error, std::abs(std::sqrt(n) - 1.0));
    }
    r.passed = r.passed && r.max_error < 1e-12;
    r.detail = std::to_string(zeros) + " zero inserts skipped";
    return r;
  }));

  out.push_back(detail::guarded("shape contracts", [&] {
    CheckResult r{"shape contracts", true, 0.0, ""};
    HMNetConfig big;
    big.num_variables = 2;
    big.hidden_dim = 4;
    for (auto& l : big.levels) l.memory_capacity = 8;
    const auto lengths = big.level_lengths();
    r.passed = lengths == std::vector<std::size_t>{96, 16, 4, 1};
    for (std::size_t h : {96u, 192u}) {
      big.horizon = h;
      HMNet m(big);
      const Tensor x = detail::random_input({1, 96, 2}, rng);
      const Tensor tf = detail::random_input({1, 96, big.time_feature_dim}, rng, 0.5);
      r.passed = r.passed && m.forward(x, tf, Mode::eval).shape() == Shape{1, h, 2};
    }
    r.detail = "96 -> 16 -> 4 -> 1 positions; forecast [B, H, N]";
    return r;
  }));

  out.push_back(detail::guarded("gate and attention ranges", [&] {
    CheckResult r{"gate and attention ranges", true, 0.0, ""};
    const Tensor x = detail::random_input({2, cfg.input_length, cfg.num_variables}, rng, 2.0);
    const Tensor tf = detail::random_input({2, cfg.input_length, cfg.time_feature_dim}, rng, 0.5);
    ForwardTrace trace;
    model.forward(x, tf, Mode::eval, &trace);
    for (const auto& lt : trace.levels) {
      for (double a : lt.alpha.values()) r.passed = r.passed && a > 0.0 && a < 1.0;
      if (lt.denoise.k_effective == 0) continue;
      for (double b : lt.denoise.beta.values()) r.passed = r.passed && b > 0.0 && b < 1.0;
      const auto kv = lt.denoise.kappa.values();
      const std::size_t k = lt.denoise.k_effective;
      for (std::size_t row = 0; row < kv.size() / k; ++row) {
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += kv[row * k + j];
        r.max_error = std::max(r.max_error, std::abs(s - 1.0));
      }
    }
    r.passed = r.passed && r.max_error <= 1e-9;
    r.detail = "alpha, beta in (0, 1); kappa rows sum to 1";
    return r;
  }));
  return out;
}

}  // namespace hmnet
