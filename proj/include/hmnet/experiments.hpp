#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "hmnet/data.hpp"
#include "hmnet/train.hpp"

namespace hmnet {

/// Runs f(0..n-1) on up to `jobs` threads. The first exception is rethrown
/// after all workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct RunOutcome {
  MetricReport report;
  TrainHistory history;
  HMNet model;
};

/// Trains one model variant from scratch and evaluates it on the test split.
inline RunOutcome run_single(const WindowDataset& w, HMNetConfig cfg, const TrainConfig& tc,
                             const TrainHooks* hooks = nullptr) {
  cfg.num_variables = w.num_variables();
  cfg.input_length = w.input_length;
  cfg.horizon = w.horizon;
  RunOutcome out{{}, {}, build_model(cfg, tc)};
  out.history = train(out.model, w, tc, hooks);
  out.report = evaluate(out.model, w, Split::test, nullptr, tc.max_eval_windows);
  out.report.variant = ablation_name(tc.ablation);
  out.report.epochs_run = out.history.epochs.size();
  out.report.wall_seconds = out.history.wall_seconds;
  out.report.seed = tc.seed;
  return out;
}

/// Everything a sweep needs besides the swept quantity.
struct ExperimentSetup {
  TimeSeriesDataset data;
  SplitRatios ratios;
  HMNetConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;  // empty: {train.seed}
  std::size_t jobs = 1;

  std::vector<std::uint64_t> seed_list() const { return seeds.empty() ? std::vector{train.seed} : seeds; }
  WindowDataset windows(std::size_t horizon) const {
    return split_and_standardize(data, ratios, model.input_length, horizon);
  }
};

/// full / no_interact / no_denoise / no_both per horizon and seed, each from
/// the same initialization seed. One report per (horizon, variant, seed).
inline std::vector<MetricReport> run_ablation_suite(const ExperimentSetup& setup,
                                                    const std::vector<std::size_t>& horizons) {
  const auto seeds = setup.seed_list();
  std::vector<WindowDataset> windows;
  for (auto h : horizons) windows.push_back(setup.windows(h));
  std::vector<std::tuple<std::size_t, Ablation, std::uint64_t>> cells;
  for (std::size_t h = 0; h < horizons.size(); ++h)
    for (auto a : kAllAblations)
      for (auto s : seeds) cells.emplace_back(h, a, s);
  std::vector<MetricReport> reports(cells.size());
  parallel_for(cells.size(), setup.jobs, [&](std::size_t i) {
    auto [h, a, s] = cells[i];
    TrainConfig tc = setup.train;
    tc.ablation = a;
    tc.seed = s;
    reports[i] = run_single(windows[h], setup.model, tc).report;
  });
  return reports;
}

/// Evaluates already-trained models on the test split under every
/// (setting, probability) pair. Rows are ordered model, setting, probability.
inline std::vector<MetricReport> run_noise_sweep(const std::vector<std::pair<std::string, HMNet*>>& models,
                                                 const WindowDataset& w,
                                                 const std::vector<NoiseSetting>& settings,
                                                 const std::vector<double>& probabilities,
                                                 std::uint64_t noise_seed = 0, std::size_t max_windows = 0) {
  std::vector<MetricReport> out;
  for (const auto& [name, model] : models) {
    for (auto setting : settings) {
      for (double p : probabilities) {
        const NoiseSpec spec = NoiseSpec::standard(setting, p, noise_seed);
        spec.validate();
        MetricReport r = evaluate(*model, w, Split::test, &spec, max_windows);
        r.variant = name;
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

/// Trains full and no_denoise per seed, then sweeps noise on each pair.
inline std::vector<MetricReport> train_and_run_noise_sweep(const ExperimentSetup& setup, std::size_t horizon,
                                                           const std::vector<NoiseSetting>& settings,
                                                           const std::vector<double>& probabilities) {
  const auto seeds = setup.seed_list();
  const WindowDataset w = setup.windows(horizon);
  std::vector<std::vector<MetricReport>> per_seed(seeds.size());
  parallel_for(seeds.size(), setup.jobs, [&](std::size_t i) {
    TrainConfig tc = setup.train;
    tc.seed = seeds[i];
    tc.ablation = Ablation::full;
    auto full = run_single(w, setup.model, tc);
    tc.ablation = Ablation::no_denoise;
    auto plain = run_single(w, setup.model, tc);
    per_seed[i] = run_noise_sweep({{"full", &full.model}, {"no_denoise", &plain.model}}, w, settings, probabilities,
                                  seeds[i], tc.max_eval_windows);
    for (auto& r : per_seed[i]) {
      r.seed = seeds[i];
      const auto& src = r.variant == "full" ? full : plain;
      r.epochs_run = src.report.epochs_run;
      r.wall_seconds = src.report.wall_seconds;
    }
  });
  std::vector<MetricReport> out;
  for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
  return out;
}

/// Retrains the full model for each (capacity, K) pair and horizon.
inline std::vector<MetricReport> run_memory_sweep(const ExperimentSetup& setup, const std::vector<std::size_t>& horizons,
                                                  const std::vector<MemoryConfig>& configs) {
  const auto seeds = setup.seed_list();
  std::vector<WindowDataset> windows;
  for (auto h : horizons) windows.push_back(setup.windows(h));
  std::vector<std::tuple<std::size_t, std::size_t, std::uint64_t>> cells;
  for (std::size_t h = 0; h < horizons.size(); ++h)
    for (std::size_t c = 0; c < configs.size(); ++c)
      for (auto s : seeds) cells.emplace_back(h, c, s);
  std::vector<MetricReport> reports(cells.size());
  parallel_for(cells.size(), setup.jobs, [&](std::size_t i) {
    auto [h, c, s] = cells[i];
    HMNetConfig cfg = setup.model;
    for (auto& l : cfg.levels) {
      l.memory_capacity = configs[c].capacity;
      l.top_k = configs[c].top_k;
    }
    TrainConfig tc = setup.train;
    tc.seed = s;
    tc.ablation = Ablation::full;
    auto r = run_single(windows[h], cfg, tc).report;
    r.memory = configs[c];
    r.variant = "M" + std::to_string(configs[c].capacity) + "_K" + std::to_string(configs[c].top_k);
    reports[i] = std::move(r);
  });
  return reports;
}

/// Averages reports that share dataset, horizon, variant, noise and memory
/// settings; `runs` records how many were merged. Order of first appearance
/// is kept.
inline std::vector<MetricReport> average_over_seeds(const std::vector<MetricReport>& reports) {
  std::vector<MetricReport> out;
  std::vector<std::size_t> counts;
  auto key = [](const MetricReport& r) {
    std::ostringstream k;
    k << r.dataset << '|' << r.horizon << '|' << r.variant << '|' << r.split;
    if (r.noise) k << '|' << noise_setting_name(r.noise->setting) << '|' << r.noise->probability;
    if (r.memory) k << '|' << r.memory->capacity << '|' << r.memory->top_k;
    return k.str();
  };
  std::map<std::string, std::size_t> slot;
  for (const auto& r : reports) {
    auto [it, fresh] = slot.try_emplace(key(r), out.size());
    if (fresh) {
      out.push_back(r);
      counts.push_back(1);
      continue;
    }
    auto& a = out[it->second];
    a.mse += r.mse;
    a.mae += r.mae;
    a.mse_original += r.mse_original;
    a.mae_original += r.mae_original;
    a.epochs_run += r.epochs_run;
    a.wall_seconds += r.wall_seconds;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = double(counts[i]);
    out[i].mse /= n;
    out[i].mae /= n;
    out[i].mse_original /= n;
    out[i].mae_original /= n;
    out[i].epochs_run = std::size_t(double(out[i].epochs_run) / n + 0.5);
    out[i].runs = counts[i];
  }
  return out;
}

}  // namespace hmnet
