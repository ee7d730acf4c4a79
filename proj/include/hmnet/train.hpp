#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hmnet/data.hpp"
#include "hmnet/model.hpp"
#include "hmnet/optim.hpp"

namespace hmnet {

enum class Ablation { full, no_interact, no_denoise, no_both };

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_interact: return "no_interact";
    case Ablation::no_denoise: return "no_denoise";
    case Ablation::no_both: return "no_both";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::full, Ablation::no_interact, Ablation::no_denoise, Ablation::no_both}) {
    if (s == ablation_name(a)) return a;
  }
  throw ValidationError("unknown ablation '" + s + "' (expected full, no_interact, no_denoise or no_both)");
}

inline constexpr Ablation kAllAblations[] = {Ablation::full, Ablation::no_interact, Ablation::no_denoise,
                                             Ablation::no_both};

/// Copy of `cfg` with the enable switches forced off at every level as the
/// variant requires. `full` leaves the switches as configured.
inline HMNetConfig apply_ablation(HMNetConfig cfg, Ablation a) {
  for (auto& l : cfg.levels) {
    if (a == Ablation::no_interact || a == Ablation::no_both) l.enable_interact = false;
    if (a == Ablation::no_denoise || a == Ablation::no_both) l.enable_denoise = false;
  }
  return cfg;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  std::uint64_t seed = 2023;
  Ablation ablation = Ablation::full;
  std::size_t max_batches_per_epoch = 0;  // 0: full pass over the train split
  std::size_t max_eval_windows = 0;       // 0: every window of the split

  void validate() const {
    if (batch_size == 0) throw ValidationError("train: batch_size must be >= 1");
    if (patience == 0) throw ValidationError("train: patience must be >= 1");
    if (max_epochs == 0) throw ValidationError("train: max_epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("train: learning_rate must be a positive number");
    }
  }
};

/// Model for a run: the ablation switches applied and the run seed used for
/// initialization.
inline HMNet build_model(HMNetConfig cfg, const TrainConfig& tc) {
  cfg = apply_ablation(std::move(cfg), tc.ablation);
  cfg.seed = tc.seed;
  return HMNet(std::move(cfg));
}

struct MemoryConfig {
  std::size_t capacity = 0;
  std::size_t top_k = 0;
};

/// Errors on the standardized scale (the usual benchmark convention) and on
/// the original data scale after undoing the train-split z-score.
struct MetricReport {
  std::string dataset;
  std::size_t horizon = 0;
  std::string variant = "full";
  std::string split = "test";
  std::optional<NoiseSpec> noise;
  std::optional<MemoryConfig> memory;
  std::vector<bool> interact_enabled;  // per level
  std::vector<bool> denoise_enabled;
  double mse = 0.0;
  double mae = 0.0;
  double mse_original = 0.0;
  double mae_original = 0.0;
  std::size_t windows = 0;
  std::size_t epochs_run = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t runs = 1;  // seeds averaged into this row
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  bool early_stopped = false;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  /// Replaces the measured validation MSE (used to force early stopping).
  std::function<double(std::size_t epoch, double measured)> validation_override;
  /// Called after every optimizer step with the 1-based step count.
  std::function<void(std::size_t step, HMNet&)> after_step;
  /// Ends training after the epoch for which it returns true.
  std::function<bool(const EpochRecord&)> stop_when;
};

/// Indices 0..n-1, or an even subsample of `limit` of them.
inline std::vector<std::size_t> window_subset(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> idx;
  if (limit == 0 || limit >= n) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  for (std::size_t i = 0; i < limit; ++i) idx.push_back(i * n / limit);
  return idx;
}

using Predictor = std::function<Tensor(const Batch&)>;

/// MSE and MAE of `predict` over the chosen windows of `split`. With a noise
/// spec, inputs are perturbed by a generator seeded from the spec, so repeated
/// calls agree.
inline MetricReport evaluate_predictor(const Predictor& predict, const WindowDataset& w, Split split,
                                       const NoiseSpec* noise = nullptr, std::size_t max_windows = 0,
                                       std::size_t batch_size = 64) {
  MetricReport r;
  r.dataset = w.name;
  r.horizon = w.horizon;
  r.split = split_name(split);
  if (noise) r.noise = *noise;
  const auto idx = window_subset(w.count(split), max_windows);
  if (idx.empty()) throw ValidationError("evaluate: split '" + r.split + "' has no windows");
  std::mt19937_64 rng(noise ? noise->seed : 0);
  const std::size_t v_n = w.num_variables();
  double se = 0, ae = 0, se_o = 0, ae_o = 0;
  std::size_t count = 0;
  for (std::size_t off = 0; off < idx.size(); off += batch_size) {
    const std::span<const std::size_t> chunk(idx.data() + off, std::min(batch_size, idx.size() - off));
    const Batch b = make_batch(w, split, chunk, noise, &rng);
    const Tensor pred = predict(b);
    if (pred.shape() != b.target.shape()) {
      throw ShapeError("evaluate: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(b.target.shape()));
    }
    const auto p = pred.values();
    const auto y = b.target.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = p[i] - y[i];
      const double diff_o = diff * w.stdev[i % v_n];
      se += diff * diff;
      ae += std::abs(diff);
      se_o += diff_o * diff_o;
      ae_o += std::abs(diff_o);
    }
    count += p.size();
  }
  r.mse = se / double(count);
  r.mae = ae / double(count);
  r.mse_original = se_o / double(count);
  r.mae_original = ae_o / double(count);
  r.windows = idx.size();
  return r;
}

/// Model evaluation in eval mode: parameters and memories are left untouched.
inline MetricReport evaluate(HMNet& model, const WindowDataset& w, Split split, const NoiseSpec* noise = nullptr,
                             std::size_t max_windows = 0, std::size_t batch_size = 64) {
  MetricReport r = evaluate_predictor([&model](const Batch& b) { return model.forward(b.x, b.time_feats, Mode::eval); },
                                      w, split, noise, max_windows, batch_size);
  for (const auto& l : model.config().levels) {
    r.interact_enabled.push_back(l.enable_interact);
    r.denoise_enabled.push_back(l.enable_denoise);
  }
  return r;
}

/// Adam on the MSE of globally standardized targets. After each epoch the
/// validation MSE is measured; training stops once it has not improved for
/// `patience` epochs, and the parameters and memories of the best epoch are
/// restored. A non-finite loss aborts with RuntimeFailure.
inline TrainHistory train(HMNet& model, const WindowDataset& w, const TrainConfig& cfg,
                          const TrainHooks* hooks = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n_train = w.count(Split::train);
  if (n_train == 0) throw ValidationError("train: no training windows");
  auto params = model.trainable_parameters();
  AdamState adam(AdamOptions{cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory hist;
  std::vector<std::vector<double>> best_values = model.params().values();
  std::vector<PatternMemory> best_memories = model.memories();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_batches_per_epoch) batches = std::min(batches, cfg.max_batches_per_epoch);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::span<const std::size_t> chunk(order.data() + lo, std::min(cfg.batch_size, n_train - lo));
      const Batch b = make_batch(w, Split::train, chunk);
      const Tensor loss = mse_loss(model.forward(b.x, b.time_feats, Mode::train), b.target);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw RuntimeFailure("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(bi + 1) + " (step " + std::to_string(hist.steps + 1) + ")");
      }
      backward(loss);
      // Parameters cut off by the current state (e.g. denoising on an empty
      // memory) get an explicit zero gradient.
      for (auto* p : params) {
        if (!p->tensor.has_grad()) p->tensor.mutable_grad();
      }
      adam_step(params, adam);
      zero_grad(params);
      loss_sum += value;
      ++hist.steps;
      if (hooks && hooks->after_step) hooks->after_step(hist.steps, model);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(batches);
    rec.val_mse = evaluate(model, w, Split::val, nullptr, cfg.max_eval_windows).mse;
    if (hooks && hooks->validation_override) rec.val_mse = hooks->validation_override(epoch, rec.val_mse);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
    hist.epochs.push_back(rec);
    if (rec.val_mse < hist.best_val_mse) {
      hist.best_val_mse = rec.val_mse;
      hist.best_epoch = epoch;
      best_values = model.params().values();
      best_memories = model.memories();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      hist.early_stopped = true;
      break;
    }
    if (hooks && hooks->stop_when && hooks->stop_when(rec)) break;
  }
  model.params().load_values(best_values);
  model.memories() = std::move(best_memories);
  hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return hist;
}

}  // namespace hmnet
