#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hmnet/config.hpp"
#include "hmnet/error.hpp"
#include "hmnet/ops.hpp"
#include "hmnet/optim.hpp"
#include "hmnet/pattern_memory.hpp"
#include "hmnet/tensor.hpp"

namespace hmnet {

enum class Mode { train, eval };

inline constexpr double kInstanceNormEps = 1e-5;

// Weight layout: every projection is applied to row vectors, y = x * W, so a
// d -> d map is stored [in, out]. Along-axis mixers (interaction) are stored
// [out, in] and act on the variable axis.
struct LevelParams {
  Parameter interact_v;       // [N, N], zero diagonal
  Parameter interact_alpha;   // [N, 2N]
  Parameter conv_weight;      // [S, d, d]
  Parameter conv_bias;        // [d]
  Parameter denoise_query;    // V_kappa [d, d]
  Parameter denoise_key;      // W_kappa [d, d]
  Parameter denoise_value;    // U_kappa [d, d]
  Parameter denoise_gate;     // W_beta [2d, d]
  Parameter aggregate_weight; // W_l [P*d, d]
  Parameter aggregate_bias;   // [d]
};

struct ModelParams {
  Parameter value_weight;  // [N, d], row n is private to variable n
  Parameter time_weight;   // [F, d]
  Parameter embed_bias;    // [d]
  std::vector<LevelParams> levels;
  Parameter mlp_hidden_weight;  // [d, d]
  Parameter mlp_hidden_bias;    // [d]
  Parameter mlp_out_weight;     // [d, H]
  Parameter mlp_out_bias;       // [H]

  static ModelParams init(const HMNetConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t n = cfg.num_variables;
    const std::size_t d = cfg.hidden_dim;
    const std::size_t f = cfg.time_feature_dim;
    ModelParams p;
    p.value_weight = make_uniform_parameter("embed.value_weight", {n, d}, 1, rng);
    p.time_weight = make_uniform_parameter("embed.time_weight", {f, d}, f, rng);
    p.embed_bias = make_zero_parameter("embed.bias", {d});
    for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
      const std::string pre = "level" + std::to_string(l) + ".";
      const std::size_t s = cfg.levels[l].block_size;
      LevelParams lp;
      lp.interact_v = make_uniform_parameter(pre + "interact.W_v", {n, n}, n, rng);
      lp.interact_v.mask = std::vector<std::uint8_t>(n * n, 0);
      for (std::size_t i = 0; i < n; ++i) (*lp.interact_v.mask)[i * n + i] = 1;
      lp.interact_v.apply_mask();
      lp.interact_alpha = make_uniform_parameter(pre + "interact.W_alpha", {n, 2 * n}, 2 * n, rng);
      lp.conv_weight = make_uniform_parameter(pre + "conv.weight", {s, d, d}, s * d, rng);
      lp.conv_bias = make_zero_parameter(pre + "conv.bias", {d});
      lp.denoise_query = make_uniform_parameter(pre + "denoise.V_kappa", {d, d}, d, rng);
      lp.denoise_key = make_uniform_parameter(pre + "denoise.W_kappa", {d, d}, d, rng);
      lp.denoise_value = make_uniform_parameter(pre + "denoise.U_kappa", {d, d}, d, rng);
      lp.denoise_gate = make_uniform_parameter(pre + "denoise.W_beta", {2 * d, d}, 2 * d, rng);
      const std::size_t positions = cfg.positions(l);
      lp.aggregate_weight = make_uniform_parameter(pre + "aggregate.W_l", {positions * d, d}, positions * d, rng);
      lp.aggregate_bias = make_zero_parameter(pre + "aggregate.bias", {d});
      p.levels.push_back(std::move(lp));
    }
    p.mlp_hidden_weight = make_uniform_parameter("predict.hidden_weight", {d, d}, d, rng);
    p.mlp_hidden_bias = make_zero_parameter("predict.hidden_bias", {d});
    p.mlp_out_weight = make_uniform_parameter("predict.out_weight", {d, cfg.horizon}, d, rng);
    p.mlp_out_bias = make_zero_parameter("predict.out_bias", {cfg.horizon});
    return p;
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> out{&value_weight, &time_weight, &embed_bias};
    for (auto& l : levels) {
      for (Parameter* q : {&l.interact_v, &l.interact_alpha, &l.conv_weight, &l.conv_bias,
                           &l.denoise_query, &l.denoise_key, &l.denoise_value, &l.denoise_gate,
                           &l.aggregate_weight, &l.aggregate_bias}) {
        out.push_back(q);
      }
    }
    for (Parameter* q : {&mlp_hidden_weight, &mlp_hidden_bias, &mlp_out_weight, &mlp_out_bias}) out.push_back(q);
    return out;
  }

  /// Parameters that influence the output under `cfg`'s enable flags.
  std::vector<Parameter*> active(const HMNetConfig& cfg) {
    std::vector<Parameter*> out{&value_weight, &time_weight, &embed_bias};
    for (std::size_t i = 0; i < levels.size(); ++i) {
      auto& l = levels[i];
      if (cfg.levels[i].enable_interact) {
        out.push_back(&l.interact_v);
        out.push_back(&l.interact_alpha);
      }
      out.push_back(&l.conv_weight);
      out.push_back(&l.conv_bias);
      if (cfg.levels[i].enable_denoise) {
        for (Parameter* q : {&l.denoise_query, &l.denoise_key, &l.denoise_value, &l.denoise_gate}) out.push_back(q);
      }
      out.push_back(&l.aggregate_weight);
      out.push_back(&l.aggregate_bias);
    }
    for (Parameter* q : {&mlp_hidden_weight, &mlp_hidden_bias, &mlp_out_weight, &mlp_out_bias}) out.push_back(q);
    return out;
  }

  ModelParams clone() const {
    ModelParams c = *this;
    for (auto* p : c.all()) p->tensor = Tensor(p->tensor.shape(), std::vector<double>(p->tensor.values().begin(), p->tensor.values().end()), true);
    return c;
  }

  std::vector<std::vector<double>> values() const {
    auto& self = const_cast<ModelParams&>(*this);
    std::vector<std::vector<double>> out;
    for (auto* p : self.all()) out.emplace_back(p->tensor.values().begin(), p->tensor.values().end());
    return out;
  }

  void load_values(const std::vector<std::vector<double>>& vals) {
    auto params = all();
    if (vals.size() != params.size()) throw ShapeError("load_values: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i]->tensor.mutable_values();
      if (vals[i].size() != dst.size()) throw ShapeError("load_values: size mismatch for " + params[i]->name);
      std::copy(vals[i].begin(), vals[i].end(), dst.begin());
    }
  }
};

// ---------------------------------------------------------------------------
// Reversible instance normalization

struct InstanceStats {
  std::size_t batch = 0;
  std::size_t vars = 0;
  std::vector<double> mean;   // [batch * vars]
  std::vector<double> stdev;  // population std, before adding eps
};

/// Per sample and variable: (x - mean) / (std + eps) over the time axis of
/// x[B, T, N]. The result is a constant; statistics are returned for the
/// inverse map.
inline std::pair<Tensor, InstanceStats> instance_normalize(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("instance_normalize: expected [B, T, N], got " + shape_str(x.shape()));
  const std::size_t b_n = x.dim(0), t_n = x.dim(1), v_n = x.dim(2);
  InstanceStats st{b_n, v_n, std::vector<double>(b_n * v_n, 0.0), std::vector<double>(b_n * v_n, 0.0)};
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < b_n; ++b) {
    for (std::size_t n = 0; n < v_n; ++n) {
      double m = 0.0;
      for (std::size_t t = 0; t < t_n; ++t) m += xv[(b * t_n + t) * v_n + n];
      m /= static_cast<double>(t_n);
      double var = 0.0;
      for (std::size_t t = 0; t < t_n; ++t) {
        const double e = xv[(b * t_n + t) * v_n + n] - m;
        var += e * e;
      }
      const double sd = std::sqrt(var / static_cast<double>(t_n));
      st.mean[b * v_n + n] = m;
      st.stdev[b * v_n + n] = sd;
      for (std::size_t t = 0; t < t_n; ++t) {
        const std::size_t i = (b * t_n + t) * v_n + n;
        out[i] = (xv[i] - m) / (sd + kInstanceNormEps);
      }
    }
  }
  return {Tensor(x.shape(), std::move(out)), std::move(st)};
}

/// Inverse of instance_normalize applied to y[B, H, N]; differentiable in y.
inline Tensor instance_denormalize(const Tensor& y, const InstanceStats& st) {
  if (y.rank() != 3 || y.dim(0) != st.batch || y.dim(2) != st.vars) {
    throw ShapeError("instance_denormalize: shape " + shape_str(y.shape()) + " does not match stats");
  }
  const std::size_t h_n = y.dim(1);
  std::vector<double> sc(y.numel()), sh(y.numel());
  for (std::size_t b = 0; b < st.batch; ++b)
    for (std::size_t h = 0; h < h_n; ++h)
      for (std::size_t n = 0; n < st.vars; ++n) {
        const std::size_t i = (b * h_n + h) * st.vars + n;
        sc[i] = st.stdev[b * st.vars + n] + kInstanceNormEps;
        sh[i] = st.mean[b * st.vars + n];
      }
  return add(mul(y, Tensor(y.shape(), std::move(sc))), Tensor(y.shape(), std::move(sh)));
}

// ---------------------------------------------------------------------------
// Building blocks

/// h[b,t,n,:] = x[b,t,n] * value_weight[n,:] + time_feats[b,t,:] * time_weight + bias.
inline Tensor embed_variables(const Tensor& x_norm, const Tensor& time_feats, const ModelParams& p) {
  if (x_norm.rank() != 3 || time_feats.rank() != 3 || time_feats.dim(0) != x_norm.dim(0) ||
      time_feats.dim(1) != x_norm.dim(1)) {
    throw ShapeError("embed_variables: x " + shape_str(x_norm.shape()) + " and time features " +
                     shape_str(time_feats.shape()) + " disagree");
  }
  const std::size_t b_n = x_norm.dim(0), t_n = x_norm.dim(1), v_n = x_norm.dim(2);
  const std::size_t d = p.value_weight.tensor.dim(1);
  if (p.value_weight.tensor.dim(0) != v_n) {
    throw ShapeError("embed_variables: model has " + std::to_string(p.value_weight.tensor.dim(0)) +
                     " variables, input has " + std::to_string(v_n));
  }
  const Tensor values = expand(x_norm, 3, d);
  const Tensor weights = expand(expand(p.value_weight.tensor, 0, t_n), 0, b_n);
  const Tensor time = expand(linear(time_feats, p.time_weight.tensor, p.embed_bias.tensor), 2, v_n);
  return add(mul(values, weights), time);
}

/// Gated mix of each variable with a zero-diagonal combination of the others.
/// h[B, T', N, d] -> h_v of the same shape; optionally records the gate.
inline Tensor dynamic_variable_interaction(const Tensor& h, const LevelParams& lp, Tensor* alpha_out = nullptr) {
  if (!lp.interact_v.mask_holds()) {
    throw RuntimeFailure("invariant violated: diag(W_v) == 0 for " + lp.interact_v.name);
  }
  const std::size_t var_axis = h.rank() - 2;
  const Tensor v = matmul(lp.interact_v.tensor, h, Contraction::along(var_axis));
  const Tensor alpha = sigmoid(matmul(lp.interact_alpha.tensor, concat(h, v, var_axis), Contraction::along(var_axis)));
  if (alpha_out) *alpha_out = alpha;
  return add(v, mul(alpha, sub(h, v)));
}

/// Blocked convolution with level-shared weights, then the activation.
inline Tensor convolution_unit(const Tensor& h_v, const LevelParams& lp, Activation act) {
  return activation(blocked_conv1d(h_v, lp.conv_weight.tensor, lp.conv_bias.tensor), act);
}

struct DenoiseTrace {
  Tensor beta;
  Tensor kappa;      // [B, P, N, 1, K]
  Tensor retrieved;  // [B, P, N, K, d]
  std::size_t k_effective = 0;
};

/// Memory-based denoising of h_c[B, P, N, d].
///
/// Each (position, variable) cell is a query: its normalized vector retrieves
/// the top-K stored patterns, which enter as constants. The cells are written
/// to the memory after retrieval in train mode only. An empty memory returns
/// h_c unchanged. With `probe_memory`, the retrieved block is a leaf that
/// requires a gradient, so callers can confirm none reaches it.
inline Tensor adaptive_denoise(const Tensor& h_c, PatternMemory& mem, const LevelParams& lp, std::size_t top_k,
                               Mode mode, DenoiseTrace* trace = nullptr, bool probe_memory = false) {
  if (h_c.rank() != 4) throw ShapeError("adaptive_denoise: expected [B, P, N, d], got " + shape_str(h_c.shape()));
  const std::size_t d = h_c.dim(3);
  if (mem.dim() != d) throw ShapeError("adaptive_denoise: memory dim does not match hidden dim");
  const std::size_t cells = h_c.numel() / d;
  const auto hv = h_c.values();

  Tensor h_d = h_c;
  if (!mem.empty()) {
    std::vector<double> queries(h_c.numel(), 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
      if (auto q = normalize_pattern(hv.subspan(c * d, d))) std::copy(q->begin(), q->end(), queries.begin() + c * d);
    }
    const auto hits = mem.top_k_batch(queries, top_k);
    const std::size_t k = hits.front().k;
    std::vector<double> block;
    block.reserve(cells * k * d);
    for (const auto& r : hits) block.insert(block.end(), r.patterns.begin(), r.patterns.end());
    Shape s_shape = h_c.shape();
    s_shape.insert(s_shape.end() - 1, k);
    const Tensor retrieved(s_shape, std::move(block), probe_memory);
    const Tensor s = stop_gradient(retrieved);

    const Tensor q = linear(l2_normalize(h_c), lp.denoise_query.tensor);
    const Tensor keys = linear(s, lp.denoise_key.tensor);
    const Tensor vals = linear(s, lp.denoise_value.tensor);
    Shape q_shape = h_c.shape();
    q_shape.insert(q_shape.end() - 1, 1);
    const Tensor scores = matmul(reshape(q, q_shape), keys, Contraction::batched(true));
    const Tensor kappa = softmax(scale(scores, 1.0 / std::sqrt(static_cast<double>(d))), 4);
    const Tensor h_s = reshape(matmul(kappa, vals, Contraction::batched()), h_c.shape());
    const Tensor beta = sigmoid(linear(concat(h_c, h_s, 3), lp.denoise_gate.tensor));
    h_d = add(h_s, mul(beta, sub(h_c, h_s)));
    if (trace) {
      trace->beta = beta;
      trace->kappa = kappa;
      trace->retrieved = retrieved;
      trace->k_effective = k;
    }
  }
  if (mode == Mode::train) mem.insert_batch(hv);
  return h_d;
}

struct LevelTrace {
  Tensor alpha;
  DenoiseTrace denoise;
};

/// interaction (if enabled) -> convolution -> denoising (if enabled).
inline Tensor mc_block_forward(const Tensor& input, const LevelParams& lp, const LevelConfig& lc,
                               PatternMemory& mem, Activation act, Mode mode, LevelTrace* trace = nullptr,
                               bool probe_memory = false) {
  Tensor h = input;
  if (lc.enable_interact) h = dynamic_variable_interaction(h, lp, trace ? &trace->alpha : nullptr);
  h = convolution_unit(h, lp, act);
  if (lc.enable_denoise) {
    h = adaptive_denoise(h, mem, lp, lc.top_k, mode, trace ? &trace->denoise : nullptr, probe_memory);
  }
  return h;
}

/// Per variable, concatenates the P position vectors and projects to d.
/// h_d[B, P, N, d] -> f[B, N, d].
inline Tensor level_aggregate(const Tensor& h_d, const LevelParams& lp) {
  const std::size_t b_n = h_d.dim(0), p_n = h_d.dim(1), v_n = h_d.dim(2), d = h_d.dim(3);
  const Tensor flat = reshape(permute(h_d, {0, 2, 1, 3}), {b_n, v_n, p_n * d});
  return linear(flat, lp.aggregate_weight.tensor, lp.aggregate_bias.tensor);
}

/// x_hat_norm[B, H, N] = MLP(f_1 + ... + f_L), MLP shared across variables.
inline Tensor predict(const std::vector<Tensor>& level_features, const ModelParams& p, Activation act) {
  if (level_features.empty()) throw ShapeError("predict: no level features");
  Tensor acc = level_features.front();
  for (std::size_t i = 1; i < level_features.size(); ++i) acc = add(acc, level_features[i]);
  const Tensor hidden = activation(linear(acc, p.mlp_hidden_weight.tensor, p.mlp_hidden_bias.tensor), act);
  const Tensor out = linear(hidden, p.mlp_out_weight.tensor, p.mlp_out_bias.tensor);
  return permute(out, {0, 2, 1});
}

struct ForwardTrace {
  bool probe_memory = false;
  std::vector<LevelTrace> levels;
};

// ---------------------------------------------------------------------------

/// The full network: parameters plus one pattern memory per level.
class HMNet {
 public:
  HMNet() = default;

  explicit HMNet(HMNetConfig cfg) : config_(std::move(cfg)) {
    config_.validate();
    params_ = ModelParams::init(config_);
    for (const auto& l : config_.levels) {
      memories_.emplace_back(std::max<std::size_t>(l.memory_capacity, 1), config_.hidden_dim);
    }
  }

  const HMNetConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::vector<PatternMemory>& memories() { return memories_; }
  const std::vector<PatternMemory>& memories() const { return memories_; }

  std::vector<Parameter*> parameters() { return params_.all(); }
  std::vector<Parameter*> trainable_parameters() { return params_.active(config_); }

  /// x[B, T, N] on the (globally standardized) data scale, time_feats[B, T, F].
  /// Returns the forecast [B, H, N] on the same scale. Eval mode never writes
  /// to the memories.
  Tensor forward(const Tensor& x, const Tensor& time_feats, Mode mode, ForwardTrace* trace = nullptr) {
    if (x.rank() != 3 || x.dim(1) != config_.input_length || x.dim(2) != config_.num_variables) {
      throw ShapeError("HMNet::forward: expected [B, " + std::to_string(config_.input_length) + ", " +
                       std::to_string(config_.num_variables) + "], got " + shape_str(x.shape()));
    }
    if (time_feats.rank() != 3 || time_feats.dim(2) != config_.time_feature_dim) {
      throw ShapeError("HMNet::forward: time features " + shape_str(time_feats.shape()) +
                       " do not have width " + std::to_string(config_.time_feature_dim));
    }
    auto [x_norm, stats] = instance_normalize(x);
    Tensor h = embed_variables(x_norm, time_feats, params_);
    std::vector<Tensor> features;
    if (trace) trace->levels.assign(config_.levels.size(), LevelTrace{});
    for (std::size_t l = 0; l < config_.levels.size(); ++l) {
      h = mc_block_forward(h, params_.levels[l], config_.levels[l], memories_[l], config_.activation, mode,
                           trace ? &trace->levels[l] : nullptr, trace && trace->probe_memory);
      features.push_back(level_aggregate(h, params_.levels[l]));
    }
    return instance_denormalize(predict(features, params_, config_.activation), stats);
  }

  void clear_memories() {
    for (auto& m : memories_) m.clear();
  }

  HMNet clone() const {
    HMNet c;
    c.config_ = config_;
    c.params_ = params_.clone();
    c.memories_ = memories_;
    return c;
  }

 private:
  HMNetConfig config_;
  ModelParams params_;
  std::vector<PatternMemory> memories_;
};

}  // namespace hmnet
