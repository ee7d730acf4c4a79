#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hmnet/error.hpp"
#include "hmnet/tensor.hpp"

namespace hmnet {

/// A trainable leaf tensor with a stable name and an optional mask of entries
/// that are pinned to zero.
struct Parameter {
  std::string name;
  Tensor tensor;
  // 1 marks an entry that must stay exactly 0.0.
  std::optional<std::vector<std::uint8_t>> mask;

  void apply_mask() {
    if (!mask) return;
    auto v = tensor.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if ((*mask)[i]) v[i] = 0.0;
    }
  }

  bool mask_holds() const {
    if (!mask) return true;
    const auto v = tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if ((*mask)[i] && v[i] != 0.0) return false;
    }
    return true;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) leaf parameter.
inline Parameter make_uniform_parameter(std::string name, Shape shape, std::size_t fan_in,
                                        std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return {std::move(name), Tensor(std::move(shape), std::move(v), true), std::nullopt};
}

inline Parameter make_zero_parameter(std::string name, Shape shape) {
  return {std::move(name), Tensor::zeros(std::move(shape), true), std::nullopt};
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update over `params`, followed by mask
/// re-application. Parameters without a populated gradient raise; pass only
/// the parameters that took part in the loss.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.emplace_back(p->tensor.numel(), 0.0);
      state.second_moment.emplace_back(p->tensor.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter list changed between steps");
  }
  for (const auto* p : params) {
    if (!p->tensor.has_grad()) throw RuntimeFailure("adam_step: parameter '" + p->name + "' has no gradient");
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto values = p.tensor.mutable_values();
    const auto grad = p.tensor.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) throw ShapeError("adam_step: moment size mismatch for " + p.name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
    p.apply_mask();
  }
}

inline void zero_grad(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

}  // namespace hmnet
