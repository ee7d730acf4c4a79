#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "hmnet/error.hpp"
#include "hmnet/tensor.hpp"

namespace hmnet {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

inline void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        // Split by sign so exp never overflows.
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

enum class Activation { gelu, relu, tanh, identity };

inline Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

inline std::string activation_name(Activation kind) {
  switch (kind) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "gelu";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + name + "'");
}

/// Numerically stable softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::require_axis(x, axis, "softmax");
  const auto s = detail::split_at(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.len; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        out[base + k * s.inner] = std::exp(xv[base + k * s.inner] - mx);
        z += out[base + k * s.inner];
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.len; ++k) {
          dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        }
        for (std::size_t k = 0; k < s.len; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

/// x / sqrt(sum(x^2) + eps) over the last axis.
inline Tensor l2_normalize(const Tensor& x, double eps = 1e-12) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = d ? x.numel() / d : 0;
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += xv[r * d + k] * xv[r * d + k];
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = xv[r * d + k] / norms[r];
  }
  return make_result(x.shape(), std::move(out), {x},
                     [d, rows, norms = std::move(norms)](detail::Node& self) {
                       auto& in = *self.inputs[0];
                       auto& g = in.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gy = 0.0;
                         for (std::size_t k = 0; k < d; ++k) {
                           gy += self.grad[r * d + k] * self.value[r * d + k];
                         }
                         for (std::size_t k = 0; k < d; ++k) {
                           g[r * d + k] += (self.grad[r * d + k] - self.value[r * d + k] * gy) / norms[r];
                         }
                       }
                     });
}

/// Forward value of x with no path back to it.
inline Tensor stop_gradient(const Tensor& x) { return x.detach(); }

// ---------------------------------------------------------------------------
// Contractions

/// How `matmul` pairs up the dimensions of its operands.
///
///  - trailing:  a[..., k] x b[k, n]           -> [..., n]
///  - batched:   a[..., m, k] x b[..., k, n]    -> [..., m, n]
///               (b[..., n, k] when transpose_b)
///  - along(ax): a[out, in] applied to axis `ax` of b (size in) -> same shape
///               as b with that axis resized to `out`
struct Contraction {
  enum class Kind { trailing, batched, along_axis };
  Kind kind = Kind::trailing;
  bool transpose_b = false;
  std::size_t axis = 0;

  static Contraction trailing() { return {}; }
  static Contraction batched(bool transpose_b = false) {
    return {Kind::batched, transpose_b, 0};
  }
  static Contraction along(std::size_t axis) { return {Kind::along_axis, false, axis}; }
};

namespace detail {

[[noreturn]] inline void contraction_mismatch(const Tensor& a, const Tensor& b,
                                              const std::string& what) {
  throw ShapeError("matmul: " + what + " for shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

inline Tensor matmul_trailing(const Tensor& a, const Tensor& b, const Tensor& bias) {
  if (a.rank() < 1 || b.rank() != 2) contraction_mismatch(a, b, "expected a[..., k] and b[k, n]");
  const std::size_t k = a.shape().back();
  if (b.dim(0) != k) contraction_mismatch(a, b, "contracted dimensions differ");
  const std::size_t n = b.dim(1);
  if (bias.defined() && (bias.numel() != n)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match output width " +
                     std::to_string(n));
  }
  const std::size_t rows = k ? a.numel() / k : 0;
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(rows * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * n;
    if (bias.defined()) {
      for (std::size_t j = 0; j < n; ++j) o[j] = bias[j];
    }
    for (std::size_t i = 0; i < k; ++i) {
      const double aik = av[r * k + i];
      const double* brow = bv.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
    }
  }
  auto bw = [rows, k, n](Node& self) {
    auto& x = *self.inputs[0];
    auto& w = *self.inputs[1];
    const double* gy = self.grad.data();
    if (x.requires_grad) {
      auto& gx = x.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
          double acc = 0.0;
          const double* wrow = w.value.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += gy[r * n + j] * wrow[j];
          gx[r * k + i] += acc;
        }
      }
    }
    if (w.requires_grad) {
      auto& gw = w.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
          const double xi = x.value[r * k + i];
          double* grow = gw.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += xi * gy[r * n + j];
        }
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
      }
    }
  };
  if (bias.defined()) return make_result(std::move(shape), std::move(out), {a, b, bias}, bw);
  return make_result(std::move(shape), std::move(out), {a, b}, bw);
}

inline Tensor matmul_batched(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() != a.rank()) contraction_mismatch(a, b, "batched operands need equal rank >= 2");
  for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) contraction_mismatch(a, b, "batch dimensions differ");
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t bk = transpose_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  const std::size_t n = transpose_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bk != k) contraction_mismatch(a, b, "contracted dimensions differ");
  const std::size_t batch = (m * k) ? a.numel() / (m * k) : 0;
  Shape shape = a.shape();
  shape.back() = n;
  // B element (i, j) of batch q.
  auto bidx = [k, n, transpose_b](std::size_t q, std::size_t i, std::size_t j) {
    return transpose_b ? q * n * k + j * k + i : q * k * n + i * n + j;
  };
  std::vector<double> out(batch * m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t q = 0; q < batch; ++q) {
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) acc += av[q * m * k + r * k + i] * bv[bidx(q, i, j)];
        out[q * m * n + r * n + j] = acc;
      }
    }
  }
  return make_result(std::move(shape), std::move(out), {a, b},
                     [batch, m, k, n, bidx](Node& self) {
                       auto& x = *self.inputs[0];
                       auto& y = *self.inputs[1];
                       const double* gz = self.grad.data();
                       if (x.requires_grad) {
                         auto& gx = x.ensure_grad();
                         for (std::size_t q = 0; q < batch; ++q)
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t i = 0; i < k; ++i) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < n; ++j)
                                 acc += gz[q * m * n + r * n + j] * y.value[bidx(q, i, j)];
                               gx[q * m * k + r * k + i] += acc;
                             }
                       }
                       if (y.requires_grad) {
                         auto& gyv = y.ensure_grad();
                         for (std::size_t q = 0; q < batch; ++q)
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t i = 0; i < k; ++i) {
                               const double xv = x.value[q * m * k + r * k + i];
                               for (std::size_t j = 0; j < n; ++j)
                                 gyv[bidx(q, i, j)] += xv * gz[q * m * n + r * n + j];
                             }
                       }
                     });
}

inline Tensor matmul_along(const Tensor& w, const Tensor& x, std::size_t axis) {
  if (w.rank() != 2) contraction_mismatch(w, x, "along-axis weight must be 2-D [out, in]");
  require_axis(x, axis, "matmul");
  const std::size_t out_n = w.dim(0);
  const std::size_t in_n = w.dim(1);
  if (x.dim(axis) != in_n) contraction_mismatch(w, x, "contracted dimensions differ");
  const auto s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = out_n;
  std::vector<double> out(s.outer * out_n * s.inner, 0.0);
  const auto wv = w.values();
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t r = 0; r < out_n; ++r) {
      double* dst = out.data() + (o * out_n + r) * s.inner;
      for (std::size_t i = 0; i < in_n; ++i) {
        const double c = wv[r * in_n + i];
        if (c == 0.0) continue;
        const double* src = xv.data() + (o * in_n + i) * s.inner;
        for (std::size_t q = 0; q < s.inner; ++q) dst[q] += c * src[q];
      }
    }
  }
  return make_result(std::move(shape), std::move(out), {w, x},
                     [s, out_n, in_n](Node& self) {
                       auto& wn = *self.inputs[0];
                       auto& xn = *self.inputs[1];
                       if (wn.requires_grad) {
                         auto& gw = wn.ensure_grad();
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t r = 0; r < out_n; ++r) {
                             const double* g = self.grad.data() + (o * out_n + r) * s.inner;
                             for (std::size_t i = 0; i < in_n; ++i) {
                               const double* src = xn.value.data() + (o * in_n + i) * s.inner;
                               double acc = 0.0;
                               for (std::size_t q = 0; q < s.inner; ++q) acc += g[q] * src[q];
                               gw[r * in_n + i] += acc;
                             }
                           }
                       }
                       if (xn.requires_grad) {
                         auto& gx = xn.ensure_grad();
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t r = 0; r < out_n; ++r) {
                             const double* g = self.grad.data() + (o * out_n + r) * s.inner;
                             for (std::size_t i = 0; i < in_n; ++i) {
                               const double c = wn.value[r * in_n + i];
                               if (c == 0.0) continue;
                               double* dst = gx.data() + (o * in_n + i) * s.inner;
                               for (std::size_t q = 0; q < s.inner; ++q) dst[q] += c * g[q];
                             }
                           }
                       }
                     });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b,
                     Contraction spec = Contraction::trailing()) {
  switch (spec.kind) {
    case Contraction::Kind::trailing: return detail::matmul_trailing(a, b, Tensor{});
    case Contraction::Kind::batched: return detail::matmul_batched(a, b, spec.transpose_b);
    case Contraction::Kind::along_axis: return detail::matmul_along(a, b, spec.axis);
  }
  return {};
}

/// x[..., in] * w[in, out] + bias[out]; bias may be an undefined Tensor.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor{}) {
  return detail::matmul_trailing(x, w, bias);
}

// ---------------------------------------------------------------------------
// Layout

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  detail::require_axis(a, axis, "concat");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat: dimension " + std::to_string(i) + " differs, " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  const auto sa = detail::split_at(a.shape(), axis);
  const std::size_t la = sa.len * sa.inner;
  const std::size_t lb = b.dim(axis) * sa.inner;
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  std::vector<double> out;
  out.reserve(sa.outer * (la + lb));
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t o = 0; o < sa.outer; ++o) {
    out.insert(out.end(), av.begin() + o * la, av.begin() + (o + 1) * la);
    out.insert(out.end(), bv.begin() + o * lb, bv.begin() + (o + 1) * lb);
  }
  return make_result(std::move(shape), std::move(out), {a, b},
                     [outer = sa.outer, la, lb](detail::Node& self) {
                       auto& x = *self.inputs[0];
                       auto& y = *self.inputs[1];
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* g = self.grad.data() + o * (la + lb);
                         if (x.requires_grad) {
                           auto& gx = x.ensure_grad();
                           for (std::size_t i = 0; i < la; ++i) gx[o * la + i] += g[i];
                         }
                         if (y.requires_grad) {
                           auto& gy = y.ensure_grad();
                           for (std::size_t i = 0; i < lb; ++i) gy[o * lb + i] += g[la + i];
                         }
                       }
                     });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Reorders axes: result axis i is input axis perm[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.dim(perm[i]);
  // Source offset for every destination element.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(src.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return make_result(std::move(shape), std::move(out), {x},
                     [src = std::move(src)](detail::Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

/// Inserts a new axis of size n at position `axis`, repeating x along it.
inline Tensor expand(const Tensor& x, std::size_t axis, std::size_t n) {
  if (axis > x.rank()) throw ShapeError("expand: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  const std::size_t inner = outer ? x.numel() / outer : 0;
  Shape shape = x.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  std::vector<double> out;
  out.reserve(outer * n * inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < n; ++r)
      out.insert(out.end(), xv.begin() + o * inner, xv.begin() + (o + 1) * inner);
  return make_result(std::move(shape), std::move(out), {x},
                     [outer, n, inner](detail::Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t i = 0; i < inner; ++i)
                             g[o * inner + i] += self.grad[(o * n + r) * inner + i];
                     });
}

// ---------------------------------------------------------------------------
// Convolution and losses

/// Non-overlapping 1-D convolution over the time axis (rank-3 from the end).
/// x[..., T, N, d_in], weight[S, d_in, d_out], bias[d_out] -> [..., T/S, N, d_out].
inline Tensor blocked_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 3 || weight.rank() != 3) {
    throw ShapeError("blocked_conv1d: expected x[..., T, N, d] and weight[S, d, d], got " +
                     shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  const std::size_t r = x.rank();
  const std::size_t t_len = x.dim(r - 3);
  const std::size_t vars = x.dim(r - 2);
  const std::size_t d_in = x.dim(r - 1);
  const std::size_t s_len = weight.dim(0);
  const std::size_t d_out = weight.dim(2);
  if (weight.dim(1) != d_in) {
    throw ShapeError("blocked_conv1d: weight " + shape_str(weight.shape()) +
                     " does not accept feature width " + std::to_string(d_in));
  }
  if (bias.numel() != d_out) throw ShapeError("blocked_conv1d: bias width mismatch");
  if (s_len == 0 || t_len % s_len != 0) {
    throw ShapeError("blocked_conv1d: length " + std::to_string(t_len) +
                     " is not divisible by block size " + std::to_string(s_len));
  }
  const std::size_t p_len = t_len / s_len;
  const std::size_t lead = x.numel() / (t_len * vars * d_in);
  Shape shape = x.shape();
  shape[r - 3] = p_len;
  shape[r - 1] = d_out;
  std::vector<double> out(lead * p_len * vars * d_out);
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  auto x_at = [=](std::size_t l, std::size_t t, std::size_t n) {
    return ((l * t_len + t) * vars + n) * d_in;
  };
  auto y_at = [=](std::size_t l, std::size_t p, std::size_t n) {
    return ((l * p_len + p) * vars + n) * d_out;
  };
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t p = 0; p < p_len; ++p)
      for (std::size_t n = 0; n < vars; ++n) {
        double* y = out.data() + y_at(l, p, n);
        for (std::size_t e = 0; e < d_out; ++e) y[e] = bv[e];
        for (std::size_t j = 0; j < s_len; ++j) {
          const double* xr = xv.data() + x_at(l, p * s_len + j, n);
          const double* wj = wv.data() + j * d_in * d_out;
          for (std::size_t c = 0; c < d_in; ++c) {
            const double xc = xr[c];
            for (std::size_t e = 0; e < d_out; ++e) y[e] += xc * wj[c * d_out + e];
          }
        }
      }
  return make_result(
      std::move(shape), std::move(out), {x, weight, bias},
      [=](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        for (std::size_t l = 0; l < lead; ++l)
          for (std::size_t p = 0; p < p_len; ++p)
            for (std::size_t n = 0; n < vars; ++n) {
              const double* g = self.grad.data() + y_at(l, p, n);
              if (bn.requires_grad) {
                auto& gb = bn.ensure_grad();
                for (std::size_t e = 0; e < d_out; ++e) gb[e] += g[e];
              }
              for (std::size_t j = 0; j < s_len; ++j) {
                const std::size_t xo = x_at(l, p * s_len + j, n);
                const double* wj = wn.value.data() + j * d_in * d_out;
                if (xn.requires_grad) {
                  auto& gx = xn.ensure_grad();
                  for (std::size_t c = 0; c < d_in; ++c) {
                    double acc = 0.0;
                    for (std::size_t e = 0; e < d_out; ++e) acc += g[e] * wj[c * d_out + e];
                    gx[xo + c] += acc;
                  }
                }
                if (wn.requires_grad) {
                  auto& gw = wn.ensure_grad();
                  for (std::size_t c = 0; c < d_in; ++c) {
                    const double xc = xn.value[xo + c];
                    double* gwj = gw.data() + j * d_in * d_out + c * d_out;
                    for (std::size_t e = 0; e < d_out; ++e) gwj[e] += xc * g[e];
                  }
                }
              }
            }
      });
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result(Shape{1}, {acc}, {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// Mean squared error; differentiable in both arguments.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred[i] - target[i];
    acc += e * e;
  }
  return make_result(Shape{1}, {n ? acc / static_cast<double>(n) : 0.0}, {pred, target},
                     [n](detail::Node& self) {
                       auto& p = *self.inputs[0];
                       auto& t = *self.inputs[1];
                       const double c = 2.0 * self.grad[0] / static_cast<double>(n);
                       if (p.requires_grad) {
                         auto& g = p.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) g[i] += c * (p.value[i] - t.value[i]);
                       }
                       if (t.requires_grad) {
                         auto& g = t.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) g[i] -= c * (p.value[i] - t.value[i]);
                       }
                     });
}

}  // namespace hmnet
