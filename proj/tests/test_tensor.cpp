#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "hmnet/gradcheck.hpp"
#include "hmnet/ops.hpp"
#include "hmnet/optim.hpp"
#include "test_util.hpp"

using namespace hmnet;
using hmnet::testing::max_abs_diff;
using hmnet::testing::probe_loss;
using hmnet::testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesInputUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 3}, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_values()[i * 3 + i] = 1.0;
  const Tensor y = matmul(eye, x);
  EXPECT_EQ(max_abs_diff(y.values(), x.values()), 0.0);
}

TEST(Matmul, ShapeArithmetic) {
  const Tensor y = matmul(Tensor::zeros({2, 3}), Tensor::zeros({3, 4}));
  EXPECT_EQ(y.shape(), (Shape{2, 4}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor b = random_tensor({3, 3}, rng);
  EXPECT_LT(max_abs_diff(matmul(a, b).values(), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
    EXPECT_NE(msg.find("(4, 5)"), std::string::npos);
  }
}

TEST(Matmul, BatchedAndAlongAxisMatchLoops) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({2, 4, 5}, rng);
  const Tensor bt = random_tensor({2, 5, 4}, rng);
  const Tensor c = matmul(a, b, Contraction::batched());
  const Tensor ct = matmul(a, bt, Contraction::batched(true));
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double e = 0.0, et = 0.0;
        for (std::size_t p = 0; p < 4; ++p) {
          e += a[q * 12 + i * 4 + p] * b[q * 20 + p * 5 + j];
          et += a[q * 12 + i * 4 + p] * bt[q * 20 + j * 4 + p];
        }
        EXPECT_NEAR(c[q * 15 + i * 5 + j], e, 1e-12);
        EXPECT_NEAR(ct[q * 15 + i * 5 + j], et, 1e-12);
      }

  // w[out, in] applied along axis 1 of x[2, in, 3].
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor x = random_tensor({2, 5, 3}, rng);
  const Tensor y = matmul(w, x, Contraction::along(1));
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3}));
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t q = 0; q < 3; ++q) {
        double e = 0.0;
        for (std::size_t i = 0; i < 5; ++i) e += w[r * 5 + i] * x[(o * 5 + i) * 3 + q];
        EXPECT_NEAR(y[(o * 4 + r) * 3 + q], e, 1e-12);
      }
}

TEST(Concat, ShapesAndEmptyOperand) {
  const Tensor a = Tensor::zeros({5, 2, 3});
  EXPECT_EQ(concat(a, a, 1).shape(), (Shape{5, 4, 3}));
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({5, 2, 3}, rng);
  const Tensor y = concat(x, Tensor::zeros({5, 0, 3}), 1);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(y.values(), x.values()), 0.0);
  EXPECT_THROW(concat(x, Tensor::zeros({5, 2, 4}), 1), ShapeError);
}

TEST(Concat, GradientOfSumIsOnes) {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 3}, rng, true);
  Tensor b = random_tensor({2, 2}, rng, true);
  backward(sum(concat(a, b, 1)));
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Elementwise, SigmoidAndSoftmaxValues) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(softmax(Tensor({2, 1}, {3.0, -7.0}), 1)[0], 1.0);
  const Tensor s = softmax(Tensor({3}, {1.0, 2.0, 3.0}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(s[1], std::exp(2.0) / z, 1e-12);
  EXPECT_NEAR(s[2], std::exp(3.0) / z, 1e-12);
}

TEST(Elementwise, RangeProperties) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 5, 3}, rng, false, -30.0, 30.0);
    const Tensor sg = sigmoid(x);
    for (double v : sg.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor s = softmax(x, axis);
      const auto sp = detail::split_at(x.shape(), axis);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          double total = 0.0;
          for (std::size_t k = 0; k < sp.len; ++k) {
            const double v = s[o * sp.len * sp.inner + k * sp.inner + i];
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            total += v;
          }
          EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
  }
}

TEST(BlockedConv, PositionCountForDefaultBlocks) {
  const Tensor y = blocked_conv1d(Tensor::zeros({96, 2, 3}), Tensor::zeros({6, 3, 3}), Tensor::zeros({3}));
  EXPECT_EQ(y.shape(), (Shape{16, 2, 3}));
}

TEST(BlockedConv, IdentityKernel) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 8, 3, 4}, rng);
  Tensor w = Tensor::zeros({1, 4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.mutable_values()[i * 4 + i] = 1.0;
  const Tensor y = blocked_conv1d(x, w, Tensor::zeros({4}));
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(max_abs_diff(y.values(), x.values()), 0.0);
}

TEST(BlockedConv, MatchesNaiveBlockLoop) {
  std::mt19937_64 rng(8);
  const std::size_t T = 8, S = 2, N = 3, d = 3;
  const Tensor x = random_tensor({T, N, d}, rng);
  const Tensor w = random_tensor({S, d, d}, rng);
  const Tensor b = random_tensor({d}, rng);
  const Tensor y = blocked_conv1d(x, w, b);
  for (std::size_t p = 0; p < T / S; ++p)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t e = 0; e < d; ++e) {
        double acc = b[e];
        for (std::size_t j = 0; j < S; ++j)
          for (std::size_t c = 0; c < d; ++c) acc += x[((p * S + j) * N + n) * d + c] * w[(j * d + c) * d + e];
        EXPECT_NEAR(y[(p * N + n) * d + e], acc, 1e-12);
      }
}

TEST(BlockedConv, RejectsIndivisibleLength) {
  EXPECT_THROW(blocked_conv1d(Tensor::zeros({10, 1, 2}), Tensor::zeros({4, 2, 2}), Tensor::zeros({2})), ShapeError);
}

TEST(MseLoss, Values) {
  std::mt19937_64 rng(9);
  const Tensor t = random_tensor({4, 5}, rng);
  EXPECT_EQ(mse_loss(t, t).item(), 0.0);
  std::vector<double> shifted(t.values().begin(), t.values().end());
  for (auto& v : shifted) v += 1.0;
  EXPECT_NEAR(mse_loss(Tensor({4, 5}, shifted), t).item(), 1.0, 1e-12);
  const Tensor p = random_tensor({4, 5}, rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < 20; ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  EXPECT_NEAR(mse_loss(p, t).item(), acc / 20.0, 1e-12);
  EXPECT_THROW(mse_loss(p, Tensor::zeros({5, 4})), ShapeError);
}

TEST(Backward, LinearCase) {
  std::mt19937_64 rng(10);
  Tensor w = random_tensor({6}, rng, true);
  const Tensor x = random_tensor({6}, rng);
  backward(sum(mul(w, x)));
  EXPECT_EQ(max_abs_diff(w.grad(), x.values()), 0.0);
}

TEST(Backward, TwiceWithoutForwardThrows) {
  Tensor w = Tensor::full({3}, 2.0, true);
  const Tensor loss = sum(mul(w, w));
  backward(loss);
  EXPECT_THROW(backward(loss), RuntimeFailure);
}

TEST(Backward, StopGradientBlocksFlow) {
  std::mt19937_64 rng(11);
  Tensor w = random_tensor({4}, rng, true);
  Tensor src = random_tensor({4}, rng, true);
  backward(sum(mul(w, stop_gradient(src))));
  EXPECT_FALSE(src.has_grad());
  EXPECT_TRUE(w.has_grad());
}

// Every operator's analytic gradient against central differences.
TEST(Backward, OperatorsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    std::function<Tensor(const std::vector<Tensor>&)> fn;
  };
  const std::vector<Case> cases = {
      {"add", {{3, 4}, {3, 4}}, [](auto& t) { return add(t[0], t[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& t) { return sub(t[0], t[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& t) { return mul(t[0], t[1]); }},
      {"scale", {{3, 4}}, [](auto& t) { return scale(t[0], -1.7); }},
      {"sigmoid", {{3, 4}}, [](auto& t) { return sigmoid(t[0]); }},
      {"gelu", {{3, 4}}, [](auto& t) { return gelu(t[0]); }},
      {"tanh", {{3, 4}}, [](auto& t) { return hmnet::tanh(t[0]); }},
      {"softmax0", {{3, 4}}, [](auto& t) { return softmax(t[0], 0); }},
      {"softmax1", {{3, 4}}, [](auto& t) { return softmax(t[0], 1); }},
      {"l2_normalize", {{3, 4}}, [](auto& t) { return l2_normalize(t[0]); }},
      {"matmul", {{2, 3, 4}, {4, 5}}, [](auto& t) { return matmul(t[0], t[1]); }},
      {"linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto& t) { return linear(t[0], t[1], t[2]); }},
      {"batched", {{2, 3, 4}, {2, 4, 5}}, [](auto& t) { return matmul(t[0], t[1], Contraction::batched()); }},
      {"batched_t", {{2, 3, 4}, {2, 5, 4}}, [](auto& t) { return matmul(t[0], t[1], Contraction::batched(true)); }},
      {"along", {{3, 4}, {2, 4, 3}}, [](auto& t) { return matmul(t[0], t[1], Contraction::along(1)); }},
      {"concat", {{2, 3, 2}, {2, 1, 2}}, [](auto& t) { return concat(t[0], t[1], 1); }},
      {"reshape", {{2, 6}}, [](auto& t) { return reshape(t[0], {3, 4}); }},
      {"permute", {{2, 3, 4}}, [](auto& t) { return permute(t[0], {2, 0, 1}); }},
      {"expand", {{2, 3}}, [](auto& t) { return expand(t[0], 1, 4); }},
      {"conv", {{2, 8, 3, 2}, {4, 2, 3}, {3}}, [](auto& t) { return blocked_conv1d(t[0], t[1], t[2]); }},
      {"mse", {{3, 4}, {3, 4}}, [](auto& t) { return mse_loss(t[0], t[1]); }},
  };
  for (const auto& c : cases) {
    std::vector<Tensor> inputs;
    for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng, true));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto report = finite_diff_check([&] { return probe_loss(c.fn(inputs)); }, inputs[i], 1e-5, 1e-4);
      EXPECT_TRUE(report.passed) << c.name << " input " << i << " rel err " << report.max_rel_error;
    }
  }
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({10}, rng, true);
  const auto report = finite_diff_check([&] { return sum(mul(x, x)); }, x);
  EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  Tensor x = Tensor::full({4}, 1.0, true);
  const auto report = finite_diff_check([&] { return Tensor::scalar(3.0); }, x);
  EXPECT_EQ(report.max_abs_error, 0.0);
  EXPECT_TRUE(report.passed);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"w", Tensor::scalar(1.0, true), std::nullopt};
  p.tensor.mutable_grad()[0] = 1.0;
  AdamState state(AdamOptions{0.1, 0.9, 0.999, 1e-8});
  adam_step({&p}, state);
  // m_hat = v_hat = 1 at step 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.tensor.item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Parameter p{"w", Tensor::full({3}, 0.25, true), std::nullopt};
  p.tensor.mutable_grad();
  AdamState state;
  adam_step({&p}, state);
  for (double v : p.tensor.values()) EXPECT_EQ(v, 0.25);
}

TEST(Adam, MaskedEntriesStayZeroAndMissingGradThrows) {
  std::mt19937_64 rng(14);
  Parameter p = make_uniform_parameter("W_v", {3, 3}, 3, rng);
  p.mask = std::vector<std::uint8_t>{1, 0, 0, 0, 1, 0, 0, 0, 1};
  p.apply_mask();
  AdamState state;
  for (int step = 0; step < 5; ++step) {
    auto g = p.tensor.mutable_grad();
    for (auto& v : g) v = 1.0;
    adam_step({&p}, state);
    EXPECT_TRUE(p.mask_holds());
    p.tensor.zero_grad();
  }
  EXPECT_THROW(adam_step({&p}, state), RuntimeFailure);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(15);
    const Tensor x = random_tensor({2, 8, 3, 4}, rng);
    const Tensor w = random_tensor({2, 4, 4}, rng);
    return softmax(gelu(blocked_conv1d(x, w, Tensor::zeros({4}))), 3);
  };
  const Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}
