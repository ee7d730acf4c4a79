#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hmnet/gradcheck.hpp"
#include "hmnet/model.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace hmnet;
using hmnet::testing::max_abs_diff;
using hmnet::testing::random_tensor;

namespace {

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void set_values(Parameter& p, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : p.tensor.mutable_values()) v = dist(rng);
  p.apply_mask();
}

// y = x * W for row vector x[d_in] and W[d_in, d_out].
std::vector<double> rowmul(const double* x, const Tensor& w) {
  const std::size_t din = w.dim(0), dout = w.dim(1);
  std::vector<double> y(dout, 0.0);
  for (std::size_t i = 0; i < din; ++i)
    for (std::size_t j = 0; j < dout; ++j) y[j] += x[i] * w[i * dout + j];
  return y;
}

}  // namespace

// --- instance normalization -------------------------------------------------

TEST(InstanceNorm, ConstantSeriesMapsToZeroAndBack) {
  const Tensor x = Tensor::full({2, 6, 3}, 4.5);
  auto [xn, st] = instance_normalize(x);
  for (double v : xn.values()) EXPECT_EQ(v, 0.0);
  const Tensor back = instance_denormalize(Tensor::zeros({2, 5, 3}), st);
  for (double v : back.values()) EXPECT_EQ(v, 4.5);
}

TEST(InstanceNorm, RoundTrip) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 10, 4}, rng, false, -5.0, 9.0);
  auto [xn, st] = instance_normalize(x);
  EXPECT_LT(max_abs_diff(instance_denormalize(xn, st).values(), x.values()), 1e-9);
}

TEST(InstanceNorm, MatchesDirectMoments) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist(5.0, 2.0);
  const std::size_t T = 200, N = 3;
  std::vector<double> v(T * N);
  for (auto& e : v) e = dist(rng);
  auto [xn, st] = instance_normalize(Tensor({1, T, N}, v));
  for (std::size_t n = 0; n < N; ++n) {
    double m = 0.0;
    for (std::size_t t = 0; t < T; ++t) m += v[t * N + n];
    m /= T;
    double var = 0.0;
    for (std::size_t t = 0; t < T; ++t) var += (v[t * N + n] - m) * (v[t * N + n] - m);
    const double sd = std::sqrt(var / T);
    EXPECT_NEAR(st.mean[n], m, 1e-12);
    EXPECT_NEAR(st.stdev[n], sd, 1e-12);
    double nm = 0.0, nv = 0.0;
    for (std::size_t t = 0; t < T; ++t) nm += xn[t * N + n];
    nm /= T;
    for (std::size_t t = 0; t < T; ++t) nv += (xn[t * N + n] - nm) * (xn[t * N + n] - nm);
    EXPECT_NEAR(nm, 0.0, 1e-6);
    // The epsilon in the denominator shrinks the std by sd / (sd + 1e-5).
    EXPECT_NEAR(std::sqrt(nv / T), sd / (sd + kInstanceNormEps), 1e-6);
    EXPECT_NEAR(std::sqrt(nv / T), 1.0, 1e-5);
  }
}

// --- embedding ---------------------------------------------------------------

TEST(Embedding, ZeroInputZeroOutput) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  const Tensor h = embed_variables(Tensor::zeros({2, 8, 2}), Tensor::zeros({2, 8, 5}), p);
  EXPECT_EQ(h.shape(), (Shape{2, 8, 2, 4}));
  for (double v : h.values()) EXPECT_EQ(v, 0.0);
}

TEST(Embedding, HomogeneousInValue) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 8, 2}, rng);
  const Tensor h1 = embed_variables(x, Tensor::zeros({1, 8, 5}), p);
  const Tensor h2 = embed_variables(scale(x, 2.0), Tensor::zeros({1, 8, 5}), p);
  for (std::size_t i = 0; i < h1.numel(); ++i) EXPECT_NEAR(h2[i], 2.0 * h1[i], 1e-15);
}

TEST(Embedding, MatchesDirectFormula) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(4);
  set_values(p.embed_bias, rng);
  const Tensor x = random_tensor({2, 8, 2}, rng);
  const Tensor tf = random_tensor({2, 8, 5}, rng);
  const Tensor h = embed_variables(x, tf, p);
  const auto& w = p.value_weight.tensor;
  const auto& tw = p.time_weight.tensor;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 4; ++k) {
          double e = x[(b * 8 + t) * 2 + n] * w[n * 4 + k] + p.embed_bias.tensor[k];
          for (std::size_t f = 0; f < 5; ++f) e += tf[(b * 8 + t) * 5 + f] * tw[f * 4 + k];
          EXPECT_NEAR(h[((b * 8 + t) * 2 + n) * 4 + k], e, 1e-12);
        }
}

// --- dynamic variable interaction -------------------------------------------

TEST(Interaction, SingleVariableHasNoCrossTerm) {
  auto cfg = hmnet::testing::toy_config();
  cfg.num_variables = 1;
  auto p = ModelParams::init(cfg);
  std::mt19937_64 rng(5);
  const Tensor h = random_tensor({2, 8, 1, 4}, rng);
  Tensor alpha;
  const Tensor hv = dynamic_variable_interaction(h, p.levels[0], &alpha);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_NEAR(hv[i], alpha[i] * h[i], 1e-15);
}

TEST(Interaction, SaturatedGatePassesInputThrough) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  auto& lp = p.levels[0];
  for (auto& v : lp.interact_v.tensor.mutable_values()) v = 0.0;
  for (auto& v : lp.interact_alpha.tensor.mutable_values()) v = 1000.0;
  std::mt19937_64 rng(6);
  const Tensor h = random_tensor({1, 4, 2, 4}, rng, false, 0.1, 1.0);
  const Tensor hv = dynamic_variable_interaction(h, lp);
  EXPECT_LT(max_abs_diff(hv.values(), h.values()), 1e-12);
}

TEST(Interaction, TwoVariablesMatchHandExpansion) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  const auto& lp = p.levels[0];
  std::mt19937_64 rng(7);
  const Tensor h = random_tensor({2, 3, 2, 4}, rng);
  const Tensor hv = dynamic_variable_interaction(h, lp);
  const auto& wv = lp.interact_v.tensor;
  const auto& wa = lp.interact_alpha.tensor;  // [N, 2N]
  for (std::size_t bt = 0; bt < 6; ++bt)
    for (std::size_t k = 0; k < 4; ++k) {
      const double h0 = h[(bt * 2 + 0) * 4 + k], h1 = h[(bt * 2 + 1) * 4 + k];
      const double v0 = wv[0 * 2 + 1] * h1;
      const double v1 = wv[1 * 2 + 0] * h0;
      const double a0 = sigm(wa[0] * h0 + wa[1] * h1 + wa[2] * v0 + wa[3] * v1);
      const double a1 = sigm(wa[4] * h0 + wa[5] * h1 + wa[6] * v0 + wa[7] * v1);
      EXPECT_NEAR(hv[(bt * 2 + 0) * 4 + k], a0 * h0 + (1 - a0) * v0, 1e-12);
      EXPECT_NEAR(hv[(bt * 2 + 1) * 4 + k], a1 * h1 + (1 - a1) * v1, 1e-12);
    }
}

TEST(Interaction, UnmaskedDiagonalIsRejected) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  p.levels[0].interact_v.tensor.mutable_values()[0] = 0.5;
  EXPECT_THROW(dynamic_variable_interaction(Tensor::zeros({1, 8, 2, 4}), p.levels[0]), RuntimeFailure);
}

// --- convolution unit --------------------------------------------------------

TEST(ConvolutionUnit, DefaultBlockSizesGivePositionCounts) {
  HMNetConfig cfg;
  cfg.num_variables = 2;
  cfg.hidden_dim = 3;
  auto p = ModelParams::init(cfg);
  Tensor h = Tensor::zeros({1, 96, 2, 3});
  std::vector<std::size_t> counts;
  for (std::size_t l = 0; l < 3; ++l) {
    h = convolution_unit(h, p.levels[l], Activation::gelu);
    counts.push_back(h.dim(1));
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{16, 4, 1}));
  EXPECT_EQ(cfg.level_lengths(), (std::vector<std::size_t>{96, 16, 4, 1}));
}

TEST(ConvolutionUnit, VariablePermutationEquivariance) {
  auto cfg = hmnet::testing::toy_config();
  cfg.num_variables = 3;
  auto p = ModelParams::init(cfg);
  std::mt19937_64 rng(8);
  const Tensor h = random_tensor({2, 8, 3, 4}, rng);
  // Rotate variables: n -> (n + 1) % 3.
  std::vector<double> rotated(h.numel());
  for (std::size_t bt = 0; bt < 16; ++bt)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k) rotated[(bt * 3 + (n + 1) % 3) * 4 + k] = h[(bt * 3 + n) * 4 + k];
  const Tensor y = convolution_unit(h, p.levels[0], Activation::gelu);
  const Tensor yr = convolution_unit(Tensor(h.shape(), rotated), p.levels[0], Activation::gelu);
  for (std::size_t bp = 0; bp < 8; ++bp)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t k = 0; k < 4; ++k)
        EXPECT_EQ(yr[(bp * 3 + (n + 1) % 3) * 4 + k], y[(bp * 3 + n) * 4 + k]);
}

TEST(ConvolutionUnit, MatchesNaiveLoopWithActivation) {
  auto cfg = hmnet::testing::toy_config();
  cfg.input_length = 8;
  cfg.levels = {LevelConfig{4}, LevelConfig{2}};
  auto p = ModelParams::init(cfg);
  std::mt19937_64 rng(9);
  set_values(p.levels[0].conv_bias, rng);
  const Tensor h = random_tensor({1, 8, 2, 4}, rng);
  const Tensor y = convolution_unit(h, p.levels[0], Activation::gelu);
  const auto& w = p.levels[0].conv_weight.tensor;
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t e = 0; e < 4; ++e) {
        double acc = p.levels[0].conv_bias.tensor[e];
        for (std::size_t j = 0; j < 4; ++j)
          for (std::size_t c = 0; c < 4; ++c) acc += h[((q * 4 + j) * 2 + n) * 4 + c] * w[(j * 4 + c) * 4 + e];
        const double g = 0.5 * acc * (1.0 + std::erf(acc / std::sqrt(2.0)));
        EXPECT_NEAR(y[(q * 2 + n) * 4 + e], g, 1e-12);
      }
}

// --- adaptive denoising ------------------------------------------------------

TEST(AdaptiveDenoise, EmptyMemoryBypasses) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(10);
  const Tensor hc = random_tensor({2, 4, 2, 4}, rng);
  PatternMemory mem(16, 4);
  const Tensor hd = adaptive_denoise(hc, mem, p.levels[0], 3, Mode::eval);
  EXPECT_EQ(max_abs_diff(hd.values(), hc.values()), 0.0);
  EXPECT_EQ(mem.count(), 0u);
  adaptive_denoise(hc, mem, p.levels[0], 3, Mode::train);
  EXPECT_EQ(mem.count(), 16u);
}

TEST(AdaptiveDenoise, SinglePatternGivesUnitKappa) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(11);
  PatternMemory mem(16, 4);
  mem.insert(random_tensor({4}, rng).values());
  DenoiseTrace trace;
  adaptive_denoise(random_tensor({1, 4, 2, 4}, rng), mem, p.levels[0], 5, Mode::eval, &trace);
  EXPECT_EQ(trace.k_effective, 1u);
  for (double v : trace.kappa.values()) EXPECT_EQ(v, 1.0);
}

TEST(AdaptiveDenoise, MatchesStepByStepFormula) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  const auto& lp = p.levels[0];
  std::mt19937_64 rng(12);
  const std::size_t d = 4, K = 2;
  PatternMemory mem(8, d);
  for (int i = 0; i < 4; ++i) mem.insert(random_tensor({d}, rng).values());
  const Tensor hc = random_tensor({2, 3, 2, d}, rng);
  const Tensor hd = adaptive_denoise(hc, mem, lp, K, Mode::eval);

  for (std::size_t cell = 0; cell < 12; ++cell) {
    const double* h = hc.values().data() + cell * d;
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += h[k] * h[k];
    norm = std::sqrt(norm);
    std::vector<double> hn(d);
    for (std::size_t k = 0; k < d; ++k) hn[k] = h[k] / norm;
    // Brute-force top-2 by cosine.
    std::vector<std::size_t> slots(4);
    std::iota(slots.begin(), slots.end(), 0);
    std::vector<double> sim(4);
    for (std::size_t s = 0; s < 4; ++s) {
      sim[s] = 0.0;
      for (std::size_t k = 0; k < d; ++k) sim[s] += hn[k] * mem.row(s)[k];
    }
    std::stable_sort(slots.begin(), slots.end(), [&](auto a, auto b) { return sim[a] > sim[b]; });
    const auto q = rowmul(hn.data(), lp.denoise_query.tensor);
    std::vector<double> logits(K);
    std::vector<std::vector<double>> vals(K);
    for (std::size_t j = 0; j < K; ++j) {
      const auto s = mem.row(slots[j]);
      const auto key = rowmul(s.data(), lp.denoise_key.tensor);
      vals[j] = rowmul(s.data(), lp.denoise_value.tensor);
      logits[j] = 0.0;
      for (std::size_t k = 0; k < d; ++k) logits[j] += q[k] * key[k];
      logits[j] /= std::sqrt(double(d));
    }
    const double z = std::exp(logits[0]) + std::exp(logits[1]);
    std::vector<double> hs(d, 0.0);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t k = 0; k < d; ++k) hs[k] += std::exp(logits[j]) / z * vals[j][k];
    std::vector<double> cat(h, h + d);
    cat.insert(cat.end(), hs.begin(), hs.end());
    const auto pre = rowmul(cat.data(), lp.denoise_gate.tensor);
    for (std::size_t k = 0; k < d; ++k) {
      const double beta = sigm(pre[k]);
      EXPECT_NEAR(hd[cell * d + k], beta * h[k] + (1 - beta) * hs[k], 1e-12);
    }
  }
}

TEST(AdaptiveDenoise, RetrievesBeforeInserting) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(13);
  PatternMemory mem(64, 4);
  mem.insert(random_tensor({4}, rng).values());
  DenoiseTrace trace;
  adaptive_denoise(random_tensor({1, 2, 2, 4}, rng), mem, p.levels[0], 8, Mode::train, &trace);
  EXPECT_EQ(trace.k_effective, 1u);
  EXPECT_EQ(mem.count(), 5u);
}

// --- MC-Block, aggregation, predictor ---------------------------------------

TEST(McBlock, SwitchesOffIsPureConvolution) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 8, 2, 4}, rng);
  PatternMemory mem(16, 4);
  mem.insert(random_tensor({4}, rng).values());
  const LevelConfig off{2, false, false, 16, 4};
  const Tensor y = mc_block_forward(x, p.levels[0], off, mem, Activation::gelu, Mode::train);
  const Tensor ref = convolution_unit(x, p.levels[0], Activation::gelu);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 2, 4}));
  EXPECT_EQ(max_abs_diff(y.values(), ref.values()), 0.0);
  EXPECT_EQ(mem.count(), 1u);
}

TEST(McBlock, IdentityConfigAppliesActivationOnly) {
  auto cfg = hmnet::testing::toy_config();
  cfg.levels = {LevelConfig{1, false, false}};
  auto p = ModelParams::init(cfg);
  auto& w = p.levels[0].conv_weight.tensor;
  for (auto& v : w.mutable_values()) v = 0.0;
  for (std::size_t i = 0; i < 4; ++i) w.mutable_values()[i * 4 + i] = 1.0;
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({1, 8, 2, 4}, rng);
  PatternMemory mem(4, 4);
  const Tensor y = mc_block_forward(x, p.levels[0], cfg.levels[0], mem, Activation::gelu, Mode::eval);
  EXPECT_EQ(max_abs_diff(y.values(), gelu(x).values()), 0.0);
}

TEST(Aggregate, SinglePositionIdentity) {
  auto cfg = hmnet::testing::toy_config();
  cfg.levels = {LevelConfig{8}};
  auto p = ModelParams::init(cfg);
  auto& w = p.levels[0].aggregate_weight.tensor;
  ASSERT_EQ(w.shape(), (Shape{4, 4}));
  for (auto& v : w.mutable_values()) v = 0.0;
  for (std::size_t i = 0; i < 4; ++i) w.mutable_values()[i * 4 + i] = 1.0;
  std::mt19937_64 rng(16);
  const Tensor h = random_tensor({2, 1, 2, 4}, rng);
  EXPECT_EQ(max_abs_diff(level_aggregate(h, p.levels[0]).values(), h.values()), 0.0);
  const Tensor zero = level_aggregate(Tensor::zeros({2, 1, 2, 4}), p.levels[0]);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
}

TEST(Aggregate, MatchesConcatThenMultiply) {
  auto cfg = hmnet::testing::toy_config();
  cfg.hidden_dim = 3;
  cfg.levels = {LevelConfig{2}, LevelConfig{4}};
  auto p = ModelParams::init(cfg);
  std::mt19937_64 rng(17);
  set_values(p.levels[0].aggregate_bias, rng);
  const auto& lp = p.levels[0];
  ASSERT_EQ(cfg.positions(0), 4u);
  const Tensor h = random_tensor({2, 4, 2, 3}, rng);
  const Tensor f = level_aggregate(h, lp);
  ASSERT_EQ(f.shape(), (Shape{2, 2, 3}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 2; ++n) {
      std::vector<double> cat;
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t k = 0; k < 3; ++k) cat.push_back(h[((b * 4 + q) * 2 + n) * 3 + k]);
      auto y = rowmul(cat.data(), lp.aggregate_weight.tensor);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(f[(b * 2 + n) * 3 + k], y[k] + lp.aggregate_bias.tensor[k], 1e-12);
    }
}

TEST(Predict, ZeroFeaturesAndSingleLevel) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  const Tensor y = predict({Tensor::zeros({2, 2, 4}), Tensor::zeros({2, 2, 4})}, p, Activation::gelu);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(18);
  const Tensor f = random_tensor({1, 2, 4}, rng);
  const Tensor one = predict({f}, p, Activation::gelu);
  const Tensor two = predict({f, Tensor::zeros({1, 2, 4})}, p, Activation::gelu);
  EXPECT_EQ(max_abs_diff(one.values(), two.values()), 0.0);
}

TEST(Predict, MatchesSumThenMlp) {
  auto p = ModelParams::init(hmnet::testing::toy_config());
  std::mt19937_64 rng(19);
  set_values(p.mlp_hidden_bias, rng);
  set_values(p.mlp_out_bias, rng);
  const Tensor f1 = random_tensor({2, 2, 4}, rng);
  const Tensor f2 = random_tensor({2, 2, 4}, rng);
  const Tensor y = predict({f1, f2}, p, Activation::gelu);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 2; ++n) {
      std::vector<double> s(4);
      for (std::size_t k = 0; k < 4; ++k) s[k] = f1[(b * 2 + n) * 4 + k] + f2[(b * 2 + n) * 4 + k];
      auto hid = rowmul(s.data(), p.mlp_hidden_weight.tensor);
      for (std::size_t k = 0; k < 4; ++k) {
        const double a = hid[k] + p.mlp_hidden_bias.tensor[k];
        hid[k] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
      }
      const auto out = rowmul(hid.data(), p.mlp_out_weight.tensor);
      for (std::size_t h = 0; h < 2; ++h) EXPECT_NEAR(y[(b * 2 + h) * 2 + n], out[h] + p.mlp_out_bias.tensor[h], 1e-12);
    }
}

// --- full forward ------------------------------------------------------------

TEST(Forward, StandardHorizonsProduceExpectedShapes) {
  for (std::size_t horizon : {96, 192, 336, 720}) {
    HMNetConfig cfg = default_config(3, horizon);
    cfg.hidden_dim = 4;
    cfg.levels[0].memory_capacity = cfg.levels[1].memory_capacity = cfg.levels[2].memory_capacity = 64;
    HMNet model(cfg);
    std::mt19937_64 rng(horizon);
    const Tensor x = random_tensor({2, 96, 3}, rng);
    const Tensor tf = random_tensor({2, 96, 5}, rng, false, -0.5, 0.5);
    model.forward(x, tf, Mode::train);
    EXPECT_EQ(model.forward(x, tf, Mode::eval).shape(), (Shape{2, horizon, 3}));
  }
}

TEST(Forward, ConstantInputStaysFinite) {
  HMNet model(hmnet::testing::toy_config());
  const Tensor tf = Tensor::zeros({2, 8, 5});
  model.forward(Tensor::full({2, 8, 2}, 3.0), tf, Mode::train);
  const Tensor y = model.forward(Tensor::full({2, 8, 2}, 3.0), tf, Mode::eval);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, EvalIsDeterministicAndReadOnly) {
  HMNet model(hmnet::testing::toy_config());
  hmnet::testing::prefill_memories(model, 20);
  const auto before = model.memories();
  const auto b = hmnet::testing::toy_batch(model.config(), 3, 21);
  const Tensor y1 = model.forward(b.x, b.time_feats, Mode::eval);
  const Tensor y2 = model.forward(b.x, b.time_feats, Mode::eval);
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
  EXPECT_EQ(model.memories(), before);
}

TEST(Forward, GateRangesAndKappaNormalization) {
  HMNet model(hmnet::testing::toy_config(3));
  hmnet::testing::prefill_memories(model, 22);
  const auto b = hmnet::testing::toy_batch(model.config(), 2, 23);
  ForwardTrace trace;
  model.forward(b.x, b.time_feats, Mode::eval, &trace);
  for (const auto& lt : trace.levels) {
    for (double a : lt.alpha.values()) {
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
    ASSERT_EQ(lt.denoise.k_effective, 3u);
    for (double v : lt.denoise.beta.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    const auto kv = lt.denoise.kappa.values();
    for (std::size_t r = 0; r < kv.size() / 3; ++r) EXPECT_NEAR(kv[r * 3] + kv[r * 3 + 1] + kv[r * 3 + 2], 1.0, 1e-9);
  }
}

TEST(Forward, FullModelGradientMatchesFiniteDifferences) {
  HMNet model(hmnet::testing::toy_config());
  hmnet::testing::prefill_memories(model, 24);
  const auto b = hmnet::testing::toy_batch(model.config(), 2, 25);
  auto loss = [&] { return mse_loss(model.forward(b.x, b.time_feats, Mode::eval), b.target); };
  for (auto* p : model.parameters()) {
    const auto report = finite_diff_check(loss, *p, 1e-5, 1e-4);
    EXPECT_TRUE(report.passed) << p->name << " rel err " << report.max_rel_error;
  }
}

TEST(Forward, AblationSwitchesIsolateParameters) {
  auto cfg = hmnet::testing::toy_config();
  for (auto& l : cfg.levels) l.enable_denoise = false;
  HMNet model(cfg);
  const auto b = hmnet::testing::toy_batch(cfg, 2, 26);
  const Tensor y0 = model.forward(b.x, b.time_feats, Mode::eval);
  std::mt19937_64 rng(27);
  for (auto& m : model.memories())
    for (int i = 0; i < 10; ++i) m.insert(random_tensor({4}, rng).values());
  for (auto& lp : model.params().levels) set_values(lp.denoise_gate, rng);
  const Tensor y1 = model.forward(b.x, b.time_feats, Mode::eval);
  for (std::size_t i = 0; i < y0.numel(); ++i) EXPECT_EQ(y0[i], y1[i]);
}

TEST(Forward, StoreReceivesNoGradient) {
  HMNet model(hmnet::testing::toy_config());
  hmnet::testing::prefill_memories(model, 28);
  const auto b = hmnet::testing::toy_batch(model.config(), 2, 29);
  ForwardTrace trace;
  trace.probe_memory = true;
  backward(mse_loss(model.forward(b.x, b.time_feats, Mode::eval, &trace), b.target));
  for (const auto& lt : trace.levels) {
    ASSERT_TRUE(lt.denoise.retrieved.requires_grad());
    EXPECT_FALSE(lt.denoise.retrieved.has_grad());
  }
  EXPECT_TRUE(model.params().levels[0].denoise_query.tensor.has_grad());
}
