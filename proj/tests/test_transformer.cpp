#include <gtest/gtest.h>

#include "narkit/transformer.hpp"
#include "testutil.hpp"

using namespace narkit;

namespace {

void set_identity(Linear& lin) {
  const int n = lin.w.shape[0];
  ASSERT_EQ(lin.w.shape[0], lin.w.shape[1]);
  std::fill(lin.w.data().begin(), lin.w.data().end(), 0.0);
  for (int i = 0; i < n; ++i) lin.w.data()[static_cast<std::size_t>(i) * n + i] = 1.0;
  std::fill(lin.b.data().begin(), lin.b.data().end(), 0.0);
}

BlockConfig small_block(int d_model, int n_heads, double drop = 0.0) {
  BlockConfig c;
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.d_ff = 2 * d_model;
  c.dropout = drop;
  return c;
}

}  // namespace

TEST(Attention, IdentityWeightsPassValueThrough) {
  Rng rng(1);
  MultiHeadAttention mha;
  mha.init(rng, small_block(4, 1));
  set_identity(mha.wq);
  set_identity(mha.wk);
  set_identity(mha.wv);
  set_identity(mha.wo);
  Tensor v = Tensor::from({1, 4}, {0.3, -1.2, 2.0, 0.7});
  Tensor out = mha.forward(v, v, Mask::full(1, 1));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(out.data()[static_cast<std::size_t>(j)], v.data()[static_cast<std::size_t>(j)], 1e-12);
}

TEST(Attention, UniformKeysGiveUniformWeights) {
  Rng rng(2);
  MultiHeadAttention mha;
  mha.init(rng, small_block(4, 2));
  set_identity(mha.wv);
  set_identity(mha.wo);
  // identical keys for every position -> probs 1/len_k -> output = mean of v
  Tensor memory = Tensor::from({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  for (int j = 0; j < 4; ++j) {
    double mean_col = 0;
    for (int i = 0; i < 3; ++i) mean_col += memory.data()[static_cast<std::size_t>(i) * 4 + j];
    mean_col /= 3;
    Tensor q = Tensor::from({1, 4}, {0.5, -0.5, 1.0, 0.0});
    std::fill(mha.wk.w.data().begin(), mha.wk.w.data().end(), 0.0);  // keys all equal (= bias)
    Tensor out = mha.forward(q, memory, Mask::full(1, 3));
    EXPECT_NEAR(out.data()[static_cast<std::size_t>(j)], mean_col, 1e-12);
  }
}

TEST(Attention, CausalMaskBlocksFuture) {
  Rng rng(3);
  MultiHeadAttention mha;
  mha.init(rng, small_block(8, 2));
  Tensor x = rng.uniform_tensor({3, 8}, -1, 1);
  Tensor base = mha.forward(x, x, Mask::causal(3));
  Tensor perturbed = x.clone();
  for (int j = 0; j < 8; ++j) perturbed.data()[static_cast<std::size_t>(1 * 8 + j)] += 0.37;
  for (int j = 0; j < 8; ++j) perturbed.data()[static_cast<std::size_t>(2 * 8 + j)] -= 1.11;
  Tensor moved = mha.forward(perturbed, perturbed, Mask::causal(3));
  for (int j = 0; j < 8; ++j)
    EXPECT_DOUBLE_EQ(base.data()[static_cast<std::size_t>(j)], moved.data()[static_cast<std::size_t>(j)]);
}

TEST(Attention, FullyMaskedRowIsContractError) {
  Mask m = Mask::full(2, 2);
  m.allow[2] = 0;
  m.allow[3] = 0;  // row 1 fully masked
  EXPECT_THROW(m.bias(), std::runtime_error);
}

TEST(EncoderLayer, PreservesShape) {
  Rng rng(4);
  EncoderLayer layer;
  layer.init(rng, small_block(8, 2));
  Tensor x = rng.uniform_tensor({5, 8}, -1, 1);
  Tensor y = layer.forward(x, Mask::full(5, 5), nullptr, false);
  EXPECT_EQ(y.shape, x.shape);
}

TEST(DecoderLayer, ZeroCrossValueIgnoresMemory) {
  Rng rng(5);
  DecoderLayer layer;
  layer.init(rng, small_block(8, 2));
  std::fill(layer.cross_attn.wv.w.data().begin(), layer.cross_attn.wv.w.data().end(), 0.0);
  std::fill(layer.cross_attn.wv.b.data().begin(), layer.cross_attn.wv.b.data().end(), 0.0);
  Tensor x = rng.uniform_tensor({4, 8}, -1, 1);
  Tensor mem1 = Tensor::zeros({6, 8});
  Tensor mem2 = rng.uniform_tensor({6, 8}, -2, 2);
  Tensor y1 = layer.forward(x, mem1, Mask::causal(4), Mask::full(4, 6), nullptr, false);
  Tensor y2 = layer.forward(x, mem2, Mask::causal(4), Mask::full(4, 6), nullptr, false);
  for (std::size_t i = 0; i < y1.data().size(); ++i)
    EXPECT_DOUBLE_EQ(y1.data()[i], y2.data()[i]);
}

TEST(DecoderLayer, CausalityOverTargetPositions) {
  Rng rng(6);
  DecoderLayer layer;
  layer.init(rng, small_block(8, 4));
  Tensor mem = rng.uniform_tensor({5, 8}, -1, 1);
  Tensor x = rng.uniform_tensor({4, 8}, -1, 1);
  Tensor y = layer.forward(x, mem, Mask::causal(4), Mask::full(4, 5), nullptr, false);
  // swap the two future rows
  Tensor x2 = x.clone();
  for (int j = 0; j < 8; ++j)
    std::swap(x2.data()[static_cast<std::size_t>(2 * 8 + j)], x2.data()[static_cast<std::size_t>(3 * 8 + j)]);
  Tensor y2 = layer.forward(x2, mem, Mask::causal(4), Mask::full(4, 5), nullptr, false);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 8; ++j)
      EXPECT_DOUBLE_EQ(y.data()[static_cast<std::size_t>(i * 8 + j)],
                       y2.data()[static_cast<std::size_t>(i * 8 + j)]);
}

TEST(DecoderLayer, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  DecoderLayer layer;
  layer.init(rng, small_block(4, 2));
  Tensor x = rng.uniform_tensor({3, 4}, -1, 1);
  Tensor mem = rng.uniform_tensor({4, 4}, -1, 1);
  const double worst = testutil::check_gradients(
      [&] {
        return mean(mul(layer.forward(x, mem, Mask::causal(3), Mask::full(3, 4), nullptr, false),
                        layer.forward(x, mem, Mask::causal(3), Mask::full(3, 4), nullptr, false)));
      },
      {&x, &mem, &layer.self_attn.wq.w, &layer.cross_attn.wv.w, &layer.ffn.w1.w, &layer.ln1.gain},
      rng, 10);
  EXPECT_LT(worst, 1e-4);
}

TEST(Sinusoidal, PositionZeroAlternates) {
  Tensor pe = sinusoidal_positions(3, 6);
  for (int i = 0; i < 6; i += 2) {
    EXPECT_DOUBLE_EQ(pe.data()[static_cast<std::size_t>(i)], 0.0);
    EXPECT_DOUBLE_EQ(pe.data()[static_cast<std::size_t>(i + 1)], 1.0);
  }
}

TEST(Sinusoidal, DeterministicAndBounded) {
  Tensor a = sinusoidal_positions(12, 16);
  Tensor b = sinusoidal_positions(12, 16);
  EXPECT_EQ(a.data(), b.data());
  for (double v : a.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(BlockConfig, HeadDivisibilityEnforced) {
  BlockConfig c;
  c.d_model = 10;
  c.n_heads = 4;
  EXPECT_THROW(c.validate(), std::runtime_error);
}
