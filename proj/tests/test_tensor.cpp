#include <gtest/gtest.h>

#include <cmath>

#include "narkit/rng.hpp"
#include "narkit/tensor.hpp"
#include "testutil.hpp"

using namespace narkit;

TEST(Matmul, IdentityCase) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({2, 1}, {3, 4});
  Tensor out = matmul(eye, v);
  EXPECT_EQ(out.shape, (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(out.data()[1], 4.0);
}

TEST(Matmul, ForcedByDefinition) {
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  EXPECT_DOUBLE_EQ(matmul(a, b).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected shape error";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = rng.uniform_tensor({3, 4}, -2, 2);
  Tensor b = rng.uniform_tensor({4, 2}, -2, 2);
  const double worst = testutil::check_gradients(
      [&] { return sum(tanh_op(matmul(a, b))); }, {&a, &b}, rng, 20);
  EXPECT_LT(worst, 1e-6);
}

TEST(LogSoftmax, Symmetry) {
  Tensor x = Tensor::from({2}, {0, 0});
  Tensor y = log_softmax(x);
  EXPECT_NEAR(y.data()[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(y.data()[1], std::log(0.5), 1e-15);
}

TEST(LogSoftmax, MaxShiftStability) {
  Tensor x = Tensor::from({2}, {1000, 0});
  Tensor y = log_softmax(x);
  ASSERT_TRUE(y.finite());
  EXPECT_NEAR(y.data()[0], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[1], -1000.0, 1e-9);
}

TEST(LogSoftmax, RowsNormalize) {
  Rng rng(3);
  Tensor x = rng.uniform_tensor({5, 7}, -4, 4);
  Tensor y = log_softmax(x);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += std::exp(y.data()[static_cast<std::size_t>(i) * 7 + j]);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LogSumExp, Basics) {
  EXPECT_NEAR(log_add(std::log(2.0), std::log(2.0)), std::log(4.0), 1e-15);
  EXPECT_DOUBLE_EQ(log_add(1.25, kNegInf), 1.25);
  EXPECT_NEAR(log_sum({0, 0, 0}), std::log(3.0), 1e-15);
  EXPECT_EQ(log_sum({}), kNegInf);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  x.requires_grad = true;
  tape.backward(sum(x));
  const auto* g = tape.grad_of(x);
  ASSERT_NE(g, nullptr);
  for (double v : *g) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({3}, {1, -2, 0.5});
  x.requires_grad = true;
  tape.backward(sum(mul(x, x)));
  const auto* g = tape.grad_of(x);
  ASSERT_NE(g, nullptr);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR((*g)[i], 2.0 * x.data()[i], 1e-14);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({2}, {1, 2});
  x.requires_grad = true;
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), std::runtime_error);
}

TEST(Backward, FanOutAccumulates) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.requires_grad = true;
  // x used twice: d/dx (sum(x) + sum(x*x)) = 1 + 2x
  tape.backward(add(sum(x), sum(mul(x, x))));
  const auto* g = tape.grad_of(x);
  ASSERT_NE(g, nullptr);
  EXPECT_NEAR((*g)[0], 3.0, 1e-14);
  EXPECT_NEAR((*g)[1], 5.0, 1e-14);
}

TEST(Gradients, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(17);
  auto expect_ok = [&](const char* name, std::function<Tensor()> build,
                       std::vector<Tensor*> inputs) {
    const double worst = testutil::check_gradients(build, inputs, rng, 20);
    EXPECT_LT(worst, 1e-4) << name;
  };

  Tensor a = rng.uniform_tensor({4, 5}, -2, 2);
  Tensor b = rng.uniform_tensor({4, 5}, -2, 2);
  Tensor bias = rng.uniform_tensor({5}, -2, 2);
  expect_ok("add", [&] { return sum(mul(add(a, b), add(a, b))); }, {&a, &b});
  expect_ok("sub", [&] { return sum(mul(sub(a, b), sub(a, b))); }, {&a, &b});
  expect_ok("mul", [&] { return sum(mul(a, b)); }, {&a, &b});
  expect_ok("scale", [&] { return sum(scale(a, -1.7)); }, {&a});
  expect_ok("add_bias", [&] { return sum(tanh_op(add_bias(a, bias))); }, {&a, &bias});
  expect_ok("transpose", [&] { return sum(mul(transpose(a), transpose(a))); }, {&a});
  expect_ok("reshape", [&] { return sum(mul(reshape(a, {2, 10}), reshape(a, {2, 10}))); }, {&a});
  expect_ok("concat_rows", [&] {
    return sum(tanh_op(concat_rows({a, b})));
  }, {&a, &b});
  expect_ok("concat_cols", [&] { return sum(tanh_op(concat_cols({a, b}))); }, {&a, &b});
  expect_ok("slice_rows", [&] { return sum(mul(slice_rows(a, 1, 3), slice_rows(a, 1, 3))); }, {&a});
  expect_ok("slice_cols", [&] { return sum(mul(slice_cols(a, 1, 4), slice_cols(a, 1, 4))); }, {&a});
  expect_ok("mean", [&] { return mean(mul(a, a)); }, {&a});
  expect_ok("sum_axis0", [&] { return sum(mul(sum_axis(a, 0), sum_axis(a, 0))); }, {&a});
  expect_ok("sum_axis1", [&] { return sum(mul(sum_axis(a, 1), sum_axis(a, 1))); }, {&a});
  expect_ok("tanh", [&] { return sum(tanh_op(a)); }, {&a});
  expect_ok("log_softmax", [&] { return sum(mul(log_softmax(a), log_softmax(a))); }, {&a});
  expect_ok("softmax", [&] { return sum(mul(softmax_rows(a), softmax_rows(a))); }, {&a});

  // relu checked away from the kink
  Tensor r = rng.uniform_tensor({4, 5}, 0.5, 2.0);
  Tensor r2 = rng.uniform_tensor({4, 5}, -2.0, -0.5);
  expect_ok("relu_pos", [&] { return sum(relu(r)); }, {&r});
  expect_ok("relu_neg", [&] { return sum(relu(r2)); }, {&r2});

  Tensor gain = rng.uniform_tensor({5}, 0.5, 1.5);
  Tensor lnb = rng.uniform_tensor({5}, -0.5, 0.5);
  expect_ok("layer_norm", [&] { return sum(mul(layer_norm(a, gain, lnb), layer_norm(a, gain, lnb))); },
            {&a, &gain, &lnb});

  Tensor table = rng.uniform_tensor({7, 3}, -2, 2);
  std::vector<int> ids = {2, 0, 6, 2};
  expect_ok("embedding", [&] { return sum(tanh_op(embedding(table, ids))); }, {&table});

  Tensor logits = rng.uniform_tensor({4, 6}, -2, 2);
  std::vector<int> gold = {1, 0, 5, 3};
  expect_ok("cross_entropy", [&] { return cross_entropy_smoothed(logits, gold, 0.1); }, {&logits});

  // dropout with a replayed mask stream
  Tensor d = rng.uniform_tensor({4, 5}, -2, 2);
  expect_ok("dropout", [&] {
    Rng mask_rng(99);
    return sum(mul(dropout(d, 0.3, true, [&] { return mask_rng.uniform(); }),
                   Tensor::full({4, 5}, 1.0)));
  }, {&d});
}

TEST(Determinism, RepeatedForwardBackwardIsBitwiseIdentical) {
  auto run = [] {
    Rng rng(123);
    Tape tape;
    TapeScope scope(tape);
    Tensor x = rng.uniform_tensor({6, 6}, -1, 1);
    Tensor w = rng.uniform_tensor({6, 6}, -1, 1);
    x.requires_grad = true;
    w.requires_grad = true;
    Tensor h = dropout(tanh_op(matmul(x, w)), 0.2, true, [&] { return rng.uniform(); });
    Tensor loss = mean(mul(h, h));
    tape.backward(loss);
    std::vector<double> out = *tape.grad_of(w);
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Forward, NoNaNOnFiniteInputs) {
  Rng rng(5);
  Tensor big = rng.uniform_tensor({3, 4}, -800, 800);
  EXPECT_TRUE(log_softmax(big).finite());
  EXPECT_TRUE(softmax_rows(big).finite());
  Tensor g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  EXPECT_TRUE(layer_norm(Tensor::zeros({3, 4}), g, b).finite());  // zero variance rows
}

TEST(Detach, CutsTheGraph) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::from({2}, {1, 2});
  x.requires_grad = true;
  Tensor loss = sum(mul(detach(scale(x, 3.0)), x));
  tape.backward(loss);
  const auto* g = tape.grad_of(x);
  ASSERT_NE(g, nullptr);
  // only the non-detached branch contributes: d/dx sum(c * x) = c = 3x_const
  EXPECT_NEAR((*g)[0], 3.0, 1e-14);
  EXPECT_NEAR((*g)[1], 6.0, 1e-14);
}
