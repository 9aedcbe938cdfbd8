#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "narkit/ctc.hpp"
#include "narkit/rng.hpp"
#include "testutil.hpp"

using namespace narkit;

namespace {

// Brute-force oracle: walk every one of V^T paths, collapse each, and sum
// probabilities per collapsed sequence.
std::map<std::vector<int>, double> enumerate_collapsed_mass(const Tensor& log_probs, int blank) {
  const int frames = log_probs.shape[0], vocab = log_probs.shape[1];
  std::map<std::vector<int>, double> mass;
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  while (true) {
    double p = 0.0;
    for (int t = 0; t < frames; ++t)
      p += log_probs.data()[static_cast<std::size_t>(t) * vocab + path[static_cast<std::size_t>(t)]];
    auto key = ctc_collapse(path, blank);
    auto [it, fresh] = mass.emplace(std::move(key), p);
    if (!fresh) it->second = log_add(it->second, p);
    // odometer increment
    int pos = frames - 1;
    while (pos >= 0 && ++path[static_cast<std::size_t>(pos)] == vocab) path[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return mass;
}

Tensor random_log_probs(Rng& rng, int frames, int vocab) {
  Tensor logits = rng.uniform_tensor({frames, vocab}, -2, 2);
  return log_softmax(logits);
}

std::vector<int> random_target(Rng& rng, int n, int vocab, int blank) {
  std::vector<int> t;
  while (static_cast<int>(t.size()) < n) {
    const int c = rng.uniform_int(0, vocab - 1);
    if (c != blank) t.push_back(c);
  }
  return t;
}

}  // namespace

TEST(Collapse, MergeThenDelete) {
  const int a = 1, b = 2, blank = 0;
  EXPECT_EQ(ctc_collapse({a, a, blank, a}, blank), (std::vector<int>{a, a}));
  EXPECT_EQ(ctc_collapse({blank, blank}, blank), (std::vector<int>{}));
  EXPECT_EQ(ctc_collapse({a, b, b, blank, b}, blank), (std::vector<int>{a, b, b}));
}

TEST(Collapse, IdempotentOnCleanSequences) {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> clean;
    int prev = -1;
    for (int i = 0; i < 8; ++i) {
      int c = rng.uniform_int(1, 4);
      if (c == prev) continue;  // no adjacent duplicates, no blanks
      clean.push_back(c);
      prev = c;
    }
    if (clean.empty()) continue;
    EXPECT_EQ(ctc_collapse(clean, 0), clean);
  }
}

TEST(CtcLoss, UniformTwoFrameExample) {
  // T=2, V=3 (blank=0), all probabilities 1/3, target "a": 3 of the 9 paths
  // collapse to "a", so the loss is ln 3.
  Tensor lp = Tensor::full({2, 3}, std::log(1.0 / 3.0));
  CtcLossResult res = ctc_loss(lp, {1}, 0);
  ASSERT_TRUE(res.representable);
  EXPECT_NEAR(res.loss.item(), std::log(3.0), 1e-12);
}

TEST(CtcLoss, SingleFrameSinglePath) {
  Rng rng(1);
  Tensor lp = random_log_probs(rng, 1, 4);
  CtcLossResult res = ctc_loss(lp, {2}, 0);
  EXPECT_NEAR(res.loss.item(), -lp.data()[2], 1e-12);
}

TEST(CtcLoss, OneHotRowsSpellTarget) {
  // T = n with near-deterministic rows spelling the target: loss ~ 0
  const std::vector<int> target = {1, 2, 3};
  Tensor logits = Tensor::zeros({3, 4});
  for (int t = 0; t < 3; ++t)
    logits.data()[static_cast<std::size_t>(t) * 4 + target[static_cast<std::size_t>(t)]] = 60.0;
  CtcLossResult res = ctc_loss(log_softmax(logits), target, 0);
  EXPECT_NEAR(res.loss.item(), 0.0, 1e-9);
}

TEST(CtcLoss, UnrepresentableTargetFlagged) {
  Rng rng(2);
  // target "aa" needs 3 frames (blank between repeats); 2 are not enough
  Tensor lp = random_log_probs(rng, 2, 3);
  CtcLossResult res = ctc_loss(lp, {1, 1}, 0);
  EXPECT_FALSE(res.representable);
  EXPECT_TRUE(std::isinf(res.loss.item()));
  // but "ab" fits in 2 frames
  EXPECT_TRUE(ctc_loss(lp, {1, 2}, 0).representable);
}

TEST(CtcLoss, MatchesEnumerationOracle) {
  Rng rng(33);
  for (int rep = 0; rep < 120; ++rep) {
    const int frames = rng.uniform_int(1, 6);
    const int vocab = rng.uniform_int(2, 4);
    const int n = rng.uniform_int(1, 3);
    Tensor lp = random_log_probs(rng, frames, vocab);
    const std::vector<int> target = random_target(rng, n, vocab, 0);
    const auto mass = enumerate_collapsed_mass(lp, 0);
    const auto it = mass.find(target);
    const double want = it == mass.end() ? 0.0 : std::exp(it->second);
    CtcLossResult res = ctc_loss(lp, target, 0);
    const double got = res.representable ? std::exp(-res.loss.item()) : 0.0;
    ASSERT_NEAR(got, want, 1e-9) << "frames=" << frames << " vocab=" << vocab;
  }
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const int frames = rng.uniform_int(3, 6);
    Tensor lp = random_log_probs(rng, frames, 4).clone();
    const std::vector<int> target = random_target(rng, rng.uniform_int(1, 2), 4, 0);
    const double worst = testutil::check_gradients(
        [&] { return ctc_loss(lp, target, 0).loss; }, {&lp}, rng, 20);
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(CtcLoss, DifferentiableThroughLogSoftmax) {
  Rng rng(5);
  Tensor logits = rng.uniform_tensor({4, 4}, -1, 1);
  const std::vector<int> target = {1, 3};
  const double worst = testutil::check_gradients(
      [&] { return ctc_loss(log_softmax(logits), target, 0).loss; }, {&logits}, rng, 16);
  EXPECT_LT(worst, 1e-4);
}

TEST(GreedyDecode, OneHotRowsCollapseExactly) {
  Tensor logits = Tensor::zeros({5, 4});
  const std::vector<int> path = {1, 1, 0, 2, 2};
  for (int t = 0; t < 5; ++t)
    logits.data()[static_cast<std::size_t>(t) * 4 + path[static_cast<std::size_t>(t)]] = 50.0;
  EXPECT_EQ(ctc_greedy_decode(log_softmax(logits), 0), (std::vector<int>{1, 2}));
}

TEST(GreedyDecode, AllBlankGivesEmpty) {
  Tensor logits = Tensor::zeros({3, 4});
  for (int t = 0; t < 3; ++t) logits.data()[static_cast<std::size_t>(t) * 4] = 50.0;
  EXPECT_TRUE(ctc_greedy_decode(log_softmax(logits), 0).empty());
}

TEST(GreedyDecode, TiesBreakTowardSmallerId) {
  Tensor lp = Tensor::full({1, 3}, std::log(1.0 / 3.0));
  EXPECT_EQ(ctc_greedy_decode(lp, 2), (std::vector<int>{0}));
}

TEST(GreedyDecode, AgreesWithUnimodalBeam) {
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    // strongly peaked rows: greedy and prefix search agree
    Tensor logits = Tensor::zeros({5, 4});
    for (int t = 0; t < 5; ++t)
      logits.data()[static_cast<std::size_t>(t) * 4 + rng.uniform_int(0, 3)] = 40.0;
    Tensor lp = log_softmax(logits);
    EXPECT_EQ(ctc_greedy_decode(lp, 0), ctc_beam_search(lp, 1, 0));
    EXPECT_EQ(ctc_greedy_decode(lp, 0), ctc_beam_search(lp, 20, 0));
  }
}

TEST(BeamSearch, ExhaustiveBeamMatchesBruteForceArgmax) {
  Rng rng(7);
  for (int rep = 0; rep < 60; ++rep) {
    const int frames = rng.uniform_int(1, 5);
    const int vocab = rng.uniform_int(2, 4);
    Tensor lp = random_log_probs(rng, frames, vocab);
    const auto mass = enumerate_collapsed_mass(lp, 0);
    std::vector<int> best;
    double best_mass = kNegInf;
    for (const auto& [seq, m] : mass)
      if (m > best_mass) {
        best = seq;
        best_mass = m;
      }
    EXPECT_EQ(ctc_beam_search(lp, 1024, 0), best);
  }
}

TEST(BeamSearch, OutputMassMonotoneInBeam) {
  Rng rng(8);
  auto exact_mass = [](const Tensor& lp, const std::vector<int>& seq) {
    if (seq.empty()) {
      double s = 0.0;
      for (int t = 0; t < lp.shape[0]; ++t)
        s += lp.data()[static_cast<std::size_t>(t) * lp.shape[1]];
      return s;
    }
    return -ctc_loss(lp, seq, 0).loss.item();
  };
  for (int rep = 0; rep < 30; ++rep) {
    Tensor lp = random_log_probs(rng, 4, 3);
    const auto narrow = ctc_beam_search(lp, 1, 0);
    const auto wide = ctc_beam_search(lp, 200, 0);  // effectively exhaustive here
    EXPECT_GE(exact_mass(lp, wide), exact_mass(lp, narrow) - 1e-12);
  }
}

TEST(ViterbiAlign, SingleFrame) {
  Rng rng(10);
  Tensor lp = random_log_probs(rng, 1, 3);
  CtcAlignment a = ctc_viterbi_align(lp, {1}, 0);
  ASSERT_TRUE(a.ok);
  EXPECT_EQ(a.states, (std::vector<int>{1}));  // the non-blank state
}

TEST(ViterbiAlign, PathCollapsesToTarget) {
  Rng rng(11);
  for (int rep = 0; rep < 60; ++rep) {
    const int frames = rng.uniform_int(2, 6);
    Tensor lp = random_log_probs(rng, frames, 4);
    const std::vector<int> target = random_target(rng, rng.uniform_int(1, 3), 4, 0);
    CtcAlignment a = ctc_viterbi_align(lp, target, 0);
    if (frames < ctc_min_frames(target)) {
      EXPECT_FALSE(a.ok);
      continue;
    }
    ASSERT_TRUE(a.ok);
    const auto ext = std::vector<int>(a.states.begin(), a.states.end());
    std::vector<int> emitted;
    for (int s : ext) emitted.push_back(s % 2 == 1 ? target[static_cast<std::size_t>(s / 2)] : 0);
    EXPECT_EQ(ctc_collapse(emitted, 0), target);

    // max path probability cannot exceed the total marginal
    double path_lp = 0.0;
    for (int t = 0; t < frames; ++t)
      path_lp += lp.data()[static_cast<std::size_t>(t) * 4 + emitted[static_cast<std::size_t>(t)]];
    EXPECT_LE(path_lp, -ctc_loss(lp, target, 0).loss.item() + 1e-12);
  }
}

TEST(ViterbiAlign, UnrepresentableTargetIsError) {
  Rng rng(12);
  Tensor lp = random_log_probs(rng, 2, 3);
  EXPECT_FALSE(ctc_viterbi_align(lp, {1, 1}, 0).ok);
}
