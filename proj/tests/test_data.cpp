#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "narkit/data.hpp"

using namespace narkit;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("narkit_data_" + name)).string();
}

std::string corpus_fingerprint(const ParallelCorpus& c) {
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i)
    out += join_tokens(c.src[i]) + "\t" + join_tokens(c.tgt[i]) + "\n";
  return out;
}

}  // namespace

TEST(Vocab, ReservedIdsStable) {
  Vocab v;
  v.add("zebra");
  EXPECT_EQ(Vocab::pad, 0);
  EXPECT_EQ(Vocab::bos, 1);
  EXPECT_EQ(Vocab::eos, 2);
  EXPECT_EQ(Vocab::unk, 3);
  EXPECT_EQ(Vocab::blank, 4);
  EXPECT_EQ(v.encode("zebra"), 5);
  EXPECT_EQ(v.decode(0), "<pad>");
  EXPECT_EQ(v.decode(4), "<blank>");
}

TEST(Vocab, OutOfVocabEncodesToUnk) {
  Vocab v;
  v.add("a");
  EXPECT_EQ(v.encode("missing"), Vocab::unk);
}

TEST(Vocab, RoundTripInVocab) {
  Vocab v;
  for (const char* t : {"a", "b", "c"}) v.add(t);
  for (const char* t : {"a", "b", "c"}) EXPECT_EQ(v.decode(v.encode(t)), t);
}

TEST(Vocab, FrequencyRankedTiesLexicographic) {
  ParallelCorpus c;
  c.src = {split_tokens("b b b a a z z")};
  c.tgt = {split_tokens("q")};
  Vocab v = build_vocab(c, 100);
  EXPECT_EQ(v.encode("b"), Vocab::reserved + 0);  // most frequent
  EXPECT_EQ(v.encode("a"), Vocab::reserved + 1);  // tie with z, 'a' < 'z'
  EXPECT_EQ(v.encode("z"), Vocab::reserved + 2);
  EXPECT_EQ(v.encode("q"), Vocab::reserved + 3);
}

TEST(Vocab, SaveLoadRoundTrip) {
  Vocab v;
  for (const char* t : {"tok1", "tok2"}) v.add(t);
  const std::string path = tmp_path("vocab.txt");
  save_vocab(v, path);
  Vocab w = load_vocab(path);
  EXPECT_EQ(v.tokens, w.tokens);
  fs::remove(path);
}

TEST(Generate, CopyTaskTargetsEqualSources) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::copy;
  spec.n_pairs = 50;
  spec.seed = 3;
  ParallelCorpus c = generate(spec);
  ASSERT_EQ(c.size(), 50u);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.src[i], c.tgt[i]);
}

TEST(Generate, ReverseTask) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::reverse;
  spec.n_pairs = 20;
  spec.seed = 4;
  ParallelCorpus c = generate(spec);
  for (std::size_t i = 0; i < c.size(); ++i) {
    TokenLine r(c.src[i].rbegin(), c.src[i].rend());
    EXPECT_EQ(c.tgt[i], r);
  }
}

TEST(Generate, TwoModeHasAtMostTwoTargetsPerSource) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::two_mode_reorder;
  spec.n_pairs = 2000;
  spec.seed = 5;
  ParallelCorpus c = generate(spec);
  std::map<std::string, std::set<std::string>> targets_per_source;
  for (std::size_t i = 0; i < c.size(); ++i)
    targets_per_source[join_tokens(c.src[i])].insert(join_tokens(c.tgt[i]));
  int with_two = 0;
  for (const auto& [src, tgts] : targets_per_source) {
    EXPECT_LE(tgts.size(), 2u) << src;
    if (tgts.size() == 2) ++with_two;
  }
  // the pool construction repeats sources, so both modes genuinely appear
  EXPECT_GT(with_two, 10);
}

TEST(Generate, TwoModeTargetsPreserveLength) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::two_mode_reorder;
  spec.n_pairs = 200;
  spec.seed = 6;
  ParallelCorpus c = generate(spec);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.src[i].size(), c.tgt[i].size());
}

TEST(Generate, ToyTranslationIsConsistentBijectionAfterPairSwap) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::toy_translation;
  spec.n_pairs = 300;
  spec.seed = 7;
  ParallelCorpus c = generate(spec);
  std::map<std::string, std::string> mapping;
  std::map<std::string, std::string> inverse;
  for (std::size_t i = 0; i < c.size(); ++i) {
    TokenLine swapped = c.src[i];
    for (std::size_t j = 0; j + 1 < swapped.size(); j += 2) std::swap(swapped[j], swapped[j + 1]);
    ASSERT_EQ(swapped.size(), c.tgt[i].size());
    for (std::size_t j = 0; j < swapped.size(); ++j) {
      auto [it, fresh] = mapping.emplace(swapped[j], c.tgt[i][j]);
      EXPECT_EQ(it->second, c.tgt[i][j]) << "cipher must be a function";
      auto [jt, fresh2] = inverse.emplace(c.tgt[i][j], swapped[j]);
      EXPECT_EQ(jt->second, swapped[j]) << "cipher must be injective";
    }
  }
}

TEST(Generate, DeterministicPerSeed) {
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::two_mode_reorder;
  spec.n_pairs = 400;
  spec.seed = 11;
  EXPECT_EQ(corpus_fingerprint(generate(spec)), corpus_fingerprint(generate(spec)));
  SyntheticTaskSpec other = spec;
  other.seed = 12;
  EXPECT_NE(corpus_fingerprint(generate(spec)), corpus_fingerprint(generate(other)));
}

TEST(Generate, VocabTooSmallIsConfigError) {
  SyntheticTaskSpec spec;
  spec.vocab_size = Vocab::reserved;
  EXPECT_THROW(generate(spec), std::runtime_error);
}

TEST(Corpus, LineCountMismatchNamesBothCounts) {
  const std::string a = tmp_path("mismatch.src"), b = tmp_path("mismatch.tgt");
  std::ofstream(a) << "x y\nz w\n";
  std::ofstream(b) << "x y\n";
  try {
    load_corpus(a, b);
    FAIL() << "expected mismatch error";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("1"), std::string::npos);
  }
  fs::remove(a);
  fs::remove(b);
}

TEST(Corpus, EmptyLineSkipped) {
  const std::string a = tmp_path("empty.src"), b = tmp_path("empty.tgt");
  std::ofstream(a) << "x y\n\nq\n";
  std::ofstream(b) << "u v\nw\nr\n";
  ParallelCorpus c = load_corpus(a, b);
  EXPECT_EQ(c.size(), 2u);
  fs::remove(a);
  fs::remove(b);
}

TEST(Corpus, SaveLoadRoundTrip) {
  SyntheticTaskSpec spec;
  spec.n_pairs = 30;
  spec.seed = 1;
  ParallelCorpus c = generate(spec);
  const std::string a = tmp_path("rt.src"), b = tmp_path("rt.tgt");
  save_corpus(c, a, b);
  EXPECT_EQ(corpus_fingerprint(load_corpus(a, b)), corpus_fingerprint(c));
  fs::remove(a);
  fs::remove(b);
}

TEST(Batching, CoversEveryPairOncePerEpoch) {
  SyntheticTaskSpec spec;
  spec.n_pairs = 157;
  spec.seed = 2;
  ParallelCorpus c = generate(spec);
  Vocab v = build_vocab(c, 1000);
  auto pairs = encode_corpus(c, v);
  Rng rng(9);
  auto batches = make_epoch_batches(pairs, 80, 16, rng);
  std::multiset<std::string> seen, want;
  for (std::size_t i = 0; i < c.size(); ++i) want.insert(join_tokens(c.src[i]));
  for (const Batch& b : batches) {
    EXPECT_LE(b.size, 16);
    int tokens = 0;
    for (int i = 0; i < b.size; ++i) {
      tokens += b.tgt_len[static_cast<std::size_t>(i)];
      seen.insert(join_tokens(v.decode_ids(b.src_sentence(i))));
    }
    if (b.size > 1) EXPECT_LE(tokens, 80);
  }
  EXPECT_EQ(seen, want);
}

TEST(Batching, MasksMarkRealTokens) {
  std::vector<EncodedPair> pairs = {{{5, 6, 7}, {8, 9}}, {{5}, {8, 9, 10, 11}}};
  Batch b = make_batch(pairs, {0, 1});
  EXPECT_EQ(b.max_src, 3);
  EXPECT_EQ(b.max_tgt, 4);
  EXPECT_EQ(b.src_mask[0], 1);
  EXPECT_EQ(b.src_mask[3 + 1], 0);              // second sentence, position 1 is pad
  EXPECT_EQ(b.src_ids[3 + 1], Vocab::pad);
  EXPECT_EQ(b.tgt_sentence(1), (std::vector<int>{8, 9, 10, 11}));
}
