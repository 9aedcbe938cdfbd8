// Vocabulary, corpus I/O, seeded synthetic task generators, and batch
// construction. Corpora are pairs of aligned UTF-8 files, one whitespace-
// tokenized sentence per line; generation is a pure function of its spec.
#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "narkit/ctc.hpp"
#include "narkit/rng.hpp"
#include "narkit/tensor.hpp"

namespace narkit {

// Token <-> id bijection with reserved ids below every text token.
struct Vocab {
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;
  static constexpr int blank = 4;
  static constexpr int reserved = 5;

  std::vector<std::string> tokens;  // id = reserved + index
  std::unordered_map<std::string, int> index;

  int size() const { return reserved + static_cast<int>(tokens.size()); }

  void add(const std::string& tok) {
    detail::require(!tok.empty(), "vocab: empty token");
    if (index.count(tok)) return;
    index[tok] = size();
    tokens.push_back(tok);
  }

  int encode(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? unk : it->second;
  }

  const std::string& decode(int id) const {
    static const std::vector<std::string> special = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                     "<blank>"};
    detail::require(id >= 0 && id < size(), "vocab: id " + std::to_string(id) + " out of range");
    if (id < reserved) return special[static_cast<std::size_t>(id)];
    return tokens[static_cast<std::size_t>(id - reserved)];
  }

  std::vector<int> encode_tokens(const std::vector<std::string>& toks) const {
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(encode(t));
    return ids;
  }

  std::vector<std::string> decode_ids(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(decode(id));
    return out;
  }
};

using TokenLine = std::vector<std::string>;

struct ParallelCorpus {
  std::vector<TokenLine> src;
  std::vector<TokenLine> tgt;
  std::size_t size() const { return src.size(); }
};

inline TokenLine split_tokens(const std::string& line) {
  TokenLine toks;
  std::istringstream is(line);
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

inline std::string join_tokens(const TokenLine& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// Frequency-ranked vocabulary, ties broken lexicographically.
inline Vocab build_vocab(const ParallelCorpus& corpus, int max_size) {
  detail::require(max_size > Vocab::reserved, "build_vocab: max_size must exceed reserved ids");
  std::map<std::string, std::int64_t> counts;
  for (const auto& side : {&corpus.src, &corpus.tgt})
    for (const auto& line : *side)
      for (const auto& tok : line) ++counts[tok];
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, cnt] : ranked) {
    if (v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

inline void save_vocab(const Vocab& v, const std::string& path) {
  std::ofstream os(path);
  detail::require(os.good(), "save_vocab: cannot open " + path);
  for (const auto& t : v.tokens) os << t << "\n";
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream is(path);
  detail::require(is.good(), "load_vocab: cannot open " + path);
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) v.add(line);
  }
  return v;
}

inline ParallelCorpus load_corpus(const std::string& src_path, const std::string& tgt_path) {
  std::ifstream fs(src_path), ft(tgt_path);
  detail::require(fs.good(), "load_corpus: cannot open " + src_path);
  detail::require(ft.good(), "load_corpus: cannot open " + tgt_path);
  std::vector<std::string> src_lines, tgt_lines;
  std::string line;
  while (std::getline(fs, line)) src_lines.push_back(line);
  while (std::getline(ft, line)) tgt_lines.push_back(line);
  detail::require(src_lines.size() == tgt_lines.size(),
                  "load_corpus: line count mismatch, " + src_path + " has " +
                      std::to_string(src_lines.size()) + " lines but " + tgt_path + " has " +
                      std::to_string(tgt_lines.size()));
  ParallelCorpus c;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    TokenLine s = split_tokens(src_lines[i]);
    TokenLine t = split_tokens(tgt_lines[i]);
    if (s.empty() || t.empty()) {
      std::cerr << "load_corpus: skipping empty line " << (i + 1) << "\n";
      continue;
    }
    c.src.push_back(std::move(s));
    c.tgt.push_back(std::move(t));
  }
  return c;
}

inline void save_corpus(const ParallelCorpus& c, const std::string& src_path,
                        const std::string& tgt_path) {
  std::ofstream fs(src_path), ft(tgt_path);
  detail::require(fs.good() && ft.good(), "save_corpus: cannot open output files");
  for (std::size_t i = 0; i < c.size(); ++i) {
    fs << join_tokens(c.src[i]) << "\n";
    ft << join_tokens(c.tgt[i]) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------
enum class SyntheticTask { copy, reverse, two_mode_reorder, toy_translation };

inline SyntheticTask parse_task(const std::string& name) {
  if (name == "copy") return SyntheticTask::copy;
  if (name == "reverse") return SyntheticTask::reverse;
  if (name == "two_mode_reorder") return SyntheticTask::two_mode_reorder;
  if (name == "toy_translation") return SyntheticTask::toy_translation;
  detail::fail("unknown task '" + name + "' (copy, reverse, two_mode_reorder, toy_translation)");
}

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::copy;
  int vocab_size = 32;  // total including the 5 reserved ids
  int len_min = 4;
  int len_max = 16;
  int n_pairs = 1000;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string token_name(int i, int n_text) {
  int width = 1;
  for (int v = n_text - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(i);
  return "w" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

}  // namespace detail

// Generates a parallel corpus for the spec's task. two_mode_reorder draws
// sources from a fixed pool (each appearing ~16 times) so a source genuinely
// occurs under both of its valid targets — the controlled multi-modality the
// task exists to exhibit.
inline ParallelCorpus generate(const SyntheticTaskSpec& spec) {
  const int n_text = spec.vocab_size - Vocab::reserved;
  detail::require(n_text > 0, "generate: vocab_size " + std::to_string(spec.vocab_size) +
                                  " does not exceed the " + std::to_string(Vocab::reserved) +
                                  " reserved ids");
  detail::require(spec.len_min >= 1 && spec.len_min <= spec.len_max, "generate: bad length range");
  detail::require(spec.n_pairs >= 1, "generate: n_pairs must be positive");

  Rng rng(spec.seed);
  std::vector<std::string> words(static_cast<std::size_t>(n_text));
  for (int i = 0; i < n_text; ++i) words[static_cast<std::size_t>(i)] = detail::token_name(i, n_text);

  // fixed substitution over text tokens, seeded with the corpus
  std::vector<int> subst(static_cast<std::size_t>(n_text));
  for (int i = 0; i < n_text; ++i) subst[static_cast<std::size_t>(i)] = i;
  rng.shuffle(subst);

  auto random_sentence = [&]() {
    const int len = rng.uniform_int(spec.len_min, spec.len_max);
    std::vector<int> s(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) s[static_cast<std::size_t>(j)] = rng.uniform_int(0, n_text - 1);
    return s;
  };
  auto to_tokens = [&](const std::vector<int>& ids) {
    TokenLine line;
    line.reserve(ids.size());
    for (int id : ids) line.push_back(words[static_cast<std::size_t>(id)]);
    return line;
  };

  // source pool for the multi-modal task; other tasks draw fresh sources
  std::vector<std::vector<int>> pool;
  if (spec.task == SyntheticTask::two_mode_reorder) {
    const int pool_size = std::max(1, spec.n_pairs / 16);
    pool.reserve(static_cast<std::size_t>(pool_size));
    for (int i = 0; i < pool_size; ++i) pool.push_back(random_sentence());
  }

  ParallelCorpus corpus;
  int hard_for_ctc = 0;
  for (int i = 0; i < spec.n_pairs; ++i) {
    std::vector<int> src;
    std::vector<int> tgt;
    switch (spec.task) {
      case SyntheticTask::copy:
        src = random_sentence();
        tgt = src;
        break;
      case SyntheticTask::reverse:
        src = random_sentence();
        tgt = std::vector<int>(src.rbegin(), src.rend());
        break;
      case SyntheticTask::two_mode_reorder: {
        src = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        tgt.reserve(src.size());
        for (int id : src) tgt.push_back(subst[static_cast<std::size_t>(id)]);
        if (rng.bernoulli(0.5)) {
          const auto half = tgt.begin() + static_cast<std::ptrdiff_t>(tgt.size() / 2);
          std::vector<int> swapped(half, tgt.end());
          swapped.insert(swapped.end(), tgt.begin(), half);
          tgt = std::move(swapped);
        }
        break;
      }
      case SyntheticTask::toy_translation: {
        src = random_sentence();
        tgt.reserve(src.size());
        for (int id : src) tgt.push_back(subst[static_cast<std::size_t>(id)]);
        for (std::size_t j = 0; j + 1 < tgt.size(); j += 2) std::swap(tgt[j], tgt[j + 1]);
        break;
      }
    }
    // representability guard for CTC training at the default upsample of 2
    std::vector<int> tgt_ids(tgt.begin(), tgt.end());
    if (ctc_min_frames(tgt_ids) > 2 * static_cast<int>(src.size())) ++hard_for_ctc;
    corpus.src.push_back(to_tokens(src));
    corpus.tgt.push_back(to_tokens(tgt));
  }
  detail::require(hard_for_ctc * 100 < spec.n_pairs,
                  "generate: " + std::to_string(hard_for_ctc) +
                      " of " + std::to_string(spec.n_pairs) +
                      " targets are CTC-unrepresentable at upsample 2 (>= 1%)");
  return corpus;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------
struct EncodedPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

inline std::vector<EncodedPair> encode_corpus(const ParallelCorpus& c, const Vocab& v) {
  std::vector<EncodedPair> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    out.push_back({v.encode_tokens(c.src[i]), v.encode_tokens(c.tgt[i])});
  return out;
}

// Padded source/target id matrices with length vectors and masks (1 = token).
struct Batch {
  int size = 0;
  int max_src = 0;
  int max_tgt = 0;
  std::vector<int> src_ids;  // size x max_src, pad-filled
  std::vector<int> tgt_ids;  // size x max_tgt
  std::vector<int> src_len;
  std::vector<int> tgt_len;
  std::vector<std::uint8_t> src_mask;
  std::vector<std::uint8_t> tgt_mask;

  std::vector<int> src_sentence(int i) const {
    return {src_ids.begin() + static_cast<std::ptrdiff_t>(i) * max_src,
            src_ids.begin() + static_cast<std::ptrdiff_t>(i) * max_src + src_len[static_cast<std::size_t>(i)]};
  }
  std::vector<int> tgt_sentence(int i) const {
    return {tgt_ids.begin() + static_cast<std::ptrdiff_t>(i) * max_tgt,
            tgt_ids.begin() + static_cast<std::ptrdiff_t>(i) * max_tgt + tgt_len[static_cast<std::size_t>(i)]};
  }
};

inline Batch make_batch(const std::vector<EncodedPair>& pairs, const std::vector<int>& idx) {
  detail::require(!idx.empty(), "make_batch: empty batch");
  Batch b;
  b.size = static_cast<int>(idx.size());
  for (int i : idx) {
    b.max_src = std::max(b.max_src, static_cast<int>(pairs[static_cast<std::size_t>(i)].src.size()));
    b.max_tgt = std::max(b.max_tgt, static_cast<int>(pairs[static_cast<std::size_t>(i)].tgt.size()));
  }
  b.src_ids.assign(static_cast<std::size_t>(b.size) * b.max_src, Vocab::pad);
  b.tgt_ids.assign(static_cast<std::size_t>(b.size) * b.max_tgt, Vocab::pad);
  b.src_mask.assign(b.src_ids.size(), 0);
  b.tgt_mask.assign(b.tgt_ids.size(), 0);
  for (int r = 0; r < b.size; ++r) {
    const EncodedPair& p = pairs[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
    b.src_len.push_back(static_cast<int>(p.src.size()));
    b.tgt_len.push_back(static_cast<int>(p.tgt.size()));
    for (std::size_t j = 0; j < p.src.size(); ++j) {
      b.src_ids[static_cast<std::size_t>(r) * b.max_src + j] = p.src[j];
      b.src_mask[static_cast<std::size_t>(r) * b.max_src + j] = 1;
    }
    for (std::size_t j = 0; j < p.tgt.size(); ++j) {
      b.tgt_ids[static_cast<std::size_t>(r) * b.max_tgt + j] = p.tgt[j];
      b.tgt_mask[static_cast<std::size_t>(r) * b.max_tgt + j] = 1;
    }
  }
  return b;
}

// Token-budget batching: seeded shuffle, stable sort by target length (the
// shuffle decides order within equal lengths), greedy fill, then shuffle the
// batch order.
inline std::vector<Batch> make_epoch_batches(const std::vector<EncodedPair>& pairs,
                                             int batch_tokens, int max_sentences, Rng& rng) {
  detail::require(!pairs.empty(), "make_epoch_batches: empty corpus");
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pairs[static_cast<std::size_t>(a)].tgt.size() < pairs[static_cast<std::size_t>(b)].tgt.size();
  });
  std::vector<std::vector<int>> groups;
  std::vector<int> cur;
  int cur_tokens = 0;
  for (int i : order) {
    const int n = static_cast<int>(pairs[static_cast<std::size_t>(i)].tgt.size());
    if (!cur.empty() &&
        (cur_tokens + n > batch_tokens || static_cast<int>(cur.size()) >= max_sentences)) {
      groups.push_back(cur);
      cur.clear();
      cur_tokens = 0;
    }
    cur.push_back(i);
    cur_tokens += n;
  }
  if (!cur.empty()) groups.push_back(cur);
  rng.shuffle(groups);
  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(make_batch(pairs, g));
  return batches;
}

}  // namespace narkit
