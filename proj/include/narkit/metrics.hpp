// Evaluation instruments: corpus BLEU, repeated-token rate, and
// length-bucketed BLEU reporting.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "narkit/tensor.hpp"

namespace narkit {

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU in [0, 100]: geometric mean of clipped n-gram precisions
// times the brevity penalty. Precisions for n >= 2 get add-one smoothing
// (desk-scale sentences are short); unigram precision is unsmoothed.
inline double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   int max_n = 4) {
  detail::require(hypotheses.size() == references.size(),
                  "bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                      std::to_string(references.size()) + " references");
  detail::require(!references.empty(), "bleu: empty corpus");
  for (const auto& r : references) detail::require(!r.empty(), "bleu: empty reference");

  std::vector<std::int64_t> match(static_cast<std::size_t>(max_n), 0);
  std::vector<std::int64_t> total(static_cast<std::size_t>(max_n), 0);
  std::int64_t hyp_len = 0, ref_len = 0;
  auto ngram_counts = [](const TokenSeq& s, int n) {
    std::map<std::vector<std::string>, std::int64_t> counts;
    if (static_cast<int>(s.size()) >= n)
      for (std::size_t i = 0; i + n <= s.size(); ++i)
        ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                          s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return counts;
  };
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<std::int64_t>(hypotheses[i].size());
    ref_len += static_cast<std::int64_t>(references[i].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hyp_counts = ngram_counts(hypotheses[i], n);
      const auto ref_counts = ngram_counts(references[i], n);
      for (const auto& [gram, cnt] : hyp_counts) {
        total[static_cast<std::size_t>(n - 1)] += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          match[static_cast<std::size_t>(n - 1)] += std::min(cnt, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double m = static_cast<double>(match[static_cast<std::size_t>(n - 1)]);
    double t = static_cast<double>(total[static_cast<std::size_t>(n - 1)]);
    if (n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_prec += std::log(m / t);
  }
  const double bp = hyp_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_prec / max_n);
}

// Fraction of tokens equal to their immediate predecessor, pooled over the
// corpus. Computed on final decoded output (post-collapse for CTC).
inline double repetition_rate(const std::vector<TokenSeq>& sequences) {
  std::int64_t repeats = 0, tokens = 0;
  for (const auto& s : sequences) {
    tokens += static_cast<std::int64_t>(s.size());
    for (std::size_t i = 1; i < s.size(); ++i)
      if (s[i] == s[i - 1]) ++repeats;
  }
  return tokens == 0 ? 0.0 : static_cast<double>(repeats) / static_cast<double>(tokens);
}

struct LengthBucket {
  int lo = 0;       // exclusive
  int hi = 0;       // inclusive; <= 0 means unbounded
  double bleu = 0.0;
  int n_sentences = 0;

  std::string label() const {
    if (hi <= 0) return ">" + std::to_string(lo);
    return "(" + std::to_string(lo) + "," + std::to_string(hi) + "]";
  }
};

// Pairs are assigned by reference length into half-open buckets; empty
// buckets are absent from the report.
inline std::vector<LengthBucket> length_bucket_report(
    const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
    const std::vector<std::pair<int, int>>& bounds = {{0, 20}, {20, 40}, {40, 60}, {60, 0}}) {
  detail::require(hypotheses.size() == references.size(), "length_bucket_report: count mismatch");
  std::vector<LengthBucket> out;
  for (const auto& [lo, hi] : bounds) {
    std::vector<TokenSeq> h, r;
    for (std::size_t i = 0; i < references.size(); ++i) {
      const int len = static_cast<int>(references[i].size());
      if (len > lo && (hi <= 0 || len <= hi)) {
        h.push_back(hypotheses[i]);
        r.push_back(references[i]);
      }
    }
    if (r.empty()) continue;
    LengthBucket b;
    b.lo = lo;
    b.hi = hi;
    b.n_sentences = static_cast<int>(r.size());
    b.bleu = bleu(h, r);
    out.push_back(b);
  }
  return out;
}

}  // namespace narkit
