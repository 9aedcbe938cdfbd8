// CTC marginal-likelihood loss via the log-space forward algorithm, plus
// Viterbi alignment, greedy collapse decoding and prefix beam search.
// All routines are pure functions of their inputs.
#pragma once

#include <map>
#include <optional>
#include <vector>

#include "narkit/tensor.hpp"

namespace narkit {

// Merge adjacent duplicates, then delete blanks.
inline std::vector<int> ctc_collapse(const std::vector<int>& ids, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int id : ids) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

// Minimal number of frames needed to emit `target`: one per token plus one
// separating blank per adjacent repeat.
inline int ctc_min_frames(const std::vector<int>& target) {
  int repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return static_cast<int>(target.size()) + repeats;
}

// Log-space DP table over the blank-interleaved extended target.
// extended[2i] = blank, extended[2i+1] = target[i].
struct CTCLattice {
  int frames = 0;
  std::vector<int> extended;
  std::vector<double> alpha;  // frames x (2n+1)

  double& at(int t, int s) { return alpha[static_cast<std::size_t>(t) * extended.size() + s]; }
  double at(int t, int s) const {
    return alpha[static_cast<std::size_t>(t) * extended.size() + s];
  }
};

namespace detail {

inline std::vector<int> ctc_extend(const std::vector<int>& target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

// Whether the skip transition s-2 -> s is legal (distinct non-blank labels).
inline bool ctc_skip_ok(const std::vector<int>& ext, int s, int blank) {
  return s >= 2 && ext[static_cast<std::size_t>(s)] != blank &&
         ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s) - 2];
}

}  // namespace detail

// Forward lattice for log_probs laid out as frames x vocab (row-major).
inline CTCLattice ctc_forward_lattice(const std::vector<double>& log_probs, int frames,
                                      int vocab, const std::vector<int>& target, int blank) {
  CTCLattice lat;
  lat.frames = frames;
  lat.extended = detail::ctc_extend(target, blank);
  const int S = static_cast<int>(lat.extended.size());
  lat.alpha.assign(static_cast<std::size_t>(frames) * S, kNegInf);
  auto lp = [&](int t, int k) { return log_probs[static_cast<std::size_t>(t) * vocab + k]; };
  lat.at(0, 0) = lp(0, blank);
  if (S > 1) lat.at(0, 1) = lp(0, lat.extended[1]);
  for (int t = 1; t < frames; ++t)
    for (int s = 0; s < S; ++s) {
      double acc = lat.at(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.at(t - 1, s - 1));
      if (detail::ctc_skip_ok(lat.extended, s, blank)) acc = log_add(acc, lat.at(t - 1, s - 2));
      if (acc != kNegInf) lat.at(t, s) = acc + lp(t, lat.extended[static_cast<std::size_t>(s)]);
    }
  return lat;
}

struct CtcLossResult {
  Tensor loss;                 // scalar; +inf when the target is unrepresentable
  bool representable = true;
};

// Negative log of the total probability mass of paths collapsing to `target`.
// Differentiable through the tape (custom alpha/beta backward). An
// unrepresentable target (frames < ctc_min_frames) yields +inf loss with the
// representable flag cleared; callers skip such samples.
inline CtcLossResult ctc_loss(const Tensor& log_probs, const std::vector<int>& target,
                              int blank) {
  detail::require(log_probs.shape.size() == 2, "ctc_loss: log_probs must be frames x vocab");
  detail::require(!target.empty(), "ctc_loss: empty target");
  const int frames = log_probs.shape[0], vocab = log_probs.shape[1];
  detail::require(blank >= 0 && blank < vocab, "ctc_loss: blank id out of range");
  for (int y : target)
    detail::require(y >= 0 && y < vocab && y != blank, "ctc_loss: bad target id " + std::to_string(y));

  if (frames < ctc_min_frames(target)) {
    CtcLossResult res;
    res.loss = Tensor::scalar(std::numeric_limits<double>::infinity());
    res.representable = false;
    return res;
  }

  CTCLattice lat = ctc_forward_lattice(log_probs.data(), frames, vocab, target, blank);
  const int S = static_cast<int>(lat.extended.size());
  double total = log_add(lat.at(frames - 1, S - 1), lat.at(frames - 1, S - 2));

  CtcLossResult res;
  res.loss = Tensor::scalar(-total);
  if (detail::tracked(log_probs)) {
    const int il = detail::input_id(log_probs);
    auto lp_data = log_probs.payload;
    auto ext = lat.extended;
    auto alpha = lat.alpha;
    detail::attach(res.loss, [il, lp_data, ext, alpha, frames, vocab, blank, total](
                                 Tape& t, const std::vector<double>& g) {
      const int S = static_cast<int>(ext.size());
      auto lp = [&](int tt, int k) { return (*lp_data)[static_cast<std::size_t>(tt) * vocab + k]; };
      // beta[t][s]: mass of suffix paths starting at (t, s), emission at t included.
      std::vector<double> beta(static_cast<std::size_t>(frames) * S, kNegInf);
      auto bat = [&](int tt, int s) -> double& {
        return beta[static_cast<std::size_t>(tt) * S + s];
      };
      bat(frames - 1, S - 1) = lp(frames - 1, ext[static_cast<std::size_t>(S) - 1]);
      if (S > 1) bat(frames - 1, S - 2) = lp(frames - 1, ext[static_cast<std::size_t>(S) - 2]);
      for (int tt = frames - 2; tt >= 0; --tt)
        for (int s = S - 1; s >= 0; --s) {
          double acc = bat(tt + 1, s);
          if (s + 1 < S) acc = log_add(acc, bat(tt + 1, s + 1));
          if (s + 2 < S && detail::ctc_skip_ok(ext, s + 2, blank))
            acc = log_add(acc, bat(tt + 1, s + 2));
          if (acc != kNegInf) bat(tt, s) = acc + lp(tt, ext[static_cast<std::size_t>(s)]);
        }
      // d(-log P)/d lp[t][k] = -exp(logsum_{s: ext[s]=k} (alpha+beta-lp) - log P)
      auto& gl = t.grad_buffer(il);
      for (int tt = 0; tt < frames; ++tt)
        for (int s = 0; s < S; ++s) {
          const double a = alpha[static_cast<std::size_t>(tt) * S + s];
          const double b = bat(tt, s);
          if (a == kNegInf || b == kNegInf) continue;
          const int k = ext[static_cast<std::size_t>(s)];
          const double occ = std::exp(a + b - lp(tt, k) - total);
          gl[static_cast<std::size_t>(tt) * vocab + k] -= g[0] * occ;
        }
    });
  }
  return res;
}

// Argmax per frame (ties toward the smaller id), then collapse. An empty
// result is the caller's concern; decode paths substitute a single unk.
inline std::vector<int> ctc_greedy_decode(const Tensor& log_probs, int blank) {
  detail::require(log_probs.shape.size() == 2, "ctc_greedy_decode: need frames x vocab");
  const int frames = log_probs.shape[0], vocab = log_probs.shape[1];
  std::vector<int> path(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const double* row = log_probs.data().data() + static_cast<std::size_t>(t) * vocab;
    int best = 0;
    for (int k = 1; k < vocab; ++k)
      if (row[k] > row[best]) best = k;
    path[static_cast<std::size_t>(t)] = best;
  }
  return ctc_collapse(path, blank);
}

// Prefix beam search. Each surviving prefix carries separate blank-ending and
// non-blank-ending log masses, merged with log_add; the result is the prefix
// with the highest total marginal mass, which is the quantity CTC training
// optimizes.
inline std::vector<int> ctc_beam_search(const Tensor& log_probs, int beam, int blank) {
  detail::require(log_probs.shape.size() == 2, "ctc_beam_search: need frames x vocab");
  detail::require(beam >= 1, "ctc_beam_search: beam must be >= 1");
  const int frames = log_probs.shape[0], vocab = log_probs.shape[1];

  struct Mass {
    double pb = kNegInf;   // mass of alignments ending in blank
    double pnb = kNegInf;  // mass of alignments ending in the last token
    double total() const { return log_add(pb, pnb); }
  };
  std::map<std::vector<int>, Mass> beam_set;
  beam_set[{}] = Mass{0.0, kNegInf};

  for (int t = 0; t < frames; ++t) {
    const double* row = log_probs.data().data() + static_cast<std::size_t>(t) * vocab;
    std::map<std::vector<int>, Mass> next;
    for (const auto& [prefix, m] : beam_set) {
      const double total = m.total();
      // stay: emit blank
      {
        Mass& nm = next[prefix];
        nm.pb = log_add(nm.pb, total + row[blank]);
      }
      for (int c = 0; c < vocab; ++c) {
        if (c == blank) continue;
        const double pc = row[c];
        if (!prefix.empty() && prefix.back() == c) {
          // same symbol: either extend the current emission run (no new
          // token) or start a fresh token after a blank
          Mass& same = next[prefix];
          same.pnb = log_add(same.pnb, m.pnb + pc);
          std::vector<int> grown = prefix;
          grown.push_back(c);
          Mass& nm = next[grown];
          nm.pnb = log_add(nm.pnb, m.pb + pc);
        } else {
          std::vector<int> grown = prefix;
          grown.push_back(c);
          Mass& nm = next[grown];
          nm.pnb = log_add(nm.pnb, total + pc);
        }
      }
    }
    // prune to the beam; ties resolved toward the lexicographically smaller
    // prefix (std::map iterates in that order, stable_sort keeps it)
    std::vector<std::pair<std::vector<int>, Mass>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (static_cast<int>(ranked.size()) > beam) ranked.resize(static_cast<std::size_t>(beam));
    beam_set.clear();
    for (auto& [prefix, m] : ranked) beam_set.emplace(std::move(prefix), m);
  }

  const std::vector<int>* best = nullptr;
  double best_mass = kNegInf;
  for (const auto& [prefix, m] : beam_set) {
    const double total = m.total();
    if (best == nullptr || total > best_mass) {
      best = &prefix;
      best_mass = total;
    }
  }
  return best ? *best : std::vector<int>{};
}

struct CtcAlignment {
  bool ok = false;
  std::vector<int> states;  // length frames; indices into the extended target
};

// Max-probability path whose collapse equals `target` (max-plus version of
// the forward recursion with backpointers, ties toward the lower extended
// state index).
inline CtcAlignment ctc_viterbi_align(const Tensor& log_probs, const std::vector<int>& target,
                                      int blank) {
  detail::require(log_probs.shape.size() == 2, "ctc_viterbi_align: need frames x vocab");
  detail::require(!target.empty(), "ctc_viterbi_align: empty target");
  const int frames = log_probs.shape[0], vocab = log_probs.shape[1];
  CtcAlignment out;
  if (frames < ctc_min_frames(target)) return out;

  const std::vector<int> ext = detail::ctc_extend(target, blank);
  const int S = static_cast<int>(ext.size());
  std::vector<double> best(static_cast<std::size_t>(frames) * S, kNegInf);
  std::vector<int> back(static_cast<std::size_t>(frames) * S, -1);
  auto lp = [&](int t, int k) { return log_probs.data()[static_cast<std::size_t>(t) * vocab + k]; };
  auto idx = [S](int t, int s) { return static_cast<std::size_t>(t) * S + s; };

  best[idx(0, 0)] = lp(0, blank);
  if (S > 1) best[idx(0, 1)] = lp(0, ext[1]);
  for (int t = 1; t < frames; ++t)
    for (int s = 0; s < S; ++s) {
      // candidates scanned in ascending predecessor order; strict > keeps
      // the lower extended-state index on ties
      double b = kNegInf;
      int from = -1;
      auto consider = [&](int sp) {
        if (sp < 0) return;
        const double v = best[idx(t - 1, sp)];
        if (v > b) {
          b = v;
          from = sp;
        }
      };
      if (detail::ctc_skip_ok(ext, s, blank)) consider(s - 2);
      consider(s - 1);
      consider(s);
      if (b == kNegInf) continue;
      best[idx(t, s)] = b + lp(t, ext[static_cast<std::size_t>(s)]);
      back[idx(t, s)] = from;
    }

  int end = S - 2;  // prefer the lower of the two legal end states
  if (S - 1 >= 0 && best[idx(frames - 1, S - 1)] > best[idx(frames - 1, S - 2)]) end = S - 1;
  if (best[idx(frames - 1, end)] == kNegInf) return out;

  out.states.assign(static_cast<std::size_t>(frames), -1);
  int s = end;
  for (int t = frames - 1; t >= 0; --t) {
    out.states[static_cast<std::size_t>(t)] = s;
    if (t > 0) s = back[idx(t, s)];
  }
  out.ok = true;
  return out;
}

}  // namespace narkit
