// Glancing training: mix sampled reference tokens into the NAR decoder inputs
// in proportion to the current prediction error. The CTC variant bridges
// reference tokens to decoder positions through the Viterbi alignment.
#pragma once

#include <map>
#include <vector>

#include "narkit/ctc.hpp"
#include "narkit/model.hpp"
#include "narkit/rng.hpp"

namespace narkit {

struct GlanceSchedule {
  bool enabled = false;
  double ratio_start = 0.5;
  double ratio_end = 0.3;
  long anneal_steps = 0;

  // Linear interpolation over anneal_steps, constant afterwards.
  double ratio_at(long step) const {
    if (!enabled) return 0.0;
    if (anneal_steps <= 0 || step >= anneal_steps) return ratio_end;
    const double f = static_cast<double>(step) / static_cast<double>(anneal_steps);
    return ratio_start + (ratio_end - ratio_start) * f;
  }
};

// floor(ratio * hamming_distance) over aligned equal-length sequences.
inline int glance_count(const std::vector<int>& prediction, const std::vector<int>& reference,
                        double ratio) {
  detail::require(prediction.size() == reference.size(),
                  "glance_count: sequences must be aligned and equal length (" +
                      std::to_string(prediction.size()) + " vs " +
                      std::to_string(reference.size()) + ")");
  int distance = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i)
    if (prediction[i] != reference[i]) ++distance;
  return static_cast<int>(ratio * distance);
}

// Decoder-input override map {position -> reference token id}. The caller
// substitutes the reference token's embedding row at each overridden
// position.
//
// vanilla: positions sampled uniformly (without replacement) among all T;
// ctc: each sampled reference token lands on the first decoder position of
// its Viterbi-aligned segment. An unrepresentable CTC target yields an empty
// map (glancing is skipped for the sample).
inline std::map<int, int> glance_positions(const DecoderTrace& first_pass,
                                           const std::vector<int>& target_ids, double ratio,
                                           Variant variant, int blank, Rng& rng) {
  std::map<int, int> overrides;
  if (ratio <= 0.0) return overrides;
  const int t = first_pass.logits.rows();
  const int v = first_pass.logits.cols();
  std::vector<int> predicted(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    const double* row = first_pass.logits.data().data() + static_cast<std::size_t>(i) * v;
    int best = 0;
    for (int k = 1; k < v; ++k)
      if (row[k] > row[best]) best = k;
    predicted[static_cast<std::size_t>(i)] = best;
  }

  if (variant == Variant::vanilla) {
    const int count = glance_count(predicted, target_ids, ratio);
    for (int pos : rng.sample_without_replacement(t, std::min(count, t)))
      overrides[pos] = target_ids[static_cast<std::size_t>(pos)];
    return overrides;
  }

  // CTC: align the first-pass distribution against the reference.
  const Tensor lp = log_softmax(detach(first_pass.logits));
  const CtcAlignment align = ctc_viterbi_align(lp, target_ids, blank);
  if (!align.ok) return overrides;
  std::vector<int> ref_path(static_cast<std::size_t>(t));
  std::vector<int> first_pos(target_ids.size(), -1);
  for (int i = 0; i < t; ++i) {
    const int s = align.states[static_cast<std::size_t>(i)];
    ref_path[static_cast<std::size_t>(i)] = s % 2 == 1 ? target_ids[static_cast<std::size_t>(s / 2)] : blank;
    if (s % 2 == 1 && first_pos[static_cast<std::size_t>(s / 2)] < 0)
      first_pos[static_cast<std::size_t>(s / 2)] = i;
  }
  const int count = glance_count(predicted, ref_path, ratio);
  const int n = static_cast<int>(target_ids.size());
  for (int ref_idx : rng.sample_without_replacement(n, std::min(count, n))) {
    const int pos = first_pos[static_cast<std::size_t>(ref_idx)];
    if (pos >= 0) overrides[pos] = target_ids[static_cast<std::size_t>(ref_idx)];
  }
  return overrides;
}

// Applies an override map to already-built decoder inputs: position j becomes
// embedding[token] + positional encoding, other rows pass through.
inline Tensor apply_glance_overrides(const NARModel& model, const Tensor& dec_inputs,
                                     const std::map<int, int>& overrides) {
  if (overrides.empty()) return dec_inputs;
  const int t = dec_inputs.rows();
  const int d = model.cfg.block.d_model;
  const double s = std::sqrt(static_cast<double>(d));
  const Tensor pe = sinusoidal_positions(t, d);
  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(t));
  for (int j = 0; j < t; ++j) {
    auto it = overrides.find(j);
    if (it == overrides.end()) {
      rows.push_back(slice_rows(dec_inputs, j, j + 1));
    } else {
      Tensor emb = scale(embedding(model.tgt_embed, {it->second}), s);
      rows.push_back(add(emb, slice_rows(pe, j, j + 1)));
    }
  }
  return concat_rows(rows);
}

}  // namespace narkit
