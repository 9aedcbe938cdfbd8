// Standard autoregressive encoder-decoder built from the same transformer
// blocks: the distillation teacher and the left-to-right factorization
// baseline. Decoding is greedy or length-normalized beam search; sequences
// are short, so every step recomputes the prefix (no KV cache).
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "narkit/data.hpp"
#include "narkit/transformer.hpp"

namespace narkit {

struct TeacherConfig {
  int vocab_size = 0;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  BlockConfig block;

  void validate() const {
    block.validate();
    detail::require(vocab_size > Vocab::reserved, "teacher config: vocab_size too small");
    detail::require(n_enc_layers >= 1 && n_dec_layers >= 1, "teacher config: need >= 1 layer");
  }
};

struct TeacherModel {
  TeacherConfig cfg;
  Tensor src_embed;
  Tensor tgt_embed;
  std::vector<EncoderLayer> enc_layers;
  std::vector<DecoderLayer> dec_layers;
  Linear out_proj;

  void init(const TeacherConfig& c, Rng& rng) {
    cfg = c;
    cfg.validate();
    const int d = cfg.block.d_model;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    src_embed = rng.normal_tensor({cfg.vocab_size, d}, emb_std);
    src_embed.requires_grad = true;
    tgt_embed = rng.normal_tensor({cfg.vocab_size, d}, emb_std);
    tgt_embed.requires_grad = true;
    enc_layers.resize(static_cast<std::size_t>(cfg.n_enc_layers));
    for (auto& l : enc_layers) l.init(rng, cfg.block);
    dec_layers.resize(static_cast<std::size_t>(cfg.n_dec_layers));
    for (auto& l : dec_layers) l.init(rng, cfg.block);
    out_proj.init(rng, d, cfg.vocab_size);
  }

  Tensor embed(const Tensor& table, const std::vector<int>& ids) const {
    const double s = std::sqrt(static_cast<double>(cfg.block.d_model));
    return add(scale(embedding(table, ids), s),
               sinusoidal_positions(static_cast<int>(ids.size()), cfg.block.d_model));
  }

  Tensor encode(const std::vector<int>& src_ids, Rng* rng, bool training) const {
    detail::require(!src_ids.empty(), "teacher encode: empty source");
    Tensor x = apply_dropout(embed(src_embed, src_ids), cfg.block.dropout, rng, training);
    const Mask m = Mask::full(static_cast<int>(src_ids.size()), static_cast<int>(src_ids.size()));
    for (const auto& layer : enc_layers) x = layer.forward(x, m, rng, training);
    return x;
  }

  // Causal logits for decoder input ids (already bos-shifted).
  Tensor decode_logits(const Tensor& enc_states, const std::vector<int>& dec_input_ids, Rng* rng,
                       bool training) const {
    const int n = static_cast<int>(dec_input_ids.size());
    Tensor x = apply_dropout(embed(tgt_embed, dec_input_ids), cfg.block.dropout, rng, training);
    const Mask self_mask = Mask::causal(n);
    const Mask cross_mask = Mask::full(n, enc_states.rows());
    for (const auto& layer : dec_layers)
      x = layer.forward(x, enc_states, self_mask, cross_mask, rng, training);
    return out_proj.forward(x);
  }

  // Label-smoothed CE over [tgt..., eos] from inputs [bos, tgt...].
  Tensor training_loss(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids,
                       double label_smoothing, Rng* rng) const {
    const Tensor enc = encode(src_ids, rng, true);
    std::vector<int> inputs;
    inputs.reserve(tgt_ids.size() + 1);
    inputs.push_back(Vocab::bos);
    inputs.insert(inputs.end(), tgt_ids.begin(), tgt_ids.end());
    std::vector<int> outputs = tgt_ids;
    outputs.push_back(Vocab::eos);
    return cross_entropy_smoothed(decode_logits(enc, inputs, rng, true), outputs, label_smoothing);
  }

  void visit_params(const ParamVisitor& fn) {
    fn("src_embed", src_embed);
    fn("tgt_embed", tgt_embed);
    for (std::size_t i = 0; i < enc_layers.size(); ++i)
      enc_layers[i].visit("encoder.layer" + std::to_string(i), fn);
    for (std::size_t i = 0; i < dec_layers.size(); ++i)
      dec_layers[i].visit("decoder.layer" + std::to_string(i), fn);
    out_proj.visit("out_proj", fn);
  }
};

namespace detail {

// Next-token log-probs with pad/bos/blank disallowed (eos stays legal).
inline std::vector<double> teacher_next_log_probs(const TeacherModel& model, const Tensor& enc,
                                                  const std::vector<int>& prefix) {
  const Tensor logits = model.decode_logits(enc, prefix, nullptr, false);
  const Tensor lp = log_softmax(slice_rows(logits, logits.rows() - 1, logits.rows()));
  std::vector<double> row(lp.data());
  row[Vocab::pad] = -1e30;
  row[Vocab::bos] = -1e30;
  row[Vocab::blank] = -1e30;
  return row;
}

}  // namespace detail

inline std::vector<int> teacher_greedy_decode(const TeacherModel& model,
                                              const std::vector<int>& src_ids, int max_len = 0) {
  NoGradScope ng;
  const Tensor enc = model.encode(src_ids, nullptr, false);
  if (max_len <= 0) max_len = 2 * static_cast<int>(src_ids.size()) + 8;
  std::vector<int> prefix = {Vocab::bos};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    const auto row = detail::teacher_next_log_probs(model, enc, prefix);
    int best = 0;
    for (int k = 1; k < static_cast<int>(row.size()); ++k)
      if (row[static_cast<std::size_t>(k)] > row[static_cast<std::size_t>(best)]) best = k;
    if (best == Vocab::eos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

// Length-normalized beam search (score = mean token log-prob, eos included).
// beam == 1 coincides with greedy decoding.
inline std::vector<int> teacher_beam_decode(const TeacherModel& model,
                                            const std::vector<int>& src_ids, int beam,
                                            int max_len = 0) {
  detail::require(beam >= 1, "teacher_beam_decode: beam must be >= 1");
  NoGradScope ng;
  const Tensor enc = model.encode(src_ids, nullptr, false);
  if (max_len <= 0) max_len = 2 * static_cast<int>(src_ids.size()) + 8;

  struct Hyp {
    std::vector<int> tokens;  // without bos/eos
    double log_prob = 0.0;
    bool finished = false;
    int steps = 0;  // tokens emitted including eos
    double score() const { return log_prob / std::max(1, steps); }
  };
  std::vector<Hyp> beams = {Hyp{}};
  std::vector<Hyp> finished;

  for (int step = 0; step < max_len; ++step) {
    std::vector<Hyp> candidates;
    for (const Hyp& h : beams) {
      std::vector<int> prefix = {Vocab::bos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto row = detail::teacher_next_log_probs(model, enc, prefix);
      for (int k = 0; k < static_cast<int>(row.size()); ++k) {
        if (row[static_cast<std::size_t>(k)] <= -1e29) continue;
        Hyp next = h;
        next.log_prob += row[static_cast<std::size_t>(k)];
        next.steps += 1;
        if (k == Vocab::eos)
          next.finished = true;
        else
          next.tokens.push_back(k);
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hyp& a, const Hyp& b) { return a.log_prob > b.log_prob; });
    if (static_cast<int>(candidates.size()) > beam) candidates.resize(static_cast<std::size_t>(beam));
    beams.clear();
    for (Hyp& c : candidates) {
      if (c.finished)
        finished.push_back(std::move(c));
      else
        beams.push_back(std::move(c));
    }
    if (beams.empty()) break;
  }
  for (Hyp& h : beams) finished.push_back(std::move(h));  // ran out of steps
  detail::require(!finished.empty(), "teacher_beam_decode: no hypotheses");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].score() > finished[best].score()) best = i;
  return finished[best].tokens;
}

}  // namespace narkit
