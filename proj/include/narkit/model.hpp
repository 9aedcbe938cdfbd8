// NAR model families: shared encoder, non-causal decoder stack exposing every
// layer's hidden states, vanilla head with length predictor, CTC head with
// upsampled decoder length.
#pragma once

#include <string>
#include <vector>

#include "narkit/ctc.hpp"
#include "narkit/data.hpp"
#include "narkit/transformer.hpp"

namespace narkit {

enum class Variant { vanilla, ctc };

inline Variant parse_variant(const std::string& name) {
  if (name == "vanilla") return Variant::vanilla;
  if (name == "ctc") return Variant::ctc;
  detail::fail("unknown variant '" + name + "' (vanilla, ctc)");
}

inline std::string variant_name(Variant v) { return v == Variant::vanilla ? "vanilla" : "ctc"; }

struct NARConfig {
  Variant variant = Variant::vanilla;
  int vocab_size = 0;  // total, including reserved ids
  int n_enc_layers = 2;
  int n_dec_layers = 2;  // N in the multi-task loss sum
  BlockConfig block;
  int upsample_factor = 2;    // CTC decoder length = factor * source length
  int max_length_offset = 8;  // vanilla length classifier range

  void validate() const {
    block.validate();
    detail::require(vocab_size > Vocab::reserved, "nar config: vocab_size too small");
    detail::require(n_enc_layers >= 1 && n_dec_layers >= 1, "nar config: need >= 1 layer");
    detail::require(variant != Variant::ctc || upsample_factor >= 2,
                    "nar config: ctc needs upsample_factor >= 2");
    detail::require(max_length_offset >= 1, "nar config: max_length_offset must be >= 1");
  }
};

// Per-layer hidden states plus final vocabulary logits of one forward pass.
struct DecoderTrace {
  std::vector<Tensor> hidden;  // one per decoder layer, each T x d_model
  Tensor logits;               // T x V
};

struct NARModel {
  NARConfig cfg;
  Tensor src_embed;  // V x d
  Tensor tgt_embed;  // V x d, shared with the AR heads' input embedding
  std::vector<EncoderLayer> enc_layers;
  std::vector<DecoderLayer> dec_layers;
  Linear out_proj;  // d x V
  Linear len_proj;  // d x (2*max_offset+1), vanilla only

  void init(const NARConfig& c, Rng& rng) {
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
    if (cfg.variant == Variant::vanilla) len_proj.init(rng, d, 2 * cfg.max_length_offset + 1);
  }

  Tensor embed_positions(const Tensor& emb) const {
    return add(emb, sinusoidal_positions(emb.rows(), cfg.block.d_model));
  }

  Tensor encode(const std::vector<int>& src_ids, Rng* rng, bool training) const {
    detail::require(!src_ids.empty(), "encode: empty source");
    const double s = std::sqrt(static_cast<double>(cfg.block.d_model));
    Tensor x = embed_positions(scale(embedding(src_embed, src_ids), s));
    x = apply_dropout(x, cfg.block.dropout, rng, training);
    const Mask m = Mask::full(static_cast<int>(src_ids.size()), static_cast<int>(src_ids.size()));
    for (const auto& layer : enc_layers) x = layer.forward(x, m, rng, training);
    return x;
  }

  // Uniform copy: decoder position j receives enc_states[floor(j*m/T)] plus
  // its positional encoding.
  Tensor build_decoder_inputs(const Tensor& enc_states, int target_len) const {
    detail::require(target_len >= 1, "build_decoder_inputs: target length must be >= 1");
    const int m = enc_states.rows();
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(target_len));
    for (int j = 0; j < target_len; ++j) {
      const int src_pos = static_cast<int>((static_cast<std::int64_t>(j) * m) / target_len);
      rows.push_back(slice_rows(enc_states, src_pos, src_pos + 1));
    }
    return embed_positions(concat_rows(rows));
  }

  // Full (non-causal) self-attention: the conditional independence lives in
  // the output factorization, not the hidden computation.
  DecoderTrace nar_decode(const Tensor& dec_inputs, const Tensor& enc_states, Rng* rng,
                          bool training) const {
    const int t = dec_inputs.rows();
    const Mask self_mask = Mask::full(t, t);
    const Mask cross_mask = Mask::full(t, enc_states.rows());
    DecoderTrace trace;
    Tensor x = dec_inputs;
    for (const auto& layer : dec_layers) {
      x = layer.forward(x, enc_states, self_mask, cross_mask, rng, training);
      trace.hidden.push_back(x);
    }
    trace.logits = out_proj.forward(x);
    return trace;
  }

  // Distribution over length offsets in [-max_offset, +max_offset], from
  // mean-pooled encoder states.
  Tensor length_logits(const Tensor& enc_states) const {
    detail::require(cfg.variant == Variant::vanilla, "length prediction is vanilla-only");
    Tensor pooled = reshape(mean_axis(enc_states, 0), {1, cfg.block.d_model});
    return len_proj.forward(pooled);
  }

  // argmax offset (ties toward the smallest offset), clamped to length >= 1.
  int predict_length(const Tensor& enc_states, int src_len) const {
    const Tensor logits = length_logits(enc_states);
    const int classes = 2 * cfg.max_length_offset + 1;
    int best = 0;
    for (int k = 1; k < classes; ++k)
      if (logits.data()[static_cast<std::size_t>(k)] > logits.data()[static_cast<std::size_t>(best)]) best = k;
    return std::max(1, src_len + best - cfg.max_length_offset);
  }

  int length_target(int src_len, int tgt_len) const {
    const int k = cfg.max_length_offset;
    return std::clamp(tgt_len - src_len, -k, k) + k;
  }

  int decoder_length(int src_len, int tgt_len) const {
    return cfg.variant == Variant::ctc ? cfg.upsample_factor * src_len : tgt_len;
  }

  void visit_params(const ParamVisitor& fn) {
    fn("src_embed", src_embed);
    fn("tgt_embed", tgt_embed);
    for (std::size_t i = 0; i < enc_layers.size(); ++i)
      enc_layers[i].visit("encoder.layer" + std::to_string(i), fn);
    for (std::size_t i = 0; i < dec_layers.size(); ++i)
      dec_layers[i].visit("decoder.layer" + std::to_string(i), fn);
    out_proj.visit("out_proj", fn);
    if (cfg.variant == Variant::vanilla) len_proj.visit("length_pred", fn);
  }
};

// Label-smoothed token cross entropy (mean over positions) plus weighted
// length cross entropy. Teacher-forced: decoder length must equal the target
// length.
inline Tensor vanilla_nar_loss(const DecoderTrace& trace, const std::vector<int>& target_ids,
                               double label_smoothing, const Tensor& length_logits,
                               int length_gold_class, double length_weight) {
  detail::require(trace.logits.rows() >= static_cast<int>(target_ids.size()),
                  "vanilla_nar_loss: target longer than decoder output (" +
                      std::to_string(target_ids.size()) + " > " +
                      std::to_string(trace.logits.rows()) + ")");
  detail::require(trace.logits.rows() == static_cast<int>(target_ids.size()),
                  "vanilla_nar_loss: teacher-forced decode length mismatch");
  Tensor token_loss = cross_entropy_smoothed(trace.logits, target_ids, label_smoothing);
  Tensor len_loss = cross_entropy_smoothed(length_logits, {length_gold_class}, 0.0);
  return add(token_loss, scale(len_loss, length_weight));
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

// Log-softmax over the vocabulary with reserved ids the model should never
// emit pushed to -1e30. CTC keeps blank; unk stays available so decoding is
// total.
inline Tensor output_log_probs(const NARModel& model, const Tensor& logits) {
  Tensor lp = log_softmax(logits);
  const int v = lp.cols();
  for (int i = 0; i < lp.rows(); ++i) {
    double* row = lp.data().data() + static_cast<std::size_t>(i) * v;
    row[Vocab::pad] = -1e30;
    row[Vocab::bos] = -1e30;
    row[Vocab::eos] = -1e30;
    if (model.cfg.variant == Variant::vanilla) row[Vocab::blank] = -1e30;
  }
  return lp;
}

// Greedy decode; empty CTC output is replaced by a single unk so downstream
// metrics are total functions.
inline std::vector<int> nar_greedy_decode(const NARModel& model, const std::vector<int>& src_ids) {
  NoGradScope ng;
  const Tensor enc = model.encode(src_ids, nullptr, false);
  const int m = static_cast<int>(src_ids.size());
  const int t = model.cfg.variant == Variant::ctc ? model.cfg.upsample_factor * m
                                                  : model.predict_length(enc, m);
  const DecoderTrace trace = model.nar_decode(model.build_decoder_inputs(enc, t), enc, nullptr, false);
  const Tensor lp = output_log_probs(model, trace.logits);
  std::vector<int> out;
  if (model.cfg.variant == Variant::ctc) {
    out = ctc_greedy_decode(lp, Vocab::blank);
  } else {
    const int v = lp.cols();
    for (int i = 0; i < t; ++i) {
      const double* row = lp.data().data() + static_cast<std::size_t>(i) * v;
      int best = 0;
      for (int k = 1; k < v; ++k)
        if (row[k] > row[best]) best = k;
      out.push_back(best);
    }
  }
  if (out.empty()) out.push_back(Vocab::unk);
  return out;
}

inline std::vector<int> nar_beam_decode(const NARModel& model, const std::vector<int>& src_ids,
                                        int beam) {
  detail::require(model.cfg.variant == Variant::ctc,
                  "beam decoding applies to the CTC variant only");
  NoGradScope ng;
  const Tensor enc = model.encode(src_ids, nullptr, false);
  const int t = model.cfg.upsample_factor * static_cast<int>(src_ids.size());
  const DecoderTrace trace = model.nar_decode(model.build_decoder_inputs(enc, t), enc, nullptr, false);
  const Tensor lp = output_log_probs(model, trace.logits);
  std::vector<int> out = ctc_beam_search(lp, beam, Vocab::blank);
  if (out.empty()) out.push_back(Vocab::unk);
  return out;
}

}  // namespace narkit
