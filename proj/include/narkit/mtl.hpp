// Weak AR decoder heads over per-layer NAR hidden states: the combined
// multi-task loss, parameter sharing across heads, and per-step head layer
// dropout. Heads exist only at training time; inference never touches them.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "narkit/model.hpp"
#include "narkit/transformer.hpp"

namespace narkit {

struct MTLConfig {
  bool enabled = false;
  double lambda = 0.5;
  bool share_params = true;
  bool layer_dropout = true;
  int ar_head_depth = 1;  // depth > 1 exists for the ablation only
  bool stop_gradient = false;

  void validate() const {
    detail::require(lambda >= 0.0 && lambda <= 1.0,
                    "mtl config: lambda " + std::to_string(lambda) + " outside [0,1]");
    detail::require(ar_head_depth >= 1, "mtl config: ar_head_depth must be >= 1");
  }
};

// One causal transformer decoder layer (by default) plus an output projection.
// The input embedding is the NAR model's target embedding, so the head owns
// almost nothing of its own.
struct WeakARHead {
  std::vector<DecoderLayer> layers;
  Linear out_proj;

  void init(Rng& rng, const BlockConfig& block, int depth, int vocab_size) {
    layers.resize(static_cast<std::size_t>(depth));
    for (auto& l : layers) l.init(rng, block);
    out_proj.init(rng, block.d_model, vocab_size);
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    out_proj.visit(prefix + ".out_proj", fn);
  }
};

// Teacher-forced causal logits over the gold target, with the paired NAR
// layer's hidden states as the only cross-attention memory. The head never
// sees the encoder; gradients flow through `nar_hidden` into the NAR stack
// unless stop_gradient is set.
inline Tensor ar_head_forward(const WeakARHead& head, const Tensor& nar_hidden,
                              const std::vector<int>& target_ids, const Tensor& tgt_embed,
                              const BlockConfig& block, bool stop_gradient, Rng* rng,
                              bool training) {
  detail::require(!target_ids.empty(), "ar_head_forward: empty target");
  const int n = static_cast<int>(target_ids.size());
  std::vector<int> shifted(static_cast<std::size_t>(n));
  shifted[0] = Vocab::bos;
  for (int i = 1; i < n; ++i) shifted[static_cast<std::size_t>(i)] = target_ids[static_cast<std::size_t>(i - 1)];
  const double s = std::sqrt(static_cast<double>(block.d_model));
  Tensor x = add(scale(embedding(tgt_embed, shifted), s),
                 sinusoidal_positions(n, block.d_model));
  x = apply_dropout(x, block.dropout, rng, training);
  const Tensor memory = stop_gradient ? detach(nar_hidden) : nar_hidden;
  const Mask self_mask = Mask::causal(n);
  const Mask cross_mask = Mask::full(n, memory.rows());
  for (const auto& layer : head.layers)
    x = layer.forward(x, memory, self_mask, cross_mask, rng, training);
  return head.out_proj.forward(x);
}

// The bank of heads paired with the N NAR decoder layers. With parameter
// sharing, one physical head serves every layer, so head cost is independent
// of N.
struct ARHeadBank {
  MTLConfig cfg;
  int n_layers = 0;
  std::vector<WeakARHead> heads;

  void init(const MTLConfig& c, int n_nar_layers, Rng& rng, const BlockConfig& block,
            int vocab_size) {
    c.validate();
    cfg = c;
    n_layers = n_nar_layers;
    heads.resize(cfg.share_params ? 1 : static_cast<std::size_t>(n_nar_layers));
    for (auto& h : heads) h.init(rng, block, cfg.ar_head_depth, vocab_size);
  }

  const WeakARHead& head_for_layer(int layer) const {
    detail::require(layer >= 0 && layer < n_layers, "head_for_layer: bad layer index");
    return heads[cfg.share_params ? 0 : static_cast<std::size_t>(layer)];
  }

  void visit_params(const ParamVisitor& fn) {
    if (cfg.share_params) {
      heads[0].visit("ar_heads.shared", fn);
    } else {
      for (std::size_t i = 0; i < heads.size(); ++i)
        heads[i].visit("ar_heads.h" + std::to_string(i), fn);
    }
  }
};

// Uniform without-replacement selection of ceil(N/2) heads, resampled every
// training step. With layer_dropout off, every head is selected.
inline std::vector<int> select_heads(int n_layers, bool layer_dropout, Rng& rng) {
  detail::require(n_layers >= 1, "select_heads: need at least one layer");
  if (!layer_dropout) {
    std::vector<int> all(static_cast<std::size_t>(n_layers));
    for (int i = 0; i < n_layers; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  return rng.sample_without_replacement(n_layers, (n_layers + 1) / 2);
}

// L = lambda * L_NAR + (1-lambda) * (N/|S|) * sum_{i in S} L_AR^(i).
// The N/|S| rescale keeps the summed objective unbiased under layer dropout.
// At lambda = 1 the AR terms are dropped entirely, so their gradients are
// exactly zero.
inline Tensor mtl_loss(const Tensor& nar_loss, const std::vector<std::pair<int, Tensor>>& ar_losses,
                       double lambda, int n_layers) {
  detail::require(lambda >= 0.0 && lambda <= 1.0,
                  "mtl_loss: lambda " + std::to_string(lambda) + " outside [0,1]");
  Tensor total = scale(nar_loss, lambda);
  if (lambda < 1.0 && !ar_losses.empty()) {
    Tensor ar_sum = ar_losses[0].second;
    for (std::size_t i = 1; i < ar_losses.size(); ++i) ar_sum = add(ar_sum, ar_losses[i].second);
    const double rescale = static_cast<double>(n_layers) / static_cast<double>(ar_losses.size());
    total = add(total, scale(ar_sum, (1.0 - lambda) * rescale));
  }
  return total;
}

}  // namespace narkit
