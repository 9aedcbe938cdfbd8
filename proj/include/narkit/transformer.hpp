// Reusable transformer pieces: multi-head attention, position-wise FFN,
// sinusoidal positions, encoder layer, decoder layer. Layers are stateless
// given their parameters and safe to run from multiple threads over disjoint
// tapes.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "narkit/rng.hpp"
#include "narkit/tensor.hpp"

namespace narkit {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct BlockConfig {
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  double dropout = 0.1;
  bool pre_norm = false;  // post-layer-norm by default, original placement

  void validate() const {
    detail::require(d_model > 0 && n_heads > 0 && d_ff > 0, "block config: positive dims required");
    detail::require(d_model % n_heads == 0, "block config: d_model " + std::to_string(d_model) +
                                                " not divisible by n_heads " +
                                                std::to_string(n_heads));
    detail::require(dropout >= 0.0 && dropout < 1.0, "block config: dropout must be in [0,1)");
  }
};

inline Tensor apply_dropout(const Tensor& x, double p, Rng* rng, bool training) {
  if (!training || rng == nullptr || p <= 0.0) return x;
  return dropout(x, p, true, [rng] { return rng->uniform(); });
}

// Boolean attention mask; allow(i,j) == true means query i may attend key j.
struct Mask {
  int len_q = 0;
  int len_k = 0;
  std::vector<std::uint8_t> allow;

  static Mask full(int q, int k) {
    Mask m{q, k, std::vector<std::uint8_t>(static_cast<std::size_t>(q) * k, 1)};
    return m;
  }

  static Mask causal(int n) {
    Mask m{n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * n + j] = 1;
    return m;
  }

  bool at(int i, int j) const { return allow[static_cast<std::size_t>(i) * len_k + j] != 0; }

  // Additive bias: 0 where allowed, a large negative number where masked.
  // (-1e30 instead of -inf keeps softmax gradients NaN-free.)
  Tensor bias() const {
    Tensor b = Tensor::zeros({len_q, len_k});
    bool row_ok;
    for (int i = 0; i < len_q; ++i) {
      row_ok = false;
      for (int j = 0; j < len_k; ++j) {
        if (at(i, j))
          row_ok = true;
        else
          b.data()[static_cast<std::size_t>(i) * len_k + j] = -1e30;
      }
      detail::require(row_ok, "mask: query row " + std::to_string(i) +
                                  " has every position masked (undefined softmax)");
    }
    return b;
  }
};

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // out

  void init(Rng& rng, int in, int out) {
    const double bound = std::sqrt(6.0 / (in + out));
    w = rng.uniform_tensor({in, out}, -bound, bound);
    w.requires_grad = true;
    b = Tensor::zeros({out});
    b.requires_grad = true;
  }

  Tensor forward(const Tensor& x) const { return add_bias(matmul(x, w), b); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  void init(int d) {
    gain = Tensor::full({d}, 1.0);
    gain.requires_grad = true;
    bias = Tensor::zeros({d});
    bias.requires_grad = true;
  }

  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

// Scaled dot-product attention with input/output projections. Queries come
// from `query_states`, keys and values from `memory_states`.
struct MultiHeadAttention {
  int d_model = 0;
  int n_heads = 0;
  Linear wq, wk, wv, wo;

  void init(Rng& rng, const BlockConfig& cfg) {
    cfg.validate();
    d_model = cfg.d_model;
    n_heads = cfg.n_heads;
    wq.init(rng, d_model, d_model);
    wk.init(rng, d_model, d_model);
    wv.init(rng, d_model, d_model);
    wo.init(rng, d_model, d_model);
  }

  Tensor forward(const Tensor& query_states, const Tensor& memory_states,
                 const Mask& mask) const {
    detail::require(query_states.cols() == d_model && memory_states.cols() == d_model,
                    "attention: inputs must have width " + std::to_string(d_model));
    detail::require(mask.len_q == query_states.rows() && mask.len_k == memory_states.rows(),
                    "attention: mask " + std::to_string(mask.len_q) + "x" +
                        std::to_string(mask.len_k) + " does not fit q=" +
                        std::to_string(query_states.rows()) + " k=" +
                        std::to_string(memory_states.rows()));
    const int d_head = d_model / n_heads;
    const Tensor q = wq.forward(query_states);
    const Tensor k = wk.forward(memory_states);
    const Tensor v = wv.forward(memory_states);
    const Tensor mask_bias = mask.bias();
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      const int c0 = h * d_head, c1 = (h + 1) * d_head;
      Tensor qh = slice_cols(q, c0, c1);
      Tensor kh = slice_cols(k, c0, c1);
      Tensor vh = slice_cols(v, c0, c1);
      Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(d_head));
      Tensor probs = softmax_rows(add(scores, mask_bias));
      ctx.push_back(matmul(probs, vh));
    }
    return wo.forward(concat_cols(ctx));
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    wq.visit(prefix + ".wq", fn);
    wk.visit(prefix + ".wk", fn);
    wv.visit(prefix + ".wv", fn);
    wo.visit(prefix + ".wo", fn);
  }
};

struct FeedForward {
  Linear w1, w2;

  void init(Rng& rng, const BlockConfig& cfg) {
    w1.init(rng, cfg.d_model, cfg.d_ff);
    w2.init(rng, cfg.d_ff, cfg.d_model);
  }

  Tensor forward(const Tensor& x) const { return w2.forward(relu(w1.forward(x))); }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    w1.visit(prefix + ".w1", fn);
    w2.visit(prefix + ".w2", fn);
  }
};

// Self-attention + FFN with residual connections. Residual paths preserve
// shape: input and output are both len x d_model.
struct EncoderLayer {
  BlockConfig cfg;
  MultiHeadAttention self_attn;
  FeedForward ffn;
  LayerNorm ln1, ln2;

  void init(Rng& rng, const BlockConfig& c) {
    cfg = c;
    self_attn.init(rng, c);
    ffn.init(rng, c);
    ln1.init(c.d_model);
    ln2.init(c.d_model);
  }

  Tensor forward(const Tensor& x, const Mask& src_mask, Rng* rng, bool training) const {
    auto sub = [&](const Tensor& in, const LayerNorm& ln, auto&& f) {
      if (cfg.pre_norm) return add(in, apply_dropout(f(ln.forward(in)), cfg.dropout, rng, training));
      return ln.forward(add(in, apply_dropout(f(in), cfg.dropout, rng, training)));
    };
    Tensor h = sub(x, ln1, [&](const Tensor& t) { return self_attn.forward(t, t, src_mask); });
    return sub(h, ln2, [&](const Tensor& t) { return ffn.forward(t); });
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    ffn.visit(prefix + ".ffn", fn);
    ln1.visit(prefix + ".ln1", fn);
    ln2.visit(prefix + ".ln2", fn);
  }
};

// Self-attention, cross-attention to `memory`, then FFN. The self mask is
// causal for AR use; a full mask gives the non-causal NAR decoder layer.
struct DecoderLayer {
  BlockConfig cfg;
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  FeedForward ffn;
  LayerNorm ln1, ln2, ln3;

  void init(Rng& rng, const BlockConfig& c) {
    cfg = c;
    self_attn.init(rng, c);
    cross_attn.init(rng, c);
    ffn.init(rng, c);
    ln1.init(c.d_model);
    ln2.init(c.d_model);
    ln3.init(c.d_model);
  }

  Tensor forward(const Tensor& x, const Tensor& memory, const Mask& self_mask,
                 const Mask& cross_mask, Rng* rng, bool training) const {
    auto sub = [&](const Tensor& in, const LayerNorm& ln, auto&& f) {
      if (cfg.pre_norm) return add(in, apply_dropout(f(ln.forward(in)), cfg.dropout, rng, training));
      return ln.forward(add(in, apply_dropout(f(in), cfg.dropout, rng, training)));
    };
    Tensor h = sub(x, ln1, [&](const Tensor& t) { return self_attn.forward(t, t, self_mask); });
    h = sub(h, ln2, [&](const Tensor& t) { return cross_attn.forward(t, memory, cross_mask); });
    return sub(h, ln3, [&](const Tensor& t) { return ffn.forward(t); });
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    self_attn.visit(prefix + ".self_attn", fn);
    cross_attn.visit(prefix + ".cross_attn", fn);
    ffn.visit(prefix + ".ffn", fn);
    ln1.visit(prefix + ".ln1", fn);
    ln2.visit(prefix + ".ln2", fn);
    ln3.visit(prefix + ".ln3", fn);
  }
};

// Fixed sin/cos table: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
// PE[pos, 2i+1] = cos(same). Deterministic across calls, values in [-1, 1].
inline Tensor sinusoidal_positions(int length, int d_model) {
  detail::require(length > 0 && d_model > 0, "sinusoidal_positions: positive dims required");
  Tensor pe = Tensor::zeros({length, d_model});
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe.data()[static_cast<std::size_t>(pos) * d_model + i] = std::sin(angle);
      if (i + 1 < d_model)
        pe.data()[static_cast<std::size_t>(pos) * d_model + i + 1] = std::cos(angle);
    }
  return pe;
}

}  // namespace narkit
