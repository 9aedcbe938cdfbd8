// Training orchestration: the optimization loop with multi-task AR heads and
// optional glancing, periodic dev evaluation with best-k checkpoint keeping,
// teacher training, and sequence-level distillation. One writer (the loop)
// owns the parameters; evaluation decodes run on the same thread here.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <string>
#include <vector>

#include "narkit/checkpoint.hpp"
#include "narkit/config.hpp"
#include "narkit/ctc.hpp"
#include "narkit/data.hpp"
#include "narkit/glancing.hpp"
#include "narkit/metrics.hpp"
#include "narkit/model.hpp"
#include "narkit/mtl.hpp"
#include "narkit/optim.hpp"
#include "narkit/teacher.hpp"

namespace narkit {

struct TrainResult {
  std::string out_dir;
  std::string final_path;     // checkpoint at the last step
  std::string averaged_path;  // mean of the best-k checkpoints by dev BLEU
  double best_dev_bleu = 0.0;
  long skipped_samples = 0;
  std::vector<std::string> kept_paths;
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> model_config_snapshot(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> snap;
  for (const char* key :
       {"model.variant", "model.d_model", "model.n_heads", "model.d_ff", "model.dropout",
        "model.pre_norm", "model.n_enc_layers", "model.n_dec_layers", "model.upsample_factor",
        "model.max_length_offset"})
    snap.emplace_back(key, cfg.get(key));
  return snap;
}

inline BlockConfig block_from_config(const Config& cfg) {
  BlockConfig b;
  b.d_model = static_cast<int>(cfg.get_int("model.d_model"));
  b.n_heads = static_cast<int>(cfg.get_int("model.n_heads"));
  b.d_ff = static_cast<int>(cfg.get_int("model.d_ff"));
  b.dropout = cfg.get_double("model.dropout");
  b.pre_norm = cfg.get_bool("model.pre_norm");
  return b;
}

inline MTLConfig mtl_from_config(const Config& cfg) {
  MTLConfig m;
  m.enabled = cfg.get_bool("mtl.enabled");
  m.lambda = cfg.get_double("mtl.lambda");
  m.share_params = cfg.get_bool("mtl.share_params");
  m.layer_dropout = cfg.get_bool("mtl.layer_dropout");
  m.ar_head_depth = static_cast<int>(cfg.get_int("mtl.ar_head_depth"));
  m.stop_gradient = cfg.get_bool("mtl.stop_gradient");
  m.validate();
  return m;
}

inline AdamConfig adam_from_config(const Config& cfg) {
  AdamConfig a;
  a.lr = cfg.get_double("train.lr");
  a.beta1 = cfg.get_double("train.beta1");
  a.beta2 = cfg.get_double("train.beta2");
  a.eps = cfg.get_double("train.eps");
  a.weight_decay = cfg.get_double("train.weight_decay");
  a.clip_norm = cfg.get_double("train.clip_norm");
  return a;
}

// Best-k tracker; on eviction the file is removed so the run directory only
// ever holds the keepers plus final/averaged checkpoints.
struct BestK {
  int k;
  std::vector<std::pair<double, std::string>> kept;  // (dev bleu, path)

  bool consider(double bleu, const std::string& path) {
    if (static_cast<int>(kept.size()) < k) {
      kept.emplace_back(bleu, path);
      return true;
    }
    auto worst = kept.begin();
    for (auto it = kept.begin(); it != kept.end(); ++it)
      if (it->first < worst->first) worst = it;
    if (bleu <= worst->first) return false;
    std::filesystem::remove(worst->second);
    *worst = {bleu, path};
    return true;
  }
};

}  // namespace detail

// Greedy-decodes a corpus and reports BLEU + repetition rate against the
// reference token lines.
struct EvalResult {
  double bleu = 0.0;
  double repetition = 0.0;
};

inline EvalResult evaluate_nar(const NARModel& model, const Vocab& vocab,
                               const std::vector<EncodedPair>& pairs,
                               const std::vector<TokenLine>& ref_lines) {
  std::vector<TokenSeq> hyps, refs;
  hyps.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    hyps.push_back(vocab.decode_ids(nar_greedy_decode(model, pairs[i].src)));
    refs.push_back(ref_lines[i]);
  }
  return {bleu(hyps, refs), repetition_rate(hyps)};
}

inline EvalResult evaluate_teacher(const TeacherModel& model, const Vocab& vocab,
                                   const std::vector<EncodedPair>& pairs,
                                   const std::vector<TokenLine>& ref_lines) {
  std::vector<TokenSeq> hyps, refs;
  hyps.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<int> out = teacher_greedy_decode(model, pairs[i].src);
    if (out.empty()) out.push_back(Vocab::unk);
    hyps.push_back(vocab.decode_ids(out));
    refs.push_back(ref_lines[i]);
  }
  return {bleu(hyps, refs), repetition_rate(hyps)};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------
inline TrainResult run_training(const Config& cfg, const ParallelCorpus& train_corpus,
                                const ParallelCorpus& dev_corpus, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  detail::require(train_corpus.size() > 0, "train: empty training corpus");
  detail::require(dev_corpus.size() > 0, "train: empty dev corpus");

  const std::string variant_str = cfg.get("model.variant");
  const bool is_teacher = variant_str == "teacher";
  const long max_steps = cfg.get_int("train.max_steps");
  const long eval_interval = std::max<long>(1, cfg.get_int("train.eval_interval"));
  const long warmup = std::max<long>(1, static_cast<long>(cfg.get_double("train.warmup_frac") *
                                                          static_cast<double>(max_steps)));
  const bool inverse_sqrt = cfg.get("train.schedule") == "inverse_sqrt";
  detail::require(cfg.get("train.schedule") == "fixed" || inverse_sqrt,
                  "train.schedule must be fixed or inverse_sqrt");
  const double base_lr = cfg.get_double("train.lr");
  const double label_smoothing = cfg.get_double("train.label_smoothing");
  const double length_loss_weight = cfg.get_double("train.length_loss_weight");
  const int batch_tokens = static_cast<int>(cfg.get_int("train.batch_tokens"));
  const int max_batch_sentences = static_cast<int>(cfg.get_int("train.max_batch_sentences"));

  Rng rng(static_cast<std::uint64_t>(cfg.get_int("train.seed")));

  Vocab vocab = build_vocab(train_corpus, static_cast<int>(cfg.get_int("data.max_vocab")));
  const std::vector<EncodedPair> train_pairs = encode_corpus(train_corpus, vocab);
  const std::vector<EncodedPair> dev_pairs = encode_corpus(dev_corpus, vocab);

  // Models. AR heads exist only when they can contribute: with lambda = 1 the
  // run is constructed exactly like the baseline, which is what makes the
  // degenerate-weight equivalence hold bitwise.
  const MTLConfig mtl = detail::mtl_from_config(cfg);
  const bool use_heads = !is_teacher && mtl.enabled && mtl.lambda < 1.0;

  NARModel model;
  TeacherModel teacher;
  ARHeadBank bank;
  std::vector<std::pair<std::string, Tensor*>> named_params;
  auto collector = [&](const std::string& name, Tensor& t) { named_params.emplace_back(name, &t); };

  if (is_teacher) {
    TeacherConfig tc;
    tc.vocab_size = vocab.size();
    tc.n_enc_layers = static_cast<int>(cfg.get_int("model.n_enc_layers"));
    tc.n_dec_layers = static_cast<int>(cfg.get_int("model.n_dec_layers"));
    tc.block = detail::block_from_config(cfg);
    teacher.init(tc, rng);
    teacher.visit_params(collector);
  } else {
    NARConfig nc;
    nc.variant = parse_variant(variant_str);
    nc.vocab_size = vocab.size();
    nc.n_enc_layers = static_cast<int>(cfg.get_int("model.n_enc_layers"));
    nc.n_dec_layers = static_cast<int>(cfg.get_int("model.n_dec_layers"));
    nc.block = detail::block_from_config(cfg);
    nc.upsample_factor = static_cast<int>(cfg.get_int("model.upsample_factor"));
    nc.max_length_offset = static_cast<int>(cfg.get_int("model.max_length_offset"));
    model.init(nc, rng);
    model.visit_params(collector);
    if (use_heads) {
      bank.init(mtl, nc.n_dec_layers, rng, nc.block, vocab.size());
      bank.visit_params(collector);
    }
  }
  std::vector<Tensor*> params;
  params.reserve(named_params.size());
  for (auto& [name, t] : named_params) params.push_back(t);

  AdamW opt(detail::adam_from_config(cfg), params);

  GlanceSchedule glance;
  glance.enabled = !is_teacher && cfg.get_bool("glancing.enabled");
  glance.ratio_start = cfg.get_double("glancing.ratio_start");
  glance.ratio_end = cfg.get_double("glancing.ratio_end");
  glance.anneal_steps = cfg.get_int("glancing.anneal_steps");
  if (glance.anneal_steps <= 0) glance.anneal_steps = max_steps / 2;

  std::ofstream metrics_log(out_dir + "/metrics.log");
  detail::require(metrics_log.good(), "train: cannot open metrics log in " + out_dir);
  metrics_log << std::setprecision(10);

  auto snapshot = [&](long step) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.rng_state = rng.state();
    ckpt.config = detail::model_config_snapshot(cfg);
    ckpt.vocab_tokens = vocab.tokens;
    for (auto& [name, t] : named_params) ckpt.params.items.emplace_back(name, *t);
    return ckpt;
  };

  detail::BestK best{static_cast<int>(cfg.get_int("train.keep_best")), {}};
  TrainResult result;
  result.out_dir = out_dir;

  Tape tape;
  TapeScope scope(tape);

  std::vector<Batch> batches;
  std::size_t batch_cursor = 0;
  double window_loss = 0.0, window_nar = 0.0, window_ar = 0.0;
  long window_count = 0;

  for (long step = 1; step <= max_steps; ++step) {
    if (batch_cursor >= batches.size()) {
      batches = make_epoch_batches(train_pairs, batch_tokens, max_batch_sentences, rng);
      batch_cursor = 0;
    }
    const Batch& batch = batches[batch_cursor++];

    tape.reset();
    const double glance_ratio = glance.ratio_at(step - 1);
    std::vector<int> selected;
    if (use_heads) selected = select_heads(model.cfg.n_dec_layers, mtl.layer_dropout, rng);

    std::vector<Tensor> sent_losses;
    double nar_component = 0.0, ar_component = 0.0;
    for (int i = 0; i < batch.size; ++i) {
      const std::vector<int> src = batch.src_sentence(i);
      const std::vector<int> tgt = batch.tgt_sentence(i);

      if (is_teacher) {
        Tensor loss = teacher.training_loss(src, tgt, label_smoothing, &rng);
        nar_component += loss.item();
        sent_losses.push_back(loss);
        continue;
      }

      const int dec_len = model.decoder_length(static_cast<int>(src.size()),
                                               static_cast<int>(tgt.size()));
      if (model.cfg.variant == Variant::ctc && ctc_min_frames(tgt) > dec_len) {
        ++result.skipped_samples;
        metrics_log << "skip step=" << step << " reason=unrepresentable_target len="
                    << tgt.size() << " frames=" << dec_len << "\n";
        continue;
      }

      // Optional glancing: a no-gradient, no-dropout first pass picks the
      // positions; the training pass runs on the overridden inputs.
      std::map<int, int> overrides;
      if (glance.enabled && glance_ratio > 0.0) {
        NoGradScope ng;
        const Tensor enc0 = model.encode(src, nullptr, false);
        const DecoderTrace first =
            model.nar_decode(model.build_decoder_inputs(enc0, dec_len), enc0, nullptr, false);
        overrides = glance_positions(first, tgt, glance_ratio, model.cfg.variant, Vocab::blank, rng);
      }

      const Tensor enc = model.encode(src, &rng, true);
      Tensor dec_in = model.build_decoder_inputs(enc, dec_len);
      dec_in = apply_glance_overrides(model, dec_in, overrides);
      const DecoderTrace trace = model.nar_decode(dec_in, enc, &rng, true);

      Tensor nar_loss;
      if (model.cfg.variant == Variant::ctc) {
        CtcLossResult ctc = ctc_loss(log_softmax(trace.logits), tgt, Vocab::blank);
        // representability was pre-checked; normalize to a per-token scale
        nar_loss = scale(ctc.loss, 1.0 / static_cast<double>(tgt.size()));
      } else {
        nar_loss = vanilla_nar_loss(trace, tgt, label_smoothing, model.length_logits(enc),
                                    model.length_target(static_cast<int>(src.size()),
                                                        static_cast<int>(tgt.size())),
                                    length_loss_weight);
      }

      Tensor total = nar_loss;
      if (use_heads) {
        std::vector<std::pair<int, Tensor>> ar_losses;
        for (int layer : selected) {
          Tensor logits = ar_head_forward(bank.head_for_layer(layer), trace.hidden[static_cast<std::size_t>(layer)],
                                          tgt, model.tgt_embed, model.cfg.block,
                                          mtl.stop_gradient, &rng, true);
          ar_losses.emplace_back(layer, cross_entropy_smoothed(logits, tgt, label_smoothing));
        }
        for (auto& [layer, l] : ar_losses) ar_component += l.item();
        total = mtl_loss(nar_loss, ar_losses, mtl.lambda, model.cfg.n_dec_layers);
      }
      nar_component += nar_loss.item();
      sent_losses.push_back(total);
    }

    if (sent_losses.empty()) continue;  // every sample skipped

    Tensor batch_loss = sent_losses[0];
    for (std::size_t i = 1; i < sent_losses.size(); ++i)
      batch_loss = add(batch_loss, sent_losses[i]);
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(sent_losses.size()));

    tape.backward(batch_loss);
    const double lr = lr_at(base_lr, step - 1, warmup, inverse_sqrt);
    if (!opt.step(tape, lr)) {
      metrics_log << "skip step=" << step << " reason=non_finite_gradient\n";
      continue;
    }

    window_loss += batch_loss.item();
    window_nar += nar_component / static_cast<double>(sent_losses.size());
    window_ar += ar_component / static_cast<double>(sent_losses.size());
    ++window_count;

    if (step % eval_interval == 0 || step == max_steps) {
      EvalResult ev = is_teacher ? evaluate_teacher(teacher, vocab, dev_pairs, dev_corpus.tgt)
                                 : evaluate_nar(model, vocab, dev_pairs, dev_corpus.tgt);
      const double denom = window_count > 0 ? static_cast<double>(window_count) : 1.0;
      metrics_log << "eval step=" << step << " lr=" << lr << " loss=" << window_loss / denom
                  << " loss_nar=" << window_nar / denom << " loss_ar=" << window_ar / denom
                  << " dev_bleu=" << ev.bleu << " repetition_rate=" << ev.repetition
                  << " skipped=" << result.skipped_samples << "\n";
      metrics_log.flush();
      window_loss = window_nar = window_ar = 0.0;
      window_count = 0;
      const std::string path = out_dir + "/ckpt_" + std::to_string(step) + ".nkpt";
      Checkpoint ckpt = snapshot(step);
      save_checkpoint(ckpt, path);
      if (!best.consider(ev.bleu, path)) std::filesystem::remove(path);
      result.best_dev_bleu = std::max(result.best_dev_bleu, ev.bleu);
    }
  }

  result.final_path = out_dir + "/final.nkpt";
  save_checkpoint(snapshot(max_steps), result.final_path);

  std::vector<std::string> kept;
  for (auto& [b, p] : best.kept) kept.push_back(p);
  std::sort(kept.begin(), kept.end());
  result.kept_paths = kept;
  result.averaged_path = out_dir + "/avg_best.nkpt";
  if (!kept.empty())
    save_checkpoint(average_checkpoints(kept), result.averaged_path);
  else
    save_checkpoint(snapshot(max_steps), result.averaged_path);
  return result;
}

// CLI-facing wrapper: expects <prefix>.train.{src,tgt} and <prefix>.dev.{src,tgt}.
inline TrainResult train_from_files(const Config& cfg, const std::string& data_prefix,
                                    const std::string& out_dir) {
  const ParallelCorpus train_corpus =
      load_corpus(data_prefix + ".train.src", data_prefix + ".train.tgt");
  const ParallelCorpus dev_corpus = load_corpus(data_prefix + ".dev.src", data_prefix + ".dev.tgt");
  return run_training(cfg, train_corpus, dev_corpus, out_dir);
}

// ---------------------------------------------------------------------------
// Rebuilding models from checkpoints
// ---------------------------------------------------------------------------
namespace detail {

template <typename Model>
inline void assign_params(Model& model, const ParamMap& params) {
  model.visit_params([&](const std::string& name, Tensor& t) {
    const Tensor* src = params.find(name);
    detail::require(src != nullptr, "checkpoint: missing parameter '" + name + "'");
    detail::require(src->shape == t.shape, "checkpoint: shape mismatch for '" + name + "'");
    t.payload = std::make_shared<std::vector<double>>(src->data());
  });
}

}  // namespace detail

inline NARModel nar_from_checkpoint(const Checkpoint& ckpt) {
  detail::require(ckpt.config_value("model.variant") != "teacher",
                  "nar_from_checkpoint: checkpoint holds a teacher model");
  NARConfig nc;
  nc.variant = parse_variant(ckpt.config_value("model.variant"));
  nc.vocab_size = Vocab::reserved + static_cast<int>(ckpt.vocab_tokens.size());
  nc.n_enc_layers = std::stoi(ckpt.config_value("model.n_enc_layers"));
  nc.n_dec_layers = std::stoi(ckpt.config_value("model.n_dec_layers"));
  nc.block.d_model = std::stoi(ckpt.config_value("model.d_model"));
  nc.block.n_heads = std::stoi(ckpt.config_value("model.n_heads"));
  nc.block.d_ff = std::stoi(ckpt.config_value("model.d_ff"));
  nc.block.dropout = std::stod(ckpt.config_value("model.dropout"));
  nc.block.pre_norm = ckpt.config_value("model.pre_norm") == "true";
  nc.upsample_factor = std::stoi(ckpt.config_value("model.upsample_factor"));
  nc.max_length_offset = std::stoi(ckpt.config_value("model.max_length_offset"));
  Rng scratch(0);
  NARModel model;
  model.init(nc, scratch);
  detail::assign_params(model, ckpt.params);
  return model;
}

inline TeacherModel teacher_from_checkpoint(const Checkpoint& ckpt) {
  detail::require(ckpt.config_value("model.variant") == "teacher",
                  "teacher_from_checkpoint: checkpoint does not hold a teacher model");
  TeacherConfig tc;
  tc.vocab_size = Vocab::reserved + static_cast<int>(ckpt.vocab_tokens.size());
  tc.n_enc_layers = std::stoi(ckpt.config_value("model.n_enc_layers"));
  tc.n_dec_layers = std::stoi(ckpt.config_value("model.n_dec_layers"));
  tc.block.d_model = std::stoi(ckpt.config_value("model.d_model"));
  tc.block.n_heads = std::stoi(ckpt.config_value("model.n_heads"));
  tc.block.d_ff = std::stoi(ckpt.config_value("model.d_ff"));
  tc.block.dropout = std::stod(ckpt.config_value("model.dropout"));
  tc.block.pre_norm = ckpt.config_value("model.pre_norm") == "true";
  Rng scratch(0);
  TeacherModel model;
  model.init(tc, scratch);
  detail::assign_params(model, ckpt.params);
  return model;
}

// ---------------------------------------------------------------------------
// Distillation and file decoding
// ---------------------------------------------------------------------------

// Replaces every target with the teacher's beam output for its source;
// sources pass through unchanged. Duplicate sources are decoded once.
inline ParallelCorpus distill(const Checkpoint& teacher_ckpt, const ParallelCorpus& corpus,
                              int beam) {
  const TeacherModel teacher = teacher_from_checkpoint(teacher_ckpt);
  const Vocab vocab = teacher_ckpt.vocab();
  ParallelCorpus out;
  out.src = corpus.src;
  out.tgt.reserve(corpus.size());
  std::map<std::vector<int>, TokenLine> cache;
  for (const auto& line : corpus.src) {
    const std::vector<int> src = vocab.encode_tokens(line);
    auto it = cache.find(src);
    if (it == cache.end()) {
      std::vector<int> ids = teacher_beam_decode(teacher, src, beam);
      if (ids.empty()) ids.push_back(Vocab::unk);
      it = cache.emplace(src, vocab.decode_ids(ids)).first;
    }
    out.tgt.push_back(it->second);
  }
  return out;
}

enum class DecodeMode { greedy, beam };

// Decode one source-token file against a checkpoint; AR-head parameters are
// stripped on load.
inline std::vector<TokenLine> decode_lines(const Checkpoint& ckpt_in,
                                           const std::vector<TokenLine>& src_lines,
                                           DecodeMode mode, int beam) {
  Checkpoint ckpt = ckpt_in;
  ckpt.params = strip_heads(ckpt.params);
  const Vocab vocab = ckpt.vocab();
  std::vector<TokenLine> out;
  out.reserve(src_lines.size());
  if (ckpt.config_value("model.variant") == "teacher") {
    const TeacherModel model = teacher_from_checkpoint(ckpt);
    for (const auto& line : src_lines) {
      std::vector<int> ids = mode == DecodeMode::beam
                                 ? teacher_beam_decode(model, vocab.encode_tokens(line), beam)
                                 : teacher_greedy_decode(model, vocab.encode_tokens(line));
      if (ids.empty()) ids.push_back(Vocab::unk);
      out.push_back(vocab.decode_ids(ids));
    }
    return out;
  }
  const NARModel model = nar_from_checkpoint(ckpt);
  detail::require(mode == DecodeMode::greedy || model.cfg.variant == Variant::ctc,
                  "decode: beam mode applies to ctc (or teacher) checkpoints only");
  for (const auto& line : src_lines) {
    const std::vector<int> src = vocab.encode_tokens(line);
    const std::vector<int> ids = mode == DecodeMode::beam ? nar_beam_decode(model, src, beam)
                                                          : nar_greedy_decode(model, src);
    out.push_back(vocab.decode_ids(ids));
  }
  return out;
}

}  // namespace narkit
