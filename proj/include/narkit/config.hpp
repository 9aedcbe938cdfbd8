// Flat `section.key = value` configuration with a fixed key registry.
// Unknown keys are an error that lists every valid key, and all defaults are
// printable, so experiments are self-documenting.
#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "narkit/tensor.hpp"

namespace narkit {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> keys = {
      {"model.variant", "vanilla", "vanilla | ctc | teacher"},
      {"model.d_model", "64", "embedding width"},
      {"model.n_heads", "4", "attention head count"},
      {"model.d_ff", "128", "feed-forward inner width"},
      {"model.dropout", "0.1", "dropout probability in [0,1)"},
      {"model.pre_norm", "false", "pre-layer-norm instead of post"},
      {"model.n_enc_layers", "2", "encoder depth"},
      {"model.n_dec_layers", "2", "decoder depth (N heads for MTL)"},
      {"model.upsample_factor", "2", "CTC decoder length multiplier"},
      {"model.max_length_offset", "8", "vanilla length classifier range"},
      {"mtl.enabled", "false", "attach weak AR decoder heads during training"},
      {"mtl.lambda", "0.5", "weight on the NAR loss, in [0,1]"},
      {"mtl.share_params", "true", "tie all AR heads to one parameter set"},
      {"mtl.layer_dropout", "true", "train ceil(N/2) randomly chosen heads per step"},
      {"mtl.ar_head_depth", "1", "decoder layers per AR head (ablation only)"},
      {"mtl.stop_gradient", "false", "block head gradients at the NAR hidden states"},
      {"glancing.enabled", "false", "two-pass glancing training"},
      {"glancing.ratio_start", "0.5", "glancing ratio at step 0"},
      {"glancing.ratio_end", "0.3", "glancing ratio after annealing"},
      {"glancing.anneal_steps", "0", "linear anneal span; 0 = half of train.max_steps"},
      {"train.seed", "1", "run seed (init, dropout, batching, sampling)"},
      {"train.max_steps", "1200", "optimizer steps"},
      {"train.batch_tokens", "512", "target-token budget per batch"},
      {"train.max_batch_sentences", "64", "sentence cap per batch"},
      {"train.lr", "0.001", "base learning rate"},
      {"train.schedule", "fixed", "fixed | inverse_sqrt"},
      {"train.warmup_frac", "0.04", "linear warmup fraction of max_steps"},
      {"train.beta1", "0.9", "Adam beta1"},
      {"train.beta2", "0.999", "Adam beta2"},
      {"train.eps", "1e-8", "Adam epsilon"},
      {"train.weight_decay", "0.01", "decoupled weight decay"},
      {"train.label_smoothing", "0.1", "label smoothing epsilon"},
      {"train.length_loss_weight", "0.1", "weight of the vanilla length loss"},
      {"train.clip_norm", "0.0", "global gradient norm clip; 0 disables"},
      {"train.eval_interval", "150", "steps between dev evaluations"},
      {"train.keep_best", "5", "checkpoints kept (and averaged) by dev BLEU"},
      {"data.max_vocab", "32000", "vocabulary size cap including reserved ids"},
  };
  return keys;
}

class Config {
 public:
  Config() = default;

  static std::string valid_keys_message() {
    std::string msg = "valid keys:";
    for (const auto& k : config_registry()) msg += std::string("\n  ") + k.name;
    return msg;
  }

  void set(const std::string& key, const std::string& value) {
    detail::require(known(key), "unknown config key '" + key + "'\n" + valid_keys_message());
    values_[key] = value;
  }

  void parse_file(const std::string& path) {
    std::ifstream is(path);
    detail::require(is.good(), "config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string key, eq, value;
      if (!(ls >> key)) continue;  // blank
      detail::require(static_cast<bool>(ls >> eq >> value) && eq == "=",
                      "config: malformed line " + std::to_string(lineno) + " in " + path +
                          " (expected 'section.key = value')");
      set(key, value);
    }
  }

  std::string get(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    for (const auto& k : config_registry())
      if (key == k.name) return k.default_value;
    detail::fail("unknown config key '" + key + "'\n" + valid_keys_message());
  }

  double get_double(const std::string& key) const {
    const std::string v = get(key);
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    detail::require(pos == v.size(), "config: " + key + " = '" + v + "' is not a number");
    return d;
  }

  long get_int(const std::string& key) const {
    const std::string v = get(key);
    std::size_t pos = 0;
    const long n = std::stol(v, &pos);
    detail::require(pos == v.size(), "config: " + key + " = '" + v + "' is not an integer");
    return n;
  }

  bool get_bool(const std::string& key) const {
    const std::string v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    detail::fail("config: " + key + " = '" + v + "' is not a boolean (true/false)");
  }

  // Every key with its effective value, registry order.
  void dump(std::ostream& os) const {
    for (const auto& k : config_registry()) os << k.name << " = " << get(k.name) << "\n";
  }

  bool known(const std::string& key) const {
    for (const auto& k : config_registry())
      if (key == k.name) return true;
    return false;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace narkit
