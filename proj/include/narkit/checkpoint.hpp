// Checkpoint files: a structured-text manifest (step, rng state, model config
// snapshot, vocab, parameter names/shapes/offsets) followed by a flat
// little-endian 64-bit float payload. save/load round-trips are bitwise
// exact.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "narkit/data.hpp"
#include "narkit/tensor.hpp"

namespace narkit {

// Named, shaped parameter collection; order is the manifest order.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.size();
    return n;
  }
};

struct Checkpoint {
  long step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, std::string>> config;  // model-scope keys only
  std::vector<std::string> vocab_tokens;
  ParamMap params;

  std::string config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
      if (k == key) return v;
    detail::fail("checkpoint: missing config key '" + key + "'");
  }

  Vocab vocab() const {
    Vocab v;
    for (const auto& t : vocab_tokens) v.add(t);
    return v;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  detail::require(os.good(), "save_checkpoint: cannot open " + path);
  os << "narkit-checkpoint v1\n";
  os << "step " << ckpt.step << "\n";
  os << "rng " << ckpt.rng_state << "\n";
  for (const auto& [k, v] : ckpt.config) os << "config " << k << " " << v << "\n";
  os << "vocab " << ckpt.vocab_tokens.size() << "\n";
  for (const auto& t : ckpt.vocab_tokens) os << t << "\n";
  std::int64_t offset = 0;
  for (const auto& [name, t] : ckpt.params.items) {
    os << "param " << name << " " << t.shape.size();
    for (int d : t.shape) os << " " << d;
    os << " " << offset << "\n";
    offset += t.size();
  }
  os << "payload " << offset * 8 << "\n";
  for (const auto& [name, t] : ckpt.params.items)
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * 8));
  detail::require(os.good(), "save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::require(is.good(), "load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(is, line);
  detail::require(line == "narkit-checkpoint v1", "load_checkpoint: bad magic in " + path);
  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::int64_t offset;
  };
  std::vector<Entry> entries;
  std::int64_t payload_bytes = -1;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "step") {
      ls >> ckpt.step;
    } else if (tag == "rng") {
      std::getline(ls, ckpt.rng_state);
      if (!ckpt.rng_state.empty() && ckpt.rng_state.front() == ' ')
        ckpt.rng_state.erase(ckpt.rng_state.begin());
    } else if (tag == "config") {
      std::string k, v;
      ls >> k >> v;
      ckpt.config.emplace_back(k, v);
    } else if (tag == "vocab") {
      std::size_t n = 0;
      ls >> n;
      for (std::size_t i = 0; i < n; ++i) {
        std::getline(is, line);
        ckpt.vocab_tokens.push_back(line);
      }
    } else if (tag == "param") {
      Entry e;
      std::size_t ndim = 0;
      ls >> e.name >> ndim;
      e.shape.resize(ndim);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset;
      entries.push_back(std::move(e));
    } else if (tag == "payload") {
      ls >> payload_bytes;
      break;
    } else {
      detail::fail("load_checkpoint: unknown manifest tag '" + tag + "' in " + path);
    }
  }
  detail::require(payload_bytes >= 0, "load_checkpoint: missing payload in " + path);
  std::vector<double> payload(static_cast<std::size_t>(payload_bytes / 8));
  is.read(reinterpret_cast<char*>(payload.data()), payload_bytes);
  detail::require(is.gcount() == payload_bytes, "load_checkpoint: truncated payload in " + path);
  for (const auto& e : entries) {
    const std::int64_t n = detail::numel(e.shape);
    detail::require(e.offset >= 0 && (e.offset + n) * 8 <= payload_bytes,
                    "load_checkpoint: bad offset for " + e.name);
    Tensor t = Tensor::zeros(e.shape);
    std::copy(payload.begin() + static_cast<std::ptrdiff_t>(e.offset),
              payload.begin() + static_cast<std::ptrdiff_t>(e.offset + n), t.data().begin());
    ckpt.params.items.emplace_back(e.name, std::move(t));
  }
  return ckpt;
}

// Elementwise mean of the parameter payloads. Manifests (names, shapes,
// config, vocab) must match; step and rng state are taken from the input with
// the largest step.
inline Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  detail::require(!paths.empty(), "average_checkpoints: no inputs");
  std::vector<Checkpoint> all;
  all.reserve(paths.size());
  for (const auto& p : paths) all.push_back(load_checkpoint(p));
  const Checkpoint& head = all[0];
  for (std::size_t c = 1; c < all.size(); ++c) {
    detail::require(all[c].config == head.config,
                    "average_checkpoints: config mismatch between " + paths[0] + " and " + paths[c]);
    detail::require(all[c].vocab_tokens == head.vocab_tokens,
                    "average_checkpoints: vocab mismatch between " + paths[0] + " and " + paths[c]);
    detail::require(all[c].params.items.size() == head.params.items.size(),
                    "average_checkpoints: parameter count mismatch");
    for (std::size_t i = 0; i < head.params.items.size(); ++i) {
      const auto& [n0, t0] = head.params.items[i];
      const auto& [n1, t1] = all[c].params.items[i];
      detail::require(n0 == n1 && t0.shape == t1.shape,
                      "average_checkpoints: parameter '" + n0 + "' vs '" + n1 +
                          "' differs in name or shape");
    }
  }
  std::size_t newest = 0;
  for (std::size_t c = 1; c < all.size(); ++c)
    if (all[c].step > all[newest].step) newest = c;
  Checkpoint out = all[newest];
  const double inv = 1.0 / static_cast<double>(all.size());
  for (std::size_t i = 0; i < out.params.items.size(); ++i) {
    auto& dst = out.params.items[i].second;
    dst = Tensor::zeros(dst.shape);
    for (const auto& c : all)
      for (std::int64_t j = 0; j < dst.size(); ++j)
        dst.data()[static_cast<std::size_t>(j)] += c.params.items[i].second.data()[static_cast<std::size_t>(j)];
    for (double& v : dst.data()) v *= inv;
  }
  return out;
}

// Removes every AR-head parameter; NAR forward outputs are untouched by
// construction, so decode before/after stripping is identical. Idempotent.
inline ParamMap strip_heads(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params.items)
    if (name.rfind("ar_heads.", 0) != 0) out.items.emplace_back(name, t);
  return out;
}

struct ParamCount {
  std::int64_t total = 0;
  std::int64_t nar = 0;
  std::int64_t ar_heads = 0;
};

inline ParamCount count_params(const ParamMap& params) {
  ParamCount c;
  for (const auto& [name, t] : params.items) {
    c.total += t.size();
    if (name.rfind("ar_heads.", 0) == 0)
      c.ar_heads += t.size();
    else
      c.nar += t.size();
  }
  return c;
}

}  // namespace narkit
