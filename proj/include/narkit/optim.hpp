// Bias-corrected Adam with decoupled weight decay. One optimizer owns the
// moment state for a fixed parameter list; non-finite gradients skip the
// whole step so a single bad batch cannot poison the moments.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "narkit/tensor.hpp"

namespace narkit {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // 0 disables clipping
};

class AdamW {
 public:
  AdamW(AdamConfig cfg, std::vector<Tensor*> params) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->data().size(), 0.0);
      v_[i].assign(params_[i]->data().size(), 0.0);
    }
  }

  long step_count() const { return t_; }

  // Applies one update using gradients recorded on `tape`. Returns false (and
  // leaves parameters and moments untouched) when any gradient is non-finite.
  bool step(const Tape& tape, double lr) {
    std::vector<const std::vector<double>*> grads(params_.size(), nullptr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      grads[i] = tape.grad_of(*params_[i]);
      if (grads[i] != nullptr)
        for (double g : *grads[i])
          if (!std::isfinite(g)) return false;
    }

    double scale_factor = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto* g : grads)
        if (g)
          for (double x : *g) sq += x * x;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale_factor = cfg_.clip_norm / norm;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& theta = params_[i]->data();
      auto& m = m_[i];
      auto& v = v_[i];
      const std::vector<double>* g = grads[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const double gj = g ? (*g)[j] * scale_factor : 0.0;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        const double old = theta[j];
        theta[j] = old - lr * mhat / (std::sqrt(vhat) + cfg_.eps) - lr * cfg_.weight_decay * old;
      }
    }
    return true;
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// Fixed learning rate with linear warmup; inverse-sqrt decay after warmup as
// the config-reachable alternative.
inline double lr_at(double base_lr, long step, long warmup, bool inverse_sqrt) {
  if (warmup > 0 && step < warmup)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (!inverse_sqrt) return base_lr;
  const double s = static_cast<double>(std::max<long>(step + 1, 1));
  const double w = static_cast<double>(std::max<long>(warmup, 1));
  return base_lr * std::sqrt(w / s);
}

}  // namespace narkit
