// Shared test oracles: central finite differences against backward(), and a
// relative-error helper. The finite-difference path never touches the tape,
// so it stays independent of the gradients it checks.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "narkit/rng.hpp"
#include "narkit/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  const double denom = std::max({1e-8, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

// Central finite difference of a tape-free forward at one coordinate.
inline double fd_at(const std::function<double()>& forward, narkit::Tensor& x, std::size_t idx,
                    double h = 1e-5) {
  narkit::NoGradScope ng;
  const double saved = x.data()[idx];
  x.data()[idx] = saved + h;
  const double fp = forward();
  x.data()[idx] = saved - h;
  const double fm = forward();
  x.data()[idx] = saved;
  return (fp - fm) / (2.0 * h);
}

// Runs `build` under a fresh tape, backpropagates, and checks the gradient of
// every listed input on up to `coords_per_input` sampled coordinates.
// Returns the worst relative error seen.
inline double check_gradients(const std::function<narkit::Tensor()>& build,
                              std::vector<narkit::Tensor*> inputs, narkit::Rng& rng,
                              int coords_per_input = 20, double h = 1e-5) {
  narkit::Tape tape;
  double worst = 0.0;
  std::function<double()> forward = [&]() { return build().item(); };
  {
    narkit::TapeScope scope(tape);
    for (narkit::Tensor* t : inputs) t->requires_grad = true;
    narkit::Tensor loss = build();
    tape.backward(loss);
  }
  for (narkit::Tensor* t : inputs) {
    const std::vector<double>* grad = tape.grad_of(*t);
    const std::size_t n = t->data().size();
    const int coords = std::min<int>(coords_per_input, static_cast<int>(n));
    for (int c = 0; c < coords; ++c) {
      const std::size_t idx = static_cast<std::size_t>(
          coords == static_cast<int>(n) ? c : rng.uniform_int(0, static_cast<int>(n) - 1));
      const double analytic = grad ? (*grad)[idx] : 0.0;
      const double numeric = fd_at(forward, *t, idx, h);
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

}  // namespace testutil
