// Dense double-precision tensors with reverse-mode autodiff on an explicit
// tape. Forward ops append nodes in creation order, which is already a
// topological order, so backward() is a single reverse sweep. The tape is
// rebuilt every step (define-by-run) and confined to one thread.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace narkit {

using Shape = std::vector<int>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error("narkit: " + msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace detail

// log(exp(a) + exp(b)), max-shifted; -inf is the identity element.
inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// log sum exp over a sequence of log-values; empty input -> -inf.
inline double log_sum(const std::vector<double>& xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Tensor: shape + flat row-major data. Copies are cheap (shared payload);
// only the optimizer mutates payloads in place, after backward has consumed
// the saved forward values.
// ---------------------------------------------------------------------------
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> payload;
  bool requires_grad = false;
  // Tape bookkeeping: node id valid only while `epoch` matches the tape.
  mutable int node = -1;
  mutable std::uint64_t epoch = 0;

  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.payload = std::make_shared<std::vector<double>>(detail::numel(t.shape), 0.0);
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from(Shape s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    detail::require(detail::numel(t.shape) == static_cast<std::int64_t>(values.size()),
                    "tensor init: shape " + detail::shape_str(t.shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
    t.payload = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  std::vector<double>& data() { return *payload; }
  const std::vector<double>& data() const { return *payload; }
  std::int64_t size() const { return payload ? static_cast<std::int64_t>(payload->size()) : 0; }
  bool defined() const { return static_cast<bool>(payload); }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double item() const {
    detail::require(size() == 1, "item(): tensor " + detail::shape_str(shape) + " is not scalar");
    return (*payload)[0];
  }

  // Deep copy with no graph attachment.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.payload = std::make_shared<std::vector<double>>(*payload);
    t.requires_grad = requires_grad;
    return t;
  }

  bool finite() const {
    for (double v : data())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  struct Node {
    Shape shape;
    std::vector<double> grad;  // allocated lazily during backward
    BackwardFn backward;       // empty for leaves
  };

  Tape() : epoch_(next_epoch()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Registers `t` as a leaf for this epoch (idempotent per epoch).
  int watch(const Tensor& t) {
    if (t.epoch == epoch_ && t.node >= 0) return t.node;
    nodes_.push_back(Node{t.shape, {}, nullptr});
    t.node = static_cast<int>(nodes_.size()) - 1;
    t.epoch = epoch_;
    return t.node;
  }

  int push(Shape shape, BackwardFn bw) {
    nodes_.push_back(Node{std::move(shape), {}, std::move(bw)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Zero-initialized grad buffer for node `id`.
  std::vector<double>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(detail::numel(n.shape)), 0.0);
    return n.grad;
  }

  // Reverse-topological accumulation from a scalar loss.
  void backward(const Tensor& loss) {
    detail::require(loss.size() == 1, "backward(): loss must be scalar, got " +
                                          detail::shape_str(loss.shape));
    detail::require(!nodes_.empty(), "backward(): tape is empty");
    detail::require(loss.epoch == epoch_ && loss.node >= 0,
                    "backward(): loss is not attached to this tape");
    grad_buffer(loss.node)[0] = 1.0;
    for (int id = loss.node; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  // Gradient of the most recent backward() w.r.t. `t`; nullptr if `t` did not
  // participate or received no gradient.
  const std::vector<double>* grad_of(const Tensor& t) const {
    if (t.epoch != epoch_ || t.node < 0) return nullptr;
    const Node& n = nodes_[static_cast<std::size_t>(t.node)];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  // Drops all nodes and starts a fresh epoch; stale node ids become inert.
  void reset() {
    nodes_.clear();
    epoch_ = next_epoch()++;
  }

  static Tape*& current() {
    thread_local Tape* t = nullptr;
    return t;
  }

  static bool& grad_enabled() {
    thread_local bool on = true;
    return on;
  }

  static bool recording() { return current() != nullptr && grad_enabled(); }

 private:
  static std::uint64_t& next_epoch() {
    thread_local std::uint64_t e = 1;
    return e;
  }

  std::vector<Node> nodes_;
  std::uint64_t epoch_;
};

struct TapeScope {
  explicit TapeScope(Tape& t) : prev_(Tape::current()) { Tape::current() = &t; }
  ~TapeScope() { Tape::current() = prev_; }
  Tape* prev_;
};

struct NoGradScope {
  NoGradScope() : prev_(Tape::grad_enabled()) { Tape::grad_enabled() = false; }
  ~NoGradScope() { Tape::grad_enabled() = prev_; }
  bool prev_;
};

namespace detail {

// True when `t` should be wired into the current tape.
inline bool tracked(const Tensor& t) {
  if (!Tape::recording()) return false;
  Tape* tape = Tape::current();
  return t.requires_grad || (t.epoch == tape->epoch() && t.node >= 0);
}

inline int input_id(const Tensor& t) { return Tape::current()->watch(t); }

inline void attach(Tensor& out, Tape::BackwardFn bw) {
  out.requires_grad = true;
  out.node = Tape::current()->push(out.shape, std::move(bw));
  out.epoch = Tape::current()->epoch();
}

}  // namespace detail

// Returns x with the same values but cut off from the graph.
inline Tensor detach(const Tensor& x) {
  Tensor out;
  out.shape = x.shape;
  out.payload = x.payload;
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape == b.shape, "add: shape mismatch " + detail::shape_str(a.shape) +
                                          " vs " + detail::shape_str(b.shape));
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  const bool ta = detail::tracked(a), tb = detail::tracked(b);
  if (ta || tb) {
    int ia = ta ? detail::input_id(a) : -1;
    int ib = tb ? detail::input_id(b) : -1;
    detail::attach(out, [ia, ib, n](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape == b.shape, "sub: shape mismatch " + detail::shape_str(a.shape) +
                                          " vs " + detail::shape_str(b.shape));
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  const bool ta = detail::tracked(a), tb = detail::tracked(b);
  if (ta || tb) {
    int ia = ta ? detail::input_id(a) : -1;
    int ib = tb ? detail::input_id(b) : -1;
    detail::attach(out, [ia, ib, n](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape == b.shape, "mul: shape mismatch " + detail::shape_str(a.shape) +
                                          " vs " + detail::shape_str(b.shape));
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  const bool ta = detail::tracked(a), tb = detail::tracked(b);
  if (ta || tb) {
    int ia = ta ? detail::input_id(a) : -1;
    int ib = tb ? detail::input_id(b) : -1;
    auto da = a.payload, db = b.payload;
    detail::attach(out, [ia, ib, da, db, n](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*db)[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (*da)[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, c, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

// Broadcast-add a length-n bias row to every row of an m x n matrix.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require(x.shape.size() == 2 && bias.shape.size() == 1 && x.shape[1] == bias.shape[0],
                  "add_bias: shape mismatch " + detail::shape_str(x.shape) + " vs " +
                      detail::shape_str(bias.shape));
  const int m = x.shape[0], n = x.shape[1];
  Tensor out = Tensor::zeros(x.shape);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  const bool tx = detail::tracked(x), tb = detail::tracked(bias);
  if (tx || tb) {
    int ix = tx ? detail::input_id(x) : -1;
    int ib = tb ? detail::input_id(bias) : -1;
    detail::attach(out, [ix, ib, m, n](Tape& t, const std::vector<double>& g) {
      if (ix >= 0) {
        auto& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buffer(ib);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape.size() == 2 && b.shape.size() == 2 && a.shape[1] == b.shape[0],
                  "matmul: incompatible shapes " + detail::shape_str(a.shape) + " vs " +
                      detail::shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.data().data();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double aip = pa[i * k + p];
        const double* brow = pb + static_cast<std::size_t>(p) * n;
        double* crow = pc + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
  }
  const bool ta = detail::tracked(a), tb = detail::tracked(b);
  if (ta || tb) {
    int ia = ta ? detail::input_id(a) : -1;
    int ib = tb ? detail::input_id(b) : -1;
    auto da = a.payload, db = b.payload;
    detail::attach(out, [ia, ib, da, db, m, k, n](Tape& t, const std::vector<double>& g) {
      if (ia >= 0) {
        // dA = dC . B^T
        auto& ga = t.grad_buffer(ia);
        const double* pb = db->data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j) {
            double s = 0.0;
            const double* grow = g.data() + static_cast<std::size_t>(i) * n;
            const double* brow = pb + static_cast<std::size_t>(j) * n;
            for (int p = 0; p < n; ++p) s += grow[p] * brow[p];
            ga[static_cast<std::size_t>(i) * k + j] += s;
          }
      }
      if (ib >= 0) {
        // dB = A^T . dC
        auto& gb = t.grad_buffer(ib);
        const double* pa = da->data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double aip = pa[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const double* grow = g.data() + static_cast<std::size_t>(i) * n;
            double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require(a.shape.size() == 2, "transpose: need 2-d tensor, got " +
                                           detail::shape_str(a.shape));
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, m, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape s) {
  detail::require(detail::numel(s) == a.size(), "reshape: " + detail::shape_str(a.shape) +
                                                    " -> " + detail::shape_str(s) +
                                                    " changes element count");
  Tensor out;
  out.shape = std::move(s);
  out.payload = a.payload;  // view
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_rows: empty input");
  const int n = parts[0].cols();
  int m = 0;
  for (const Tensor& p : parts) {
    detail::require(p.shape.size() == 2 && p.shape[1] == n,
                    "concat_rows: column mismatch at " + detail::shape_str(p.shape));
    m += p.shape[0];
  }
  Tensor out = Tensor::zeros({m, n});
  int row = 0;
  std::vector<int> ids;
  std::vector<int> rows;
  bool any = false;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::size_t>(row) * n);
    row += p.shape[0];
    bool tp = detail::tracked(p);
    any = any || tp;
    rows.push_back(p.shape[0]);
    ids.push_back(tp ? -2 : -1);  // fill real ids after we know any
  }
  if (any) {
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (ids[i] == -2) ids[i] = detail::input_id(parts[i]);
    detail::attach(out, [ids, rows, n](Tape& t, const std::vector<double>& g) {
      int r0 = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= 0) {
          auto& gp = t.grad_buffer(ids[i]);
          const std::size_t count = static_cast<std::size_t>(rows[i]) * n;
          const double* src = g.data() + static_cast<std::size_t>(r0) * n;
          for (std::size_t j = 0; j < count; ++j) gp[j] += src[j];
        }
        r0 += rows[i];
      }
    });
  }
  return out;
}

// Copies rows [r0, r1) of a 2-d tensor.
inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  detail::require(a.shape.size() == 2 && 0 <= r0 && r0 < r1 && r1 <= a.shape[0],
                  "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                      ") for " + detail::shape_str(a.shape));
  const int n = a.shape[1];
  Tensor out = Tensor::zeros({r1 - r0, n});
  std::copy(a.data().begin() + static_cast<std::size_t>(r0) * n,
            a.data().begin() + static_cast<std::size_t>(r1) * n, out.data().begin());
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, r0, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(r0) * n + i] += g[i];
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  detail::require(a.shape.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.shape[1],
                  "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") for " + detail::shape_str(a.shape));
  const int m = a.shape[0], n = a.shape[1], w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.data()[i * w + j] = a.data()[i * n + c0 + j];
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, m, n, w, c0](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) ga[static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty input");
  const int m = parts[0].rows();
  int n = 0;
  for (const Tensor& p : parts) {
    detail::require(p.shape.size() == 2 && p.shape[0] == m,
                    "concat_cols: row mismatch at " + detail::shape_str(p.shape));
    n += p.shape[1];
  }
  Tensor out = Tensor::zeros({m, n});
  int col = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  bool any = false;
  for (const Tensor& p : parts) {
    const int w = p.shape[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out.data()[static_cast<std::size_t>(i) * n + col + j] = p.data()[static_cast<std::size_t>(i) * w + j];
    col += w;
    bool tp = detail::tracked(p);
    any = any || tp;
    widths.push_back(w);
    ids.push_back(tp ? -2 : -1);
  }
  if (any) {
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (ids[i] == -2) ids[i] = detail::input_id(parts[i]);
    detail::attach(out, [ids, widths, m, n](Tape& t, const std::vector<double>& g) {
      int c0 = 0;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        const int w = widths[p];
        if (ids[p] >= 0) {
          auto& gp = t.grad_buffer(ids[p]);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) gp[static_cast<std::size_t>(i) * w + j] += g[static_cast<std::size_t>(i) * n + c0 + j];
        }
        c0 += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and nonlinearities
// ---------------------------------------------------------------------------
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    const std::size_t n = a.data().size();
    detail::attach(out, [ia, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  const std::size_t n = a.data().size();
  detail::require(n > 0, "mean: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      const double w = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) ga[i] += w;
    });
  }
  return out;
}

// Sum of an m x n matrix along an axis: axis 0 -> length n, axis 1 -> length m.
inline Tensor sum_axis(const Tensor& a, int axis) {
  detail::require(a.shape.size() == 2 && (axis == 0 || axis == 1),
                  "sum_axis: need 2-d tensor and axis in {0,1}");
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({axis == 0 ? n : m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[axis == 0 ? j : i] += a.data()[i * n + j];
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    detail::attach(out, [ia, m, n, axis](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[axis == 0 ? j : i];
    });
  }
  return out;
}

inline Tensor mean_axis(const Tensor& a, int axis) {
  const double denom = axis == 0 ? a.shape[0] : a.shape[1];
  return scale(sum_axis(a, axis), 1.0 / denom);
}

inline Tensor tanh_op(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(a.data()[i]);
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    auto dy = out.payload;
    detail::attach(out, [ia, dy, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - (*dy)[i] * (*dy)[i]);
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    auto dx = a.payload;
    detail::attach(out, [ia, dx, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += (*dx)[i] > 0.0 ? g[i] : 0.0;
    });
  }
  return out;
}

// Row-wise log-softmax over the last axis of a 1-d or 2-d tensor, max-shifted.
inline Tensor log_softmax(const Tensor& a) {
  detail::require(a.shape.size() == 1 || a.shape.size() == 2,
                  "log_softmax: need 1-d or 2-d tensor, got " + detail::shape_str(a.shape));
  const int m = a.shape.size() == 1 ? 1 : a.shape[0];
  const int n = a.shape.size() == 1 ? a.shape[0] : a.shape[1];
  Tensor out = Tensor::zeros(a.shape);
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    auto dy = out.payload;
    detail::attach(out, [ia, dy, m, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        const double* yrow = dy->data() + static_cast<std::size_t>(i) * n;
        double gs = 0.0;
        for (int j = 0; j < n; ++j) gs += grow[j];
        double* garow = ga.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) garow[j] += grow[j] - std::exp(yrow[j]) * gs;
      }
    });
  }
  return out;
}

// Row-wise softmax; rows where every entry is ~-inf are a contract violation.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require(a.shape.size() == 2, "softmax_rows: need 2-d tensor");
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros(a.shape);
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    detail::require(mx > -1e29, "softmax_rows: row " + std::to_string(i) +
                                    " is fully masked (undefined softmax)");
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    for (int j = 0; j < n; ++j) orow[j] = std::exp(row[j] - mx) / s;
  }
  if (detail::tracked(a)) {
    int ia = detail::input_id(a);
    auto dy = out.payload;
    detail::attach(out, [ia, dy, m, n](Tape& t, const std::vector<double>& g) {
      auto& ga = t.grad_buffer(ia);
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        const double* yrow = dy->data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
        double* garow = ga.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) garow[j] += yrow[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

// Layer normalization over the last axis with learnable gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
  detail::require(x.shape.size() == 2, "layer_norm: need 2-d input");
  const int m = x.shape[0], n = x.shape[1];
  detail::require(gain.shape == Shape{n} && bias.shape == Shape{n},
                  "layer_norm: gain/bias must be length " + std::to_string(n));
  Tensor out = Tensor::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * n);
  auto inv = std::make_shared<std::vector<double>>(m);
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = istd;
    for (int j = 0; j < n; ++j) {
      const double xh = (row[j] - mu) * istd;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      out.data()[static_cast<std::size_t>(i) * n + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  const bool tx = detail::tracked(x), tg = detail::tracked(gain), tb = detail::tracked(bias);
  if (tx || tg || tb) {
    int ix = tx ? detail::input_id(x) : -1;
    int ig = tg ? detail::input_id(gain) : -1;
    int ib = tb ? detail::input_id(bias) : -1;
    auto dgain = gain.payload;
    detail::attach(out, [ix, ig, ib, dgain, xhat, inv, m, n](Tape& t,
                                                             const std::vector<double>& g) {
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
        if (ig >= 0) {
          auto& gg = t.grad_buffer(ig);
          for (int j = 0; j < n; ++j) gg[j] += grow[j] * xh[j];
        }
        if (ib >= 0) {
          auto& gb = t.grad_buffer(ib);
          for (int j = 0; j < n; ++j) gb[j] += grow[j];
        }
        if (ix >= 0) {
          auto& gx = t.grad_buffer(ix);
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = grow[j] * (*dgain)[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= n;
          mean_dxh_xh /= n;
          double* gxrow = gx.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double dxh = grow[j] * (*dgain)[j];
            gxrow[j] += (*inv)[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout; identity when not training. Mask comes from the caller's
// seeded RNG stream via `draw` so runs stay reproducible.
template <typename DrawFn>
inline Tensor dropout(const Tensor& x, double p, bool training, DrawFn&& draw) {
  if (!training || p <= 0.0) return x;
  detail::require(p < 1.0, "dropout: p must be < 1");
  const std::size_t n = x.data().size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) (*mask)[i] = draw() < p ? 0.0 : keep;
  Tensor out = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * (*mask)[i];
  if (detail::tracked(x)) {
    int ix = detail::input_id(x);
    detail::attach(out, [ix, mask, n](Tape& t, const std::vector<double>& g) {
      auto& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

// Gather rows of an embedding table; gradient scatters into the table rows.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  detail::require(table.shape.size() == 2, "embedding: table must be 2-d");
  const int v = table.shape[0], d = table.shape[1];
  detail::require(!ids.empty(), "embedding: empty id list");
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && ids[i] < v,
                    "embedding: id " + std::to_string(ids[i]) + " out of range [0," +
                        std::to_string(v) + ")");
    std::copy(table.data().begin() + static_cast<std::size_t>(ids[i]) * d,
              table.data().begin() + static_cast<std::size_t>(ids[i] + 1) * d,
              out.data().begin() + i * d);
  }
  if (detail::tracked(table)) {
    int it = detail::input_id(table);
    detail::attach(out, [it, ids, d](Tape& t, const std::vector<double>& g) {
      auto& gt = t.grad_buffer(it);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = gt.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = g.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Label-smoothed cross entropy, mean over rows. The target distribution mixes
// (1-eps) on the gold id with eps spread uniformly over all classes.
inline Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& gold,
                                     double eps) {
  detail::require(logits.shape.size() == 2, "cross_entropy: logits must be 2-d");
  const int m = logits.shape[0], v = logits.shape[1];
  detail::require(static_cast<int>(gold.size()) == m,
                  "cross_entropy: " + std::to_string(gold.size()) + " targets for " +
                      std::to_string(m) + " rows");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * v);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    detail::require(gold[i] >= 0 && gold[i] < v, "cross_entropy: gold id out of range");
    const double* row = logits.data().data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    double row_loss = 0.0;
    for (int j = 0; j < v; ++j) {
      const double lp = row[j] - lse;
      (*probs)[static_cast<std::size_t>(i) * v + j] = std::exp(lp);
      row_loss -= (eps / v) * lp;
    }
    row_loss -= (1.0 - eps) * (row[gold[i]] - lse);
    loss += row_loss;
  }
  Tensor out = Tensor::scalar(loss / m);
  if (detail::tracked(logits)) {
    int il = detail::input_id(logits);
    detail::attach(out, [il, probs, gold, m, v, eps](Tape& t, const std::vector<double>& g) {
      auto& gl = t.grad_buffer(il);
      const double w = g[0] / m;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < v; ++j) {
          const double q = (j == gold[i] ? 1.0 - eps : 0.0) + eps / v;
          gl[static_cast<std::size_t>(i) * v + j] +=
              w * ((*probs)[static_cast<std::size_t>(i) * v + j] - q);
        }
    });
  }
  return out;
}

}  // namespace narkit
