#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "untrack/errors.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Tensor: dense row-major f64 array with optional participation in reverse-
// mode differentiation. Copies are shallow handles onto shared storage, so a
// tensor captured by a tape closure sees gradient updates made during
// backward. Dims are fixed at construction.
// ---------------------------------------------------------------------------

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::size_t> dims, std::vector<double> values,
         bool requires_grad = false) {
    std::size_t total = 1;
    for (std::size_t d : dims) {
      if (d == 0) throw SizeError("tensor extent must be >= 1");
      total *= d;
    }
    if (total != values.size()) {
      throw SizeError("tensor data length " + std::to_string(values.size()) +
                      " does not match dims product " + std::to_string(total));
    }
    p_ = std::make_shared<Payload>();
    p_->dims = std::move(dims);
    p_->data = std::move(values);
    p_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<std::size_t> dims, bool requires_grad = false) {
    std::size_t total = 1;
    for (std::size_t d : dims) {
      if (d == 0) throw SizeError("tensor extent must be >= 1");
      total *= d;
    }
    return Tensor(std::move(dims), std::vector<double>(total, 0.0), requires_grad);
  }

  static Tensor full(std::vector<std::size_t> dims, double value,
                     bool requires_grad = false) {
    std::size_t total = 1;
    for (std::size_t d : dims) total *= d;
    return Tensor(std::move(dims), std::vector<double>(total, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(p_); }

  const std::vector<std::size_t>& dims() const { return p_->dims; }
  std::size_t rank() const { return p_->dims.size(); }
  std::size_t size() const { return p_->data.size(); }

  // 2-D helpers; a rank-1 tensor counts as a single row.
  std::size_t rows() const {
    return p_->dims.size() >= 2 ? p_->dims[0] : 1;
  }
  std::size_t cols() const {
    return p_->dims.size() >= 2 ? p_->dims[1] : p_->dims[0];
  }

  std::vector<double>& data() { return p_->data; }
  const std::vector<double>& data() const { return p_->data; }

  double value() const {
    if (size() != 1) throw ShapeError("value() requires a one-element tensor");
    return p_->data[0];
  }

  double& at(std::size_t i, std::size_t j) { return p_->data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return p_->data[i * cols() + j]; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool value) { p_->requires_grad = value; }

  bool has_grad() const { return !p_->grad.empty(); }

  // Gradient buffer, allocated (zeroed) on first use.
  std::vector<double>& grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
    return p_->grad;
  }
  const std::vector<double>& grad_view() const { return p_->grad; }

  void zero_grad() {
    std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
  }

  // Deep copy with independent storage; gradient state is not copied.
  Tensor clone() const {
    return Tensor(p_->dims, p_->data, p_->requires_grad);
  }

  bool same_payload(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Payload {
    std::vector<std::size_t> dims;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  std::shared_ptr<Payload> p_;
};

inline std::string dims_string(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.dims().size(); ++i) {
    if (i) os << ",";
    os << t.dims()[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tape: ordered record of executed operations. Ops append themselves in
// execution order, which is a topological order of the forward graph, so a
// single reverse sweep visits each op exactly once. One tape per forward
// pass; the tape owns the closures and keeps intermediate tensors alive.
// ---------------------------------------------------------------------------

class Tape {
 public:
  void record(Tensor output, std::function<void()> backward_step) {
    steps_.push_back(Step{std::move(output), std::move(backward_step)});
  }

  std::size_t op_count() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients of
  // op outputs (non-leaves) are reset first, so leaf gradients accumulate
  // across repeated calls while intermediates never double-count.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + dims_string(loss));
    }
    for (auto& step : steps_) {
      if (step.output.has_grad()) step.output.zero_grad();
    }
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      it->backward_step();
    }
  }

  void clear() { steps_.clear(); }

 private:
  struct Step {
    Tensor output;
    std::function<void()> backward_step;
  };
  std::vector<Step> steps_;
};

namespace detail {

inline bool any_requires_grad(const Tensor& a) { return a.requires_grad(); }
inline bool any_requires_grad(const Tensor& a, const Tensor& b) {
  return a.requires_grad() || b.requires_grad();
}

inline void check_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims mismatch " + dims_string(a) +
                     " vs " + dims_string(b));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

// c[i,j] = sum_t a[i,t] * b[t,j]. Backward: dA += dC * B^T, dB += A^T * dC.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul requires rank-2 tensors, got " + dims_string(a) +
                     " and " + dims_string(b));
  }
  const std::size_t m = a.dims()[0], k = a.dims()[1];
  const std::size_t k2 = b.dims()[0], n = b.dims()[1];
  if (k != k2) {
    throw ShapeError("matmul inner extents disagree: " + dims_string(a) +
                     " vs " + dims_string(b));
  }
  const bool rg = detail::any_requires_grad(a, b);
  Tensor c = Tensor::zeros({m, n}, rg);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        const double av = A[i * k + t];
        const double* Brow = B + t * n;
        double* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  if (rg) {
    Tensor ac = a, bc = b, cc = c;
    tape.record(c, [ac, bc, cc, m, k, n]() mutable {
      if (!cc.has_grad()) return;
      const double* G = cc.grad_view().data();
      if (ac.requires_grad()) {
        double* dA = ac.grad().data();
        const double* B = bc.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t t = 0; t < k; ++t) {
            const double* Grow = G + i * n;
            const double* Brow = B + t * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            dA[i * k + t] += acc;
          }
        }
      }
      if (bc.requires_grad()) {
        double* dB = bc.grad().data();
        const double* A = ac.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* Grow = G + i * n;
          for (std::size_t t = 0; t < k; ++t) {
            const double av = A[i * k + t];
            double* dBrow = dB + t * n;
            for (std::size_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
          }
        }
      }
    });
  }
  return c;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose requires rank-2, got " + dims_string(a));
  const std::size_t m = a.dims()[0], n = a.dims()[1];
  Tensor out = Tensor::zeros({n, m}, a.requires_grad());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[j * m + i] = a.data()[i * n + j];
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, m, n]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          dA[i * n + j] += G[j * m + i];
    });
  }
  return out;
}

// Copies data into new dims with the same element count; identity backward.
inline Tensor reshape(Tape& tape, const Tensor& a, std::vector<std::size_t> dims) {
  std::size_t total = 1;
  for (std::size_t d : dims) total *= d;
  if (total != a.size()) {
    throw ShapeError("reshape to incompatible element count");
  }
  Tensor out(std::move(dims), a.data(), a.requires_grad());
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      for (std::size_t i = 0; i < ac.size(); ++i) dA[i] += G[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation / slicing over the two matrix axes
// ---------------------------------------------------------------------------

inline Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const std::size_t n = parts[0].rows();
  std::size_t total_c = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2) throw ShapeError("concat_channels requires rank-2 parts");
    if (p.rows() != n) {
      throw ShapeError("concat_channels leading extent mismatch: " +
                       dims_string(parts[0]) + " vs " + dims_string(p));
    }
    total_c += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({n, total_c}, rg);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out.data()[i * total_c + offset + j] = p.data()[i * c + j];
    offset += c;
  }
  if (rg) {
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    tape.record(out, [pc, oc, n, total_c]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      std::size_t offset = 0;
      for (Tensor& p : pc) {
        const std::size_t c = p.cols();
        if (p.requires_grad()) {
          double* dP = p.grad().data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
              dP[i * c + j] += G[i * total_c + offset + j];
        }
        offset += c;
      }
    });
  }
  return out;
}

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t total_n = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2) throw ShapeError("concat_rows requires rank-2 parts");
    if (p.cols() != c) {
      throw ShapeError("concat_rows column extent mismatch: " +
                       dims_string(parts[0]) + " vs " + dims_string(p));
    }
    total_n += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({total_n, c}, rg);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset * c);
    offset += p.rows();
  }
  if (rg) {
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    tape.record(out, [pc, oc, c]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      std::size_t offset = 0;
      for (Tensor& p : pc) {
        if (p.requires_grad()) {
          double* dP = p.grad().data();
          const std::size_t count = p.size();
          for (std::size_t i = 0; i < count; ++i) dP[i] += G[offset * c + i];
        }
        offset += p.rows();
      }
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t width) {
  if (a.rank() != 2) throw ShapeError("slice_cols requires rank-2");
  const std::size_t n = a.dims()[0], c = a.dims()[1];
  if (c0 + width > c) throw ShapeError("slice_cols out of range");
  Tensor out = Tensor::zeros({n, width}, a.requires_grad());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < width; ++j)
      out.data()[i * width + j] = a.data()[i * c + c0 + j];
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, n, c, c0, width]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j)
          dA[i * c + c0 + j] += G[i * width + j];
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t r0, std::size_t nrows) {
  if (a.rank() != 2) throw ShapeError("slice_rows requires rank-2");
  const std::size_t n = a.dims()[0], c = a.dims()[1];
  if (r0 + nrows > n) throw ShapeError("slice_rows out of range");
  Tensor out = Tensor::zeros({nrows, c}, a.requires_grad());
  std::copy(a.data().begin() + r0 * c, a.data().begin() + (r0 + nrows) * c,
            out.data().begin());
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, r0, c, nrows]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      for (std::size_t i = 0; i < nrows * c; ++i) dA[r0 * c + i] += G[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops. Besides identical dims, a rank-1 [c] or [1,c]
// operand broadcasts as a row over an [n,c] matrix (either argument order).
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { None, RowOnB, RowOnA };

inline bool is_row_of(const Tensor& row, const Tensor& mat) {
  if (mat.rank() != 2) return false;
  if (row.rank() == 1) return row.dims()[0] == mat.dims()[1];
  return row.rank() == 2 && row.dims()[0] == 1 && row.dims()[1] == mat.dims()[1];
}

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() == b.dims()) return Broadcast::None;
  if (is_row_of(b, a)) return Broadcast::RowOnB;
  if (is_row_of(a, b)) return Broadcast::RowOnA;
  throw ShapeError(std::string(op) + ": non-broadcastable dims " + dims_string(a) +
                   " vs " + dims_string(b));
}

// fab: value; dfa, dfb: partials wrt a and b evaluated at (a_i, b_i).
// Identical dims work for any rank; row broadcast applies to rank-2 matrices.
template <typename F, typename Da, typename Db>
Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, const char* name,
                 F fab, Da dfa, Db dfb) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const Tensor& big = (kind == Broadcast::RowOnA) ? b : a;
  const std::size_t total = big.size();
  const std::size_t c = (kind == Broadcast::None) ? total : big.cols();
  const bool rg = any_requires_grad(a, b);
  Tensor out = Tensor::zeros(big.dims(), rg);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* O = out.data().data();
    for (std::size_t i = 0; i < total; ++i) {
      const double av = (kind == Broadcast::RowOnA) ? A[i % c] : A[i];
      const double bv = (kind == Broadcast::RowOnB) ? B[i % c] : B[i];
      O[i] = fab(av, bv);
    }
  }
  if (rg) {
    Tensor ac = a, bc = b, oc = out;
    tape.record(out, [ac, bc, oc, kind, total, c, dfa, dfb]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      const double* A = ac.data().data();
      const double* B = bc.data().data();
      double* dA = ac.requires_grad() ? ac.grad().data() : nullptr;
      double* dB = bc.requires_grad() ? bc.grad().data() : nullptr;
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t ai = (kind == Broadcast::RowOnA) ? i % c : i;
        const std::size_t bi = (kind == Broadcast::RowOnB) ? i % c : i;
        const double g = G[i];
        if (dA) dA[ai] += g * dfa(A[ai], B[bi]);
        if (dB) dB[bi] += g * dfb(A[ai], B[bi]);
      }
    });
  }
  return out;
}

template <typename F, typename D>
Tensor unary_op(Tape& tape, const Tensor& a, const char* /*name*/, F f, D df) {
  Tensor out = Tensor::zeros(a.dims(), a.requires_grad());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, df]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      const double* A = ac.data().data();
      double* dA = ac.grad().data();
      for (std::size_t i = 0; i < ac.size(); ++i) dA[i] += G[i] * df(A[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "add",
                           [](double x, double y) { return x + y; },
                           [](double, double) { return 1.0; },
                           [](double, double) { return 1.0; });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "sub",
                           [](double x, double y) { return x - y; },
                           [](double, double) { return 1.0; },
                           [](double, double) { return -1.0; });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "mul",
                           [](double x, double y) { return x * y; },
                           [](double, double y) { return y; },
                           [](double x, double) { return x; });
}

inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "div",
                           [](double x, double y) { return x / y; },
                           [](double, double y) { return 1.0 / y; },
                           [](double x, double y) { return -x / (y * y); });
}

// Subgradient convention for ties: the first argument wins.
inline Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "minimum",
                           [](double x, double y) { return x <= y ? x : y; },
                           [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                           [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

inline Tensor maximum(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::binary_op(tape, a, b, "maximum",
                           [](double x, double y) { return x >= y ? x : y; },
                           [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                           [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Tensor relu(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "relu",
                          [](double x) { return x > 0.0 ? x : 0.0; },
                          [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "sigmoid",
                          [](double x) { return sigmoid_scalar(x); },
                          [](double x) {
                            const double s = sigmoid_scalar(x);
                            return s * (1.0 - s);
                          });
}

// log(sigmoid(x)) computed stably as -softplus(-x).
inline Tensor log_sigmoid(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "log_sigmoid",
                          [](double x) {
                            return x >= 0.0 ? -std::log1p(std::exp(-x))
                                            : x - std::log1p(std::exp(x));
                          },
                          [](double x) { return 1.0 - sigmoid_scalar(x); });
}

inline Tensor log(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "log",
                          [](double x) { return std::log(x); },
                          [](double x) { return 1.0 / x; });
}

inline Tensor abs(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "abs",
                          [](double x) { return std::fabs(x); },
                          [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sqrt(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "sqrt",
                          [](double x) { return std::sqrt(x); },
                          [](double x) { return 0.5 / std::sqrt(x); });
}

inline Tensor reciprocal(Tape& tape, const Tensor& a) {
  return detail::unary_op(tape, a, "reciprocal",
                          [](double x) { return 1.0 / x; },
                          [](double x) { return -1.0 / (x * x); });
}

inline Tensor add_scalar(Tape& tape, const Tensor& a, double s) {
  return detail::unary_op(tape, a, "add_scalar",
                          [s](double x) { return x + s; },
                          [](double) { return 1.0; });
}

inline Tensor mul_scalar(Tape& tape, const Tensor& a, double s) {
  return detail::unary_op(tape, a, "mul_scalar",
                          [s](double x) { return x * s; },
                          [s](double) { return s; });
}

// out[i,j] = a[i,j] * scale[i]; scale is [n,1] (or [n]) and may carry grad.
inline Tensor scale_rows(Tape& tape, const Tensor& a, const Tensor& scale) {
  if (a.rank() != 2) throw ShapeError("scale_rows requires rank-2 input");
  const std::size_t n = a.dims()[0], c = a.dims()[1];
  const bool scale_ok =
      (scale.rank() == 1 && scale.dims()[0] == n) ||
      (scale.rank() == 2 && scale.dims()[0] == n && scale.dims()[1] == 1);
  if (!scale_ok) {
    throw ShapeError("scale_rows: scale dims " + dims_string(scale) +
                     " incompatible with " + dims_string(a));
  }
  const bool rg = detail::any_requires_grad(a, scale);
  Tensor out = Tensor::zeros(a.dims(), rg);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.data()[i * c + j] = a.data()[i * c + j] * scale.data()[i];
  if (rg) {
    Tensor ac = a, sc = scale, oc = out;
    tape.record(out, [ac, sc, oc, n, c]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      if (ac.requires_grad()) {
        double* dA = ac.grad().data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j)
            dA[i * c + j] += G[i * c + j] * sc.data()[i];
      }
      if (sc.requires_grad()) {
        double* dS = sc.grad().data();
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j)
            acc += G[i * c + j] * ac.data()[i * c + j];
          dS[i] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and row-wise ops
// ---------------------------------------------------------------------------

inline Tensor row_sum(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("row_sum requires rank-2");
  const std::size_t n = a.dims()[0], c = a.dims()[1];
  Tensor out = Tensor::zeros({n, 1}, a.requires_grad());
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += a.data()[i * c + j];
    out.data()[i] = acc;
  }
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, n, c]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += G[i];
    });
  }
  return out;
}

inline Tensor sum_all(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor out({1}, {acc}, a.requires_grad());
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc]() mutable {
      if (!oc.has_grad()) return;
      const double g = oc.grad_view()[0];
      double* dA = ac.grad().data();
      for (std::size_t i = 0; i < ac.size(); ++i) dA[i] += g;
    });
  }
  return out;
}

inline Tensor mean_all(Tape& tape, const Tensor& a) {
  return mul_scalar(tape, sum_all(tape, a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor row_softmax(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("row_softmax requires rank-2");
  const std::size_t n = a.dims()[0], c = a.dims()[1];
  Tensor out = Tensor::zeros(a.dims(), a.requires_grad());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = a.data()[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, a.data()[i * c + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(a.data()[i * c + j] - mx);
      out.data()[i * c + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] /= denom;
  }
  if (a.requires_grad()) {
    Tensor ac = a, oc = out;
    tape.record(out, [ac, oc, n, c]() mutable {
      if (!oc.has_grad()) return;
      double* dA = ac.grad().data();
      const double* G = oc.grad_view().data();
      const double* S = oc.data().data();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += G[i * c + j] * S[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          dA[i * c + j] += S[i * c + j] * (G[i * c + j] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward / grad_check
// ---------------------------------------------------------------------------

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// Max over coordinates of |analytic - central difference| / max(1, |cd|).
// f must be deterministic; eps > 0.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw NumericError("grad_check requires eps > 0");
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(tape, probe);
    if (y.size() != 1) throw ShapeError("grad_check expects a scalar-valued function");
    tape.backward(y);
    analytic = probe.grad();
    if (analytic.empty()) analytic.assign(x.size(), 0.0);
  }
  double max_rel = 0.0;
  Tensor shifted = x.clone();
  shifted.set_requires_grad(false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = shifted.data()[i];
    shifted.data()[i] = saved + eps;
    double fp;
    {
      Tape tape;
      fp = f(tape, shifted).value();
    }
    shifted.data()[i] = saved - eps;
    double fm;
    {
      Tape tape;
      fm = f(tape, shifted).value();
    }
    shifted.data()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      throw NumericError("grad_check encountered a non-finite value");
    }
    const double rel = std::fabs(analytic[i] - numeric) /
                       std::max(1.0, std::fabs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace untrack
