#pragma once

#include <string>

#include "untrack/linear.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Low-rank adaptation of a frozen projection: h = W0 x + B A x.
// B starts at zero so wrapping preserves behavior; only A and B train.
// ---------------------------------------------------------------------------

struct LoraLinear {
  LinearLayer w0;  // frozen base projection
  Tensor a;        // [r, in], trainable
  Tensor b;        // [out, r], trainable, zero-initialized
  std::size_t rank = 0;
  double scale = 1.0;  // alpha/r when the scaling switch is on, else 1

  bool adapted() const { return rank > 0; }

  std::size_t in_features() const { return w0.in_features(); }
  std::size_t out_features() const { return w0.out_features(); }

  Tensor forward(Tape& tape, const Tensor& x) const {
    if (x.rank() != 2 || x.dims()[1] != in_features()) {
      throw ShapeError("lora_forward: input " + dims_string(x) +
                       " incompatible with base weight " + dims_string(w0.weight));
    }
    Tensor h = w0.forward(tape, x);
    if (!adapted()) return h;
    Tensor low = matmul(tape, x, transpose(tape, a));      // [n, r]
    Tensor delta = matmul(tape, low, transpose(tape, b));  // [n, out]
    if (scale != 1.0) delta = mul_scalar(tape, delta, scale);
    return add(tape, h, delta);
  }

  void collect_params(ParamList& out, const std::string& prefix) const {
    collect(out, prefix, w0);
    if (adapted()) {
      collect(out, prefix + ".lora_a", a);
      collect(out, prefix + ".lora_b", b);
    }
  }
};

inline LoraLinear make_unadapted(LinearLayer base) {
  LoraLinear l;
  l.w0 = std::move(base);
  return l;
}

inline Tensor lora_forward(Tape& tape, const LoraLinear& layer, const Tensor& x) {
  return layer.forward(tape, x);
}

// Installs the adapters: freezes the base weights, zero-initializes B and
// draws A small-uniform, so the wrapped layer is output-identical until the
// first optimizer step.
inline void wrap_lora(LoraLinear& layer, std::size_t rank, Rng& rng,
                      bool use_scaling = false, double alpha = 1.0) {
  const std::size_t d = layer.out_features(), in = layer.in_features();
  if (rank == 0 || rank >= std::min(d, in)) {
    throw DomainError("lora rank " + std::to_string(rank) +
                      " must satisfy 1 <= r < min(out=" + std::to_string(d) +
                      ", in=" + std::to_string(in) + ")");
  }
  layer.w0.set_trainable(false);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> av(rank * in);
  for (double& v : av) v = rng.uniform(-bound, bound);
  layer.a = Tensor({rank, in}, std::move(av), true);
  layer.b = Tensor::zeros({d, rank}, true);
  layer.rank = rank;
  layer.scale = use_scaling ? alpha / static_cast<double>(rank) : 1.0;
}

// Counts trainable / total scalar parameters in a registry.
struct ParamCounts {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double ratio() const {
    return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
  }
};

inline ParamCounts trainable_params(const ParamList& params) {
  ParamCounts c;
  for (const ParamEntry& e : params) {
    c.total += e.tensor.size();
    if (e.tensor.requires_grad()) c.trainable += e.tensor.size();
  }
  return c;
}

}  // namespace untrack
