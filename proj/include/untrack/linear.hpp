#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "untrack/rng.hpp"
#include "untrack/tensor.hpp"

namespace untrack {

// Fully connected layer, weight [out, in], optional bias [out].
// Default init: weight uniform in [-1/sqrt(in), +1/sqrt(in)], bias zero.
struct LinearLayer {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  LinearLayer() = default;

  static LinearLayer create(std::size_t out, std::size_t in, Rng& rng,
                            bool with_bias = true, bool trainable = true) {
    LinearLayer layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(out * in);
    for (double& v : w) v = rng.uniform(-bound, bound);
    layer.weight = Tensor({out, in}, std::move(w), trainable);
    if (with_bias) layer.bias = Tensor::zeros({out}, trainable);
    return layer;
  }

  bool defined() const { return weight.defined(); }
  bool has_bias() const { return bias.defined(); }
  std::size_t out_features() const { return weight.dims()[0]; }
  std::size_t in_features() const { return weight.dims()[1]; }

  bool trainable() const { return weight.requires_grad(); }
  void set_trainable(bool value) {
    weight.set_requires_grad(value);
    if (bias.defined()) bias.set_requires_grad(value);
  }

  // y = x W^T + b for x [n, in].
  Tensor forward(Tape& tape, const Tensor& x) const {
    if (x.rank() != 2 || x.dims()[1] != in_features()) {
      throw ShapeError("linear: input " + dims_string(x) + " incompatible with weight " +
                       dims_string(weight));
    }
    Tensor y = matmul(tape, x, transpose(tape, weight));
    if (bias.defined()) y = add(tape, y, bias);
    return y;
  }
};

// Down/up projection pair around a rank-r latent (r < c).
struct LowRankProjector {
  LinearLayer down;  // [r, c]
  LinearLayer up;    // [c, r]
  std::size_t rank = 0;

  static LowRankProjector create(std::size_t channels, std::size_t r, Rng& rng,
                                 bool trainable = true) {
    if (r >= channels) {
      throw DomainError("low-rank projector rank " + std::to_string(r) +
                        " must be < channel width " + std::to_string(channels));
    }
    LowRankProjector proj;
    proj.down = LinearLayer::create(r, channels, rng, true, trainable);
    proj.up = LinearLayer::create(channels, r, rng, true, trainable);
    proj.rank = r;
    return proj;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    return up.forward(tape, down.forward(tape, x));
  }
};

// Single linear map by default; the ablation switch inserts one hidden layer
// (width = out) with relu.
struct Projection {
  LinearLayer first;
  std::optional<LinearLayer> second;

  static Projection create(std::size_t out, std::size_t in, Rng& rng,
                           bool hidden, bool trainable = true) {
    Projection p;
    if (hidden) {
      p.first = LinearLayer::create(out, in, rng, true, trainable);
      p.second = LinearLayer::create(out, out, rng, true, trainable);
    } else {
      p.first = LinearLayer::create(out, in, rng, true, trainable);
    }
    return p;
  }

  std::size_t out_features() const {
    return second ? second->out_features() : first.out_features();
  }
  std::size_t in_features() const { return first.in_features(); }

  Tensor forward(Tape& tape, const Tensor& x) const {
    Tensor h = first.forward(tape, x);
    if (second) h = second->forward(tape, relu(tape, h));
    return h;
  }

  void set_trainable(bool value) {
    first.set_trainable(value);
    if (second) second->set_trainable(value);
  }
};

// Named parameter registry used for optimization, counting and checkpoints.
struct ParamEntry {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<ParamEntry>;

inline void collect(ParamList& out, const std::string& name, const Tensor& t) {
  if (t.defined()) out.push_back({name, t});
}

inline void collect(ParamList& out, const std::string& name, const LinearLayer& l) {
  if (!l.defined()) return;
  collect(out, name + ".weight", l.weight);
  if (l.has_bias()) collect(out, name + ".bias", l.bias);
}

inline void collect(ParamList& out, const std::string& name, const Projection& p) {
  collect(out, name + ".l1", p.first);
  if (p.second) collect(out, name + ".l2", *p.second);
}

}  // namespace untrack
