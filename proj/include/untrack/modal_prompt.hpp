#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "untrack/linear.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Outer modal prompting: score-based token partition, token exchange/fusion
// in a rank-l latent, reconstruction of the fused output.
//
//   m_n, m_u, m_p = s(I)
//   I_l1 = sigma_c(m_n . F + m_p . I)
//   I_l2 = sigma_n(m_u . (F + I))
//   I_l  = phi_p([I_l1, I_l2])           (same pipeline for F -> F_l)
//   O    = big_phi_p(I_l + F_l)          (+ residual I when enabled)
// ---------------------------------------------------------------------------

// Disjoint, exhaustive masks over n tokens; |m_p| == |m_n| == q.
struct TokenPartition {
  std::vector<std::uint8_t> m_n, m_u, m_p;
  Tensor scores;  // [n, 1]

  std::size_t token_count() const { return m_n.size(); }
};

// ceil(n * rho) with a guard against values that sit a few ulps above an
// exact integer product.
inline std::size_t partition_count(std::size_t n, double rho) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * rho - 1e-9));
}

// scores = sigmoid(score_layer(feat)); m_p = top-q, m_n = bottom-q among the
// rest, ties broken toward the lower index (stable).
inline TokenPartition score_tokens(Tape& tape, const LinearLayer& score_layer,
                                   const Tensor& feat, std::size_t q) {
  if (feat.rank() != 2) throw ShapeError("score_tokens requires [n,c] features");
  const std::size_t n = feat.rows();
  if (2 * q > n) {
    throw SizeError("score_tokens: 2q = " + std::to_string(2 * q) +
                    " exceeds token count " + std::to_string(n));
  }
  TokenPartition part;
  part.scores = sigmoid(tape, score_layer.forward(tape, feat));
  part.m_n.assign(n, 0);
  part.m_u.assign(n, 0);
  part.m_p.assign(n, 0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  const std::vector<double>& s = part.scores.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s[a] > s[b];  // descending; stable_sort keeps lower index first on ties
  });
  for (std::size_t i = 0; i < q; ++i) part.m_p[order[i]] = 1;

  std::vector<std::size_t> rest;
  rest.reserve(n - q);
  for (std::size_t i = 0; i < n; ++i)
    if (!part.m_p[i]) rest.push_back(i);
  std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
    return s[a] < s[b];  // ascending
  });
  for (std::size_t i = 0; i < q; ++i) part.m_n[rest[i]] = 1;

  for (std::size_t i = 0; i < n; ++i)
    if (!part.m_p[i] && !part.m_n[i]) part.m_u[i] = 1;
  return part;
}

namespace detail {

// Mask as a constant [n,1] column; no gradient flows through the selection.
inline Tensor mask_column(const std::vector<std::uint8_t>& mask) {
  std::vector<double> v(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 1.0 : 0.0;
  return Tensor({mask.size(), 1}, std::move(v));
}

}  // namespace detail

struct PromptStream {
  LinearLayer score_layer;  // [1, c]
  Projection sigma_c;       // [l, c]
  Projection sigma_n;       // [l, c]
  Projection phi_p;         // [l, 2l]
};

struct PromptConfig {
  std::size_t channels = 64;
  std::size_t rank_l = 8;
  double percentile = 0.25;  // rho in (0, 1/2]
  bool residual = true;      // O + I
  bool hidden_layer = false;
};

struct PromptBlock {
  PromptConfig cfg;
  PromptStream stream_i, stream_f;
  Projection big_phi_p;  // [c, l], shared between streams

  static PromptBlock create(const PromptConfig& cfg, Rng& rng) {
    if (cfg.rank_l >= cfg.channels) {
      throw DomainError("prompt rank_l " + std::to_string(cfg.rank_l) +
                        " must be < channel width " + std::to_string(cfg.channels));
    }
    if (!(cfg.percentile > 0.0) || cfg.percentile > 0.5) {
      throw DomainError("prompt percentile must lie in (0, 1/2]");
    }
    PromptBlock b;
    b.cfg = cfg;
    const std::size_t c = cfg.channels, l = cfg.rank_l;
    auto make_stream = [&]() {
      PromptStream s;
      s.score_layer = LinearLayer::create(1, c, rng);
      s.sigma_c = Projection::create(l, c, rng, cfg.hidden_layer);
      s.sigma_n = Projection::create(l, c, rng, cfg.hidden_layer);
      s.phi_p = Projection::create(l, 2 * l, rng, cfg.hidden_layer);
      return s;
    };
    b.stream_i = make_stream();
    b.stream_f = make_stream();
    b.big_phi_p = Projection::create(c, l, rng, cfg.hidden_layer);
    return b;
  }

  void collect_params(ParamList& out, const std::string& prefix) const {
    auto stream = [&](const PromptStream& s, const std::string& name) {
      collect(out, prefix + "." + name + ".score", s.score_layer);
      collect(out, prefix + "." + name + ".sigma_c", s.sigma_c);
      collect(out, prefix + "." + name + ".sigma_n", s.sigma_n);
      collect(out, prefix + "." + name + ".phi_p", s.phi_p);
    };
    stream(stream_i, "i");
    stream(stream_f, "f");
    collect(out, prefix + ".big_phi_p", big_phi_p);
  }

  void set_trainable(bool value) {
    for (PromptStream* s : {&stream_i, &stream_f}) {
      s->score_layer.set_trainable(value);
      s->sigma_c.set_trainable(value);
      s->sigma_n.set_trainable(value);
      s->phi_p.set_trainable(value);
    }
    big_phi_p.set_trainable(value);
  }
};

// sigma_c(m_n . other + m_p . own): negative rows take the other modality,
// positive rows keep their own, uncertain rows are zeroed.
inline Tensor lowrank_exchange(Tape& tape, const Projection& sigma_c,
                               const Tensor& own_feat, const Tensor& other_feat,
                               const TokenPartition& part) {
  detail::check_same_dims(own_feat, other_feat, "lowrank_exchange");
  Tensor composite = add(tape,
                         scale_rows(tape, other_feat, detail::mask_column(part.m_n)),
                         scale_rows(tape, own_feat, detail::mask_column(part.m_p)));
  return sigma_c.forward(tape, composite);
}

// sigma_n(m_u . (own + other)): nonzero only on uncertain rows.
inline Tensor lowrank_uncertain(Tape& tape, const Projection& sigma_n,
                                const Tensor& own_feat, const Tensor& other_feat,
                                const TokenPartition& part) {
  detail::check_same_dims(own_feat, other_feat, "lowrank_uncertain");
  Tensor merged = scale_rows(tape, add(tape, own_feat, other_feat),
                             detail::mask_column(part.m_u));
  return sigma_n.forward(tape, merged);
}

// phi_p over the channel concatenation of the two low-rank matrices.
inline Tensor fuse_stream(Tape& tape, const Projection& phi_p, const Tensor& il1,
                          const Tensor& il2) {
  detail::check_same_dims(il1, il2, "fuse_stream");
  return phi_p.forward(tape, concat_channels(tape, {il1, il2}));
}

namespace detail {

inline Tensor stream_lowrank(Tape& tape, const PromptStream& stream,
                             const Tensor& own, const Tensor& other, std::size_t q) {
  TokenPartition part = score_tokens(tape, stream.score_layer, own, q);
  Tensor l1 = lowrank_exchange(tape, stream.sigma_c, own, other, part);
  Tensor l2 = lowrank_uncertain(tape, stream.sigma_n, own, other, part);
  return fuse_stream(tape, stream.phi_p, l1, l2);
}

}  // namespace detail

// O = big_phi_p(I_l + F_l), each stream partitioned by its own score layer
// with symmetric roles. Masks are constants of the forward pass; gradients do
// not flow through the top-q selection.
inline Tensor prompt_forward(Tape& tape, const PromptBlock& block, const Tensor& i_feat,
                             const Tensor& f_feat) {
  detail::check_same_dims(i_feat, f_feat, "prompt_forward");
  if (i_feat.cols() != block.cfg.channels) {
    throw ShapeError("prompt_forward: features " + dims_string(i_feat) +
                     " do not match configured width " +
                     std::to_string(block.cfg.channels));
  }
  const std::size_t q = partition_count(i_feat.rows(), block.cfg.percentile);
  Tensor il = detail::stream_lowrank(tape, block.stream_i, i_feat, f_feat, q);
  Tensor fl = detail::stream_lowrank(tape, block.stream_f, f_feat, i_feat, q);
  Tensor o = block.big_phi_p.forward(tape, add(tape, il, fl));
  if (block.cfg.residual) o = add(tape, o, i_feat);
  return o;
}

}  // namespace untrack
