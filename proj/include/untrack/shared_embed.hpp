#pragma once

#include <string>
#include <vector>

#include "untrack/edge_grad.hpp"
#include "untrack/linear.hpp"
#include "untrack/types.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Shared embedding: modality-specific low-rank approximation, fusion with
// edge guidance, reconstruction into a modality-agnostic feature F.
//
//   X_k = sigma_x(X)                    (per-modality down-projection)
//   M_k = phi_r1([D_k, T_k, E_k]) + phi_r2(G_k)
//   F   = big_phi_r(M_k) + G
// ---------------------------------------------------------------------------

// Selector for the modality-specific down-projections. The gradient feature
// has a projector of its own.
enum class SigmaKind { Depth, Thermal, Event, Gradient };

struct SharedEmbedConfig {
  std::size_t channels = 64;
  std::size_t rank_k = 4;
  // Ablation switches.
  bool no_explicit_edge = false;     // replace G by a zero feature
  bool no_implicit_learning = false; // F := G
  bool no_indomain_approx = false;   // one shared sigma for depth/thermal/event
  bool dedicated_absent_sigma = false;
  bool hidden_layer = false;         // sigma/phi/Phi become 2-layer MLPs
};

struct SharedEmbedBlock {
  SharedEmbedConfig cfg;
  // Down halves of the low-rank projectors, [k, c] each.
  Projection sigma_d, sigma_t, sigma_e, sigma_g;
  Projection sigma_shared;  // only built for the in-domain ablation
  Projection sigma_absent;  // only built when a dedicated absent path is on
  Projection phi_r1;        // [k, 3k]
  Projection phi_r2;        // [k, k]
  Projection big_phi_r;     // [c, k]

  static SharedEmbedBlock create(const SharedEmbedConfig& cfg, Rng& rng) {
    if (cfg.rank_k >= cfg.channels) {
      throw DomainError("shared embedding rank_k " + std::to_string(cfg.rank_k) +
                        " must be < channel width " + std::to_string(cfg.channels));
    }
    SharedEmbedBlock b;
    b.cfg = cfg;
    const std::size_t c = cfg.channels, k = cfg.rank_k;
    const bool h = cfg.hidden_layer;
    b.sigma_d = Projection::create(k, c, rng, h);
    b.sigma_t = Projection::create(k, c, rng, h);
    b.sigma_e = Projection::create(k, c, rng, h);
    b.sigma_g = Projection::create(k, c, rng, h);
    if (cfg.no_indomain_approx) b.sigma_shared = Projection::create(k, c, rng, h);
    if (cfg.dedicated_absent_sigma) b.sigma_absent = Projection::create(k, c, rng, h);
    b.phi_r1 = Projection::create(k, 3 * k, rng, h);
    b.phi_r2 = Projection::create(k, k, rng, h);
    b.big_phi_r = Projection::create(c, k, rng, h);
    return b;
  }

  void collect_params(ParamList& out, const std::string& prefix) const {
    collect(out, prefix + ".sigma_d", sigma_d);
    collect(out, prefix + ".sigma_t", sigma_t);
    collect(out, prefix + ".sigma_e", sigma_e);
    collect(out, prefix + ".sigma_g", sigma_g);
    if (cfg.no_indomain_approx) collect(out, prefix + ".sigma_shared", sigma_shared);
    if (cfg.dedicated_absent_sigma) collect(out, prefix + ".sigma_absent", sigma_absent);
    collect(out, prefix + ".phi_r1", phi_r1);
    collect(out, prefix + ".phi_r2", phi_r2);
    collect(out, prefix + ".big_phi_r", big_phi_r);
  }

  void set_trainable(bool value) {
    sigma_d.set_trainable(value);
    sigma_t.set_trainable(value);
    sigma_e.set_trainable(value);
    sigma_g.set_trainable(value);
    if (cfg.no_indomain_approx) sigma_shared.set_trainable(value);
    if (cfg.dedicated_absent_sigma) sigma_absent.set_trainable(value);
    phi_r1.set_trainable(value);
    phi_r2.set_trainable(value);
    big_phi_r.set_trainable(value);
  }
};

// Down-projection into the rank-k latent. Selection is by tag, never by
// content.
inline Tensor in_domain_lowrank(Tape& tape, const SharedEmbedBlock& block,
                                const Tensor& feat, SigmaKind kind) {
  if (feat.rank() != 2 || feat.cols() != block.cfg.channels) {
    throw ShapeError("in_domain_lowrank: feature " + dims_string(feat) +
                     " does not match channel width " +
                     std::to_string(block.cfg.channels));
  }
  if (kind == SigmaKind::Gradient) return block.sigma_g.forward(tape, feat);
  if (block.cfg.no_indomain_approx) return block.sigma_shared.forward(tape, feat);
  switch (kind) {
    case SigmaKind::Depth: return block.sigma_d.forward(tape, feat);
    case SigmaKind::Thermal: return block.sigma_t.forward(tape, feat);
    case SigmaKind::Event: return block.sigma_e.forward(tape, feat);
    default: break;
  }
  throw DomainError("in_domain_lowrank: unknown modality tag");
}

inline SigmaKind sigma_kind_for(Modality m) {
  switch (m) {
    case Modality::Depth: return SigmaKind::Depth;
    case Modality::Thermal: return SigmaKind::Thermal;
    case Modality::Event: return SigmaKind::Event;
    default: break;
  }
  throw DomainError("no in-domain projector for tag '" + to_string(m) + "'");
}

// M_k = phi_r1([D_k, T_k, E_k]) + phi_r2(G_k).
inline Tensor fuse_lowrank(Tape& tape, const SharedEmbedBlock& block, const Tensor& dk,
                           const Tensor& tk, const Tensor& ek, const Tensor& gk) {
  if (dk.dims() != tk.dims() || dk.dims() != ek.dims() || dk.dims() != gk.dims()) {
    throw ShapeError("fuse_lowrank: low-rank inputs disagree in dims");
  }
  if (dk.cols() != block.cfg.rank_k) {
    throw ShapeError("fuse_lowrank: input width " + std::to_string(dk.cols()) +
                     " != rank_k " + std::to_string(block.cfg.rank_k));
  }
  Tensor joint = block.phi_r1.forward(tape, concat_channels(tape, {dk, tk, ek}));
  return add(tape, joint, block.phi_r2.forward(tape, gk));
}

// F = big_phi_r(M_k) + G.
inline Tensor reconstruct(Tape& tape, const SharedEmbedBlock& block, const Tensor& mk,
                          const Tensor& g) {
  if (mk.cols() != block.cfg.rank_k) {
    throw ShapeError("reconstruct: latent width " + std::to_string(mk.cols()) +
                     " != rank_k " + std::to_string(block.cfg.rank_k));
  }
  if (g.cols() != block.cfg.channels || g.rows() != mk.rows()) {
    throw ShapeError("reconstruct: gradient feature " + dims_string(g) +
                     " incompatible with latent " + dims_string(mk));
  }
  return add(tape, block.big_phi_r.forward(tape, mk), g);
}

// Full per-sample pass. The auxiliary feature is routed through its tagged
// projector; the two unused modality slots are filled with zero tensors. An
// Absent sample routes a zero feature through sigma_d (or through the
// dedicated projector when that switch is on).
inline Tensor shared_embed_forward(Tape& tape, const SharedEmbedBlock& block,
                                   const Tensor& aux_feat, Modality tag,
                                   const Tensor& gradient_feature) {
  const std::size_t n = gradient_feature.rows();
  const std::size_t c = block.cfg.channels, k = block.cfg.rank_k;
  Tensor g = block.cfg.no_explicit_edge ? Tensor::zeros({n, c}) : gradient_feature;
  if (block.cfg.no_implicit_learning) return g;

  Tensor zeros_k = Tensor::zeros({n, k});
  Tensor dk = zeros_k, tk = zeros_k, ek = zeros_k;
  if (tag == Modality::Absent) {
    Tensor zero_feat = Tensor::zeros({n, c});
    dk = block.cfg.dedicated_absent_sigma
             ? block.sigma_absent.forward(tape, zero_feat)
             : in_domain_lowrank(tape, block, zero_feat, SigmaKind::Depth);
  } else {
    Tensor lr = in_domain_lowrank(tape, block, aux_feat, sigma_kind_for(tag));
    switch (tag) {
      case Modality::Depth: dk = lr; break;
      case Modality::Thermal: tk = lr; break;
      case Modality::Event: ek = lr; break;
      default: break;
    }
  }
  Tensor gk = in_domain_lowrank(tape, block, g, SigmaKind::Gradient);
  Tensor mk = fuse_lowrank(tape, block, dk, tk, ek, gk);
  return reconstruct(tape, block, mk, g);
}

// Batch wrapper: one auxiliary feature + tag + gradient feature per sample.
struct SharedEmbedInput {
  Tensor aux_feat;
  Modality tag = Modality::Absent;
  Tensor gradient_feature;
};

inline std::vector<Tensor> shared_embed_forward(Tape& tape,
                                                const SharedEmbedBlock& block,
                                                const std::vector<SharedEmbedInput>& batch) {
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (const SharedEmbedInput& s : batch) {
    out.push_back(shared_embed_forward(tape, block, s.aux_feat, s.tag,
                                       s.gradient_feature));
  }
  return out;
}

}  // namespace untrack
