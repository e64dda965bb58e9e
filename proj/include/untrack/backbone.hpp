#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "untrack/edge_grad.hpp"
#include "untrack/lora.hpp"
#include "untrack/modal_prompt.hpp"
#include "untrack/shared_embed.hpp"
#include "untrack/types.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Toy one-stream transformer tracker. Template and search tokens pass jointly
// through LoRA-wrapped attention blocks; modal prompting rewrites the search
// slice at configured depths; a per-token head emits objectness logits and
// box parameters.
// ---------------------------------------------------------------------------

struct TrackerConfig {
  std::size_t image_size = 64;
  std::size_t template_size = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 64;
  std::size_t depth = 9;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t rank_k = 4;
  std::size_t rank_l = 8;
  std::size_t lora_rank = 4;
  double percentile = 0.25;
  std::vector<std::size_t> prompt_layers{3, 6, 9};  // 1-based, prompt after block i

  // Ablation switches.
  bool no_explicit_edge = false;
  bool no_implicit_learning = false;
  bool no_indomain_approx = false;
  bool no_shared_embed = false;
  bool no_lora = false;
  bool no_prompt = false;
  bool prompt_residual = true;
  bool edge_per_channel = true;
  bool absent_dedicated_sigma = false;
  bool hidden_projections = false;
  bool lora_scaled = false;
  double lora_alpha = 1.0;

  std::size_t search_grid() const { return image_size / patch_size; }
  std::size_t n_search_tokens() const { return search_grid() * search_grid(); }
  std::size_t n_template_tokens() const {
    return (template_size / patch_size) * (template_size / patch_size);
  }

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw UsageError("config key '" + key + "': " + why);
    };
    if (patch_size == 0 || image_size % patch_size != 0)
      fail("image_size", "must be divisible by patch_size");
    if (template_size % patch_size != 0)
      fail("template_size", "must be divisible by patch_size");
    if (template_size > image_size) fail("template_size", "must be <= image_size");
    if (heads == 0 || embed_dim % heads != 0)
      fail("embed_dim", "must be divisible by heads");
    if (depth == 0) fail("depth", "must be >= 1");
    if (mlp_ratio == 0) fail("mlp_ratio", "must be >= 1");
    if (rank_k == 0 || rank_k >= embed_dim) fail("rank_k", "must satisfy 1 <= k < embed_dim");
    if (rank_l == 0 || rank_l >= embed_dim) fail("rank_l", "must satisfy 1 <= l < embed_dim");
    if (lora_rank == 0 || lora_rank >= embed_dim)
      fail("lora_rank", "must satisfy 1 <= r < embed_dim");
    if (!(percentile > 0.0) || percentile > 0.5)
      fail("percentile", "must lie in (0, 1/2]");
    for (std::size_t layer : prompt_layers) {
      if (layer == 0 || layer > depth)
        fail("prompt_layers", "index " + std::to_string(layer) +
                                  " outside 1.." + std::to_string(depth));
    }
    const std::size_t q = partition_count(n_search_tokens(), percentile);
    if (2 * q > n_search_tokens())
      fail("percentile", "2*ceil(n*rho) exceeds the search token count");
  }
};

// x / sqrt(mean(x^2) + eps) * gain, row-wise.
inline Tensor rms_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                       double eps = 1e-6) {
  const double inv_c = 1.0 / static_cast<double>(x.cols());
  Tensor ms = mul_scalar(tape, row_sum(tape, mul(tape, x, x)), inv_c);
  Tensor inv = reciprocal(tape, untrack::sqrt(tape, add_scalar(tape, ms, eps)));
  return mul(tape, scale_rows(tape, x, inv), gain);
}

// Flattens non-overlapping p x p patches: [C,H,W] -> [n, C*p*p], token order
// row-major over the patch grid, channel-major within a patch.
inline Tensor patch_extract(Tape& tape, const Tensor& frame, std::size_t p) {
  if (frame.rank() != 3) throw ShapeError("patch_extract requires [C,H,W]");
  const std::size_t C = frame.dims()[0], H = frame.dims()[1], W = frame.dims()[2];
  if (p == 0 || H % p != 0 || W % p != 0) {
    throw SizeError("patch_extract: frame " + dims_string(frame) +
                    " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = H / p, gw = W / p, n = gh * gw, width = C * p * p;
  Tensor out = Tensor::zeros({n, width}, frame.requires_grad());
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const std::size_t tok = gy * gw + gx;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            out.data()[tok * width + (c * p + dy) * p + dx] =
                frame.data()[(c * H + gy * p + dy) * W + gx * p + dx];
    }
  if (frame.requires_grad()) {
    Tensor fc = frame, oc = out;
    tape.record(out, [fc, oc, C, H, W, p, gh, gw, width]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      double* dF = fc.grad().data();
      for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const std::size_t tok = gy * gw + gx;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t dy = 0; dy < p; ++dy)
              for (std::size_t dx = 0; dx < p; ++dx)
                dF[(c * H + gy * p + dy) * W + gx * p + dx] +=
                    G[tok * width + (c * p + dy) * p + dx];
        }
    });
  }
  return out;
}

// Patch tokens + linear embedding + learned positional embedding.
inline Tensor patchify(Tape& tape, const Tensor& frame, std::size_t p,
                       const LinearLayer& embed, const Tensor& pos) {
  Tensor tokens = embed.forward(tape, patch_extract(tape, frame, p));
  if (pos.dims() != tokens.dims()) {
    throw ShapeError("patchify: positional embedding " + dims_string(pos) +
                     " does not match tokens " + dims_string(tokens));
  }
  return add(tape, tokens, pos);
}

struct AttnBlock {
  Tensor norm1_gain, norm2_gain;  // [1, c]
  LoraLinear q, k, v, o;
  LinearLayer fc1, fc2;
  std::size_t heads = 1;

  static AttnBlock create(std::size_t c, std::size_t heads, std::size_t mlp_ratio,
                          Rng& rng) {
    AttnBlock b;
    b.heads = heads;
    b.norm1_gain = Tensor::full({1, c}, 1.0, true);
    b.norm2_gain = Tensor::full({1, c}, 1.0, true);
    b.q = make_unadapted(LinearLayer::create(c, c, rng));
    b.k = make_unadapted(LinearLayer::create(c, c, rng));
    b.v = make_unadapted(LinearLayer::create(c, c, rng));
    b.o = make_unadapted(LinearLayer::create(c, c, rng));
    b.fc1 = LinearLayer::create(c * mlp_ratio, c, rng);
    b.fc2 = LinearLayer::create(c, c * mlp_ratio, rng);
    return b;
  }

  Tensor forward(Tape& tape, const Tensor& x) const {
    const std::size_t c = x.cols();
    const std::size_t hd = c / heads;
    Tensor h = rms_norm(tape, x, norm1_gain);
    Tensor qs = q.forward(tape, h), ks = k.forward(tape, h), vs = v.forward(tape, h);
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t head = 0; head < heads; ++head) {
      Tensor qh = slice_cols(tape, qs, head * hd, hd);
      Tensor kh = slice_cols(tape, ks, head * hd, hd);
      Tensor vh = slice_cols(tape, vs, head * hd, hd);
      Tensor attn = row_softmax(
          tape, mul_scalar(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt));
      head_outs.push_back(matmul(tape, attn, vh));
    }
    Tensor merged = concat_channels(tape, head_outs);
    Tensor x1 = add(tape, x, o.forward(tape, merged));
    Tensor h2 = rms_norm(tape, x1, norm2_gain);
    Tensor m = fc2.forward(tape, relu(tape, fc1.forward(tape, h2)));
    return add(tape, x1, m);
  }

  void collect_params(ParamList& out, const std::string& prefix) const {
    collect(out, prefix + ".norm1", norm1_gain);
    collect(out, prefix + ".norm2", norm2_gain);
    q.collect_params(out, prefix + ".q");
    k.collect_params(out, prefix + ".k");
    v.collect_params(out, prefix + ".v");
    o.collect_params(out, prefix + ".o");
    collect(out, prefix + ".fc1", fc1);
    collect(out, prefix + ".fc2", fc2);
  }

  void set_trainable(bool value) {
    norm1_gain.set_requires_grad(value);
    norm2_gain.set_requires_grad(value);
    for (LoraLinear* l : {&q, &k, &v, &o}) l->w0.set_trainable(value);
    fc1.set_trainable(value);
    fc2.set_trainable(value);
  }
};

// LoRA on all four attention projections; B = 0 keeps outputs unchanged.
inline void wrap_attention(AttnBlock& block, std::size_t rank, Rng& rng,
                           bool use_scaling = false, double alpha = 1.0) {
  wrap_lora(block.q, rank, rng, use_scaling, alpha);
  wrap_lora(block.k, rank, rng, use_scaling, alpha);
  wrap_lora(block.v, rank, rng, use_scaling, alpha);
  wrap_lora(block.o, rank, rng, use_scaling, alpha);
}

struct ForwardResult {
  Tensor score_map;    // [n_search], raw objectness logits
  Tensor bbox_params;  // [n_search, 4], sigmoid-normalized cx, cy, w, h
};

struct TrackerModel {
  TrackerConfig cfg;
  LinearLayer patch_embed;
  Tensor pos_template, pos_search;
  std::vector<AttnBlock> blocks;
  Tensor head_norm_gain;
  LinearLayer head_score, head_bbox;
  LinearLayer edge_proj;
  SharedEmbedBlock binding;
  std::vector<PromptBlock> prompts;  // one per entry of cfg.prompt_layers
  bool prompting_active = true;      // pretraining runs with prompting off

  static TrackerModel create(const TrackerConfig& cfg, Rng& rng) {
    cfg.validate();
    TrackerModel m;
    m.cfg = cfg;
    const std::size_t c = cfg.embed_dim, p = cfg.patch_size;
    m.patch_embed = LinearLayer::create(c, 3 * p * p, rng);
    m.pos_template = Tensor::zeros({cfg.n_template_tokens(), c}, true);
    m.pos_search = Tensor::zeros({cfg.n_search_tokens(), c}, true);
    for (double& v : m.pos_template.data()) v = rng.uniform(-0.02, 0.02);
    for (double& v : m.pos_search.data()) v = rng.uniform(-0.02, 0.02);
    for (std::size_t i = 0; i < cfg.depth; ++i)
      m.blocks.push_back(AttnBlock::create(c, cfg.heads, cfg.mlp_ratio, rng));
    m.head_norm_gain = Tensor::full({1, c}, 1.0, true);
    m.head_score = LinearLayer::create(1, c, rng);
    m.head_bbox = LinearLayer::create(4, c, rng);

    const std::size_t edge_in = cfg.edge_per_channel ? 6 : 2;
    m.edge_proj = LinearLayer::create(c, edge_in, rng);
    SharedEmbedConfig se;
    se.channels = c;
    se.rank_k = cfg.rank_k;
    se.no_explicit_edge = cfg.no_explicit_edge;
    se.no_implicit_learning = cfg.no_implicit_learning;
    se.no_indomain_approx = cfg.no_indomain_approx;
    se.dedicated_absent_sigma = cfg.absent_dedicated_sigma;
    se.hidden_layer = cfg.hidden_projections;
    m.binding = SharedEmbedBlock::create(se, rng);
    PromptConfig pc;
    pc.channels = c;
    pc.rank_l = cfg.rank_l;
    pc.percentile = cfg.percentile;
    pc.residual = cfg.prompt_residual;
    pc.hidden_layer = cfg.hidden_projections;
    for (std::size_t i = 0; i < cfg.prompt_layers.size(); ++i)
      m.prompts.push_back(PromptBlock::create(pc, rng));
    return m;
  }

  // Frozen backbone + adapters topology: backbone tensors stop training,
  // binding/prompt stay trainable, LoRA adapters are installed.
  void freeze_backbone_and_adapt(Rng& rng) {
    patch_embed.set_trainable(false);
    pos_template.set_requires_grad(false);
    pos_search.set_requires_grad(false);
    for (AttnBlock& b : blocks) b.set_trainable(false);
    head_norm_gain.set_requires_grad(false);
    head_score.set_trainable(false);
    head_bbox.set_trainable(false);
    if (!cfg.no_lora) {
      for (AttnBlock& b : blocks)
        wrap_attention(b, cfg.lora_rank, rng, cfg.lora_scaled, cfg.lora_alpha);
    }
    prompting_active = !cfg.no_prompt;
  }

  void collect_params(ParamList& out) const {
    collect(out, "backbone.patch_embed", patch_embed);
    collect(out, "backbone.pos_template", pos_template);
    collect(out, "backbone.pos_search", pos_search);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect_params(out, "backbone.block" + std::to_string(i));
    collect(out, "head.norm", head_norm_gain);
    collect(out, "head.score", head_score);
    collect(out, "head.bbox", head_bbox);
    collect(out, "binding.edge_proj", edge_proj);
    binding.collect_params(out, "binding");
    for (std::size_t i = 0; i < prompts.size(); ++i)
      prompts[i].collect_params(out, "prompt" + std::to_string(i));
  }

  ParamList params() const {
    ParamList out;
    collect_params(out);
    return out;
  }

  // Shared embedding F for the search stream, built once per forward from the
  // auxiliary frame (zeros when dummy or absent) and the gradient feature.
  Tensor build_modal_feature(Tape& tape, const ModalSample& search,
                             const Tensor& search_tokens, bool dummy_mode) const {
    const std::size_t p = cfg.patch_size;
    const bool have_aux = search.aux.has_value() && !dummy_mode &&
                          search.modality != Modality::Absent;
    std::optional<Tensor> aux_frame;
    if (have_aux) {
      aux_frame = *search.aux;
    } else if (dummy_mode && search.modality != Modality::Absent) {
      aux_frame = Tensor::zeros(search.rgb.dims());
    }
    GradientFeature g =
        build_gradient_feature(tape, search.rgb, aux_frame, search_tokens, edge_proj,
                               p, cfg.edge_per_channel);
    Tensor aux_tokens;
    Modality route = search.modality;
    if (aux_frame.has_value()) {
      aux_tokens = patchify(tape, *aux_frame, p, patch_embed, pos_search);
    } else {
      route = Modality::Absent;
      aux_tokens = Tensor::zeros(search_tokens.dims());
    }
    if (cfg.no_shared_embed) {
      // Mixed modalities feed the prompting stage directly.
      return aux_tokens;
    }
    return shared_embed_forward(tape, binding, aux_tokens, route, g.value);
  }

  ForwardResult forward(Tape& tape, const Tensor& template_rgb,
                        const ModalSample& search, bool dummy_mode = false) const {
    if (search.rgb.dims() !=
        std::vector<std::size_t>{3, cfg.image_size, cfg.image_size}) {
      throw ConfigError("search frame " + dims_string(search.rgb) +
                        " does not match configured image size " +
                        std::to_string(cfg.image_size));
    }
    if (template_rgb.dims() !=
        std::vector<std::size_t>{3, cfg.template_size, cfg.template_size}) {
      throw ConfigError("template crop " + dims_string(template_rgb) +
                        " does not match configured template size " +
                        std::to_string(cfg.template_size));
    }
    const std::size_t p = cfg.patch_size;
    const std::size_t n_t = cfg.n_template_tokens(), n_s = cfg.n_search_tokens();
    Tensor t_tok = patchify(tape, template_rgb, p, patch_embed, pos_template);
    Tensor s_tok = patchify(tape, search.rgb, p, patch_embed, pos_search);

    Tensor modal_feat;
    const bool prompting = prompting_active && !cfg.no_prompt;
    if (prompting) modal_feat = build_modal_feature(tape, search, s_tok, dummy_mode);

    Tensor x = concat_rows(tape, {t_tok, s_tok});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      x = blocks[i].forward(tape, x);
      if (!prompting) continue;
      const auto it = std::find(cfg.prompt_layers.begin(), cfg.prompt_layers.end(), i + 1);
      if (it == cfg.prompt_layers.end()) continue;
      const std::size_t slot = static_cast<std::size_t>(it - cfg.prompt_layers.begin());
      Tensor search_slice = slice_rows(tape, x, n_t, n_s);
      Tensor prompted = prompt_forward(tape, prompts[slot], search_slice, modal_feat);
      x = concat_rows(tape, {slice_rows(tape, x, 0, n_t), prompted});
    }
    Tensor y = rms_norm(tape, x, head_norm_gain);
    Tensor search_out = slice_rows(tape, y, n_t, n_s);
    Tensor logits = head_score.forward(tape, search_out);
    Tensor boxes = sigmoid(tape, head_bbox.forward(tape, search_out));
    return ForwardResult{reshape(tape, logits, {n_s}), boxes};
  }
};

// Box parameterization: each row holds (dx, dy, w, h) in [0,1]; dx/dy place
// the center inside the token's grid cell, w/h are the normalized extent.
inline BBox box_from_params(std::size_t token, double dx, double dy, double w,
                            double h, std::size_t grid) {
  BBox box;
  const double g = static_cast<double>(grid);
  box.cx = (static_cast<double>(token % grid) + dx) / g;
  box.cy = (static_cast<double>(token / grid) + dy) / g;
  box.w = w;
  box.h = h;
  return box;
}

// Argmax token (lowest index on ties) selects the box row; confidence is the
// sigmoid of the winning logit.
inline std::pair<BBox, double> predict_bbox(const Tensor& score_map,
                                            const Tensor& bbox_params) {
  const std::size_t n = score_map.size();
  if (bbox_params.rank() != 2 || bbox_params.dims()[0] != n || bbox_params.dims()[1] != 4) {
    throw ShapeError("predict_bbox: params " + dims_string(bbox_params) +
                     " do not match score map " + dims_string(score_map));
  }
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
  if (grid * grid != n) {
    throw ShapeError("predict_bbox: token count is not a square grid");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (score_map.data()[i] > score_map.data()[best]) best = i;
  BBox box = box_from_params(best, bbox_params.at(best, 0), bbox_params.at(best, 1),
                             bbox_params.at(best, 2), bbox_params.at(best, 3), grid);
  return {box, sigmoid_scalar(score_map.data()[best])};
}

}  // namespace untrack
