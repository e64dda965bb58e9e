#pragma once

#include <string>
#include <vector>

#include "untrack/harness.hpp"

namespace untrack {

// Finite-difference verification of every composed module forward, the same
// checks the acceptance suite runs. Each entry reports the max relative error
// over `seeds` random draws against its budget.

struct GradCheckEntry {
  std::string module;
  double max_rel_err = 0.0;
  double budget = 1e-4;
  bool passed() const { return max_rel_err < budget; }
};

namespace detail {

inline Tensor random_tensor_dims(std::vector<std::size_t> dims, Rng& rng, double lo,
                                 double hi) {
  std::size_t total = 1;
  for (std::size_t d : dims) total *= d;
  std::vector<double> v(total);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(dims), std::move(v));
}

}  // namespace detail

inline std::vector<GradCheckEntry> gradcheck_battery(std::size_t seeds = 10) {
  std::vector<GradCheckEntry> report;

  {  // edge_grad: pool -> concat -> project -> residual add
    GradCheckEntry entry{"edge_grad", 0.0, 1e-4};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(1000 + s);
      Tensor rgb = detail::random_tensor_dims({3, 8, 8}, rng, 0, 1);
      Tensor aux = detail::random_tensor_dims({3, 8, 8}, rng, 0, 1);
      Tensor visual = detail::random_tensor_dims({4, 5}, rng, -1, 1);
      LinearLayer proj = LinearLayer::create(5, 6, rng);
      const double err = grad_check(
          [&](Tape& t, const Tensor& x) {
            GradientFeature g = build_gradient_feature(t, x, aux, visual, proj, 4);
            return sum_all(t, mul(t, g.value, g.value));
          },
          rgb, 1e-5);
      entry.max_rel_err = std::max(entry.max_rel_err, err);
    }
    report.push_back(entry);
  }

  {  // shared_embed on random [8,16] inputs with k = 4
    GradCheckEntry entry{"shared_embed", 0.0, 1e-4};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(2000 + s);
      SharedEmbedConfig cfg;
      cfg.channels = 16;
      cfg.rank_k = 4;
      SharedEmbedBlock block = SharedEmbedBlock::create(cfg, rng);
      Tensor g = detail::random_tensor_dims({8, 16}, rng, -1, 1);
      Tensor aux = detail::random_tensor_dims({8, 16}, rng, -1, 1);
      const Modality tag = s % 3 == 0 ? Modality::Depth
                                      : (s % 3 == 1 ? Modality::Thermal : Modality::Event);
      const double err = grad_check(
          [&](Tape& t, const Tensor& x) {
            Tensor f = shared_embed_forward(t, block, x, tag, g);
            return sum_all(t, mul(t, f, f));
          },
          aux, 1e-5);
      entry.max_rel_err = std::max(entry.max_rel_err, err);
    }
    report.push_back(entry);
  }

  {  // modal_prompt through the token partition
    GradCheckEntry entry{"modal_prompt", 0.0, 1e-4};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(3000 + s);
      PromptConfig cfg;
      cfg.channels = 10;
      cfg.rank_l = 4;
      PromptBlock block = PromptBlock::create(cfg, rng);
      Tensor i_feat = detail::random_tensor_dims({8, 10}, rng, -1, 1);
      Tensor f_feat = detail::random_tensor_dims({8, 10}, rng, -1, 1);
      const double err = grad_check(
          [&](Tape& t, const Tensor& x) {
            Tensor o = prompt_forward(t, block, x, f_feat);
            return sum_all(t, mul(t, o, o));
          },
          i_feat, 1e-5);
      entry.max_rel_err = std::max(entry.max_rel_err, err);
    }
    report.push_back(entry);
  }

  {  // lora_adapter
    GradCheckEntry entry{"lora_adapter", 0.0, 1e-4};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(4000 + s);
      LoraLinear layer = make_unadapted(LinearLayer::create(6, 8, rng));
      wrap_lora(layer, 2, rng);
      for (double& v : layer.b.data()) v = rng.uniform(-0.3, 0.3);
      Tensor x = detail::random_tensor_dims({5, 8}, rng, -1, 1);
      const double err_x = grad_check(
          [&](Tape& t, const Tensor& probe) {
            Tensor h = layer.forward(t, probe);
            return sum_all(t, mul(t, h, h));
          },
          x, 1e-5);
      const double err_a = grad_check(
          [&](Tape& t, const Tensor& probe) {
            LoraLinear l = layer;
            l.a = probe;
            Tensor h = l.forward(t, x);
            return sum_all(t, mul(t, h, h));
          },
          layer.a, 1e-5);
      entry.max_rel_err = std::max({entry.max_rel_err, err_x, err_a});
    }
    report.push_back(entry);
  }

  {  // miniature backbone end to end (image 16, patch 8, c 8, depth 2)
    GradCheckEntry entry{"backbone_miniature", 0.0, 1e-3};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(5000 + s);
      TrackerConfig cfg;
      cfg.image_size = 16;
      cfg.template_size = 8;
      cfg.patch_size = 8;
      cfg.embed_dim = 8;
      cfg.depth = 2;
      cfg.heads = 2;
      cfg.rank_k = 2;
      cfg.rank_l = 4;
      cfg.lora_rank = 2;
      cfg.prompt_layers = {1, 2};
      TrackerModel model = TrackerModel::create(cfg, rng);
      model.freeze_backbone_and_adapt(rng);
      ModalSample search;
      search.rgb = detail::random_tensor_dims({3, 16, 16}, rng, 0, 1);
      search.aux = detail::random_tensor_dims({3, 16, 16}, rng, 0, 1);
      search.modality = s % 2 ? Modality::Thermal : Modality::Event;
      Tensor tpl = detail::random_tensor_dims({3, 8, 8}, rng, 0, 1);
      const double err = grad_check(
          [&](Tape& t, const Tensor& frame) {
            ModalSample probe = search;
            probe.rgb = frame;
            ForwardResult r = model.forward(t, tpl, probe);
            Tensor a = sum_all(t, mul(t, r.score_map, r.score_map));
            Tensor b = sum_all(t, mul(t, r.bbox_params, r.bbox_params));
            return add(t, a, b);
          },
          search.rgb, 1e-5);
      entry.max_rel_err = std::max(entry.max_rel_err, err);
    }
    report.push_back(entry);
  }

  return report;
}

}  // namespace untrack
