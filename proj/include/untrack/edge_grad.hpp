#pragma once

#include <optional>

#include "untrack/linear.hpp"
#include "untrack/tensor.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Explicit edge awareness: neighbor-difference gradient maps from RGB and
// auxiliary frames, pooled per patch and fused with the visual feature.
// ---------------------------------------------------------------------------

// Per-channel x/y difference maps, same dims as the source image; the last
// column (resp. row) of differences is zero so the map stays linear in the
// image.
struct GradientPair {
  Tensor dx;  // [C, H, W]
  Tensor dy;  // [C, H, W]
};

// Feature aligned with the backbone token grid, symbolized by the fused
// edge-plus-visual representation.
struct GradientFeature {
  Tensor value;  // [n_tokens, c]
};

namespace detail {

inline void check_image(const Tensor& img, const char* op) {
  if (img.rank() != 3) {
    throw ShapeError(std::string(op) + " requires a [C,H,W] image, got " +
                     dims_string(img));
  }
}

// axis 0: dx (differences along width); axis 1: dy (along height).
inline Tensor neighbor_diff(Tape& tape, const Tensor& img, int axis) {
  check_image(img, "gradient_map");
  const std::size_t C = img.dims()[0], H = img.dims()[1], W = img.dims()[2];
  if (H < 2 || W < 2) {
    throw SizeError("gradient_map requires H >= 2 and W >= 2, got " + dims_string(img));
  }
  Tensor out = Tensor::zeros(img.dims(), img.requires_grad());
  const double* I = img.data().data();
  double* O = out.data().data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t at = (c * H + i) * W + j;
        if (axis == 0) {
          O[at] = (j + 1 < W) ? I[at + 1] - I[at] : 0.0;
        } else {
          O[at] = (i + 1 < H) ? I[at + W] - I[at] : 0.0;
        }
      }
    }
  }
  if (img.requires_grad()) {
    Tensor ic = img, oc = out;
    tape.record(out, [ic, oc, C, H, W, axis]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      double* dI = ic.grad().data();
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < H; ++i) {
          for (std::size_t j = 0; j < W; ++j) {
            const std::size_t at = (c * H + i) * W + j;
            const double g = G[at];
            if (g == 0.0) continue;
            if (axis == 0) {
              if (j + 1 < W) {
                dI[at + 1] += g;
                dI[at] -= g;
              }
            } else {
              if (i + 1 < H) {
                dI[at + W] += g;
                dI[at] -= g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// dx[c,i,j] = img[c,i,j+1] - img[c,i,j] (zero in the last column), dy
// analogous along rows.
inline GradientPair gradient_map(Tape& tape, const Tensor& image) {
  return GradientPair{detail::neighbor_diff(tape, image, 0),
                      detail::neighbor_diff(tape, image, 1)};
}

// Mean over channels: [C,H,W] -> [1,H,W].
inline Tensor channel_mean(Tape& tape, const Tensor& img) {
  detail::check_image(img, "channel_mean");
  const std::size_t C = img.dims()[0], H = img.dims()[1], W = img.dims()[2];
  Tensor out = Tensor::zeros({1, H, W}, img.requires_grad());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i)
      out.data()[i] += img.data()[c * H * W + i];
  for (std::size_t i = 0; i < H * W; ++i) out.data()[i] /= static_cast<double>(C);
  if (img.requires_grad()) {
    Tensor ic = img, oc = out;
    tape.record(out, [ic, oc, C, H, W]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      double* dI = ic.grad().data();
      const double inv = 1.0 / static_cast<double>(C);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) dI[c * H * W + i] += G[i] * inv;
    });
  }
  return out;
}

// Average-pools each channel over non-overlapping p x p patches and lays the
// result out on the token grid: [C,H,W] -> [n, C] with n = (H/p)*(W/p).
inline Tensor patch_average(Tape& tape, const Tensor& img, std::size_t p) {
  detail::check_image(img, "patch_average");
  const std::size_t C = img.dims()[0], H = img.dims()[1], W = img.dims()[2];
  if (p == 0 || H % p != 0 || W % p != 0) {
    throw SizeError("patch_average: image " + dims_string(img) +
                    " not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = H / p, gw = W / p, n = gh * gw;
  Tensor out = Tensor::zeros({n, C}, img.requires_grad());
  const double inv = 1.0 / static_cast<double>(p * p);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dxp = 0; dxp < p; ++dxp)
            acc += img.data()[(c * H + gy * p + dy) * W + gx * p + dxp];
        out.data()[(gy * gw + gx) * C + c] = acc * inv;
      }
    }
  }
  if (img.requires_grad()) {
    Tensor ic = img, oc = out;
    tape.record(out, [ic, oc, C, H, W, p, gh, gw, inv]() mutable {
      if (!oc.has_grad()) return;
      const double* G = oc.grad_view().data();
      double* dI = ic.grad().data();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t gy = 0; gy < gh; ++gy)
          for (std::size_t gx = 0; gx < gw; ++gx) {
            const double g = G[(gy * gw + gx) * C + c] * inv;
            for (std::size_t dy = 0; dy < p; ++dy)
              for (std::size_t dxp = 0; dxp < p; ++dxp)
                dI[(c * H + gy * p + dy) * W + gx * p + dxp] += g;
          }
    });
  }
  return out;
}

namespace detail {

// |dx| + |dy| per channel, optionally collapsed to a single luminance channel
// before differencing.
inline Tensor edge_magnitude(Tape& tape, const Tensor& img, bool per_channel) {
  Tensor src = per_channel ? img : channel_mean(tape, img);
  GradientPair g = gradient_map(tape, src);
  return add(tape, untrack::abs(tape, g.dx), untrack::abs(tape, g.dy));
}

}  // namespace detail

// Pools edge magnitudes of the RGB and auxiliary frames per patch,
// concatenates them channel-wise, projects to the feature width and adds the
// visual feature. An absent auxiliary frame contributes all-zero maps.
inline GradientFeature build_gradient_feature(Tape& tape, const Tensor& rgb,
                                              const std::optional<Tensor>& aux,
                                              const Tensor& visual_feat,
                                              const LinearLayer& proj,
                                              std::size_t patch,
                                              bool per_channel = true) {
  detail::check_image(rgb, "build_gradient_feature");
  const std::size_t H = rgb.dims()[1], W = rgb.dims()[2];
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw SizeError("build_gradient_feature: frame not divisible by patch size");
  }
  const std::size_t n = (H / patch) * (W / patch);
  if (visual_feat.rank() != 2 || visual_feat.dims()[0] != n) {
    throw ShapeError("build_gradient_feature: visual feature " +
                     dims_string(visual_feat) + " does not match token grid of " +
                     std::to_string(n) + " tokens");
  }
  Tensor pooled_rgb = patch_average(tape, detail::edge_magnitude(tape, rgb, per_channel), patch);
  Tensor pooled_aux;
  if (aux.has_value()) {
    if (aux->dims()[1] != H || aux->dims()[2] != W) {
      throw ShapeError("build_gradient_feature: aux frame " + dims_string(*aux) +
                       " does not match rgb " + dims_string(rgb));
    }
    pooled_aux = patch_average(tape, detail::edge_magnitude(tape, *aux, per_channel), patch);
  } else {
    pooled_aux = Tensor::zeros({n, pooled_rgb.cols()});
  }
  Tensor feats = concat_channels(tape, {pooled_rgb, pooled_aux});
  if (proj.in_features() != feats.cols() || proj.out_features() != visual_feat.cols()) {
    throw ShapeError("build_gradient_feature: projection " + dims_string(proj.weight) +
                     " incompatible with pooled maps " + dims_string(feats));
  }
  Tensor g = add(tape, proj.forward(tape, feats), visual_feat);
  return GradientFeature{g};
}

}  // namespace untrack
