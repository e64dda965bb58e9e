#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "untrack/io.hpp"
#include "untrack/rng.hpp"
#include "untrack/types.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Deterministic synthetic multimodal tracking sequences: a moving disk or
// square over cluttered background, plus a synthesized auxiliary channel.
// Contrast 0 renders the target invisible in RGB while depth/thermal still
// see it, which is what makes the fusion benefit measurable.
// ---------------------------------------------------------------------------

enum class TargetShape { Disk, Square };

struct SceneConfig {
  std::size_t frames = 20;
  std::size_t image_size = 64;
  TargetShape shape = TargetShape::Disk;
  double size_min = 10.0, size_max = 16.0;   // target extent, px
  double vel_min = 1.0, vel_max = 3.0;       // px/frame
  double clutter = 0.3;                      // [0,1]
  double contrast = 1.0;                     // [0,1]; 0 = invisible in RGB
  bool occluder = false;
  Modality modality = Modality::Absent;
  std::uint64_t seed = 0;
};

struct ModalSequence {
  std::string id;
  std::vector<ModalSample> samples;
  SceneConfig config;
};

namespace synth {

constexpr double kBackground = 0.35;
constexpr double kTargetLift = 0.5;
constexpr double kNoiseAmp = 0.1;
constexpr double kEventThreshold = 0.05;  // theta_e, fraction of dynamic range
constexpr double kOccluderValue = 0.55;
inline const double kTint[3] = {1.0, 0.85, 0.7};

struct TargetState {
  double cx, cy;       // px
  double size;         // px
  double depth;        // arbitrary units, used by the depth channel
};

inline bool inside_target(const TargetState& t, TargetShape shape, double x, double y) {
  const double dx = x - t.cx, dy = y - t.cy, half = t.size / 2.0;
  if (shape == TargetShape::Disk) return dx * dx + dy * dy <= half * half;
  return std::fabs(dx) <= half && std::fabs(dy) <= half;
}

struct OccluderBar {
  bool enabled = false;
  std::size_t x0 = 0, x1 = 0;  // column range [x0, x1)
};

}  // namespace synth

// Event frames: thresholded luminance difference of consecutive RGB frames,
// replicated to three channels. Frame 0 is all zeros.
inline std::vector<Tensor> synthesize_event_frames(const std::vector<Tensor>& rgb_frames) {
  std::vector<Tensor> out;
  out.reserve(rgb_frames.size());
  for (std::size_t t = 0; t < rgb_frames.size(); ++t) {
    const std::size_t H = rgb_frames[t].dims()[1], W = rgb_frames[t].dims()[2];
    Tensor frame = Tensor::zeros({3, H, W});
    if (t > 0) {
      const std::vector<double>& cur = rgb_frames[t].data();
      const std::vector<double>& prev = rgb_frames[t - 1].data();
      for (std::size_t i = 0; i < H * W; ++i) {
        const double lum_cur = (cur[i] + cur[H * W + i] + cur[2 * H * W + i]) / 3.0;
        const double lum_prev = (prev[i] + prev[H * W + i] + prev[2 * H * W + i]) / 3.0;
        const double mag = std::fabs(lum_cur - lum_prev);
        const double v = mag >= synth::kEventThreshold ? mag : 0.0;
        frame.data()[i] = v;
        frame.data()[H * W + i] = v;
        frame.data()[2 * H * W + i] = v;
      }
    }
    out.push_back(std::move(frame));
  }
  return out;
}

// Depth / thermal / event synthesis from the rendered RGB stream and the
// ground-truth trajectory.
inline std::vector<Tensor> synthesize_aux(const std::vector<Tensor>& rgb_frames,
                                          const std::vector<synth::TargetState>& states,
                                          TargetShape shape, Modality modality,
                                          const synth::OccluderBar& bar) {
  if (modality == Modality::Absent) {
    throw DomainError("synthesize_aux: modality must not be absent");
  }
  if (modality == Modality::Event) return synthesize_event_frames(rgb_frames);

  std::vector<Tensor> out;
  out.reserve(rgb_frames.size());
  for (std::size_t t = 0; t < rgb_frames.size(); ++t) {
    const std::size_t H = rgb_frames[t].dims()[1], W = rgb_frames[t].dims()[2];
    Tensor frame = Tensor::zeros({3, H, W});
    const synth::TargetState& st = states[t];
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.0;
        if (modality == Modality::Depth) {
          // Inverse-distance map with a smooth vertical background ramp.
          v = 0.08 + 0.15 * (static_cast<double>(y) / static_cast<double>(H));
          if (synth::inside_target(st, shape, x + 0.5, y + 0.5)) v = 1.0 / st.depth;
          if (bar.enabled && x >= bar.x0 && x < bar.x1) v = 0.95;  // near occluder
        } else {
          // Thermal: Gaussian heat blob over a cold background.
          const double sigma = st.size / 3.0;
          const double dx = x + 0.5 - st.cx, dy = y + 0.5 - st.cy;
          const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          v = 0.05 + 0.9 * blob;
          if (bar.enabled && x >= bar.x0 && x < bar.x1) v = 0.05;  // cold occluder
        }
        for (std::size_t c = 0; c < 3; ++c) frame.data()[(c * H + y) * W + x] = v;
      }
    }
    out.push_back(std::move(frame));
  }
  return out;
}

// Pure function of the config: target follows linear motion with boundary
// reflection; RGB carries contrast-scaled target over clutter noise.
inline ModalSequence generate_sequence(const SceneConfig& cfg) {
  if (cfg.frames == 0) throw SizeError("generate_sequence: frames must be >= 1");
  if (cfg.size_min > cfg.size_max || cfg.vel_min > cfg.vel_max) {
    throw DomainError("generate_sequence: empty size or velocity range");
  }
  const std::size_t S = cfg.image_size;
  Rng rng(cfg.seed);

  const double size = rng.uniform(cfg.size_min, cfg.size_max);
  const double margin = size / 2.0 + 1.0;
  double cx = rng.uniform(margin, S - margin);
  double cy = rng.uniform(margin, S - margin);
  double vx = rng.uniform(cfg.vel_min, cfg.vel_max) * (rng.coin() ? 1.0 : -1.0);
  double vy = rng.uniform(cfg.vel_min, cfg.vel_max) * (rng.coin() ? 1.0 : -1.0);

  // Linear depth trajectory with a slope big enough to test monotonicity.
  double depth0 = rng.uniform(1.5, 2.5);
  double depth_step = rng.uniform(0.02, 0.05) * (rng.coin() ? 1.0 : -1.0);
  const double depth_end = depth0 + depth_step * static_cast<double>(cfg.frames);
  if (depth_end < 1.1 || depth_end > 3.8) depth_step = -depth_step;

  synth::OccluderBar bar;
  if (cfg.occluder) {
    bar.enabled = true;
    bar.x0 = S / 2 + S / 8;
    bar.x1 = bar.x0 + S / 10 + 1;
  }

  std::vector<synth::TargetState> states;
  std::vector<Tensor> rgb_frames;
  std::vector<BBox> boxes;
  states.reserve(cfg.frames);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    states.push_back(synth::TargetState{cx, cy, size, depth0 + depth_step * t});

    Tensor frame = Tensor::zeros({3, S, S});
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const bool on_target =
            synth::inside_target(states.back(), cfg.shape, x + 0.5, y + 0.5);
        const bool on_bar = bar.enabled && x >= bar.x0 && x < bar.x1;
        for (std::size_t c = 0; c < 3; ++c) {
          double v;
          if (on_bar) {
            v = synth::kOccluderValue * synth::kTint[c];
          } else {
            v = synth::kBackground;
            if (on_target) v += cfg.contrast * synth::kTargetLift * synth::kTint[c];
            v += synth::kNoiseAmp * cfg.clutter * rng.uniform(-1.0, 1.0);
          }
          frame.data()[(c * S + y) * S + x] = v;
        }
      }
    }
    rgb_frames.push_back(std::move(frame));

    BBox box;
    box.cx = cx / S;
    box.cy = cy / S;
    box.w = size / S;
    box.h = size / S;
    boxes.push_back(box);

    cx += vx;
    cy += vy;
    if (cx < margin) { cx = 2 * margin - cx; vx = -vx; }
    if (cx > S - margin) { cx = 2 * (S - margin) - cx; vx = -vx; }
    if (cy < margin) { cy = 2 * margin - cy; vy = -vy; }
    if (cy > S - margin) { cy = 2 * (S - margin) - cy; vy = -vy; }
  }

  std::vector<Tensor> aux_frames;
  if (cfg.modality != Modality::Absent) {
    aux_frames = synthesize_aux(rgb_frames, states, cfg.shape, cfg.modality, bar);
  }

  ModalSequence seq;
  seq.config = cfg;
  seq.id = "seq_" + to_string(cfg.modality) + "_" + std::to_string(cfg.seed);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    ModalSample sample;
    sample.rgb = rgb_frames[t];
    if (cfg.modality != Modality::Absent) sample.aux = aux_frames[t];
    sample.modality = cfg.modality;
    sample.truth = boxes[t];
    seq.samples.push_back(std::move(sample));
  }
  return seq;
}

using Dataset = std::vector<ModalSequence>;

// ---------------------------------------------------------------------------
// Dataset directory: manifest.txt (id, modality, frame count, box file, frame
// files), per-frame UTT1 tensors, boxes.txt with decimal coordinates.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const ModalSequence& seq = dataset[s];
    const std::string sid = "seq" + std::to_string(s);
    const std::string box_file = sid + "_boxes.txt";
    std::string boxes_text;
    for (std::size_t t = 0; t < seq.samples.size(); ++t) {
      const BBox& b = seq.samples[t].truth;
      boxes_text += std::to_string(t) + " " + detail::format_decimal(b.cx) + " " +
                    detail::format_decimal(b.cy) + " " + detail::format_decimal(b.w) +
                    " " + detail::format_decimal(b.h) + "\n";
    }
    write_file_atomic(dir / box_file, boxes_text);

    manifest += sid + " " + to_string(seq.samples.empty() ? Modality::Absent
                                                          : seq.samples[0].modality) +
                " " + std::to_string(seq.samples.size()) + " " + box_file;
    for (std::size_t t = 0; t < seq.samples.size(); ++t) {
      const std::string rgb_file = sid + "_rgb_" + std::to_string(t) + ".utt";
      write_tensor(dir / rgb_file, seq.samples[t].rgb);
      manifest += " " + rgb_file;
      if (seq.samples[t].aux.has_value()) {
        const std::string aux_file = sid + "_aux_" + std::to_string(t) + ".utt";
        write_tensor(dir / aux_file, *seq.samples[t].aux);
        manifest += " " + aux_file;
      }
    }
    manifest += "\n";
  }
  write_file_atomic(dir / "manifest.txt", manifest);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.txt";
  const std::string text = read_file(manifest_path);
  Dataset dataset;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string sid, modality_name, box_file;
    std::size_t frames = 0;
    if (!(ls >> sid >> modality_name >> frames >> box_file)) {
      throw FormatError(manifest_path.string() + ": malformed sequence header, line " +
                        std::to_string(line_no));
    }
    ModalSequence seq;
    seq.id = sid;
    Modality modality;
    try {
      modality = modality_from_string(modality_name);
    } catch (const DomainError& e) {
      throw FormatError(manifest_path.string() + ": line " + std::to_string(line_no) +
                        ": " + e.what());
    }
    seq.config.modality = modality;
    seq.config.frames = frames;

    // Boxes
    std::vector<BBox> boxes(frames);
    {
      const std::string boxes_text = read_file(dir / box_file);
      std::istringstream bs(boxes_text);
      std::string bline;
      std::size_t count = 0;
      while (std::getline(bs, bline)) {
        if (bline.empty()) continue;
        std::istringstream bl(bline);
        std::size_t t;
        BBox b;
        if (!(bl >> t >> b.cx >> b.cy >> b.w >> b.h) || t >= frames) {
          throw FormatError((dir / box_file).string() + ": malformed box line");
        }
        boxes[t] = b;
        ++count;
      }
      if (count != frames) {
        throw FormatError((dir / box_file).string() + ": expected " +
                          std::to_string(frames) + " boxes, found " +
                          std::to_string(count));
      }
    }

    for (std::size_t t = 0; t < frames; ++t) {
      std::string rgb_file;
      if (!(ls >> rgb_file)) {
        throw FormatError(manifest_path.string() + ": line " + std::to_string(line_no) +
                          ": missing frame file " + std::to_string(t));
      }
      ModalSample sample;
      sample.rgb = read_tensor(dir / rgb_file);
      if (modality != Modality::Absent) {
        std::string aux_file;
        if (!(ls >> aux_file)) {
          throw FormatError(manifest_path.string() + ": line " +
                            std::to_string(line_no) + ": missing aux file " +
                            std::to_string(t));
        }
        sample.aux = read_tensor(dir / aux_file);
      }
      sample.modality = modality;
      sample.truth = boxes[t];
      seq.samples.push_back(std::move(sample));
    }
    std::string extra;
    if (ls >> extra) {
      throw FormatError(manifest_path.string() + ": line " + std::to_string(line_no) +
                        ": unexpected trailing token '" + extra + "'");
    }
    if (!seq.samples.empty()) {
      seq.config.image_size = seq.samples[0].rgb.dims()[1];
    }
    dataset.push_back(std::move(seq));
  }
  return dataset;
}

}  // namespace untrack
