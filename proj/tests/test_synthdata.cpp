#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "untrack/synthdata.hpp"

using namespace untrack;
namespace fs = std::filesystem;

namespace {

SceneConfig base_config(Modality m, std::uint64_t seed, double contrast = 1.0,
                        double clutter = 0.3) {
  SceneConfig cfg;
  cfg.frames = 6;
  cfg.image_size = 32;
  cfg.size_min = 8;
  cfg.size_max = 10;
  cfg.modality = m;
  cfg.seed = seed;
  cfg.contrast = contrast;
  cfg.clutter = clutter;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("untrack_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(GenerateSequence, CleanHighContrastTargetIsBrighter) {
  SceneConfig cfg = base_config(Modality::Thermal, 3, 1.0, 0.0);
  ModalSequence seq = generate_sequence(cfg);
  const std::size_t S = cfg.image_size;
  for (const ModalSample& s : seq.samples) {
    const double bx = s.truth.cx * S, by = s.truth.cy * S, half = s.truth.w * S / 2.0;
    // every in-target pixel strictly above every background pixel, per channel
    for (std::size_t c = 0; c < 3; ++c) {
      double min_target = 1e9, max_bg = -1e9;
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const double dx = x + 0.5 - bx, dy = y + 0.5 - by;
          const double v = s.rgb.data()[(c * S + y) * S + x];
          if (dx * dx + dy * dy <= half * half * 0.64) {
            min_target = std::min(min_target, v);
          } else if (dx * dx + dy * dy > half * half * 1.44) {
            max_bg = std::max(max_bg, v);
          }
        }
      EXPECT_GT(min_target, max_bg);
    }
  }
}

TEST(GenerateSequence, SameSeedIsBitIdentical) {
  SceneConfig cfg = base_config(Modality::Event, 17);
  ModalSequence a = generate_sequence(cfg);
  ModalSequence b = generate_sequence(cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t t = 0; t < a.samples.size(); ++t) {
    EXPECT_EQ(a.samples[t].rgb.data(), b.samples[t].rgb.data());
    EXPECT_EQ(a.samples[t].aux->data(), b.samples[t].aux->data());
    EXPECT_EQ(a.samples[t].truth.cx, b.samples[t].truth.cx);
  }
}

TEST(GenerateSequence, ZeroContrastInvisibleInRgbVisibleInAux) {
  SceneConfig cfg = base_config(Modality::Thermal, 5, 0.0, 0.4);
  ModalSequence seq = generate_sequence(cfg);

  // Pixel-diff oracle: rendering with the target must equal rendering without
  // any contrast lift; compare against a re-render at contrast 0 with the
  // same seed but larger target (proxy: all pixel values fall in the pure
  // background + noise band).
  const std::size_t S = cfg.image_size;
  for (const ModalSample& s : seq.samples) {
    for (std::size_t i = 0; i < s.rgb.size(); ++i) {
      const double v = s.rgb.data()[i];
      EXPECT_LE(std::fabs(v - 0.35), 0.1 * cfg.clutter + 1e-12);
    }
    // Aux still contains a hot blob well above the cold background.
    double peak = 0.0;
    for (double v : s.aux->data()) peak = std::max(peak, v);
    EXPECT_GT(peak, 0.8);
  }
}

TEST(GenerateSequence, BoxesStayInBoundsWithPositiveArea) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SceneConfig cfg = base_config(static_cast<Modality>(seed % 3), seed);
    cfg.frames = 30;
    cfg.vel_max = 4.0;
    ModalSequence seq = generate_sequence(cfg);
    for (const ModalSample& s : seq.samples) {
      EXPECT_TRUE(s.truth.valid());
      EXPECT_GE(s.truth.cx - s.truth.w / 2, 0.0);
      EXPECT_LE(s.truth.cx + s.truth.w / 2, 1.0);
      EXPECT_GE(s.truth.cy - s.truth.h / 2, 0.0);
      EXPECT_LE(s.truth.cy + s.truth.h / 2, 1.0);
      EXPECT_GT(s.truth.w * s.truth.h, 0.0);
    }
  }
}

TEST(GenerateSequence, ZeroFramesThrows) {
  SceneConfig cfg = base_config(Modality::Depth, 1);
  cfg.frames = 0;
  EXPECT_THROW(generate_sequence(cfg), SizeError);
}

TEST(SynthesizeAux, StaticSceneGivesZeroEvents) {
  // Hand-built static frames: identical consecutive frames -> zero events.
  std::vector<Tensor> frames(4, Tensor::full({3, 8, 8}, 0.5));
  std::vector<Tensor> events = synthesize_event_frames(frames);
  for (const Tensor& e : events)
    for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(SynthesizeAux, StaticTargetGivesZeroEventsAfterFrameZero) {
  SceneConfig cfg = base_config(Modality::Event, 19, 1.0, 0.0);
  cfg.vel_min = 0.0;
  cfg.vel_max = 0.0;  // no motion, no clutter noise -> no intensity change
  ModalSequence seq = generate_sequence(cfg);
  for (std::size_t t = 0; t < seq.samples.size(); ++t)
    for (double v : seq.samples[t].aux->data()) EXPECT_EQ(v, 0.0);
}

TEST(SynthesizeAux, EventsZeroExactlyWhereFramesIdentical) {
  SceneConfig cfg = base_config(Modality::Event, 23, 1.0, 0.0);
  ModalSequence seq = generate_sequence(cfg);
  const std::size_t S = cfg.image_size;
  for (std::size_t t = 1; t < seq.samples.size(); ++t) {
    const Tensor& cur = seq.samples[t].rgb;
    const Tensor& prev = seq.samples[t - 1].rgb;
    const Tensor& ev = *seq.samples[t].aux;
    for (std::size_t i = 0; i < S * S; ++i) {
      bool identical = true;
      for (std::size_t c = 0; c < 3; ++c)
        if (cur.data()[c * S * S + i] != prev.data()[c * S * S + i]) identical = false;
      if (identical) EXPECT_EQ(ev.data()[i], 0.0);
    }
  }
}

TEST(SynthesizeAux, ThermalPeakAtGroundTruthCenter) {
  SceneConfig cfg = base_config(Modality::Thermal, 29, 0.5, 0.2);
  ModalSequence seq = generate_sequence(cfg);
  const std::size_t S = cfg.image_size;
  for (const ModalSample& s : seq.samples) {
    const Tensor& aux = *s.aux;
    std::size_t best = 0;
    for (std::size_t i = 1; i < S * S; ++i)
      if (aux.data()[i] > aux.data()[best]) best = i;
    const double px = best % S + 0.5, py = best / S + 0.5;
    EXPECT_LE(std::fabs(px - s.truth.cx * S), 1.0);
    EXPECT_LE(std::fabs(py - s.truth.cy * S), 1.0);
  }
}

TEST(SynthesizeAux, DepthTargetValueMonotoneAcrossFrames) {
  SceneConfig cfg = base_config(Modality::Depth, 31);
  cfg.frames = 8;
  ModalSequence seq = generate_sequence(cfg);
  const std::size_t S = cfg.image_size;
  // Monotonicity scan: the target-region value follows 1/depth with a strictly
  // linear depth trajectory, so the per-frame center value is strictly
  // monotone in one direction.
  std::vector<double> center_vals;
  for (const ModalSample& s : seq.samples) {
    const std::size_t x = static_cast<std::size_t>(s.truth.cx * S);
    const std::size_t y = static_cast<std::size_t>(s.truth.cy * S);
    center_vals.push_back(s.aux->data()[y * S + x]);
  }
  bool increasing = true, decreasing = true;
  for (std::size_t t = 1; t < center_vals.size(); ++t) {
    if (center_vals[t] <= center_vals[t - 1]) increasing = false;
    if (center_vals[t] >= center_vals[t - 1]) decreasing = false;
  }
  EXPECT_TRUE(increasing || decreasing);
}

TEST(SynthesizeAux, AbsentTagThrows) {
  std::vector<Tensor> frames(2, Tensor::full({3, 4, 4}, 0.1));
  std::vector<synth::TargetState> states(2, synth::TargetState{2, 2, 2, 1.5});
  EXPECT_THROW(
      synthesize_aux(frames, states, TargetShape::Disk, Modality::Absent, {}),
      DomainError);
}

TEST(DatasetIo, RoundTripIsValueExact) {
  Dataset data;
  data.push_back(generate_sequence(base_config(Modality::Depth, 1)));
  data.push_back(generate_sequence(base_config(Modality::Absent, 2)));
  data.push_back(generate_sequence(base_config(Modality::Event, 3)));

  const fs::path dir = temp_dir("roundtrip");
  write_dataset(data, dir);
  Dataset back = read_dataset(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    ASSERT_EQ(back[s].samples.size(), data[s].samples.size());
    for (std::size_t t = 0; t < data[s].samples.size(); ++t) {
      const ModalSample& a = data[s].samples[t];
      const ModalSample& b = back[s].samples[t];
      EXPECT_EQ(a.rgb.data(), b.rgb.data());
      EXPECT_EQ(a.modality, b.modality);
      EXPECT_EQ(a.aux.has_value(), b.aux.has_value());
      if (a.aux) EXPECT_EQ(a.aux->data(), b.aux->data());
      EXPECT_EQ(a.truth.cx, b.truth.cx);
      EXPECT_EQ(a.truth.cy, b.truth.cy);
      EXPECT_EQ(a.truth.w, b.truth.w);
      EXPECT_EQ(a.truth.h, b.truth.h);
    }
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, TruncatedTensorGivesFormatError) {
  Dataset data{generate_sequence(base_config(Modality::Thermal, 4))};
  const fs::path dir = temp_dir("truncated");
  write_dataset(data, dir);
  // Truncate one frame file.
  const fs::path victim = dir / "seq0_rgb_1.utt";
  const std::string bytes = read_file(victim);
  {
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(read_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST(DatasetIo, BadMagicGivesFormatError) {
  Dataset data{generate_sequence(base_config(Modality::Thermal, 6))};
  const fs::path dir = temp_dir("badmagic");
  write_dataset(data, dir);
  const fs::path victim = dir / "seq0_rgb_0.utt";
  std::string bytes = read_file(victim);
  bytes[0] = 'X';
  write_file_atomic(victim, bytes);
  EXPECT_THROW(read_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST(DatasetIo, EmptyDatasetRoundTrips) {
  const fs::path dir = temp_dir("empty");
  write_dataset({}, dir);
  Dataset back = read_dataset(dir);
  EXPECT_TRUE(back.empty());
  fs::remove_all(dir);
}
