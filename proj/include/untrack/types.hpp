#pragma once

#include <optional>
#include <string>

#include "untrack/errors.hpp"
#include "untrack/tensor.hpp"

namespace untrack {

// Auxiliary sensor channel paired with RGB.
enum class Modality { Depth, Thermal, Event, Absent };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::Depth: return "depth";
    case Modality::Thermal: return "thermal";
    case Modality::Event: return "event";
    case Modality::Absent: return "absent";
  }
  throw DomainError("unknown modality tag");
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "depth") return Modality::Depth;
  if (s == "thermal") return Modality::Thermal;
  if (s == "event") return Modality::Event;
  if (s == "absent") return Modality::Absent;
  throw DomainError("unknown modality tag '" + s + "'");
}

// Axis-aligned box, center + extent, normalized to [0,1] image coordinates.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  bool valid() const {
    return cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 &&
           h > 0.0 && h <= 1.0;
  }
};

// One timestep of a multimodal sequence. The auxiliary frame is absent when
// the sequence carries no paired modality.
struct ModalSample {
  Tensor rgb;                 // [3, H, W]
  std::optional<Tensor> aux;  // [3, H, W], RGB-like replicated channels
  Modality modality = Modality::Absent;
  BBox truth;
};

}  // namespace untrack
