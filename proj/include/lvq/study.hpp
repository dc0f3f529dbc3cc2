#pragma once

#include <string>
#include <vector>

#include "lvq/indices.hpp"
#include "lvq/tensor.hpp"

namespace lvq {

constexpr int kFramesPerCycle = 20;

// One patient: a 20-frame short-axis cycle with masks, per-frame targets in
// physical units and phase labels. spacing is mm per pixel (isotropic).
struct Study {
  std::string patient_id;
  double spacing = 1.0;
  std::vector<ImagePlane> frames;
  std::vector<MaskPlane> masks;
  std::vector<indices::IndexVector> targets;
  std::vector<indices::Phase> phases;

  std::int64_t height() const { return frames.empty() ? 0 : frames[0].h; }
  std::int64_t width() const { return frames.empty() ? 0 : frames[0].w; }
  int n_frames() const { return static_cast<int>(frames.size()); }
};

}  // namespace lvq
