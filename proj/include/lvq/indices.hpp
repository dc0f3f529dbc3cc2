#pragma once

#include <array>
#include <string>
#include <vector>

#include "lvq/tensor.hpp"

namespace lvq::indices {

// The 11 regression targets in physical units (mm^2 for areas, mm otherwise).
// Canonical flat order: [cavity_area, myo_area, dim1..dim3, rwt1..rwt6].
struct IndexVector {
  double cavity_area = 0.0;
  double myo_area = 0.0;
  std::array<double, 3> dims{};
  std::array<double, 6> rwt{};

  std::array<double, 11> flat() const {
    return {cavity_area, myo_area, dims[0], dims[1], dims[2],
            rwt[0],      rwt[1],   rwt[2],  rwt[3],  rwt[4], rwt[5]};
  }
  static IndexVector from_flat(const std::array<double, 11>& f) {
    IndexVector iv;
    iv.cavity_area = f[0];
    iv.myo_area = f[1];
    for (int i = 0; i < 3; ++i) iv.dims[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(2 + i)];
    for (int i = 0; i < 6; ++i) iv.rwt[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(5 + i)];
    return iv;
  }
  static const std::array<std::string, 11>& names();
};

enum class Phase : std::uint8_t { systole = 0, diastole = 1 };

const char* phase_name(Phase p);
Phase phase_from_name(const std::string& s);

// Angle conventions, shared with the phantom generator:
//   X = +col, Y = -row (counter-clockwise on screen), theta in degrees.
//   Dimension axes at 0, 60 and 120 degrees through the cavity centroid.
//   Sector k covers [60k - 30, 60k + 30) degrees; sector 0 is centered on the
//   +X axis and sectors advance counter-clockwise.
int sector_of_angle_deg(double theta_deg);

// Mask labels: 0 background, 1 myocardium, 2 cavity.
// Boundary radii come from ray marching at 1-degree steps with sub-pixel
// linear interpolation of the label-indicator transition.
// Throws DegenerateMask if the cavity is empty or the annulus is broken.
IndexVector indices_from_mask(const MaskPlane& mask, double spacing_mm);

// Phase rule: frames strictly after the area argmax and up to (including) the
// argmin, walking forward cyclically, are systole; the rest diastole.
// Ties pick the earliest frame with a warning; if argmax == argmin the curve
// cannot be partitioned and AmbiguousPhase is thrown.
std::vector<Phase> phase_labels(const std::vector<double>& cavity_area_curve);

}  // namespace lvq::indices
