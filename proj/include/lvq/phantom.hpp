#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lvq/study.hpp"

namespace lvq::phantom {

// Parametric eccentric-annulus phantom. The endocardium is an ellipse with
// geometric-mean radius base_endo_radius and axis ratio `axis_ratio`; the
// epicardium sits at a radial offset wall(theta) = W(t) * wall_mult[sector].
// The cavity contracts along a smooth cyclic waveform with its single minimum
// at systole_fraction of the cycle; the wall thickens so that myocardial
// cross-sectional area is conserved. Frame 0 is end-diastole.
struct PhantomParams {
  std::uint64_t patient_seed = 0;
  double center_x_mm = 0.0;  // relative to image center, X = +col
  double center_y_mm = 0.0;  // Y = -row (up)
  double base_endo_radius_mm = 20.0;
  double base_wall_thickness_mm = 8.0;
  double contraction_amplitude = 0.3;   // in [0, 1)
  double systole_fraction = 0.4;        // in [0.3, 0.5]
  std::array<double, 6> wall_mult = {1, 1, 1, 1, 1, 1};  // in [0.7, 1.3]
  double axis_ratio = 1.0;              // b/a in [0.85, 1.0]
  double orientation_deg = 0.0;         // major-axis angle
  double intensity_bg = 0.15;
  double intensity_myo = 0.45;
  double intensity_blood = 0.8;
  double noise_sigma = 0.03;
  double bias_amplitude = 0.05;
  double pixel_spacing = 1.0;           // mm/px in [0.6836, 1.7188]
  int resolution = 256;                 // 256 or 512

  double semi_axis_a() const;  // major
  double semi_axis_b() const;  // minor
};

// Deterministic draw of plausible parameters; all fields land inside the
// declared ranges and the epicardium is guaranteed to fit the field of view.
// The axis ratio is drawn from [0.99, 1.0]: image-axis-referenced dimensions
// drift by roughly radius*(1 - ratio) when anatomy rotates, and the
// augmentation consistency tolerance of max(2%, 1 px) needs that drift small.
// Per-sector wall multipliers carry the cross-index non-degeneracy.
PhantomParams sample_params(std::uint64_t seed);

// Closed-form targets for frame t (areas exact; myocardial area via smooth
// per-sector quadrature of the parametric radii, accurate to ~1e-10).
indices::IndexVector analytic_indices(const PhantomParams& params, int t);

// Contraction scale factor sigma(t) = 1 - amplitude * beta(t/T).
double contraction_scale(const PhantomParams& params, int t);
// Wall-thickness scale W(t) solving the myocardial-area conservation.
double wall_scale(const PhantomParams& params, int t);

// Rasterizes the 20-frame study: masks from pixel-center tests against the
// same parametric shape as the image, image with edge supersampling plus a
// low-order polynomial bias field and Gaussian noise.
// Throws GeometryOverflow if the epicardium leaves the field of view.
Study render_study(const PhantomParams& params);

struct ManifestRecord {
  std::string id;
  std::uint64_t seed = 0;
  double spacing = 0.0;
  int resolution = 0;
};

// Writes n_patients studies in the on-disk study format plus manifest.tsv.
std::vector<ManifestRecord> generate_dataset(int n_patients, std::uint64_t seed,
                                             const fs::path& out_dir);

std::vector<ManifestRecord> read_manifest(const fs::path& dataset_dir);

}  // namespace lvq::phantom
