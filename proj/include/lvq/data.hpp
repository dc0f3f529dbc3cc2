#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "lvq/study.hpp"

namespace lvq::data {

// --------------------------------------------------------------------------
// On-disk study format: one directory per patient containing
//   meta.json     id, spacing, shape [T,H,W], dtype
//   frames.bin    float32 little-endian, T*H*W row-major
//   masks.bin     uint8, same layout
//   indices.json  per-frame 11 index values (mm / mm^2) plus phase labels
void write_study(const Study& s, const fs::path& dir);
Study read_study(const fs::path& dir);

// --------------------------------------------------------------------------
// Preprocessing to the network's canonical space: resample to 1 mm/px
// (bilinear image, nearest-neighbor mask), center-crop / zero-pad to
// canonical_size, clip each slice to its [1st, 99th] percentiles, standardize
// per slice and affinely map to [0, 1]. Targets are already physical units;
// the conversion step is the identity and is recorded here explicitly.
constexpr int kCanonicalSize = 300;
constexpr double kCanonicalSpacing = 1.0;

Study preprocess_study(const Study& raw);

// Identity for phantom studies (targets are generated in mm / mm^2 already).
indices::IndexVector convert_targets_to_physical(const indices::IndexVector& iv);

// Percentiles are the nearest-outward order statistics: p1 picks the value at
// floor(0.01*(n-1)), p99 at ceil(0.99*(n-1)). Re-clipping already-clipped
// data is then a no-op, which keeps preprocessing idempotent.
double percentile_lower(std::vector<double> values, double q);
double percentile_upper(std::vector<double> values, double q);

// Downsampled training/evaluation view (desk-scale profile). factor 1 is the
// identity; otherwise frames and masks are resampled to size/factor and the
// view spacing becomes factor mm/px. Targets stay in physical units.
Study downsample_view(const Study& canonical, int factor);

// --------------------------------------------------------------------------
// Min-max target scaling fit on the training portion, one (min, max) pair per
// index. apply() maps into [0,1] on the fitting set and is not clamped;
// invert() restores original units.
struct TargetScaler {
  std::array<double, 11> min{};
  std::array<double, 11> max{};

  std::array<double, 11> apply(const std::array<double, 11>& x) const;
  std::array<double, 11> invert(const std::array<double, 11>& y) const;

  std::string serialize() const;
  static TargetScaler deserialize(const std::string& text);
};

TargetScaler fit_target_scaler(const std::vector<const Study*>& training);

// --------------------------------------------------------------------------
// 5-fold cross-validation plan with a nested half split per fold.
// Half A selects the ensemble subset, half B evaluates it.
struct FoldPlan {
  int n_folds = 5;
  std::map<std::string, int> fold_of;   // patient id -> fold
  std::map<std::string, int> half_of;   // patient id -> 0 (A) or 1 (B)

  std::vector<std::string> patients_in_fold(int fold) const;
  std::vector<std::string> patients_not_in_fold(int fold) const;
  std::vector<std::string> patients_in_half(int fold, int half) const;

  std::string serialize() const;
  static FoldPlan deserialize(const std::string& text);
};

FoldPlan make_fold_plan(std::vector<std::string> patient_ids, std::uint64_t seed,
                        int n_folds = 5);

}  // namespace lvq::data
