#pragma once

#include <array>
#include <string>
#include <vector>

#include "lvq/data.hpp"
#include "lvq/rng.hpp"
#include "lvq/study.hpp"

namespace lvq::augment {

// Everything needed to reproduce a sample deterministically from its study.
struct TransformRecord {
  double theta_deg = 0.0;
  double scale = 1.0;
  int crop_row = 0;
  int crop_col = 0;
  int frame = 0;  // center frame (2D) or window start (3D)
  std::string patient_id;

  std::string describe() const;
};

// One training sample after augmentation. 2D: planes are the 3 input
// channels, one mask/target/phase for the center frame. 3D: planes are the
// N_S window frames (channel replication happens at batch assembly), with
// per-frame masks, targets and phases.
struct AugmentedSample {
  std::vector<ImagePlane> planes;
  std::vector<MaskPlane> masks;
  std::vector<std::array<double, 11>> targets_scaled;
  std::vector<indices::Phase> phases;
  TransformRecord record;
};

// Rotation about the image center; bilinear image, nearest-neighbor mask,
// zero fill outside. Regression targets and phase are left unchanged (the
// label noise this induces for axis-referenced dims/RWTs is deliberate).
void random_rotate(ImagePlane& image, MaskPlane& mask, double theta_deg);

// Resize by s_c then center-crop (s_c > 1) or symmetric zero-pad (s_c < 1)
// back to the original size. Length targets scale by s_c, areas by s_c^2.
void random_scale(ImagePlane& image, MaskPlane& mask, std::array<double, 11>& targets_physical,
                  double s_c);

// Adjusts a flat target vector for a scale factor (areas quadratic).
std::array<double, 11> adjust_targets_for_scale(const std::array<double, 11>& t, double s_c);

// 3-channel assembly for 2D models; neighbors wrap cyclically at frames 0/19.
enum class InputMode { replicate, neighbors };
InputMode input_mode_from_name(const std::string& s);
const char* input_mode_name(InputMode m);
std::array<int, 3> make_3ch_frames(int t, int n_frames, InputMode mode);

struct BatchSpec {
  bool is_3d = false;
  int batch_size = 8;
  int crop_size = 224;
  int n_slices = 5;  // 3D only
  InputMode input_mode = InputMode::replicate;
  double theta_min = 0.0, theta_max = 360.0;
  double scale_min = 0.8, scale_max = 1.2;
};

// Draws one batch: batch_size distinct patients, one augmented crop (or
// cyclic N_S-frame window) each. Crop offsets are uniform over the valid
// positions. Throws InsufficientPatients when fewer patients than the batch.
std::vector<AugmentedSample> build_batch(const std::vector<const Study*>& patients,
                                         const BatchSpec& spec,
                                         const data::TargetScaler& scaler, Rng& rng);

}  // namespace lvq::augment
