#include "lvq/augment.hpp"

#include <cmath>
#include <sstream>

#include "lvq/kernels.hpp"

namespace lvq::augment {

std::string TransformRecord::describe() const {
  std::ostringstream ss;
  ss << "patient=" << patient_id << " frame=" << frame << " theta=" << fmt_double(theta_deg)
     << " scale=" << fmt_double(scale) << " crop=(" << crop_row << "," << crop_col << ")";
  return ss.str();
}

void random_rotate(ImagePlane& image, MaskPlane& mask, double theta_deg) {
  if (theta_deg == 0.0) return;
  ImagePlane ri(image.h, image.w);
  kernels::rotate_bilinear(ri, image, theta_deg);
  image = std::move(ri);
  MaskPlane rm(mask.h, mask.w);
  kernels::rotate_nearest(rm, mask, theta_deg);
  mask = std::move(rm);
}

std::array<double, 11> adjust_targets_for_scale(const std::array<double, 11>& t, double s_c) {
  std::array<double, 11> out = t;
  out[0] = t[0] * s_c * s_c;  // cavity area
  out[1] = t[1] * s_c * s_c;  // myocardium area
  for (std::size_t i = 2; i < 11; ++i) out[i] = t[i] * s_c;
  return out;
}

namespace {
template <typename Plane, typename Resample>
Plane rescale_to_same_size(const Plane& src, double s_c, Resample resample) {
  std::int64_t nh = std::llround(static_cast<double>(src.h) * s_c);
  std::int64_t nw = std::llround(static_cast<double>(src.w) * s_c);
  Plane resized(nh, nw);
  resample(resized, src);
  Plane dst(src.h, src.w);
  std::int64_t r0 = (nh - src.h) / 2;
  std::int64_t c0 = (nw - src.w) / 2;
  for (std::int64_t r = 0; r < src.h; ++r)
    for (std::int64_t c = 0; c < src.w; ++c) {
      std::int64_t sr = r + r0, sc = c + c0;
      if (sr >= 0 && sr < nh && sc >= 0 && sc < nw)
        dst.at(r, c) = resized.at(sr, sc);
    }
  return dst;
}
}  // namespace

void random_scale(ImagePlane& image, MaskPlane& mask, std::array<double, 11>& targets,
                  double s_c) {
  if (s_c != 1.0) {
    image = rescale_to_same_size(image, s_c, [](ImagePlane& d, const ImagePlane& s) {
      kernels::resample_bilinear(d, s);
    });
    mask = rescale_to_same_size(mask, s_c, [](MaskPlane& d, const MaskPlane& s) {
      kernels::resample_labels_smooth(d, s);
    });
  }
  targets = adjust_targets_for_scale(targets, s_c);
}

InputMode input_mode_from_name(const std::string& s) {
  if (s == "replicate") return InputMode::replicate;
  if (s == "neighbors") return InputMode::neighbors;
  throw BadInput("unknown input mode '" + s + "'");
}

const char* input_mode_name(InputMode m) {
  return m == InputMode::replicate ? "replicate" : "neighbors";
}

std::array<int, 3> make_3ch_frames(int t, int n_frames, InputMode mode) {
  if (t < 0 || t >= n_frames) throw BadInput("frame index out of range");
  if (mode == InputMode::replicate) return {t, t, t};
  return {(t + n_frames - 1) % n_frames, t, (t + 1) % n_frames};
}

namespace {
ImagePlane crop_image(const ImagePlane& src, int r0, int c0, int size) {
  ImagePlane dst(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) dst.at(r, c) = src.at(r0 + r, c0 + c);
  return dst;
}

MaskPlane crop_mask(const MaskPlane& src, int r0, int c0, int size) {
  MaskPlane dst(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) dst.at(r, c) = src.at(r0 + r, c0 + c);
  return dst;
}
}  // namespace

std::vector<AugmentedSample> build_batch(const std::vector<const Study*>& patients,
                                         const BatchSpec& spec,
                                         const data::TargetScaler& scaler, Rng& rng) {
  if (static_cast<int>(patients.size()) < spec.batch_size)
    throw InsufficientPatients(std::to_string(patients.size()) + " patients for batch of " +
                               std::to_string(spec.batch_size));

  // Distinct patients: shuffle indices, take the first batch_size.
  std::vector<int> order(patients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  std::vector<AugmentedSample> batch;
  for (int s = 0; s < spec.batch_size; ++s) {
    const Study& st = *patients[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
    int T = st.n_frames();
    std::int64_t S = st.height();
    if (S != st.width()) throw BadInput("non-square study in batch building");
    int max_off = static_cast<int>(S) - spec.crop_size;
    if (max_off < 0) throw BadInput("crop size exceeds slice size");

    AugmentedSample sample;
    sample.record.patient_id = st.patient_id;
    sample.record.frame = rng.range_int(0, T - 1);
    sample.record.theta_deg = rng.uniform(spec.theta_min, spec.theta_max);
    sample.record.scale = rng.uniform(spec.scale_min, spec.scale_max);
    sample.record.crop_row = rng.range_int(0, max_off);
    sample.record.crop_col = rng.range_int(0, max_off);

    std::vector<int> frame_list;
    if (spec.is_3d) {
      for (int i = 0; i < spec.n_slices; ++i)
        frame_list.push_back((sample.record.frame + i) % T);
    } else {
      auto ch = make_3ch_frames(sample.record.frame, T, spec.input_mode);
      frame_list.assign(ch.begin(), ch.end());
    }

    auto transform_one = [&](int t, bool want_targets) {
      ImagePlane img = st.frames[static_cast<std::size_t>(t)];
      MaskPlane mask = st.masks[static_cast<std::size_t>(t)];
      std::array<double, 11> targets = st.targets[static_cast<std::size_t>(t)].flat();
      random_rotate(img, mask, sample.record.theta_deg);
      random_scale(img, mask, targets, sample.record.scale);
      sample.planes.push_back(
          crop_image(img, sample.record.crop_row, sample.record.crop_col, spec.crop_size));
      if (want_targets) {
        sample.masks.push_back(
            crop_mask(mask, sample.record.crop_row, sample.record.crop_col, spec.crop_size));
        sample.targets_scaled.push_back(scaler.apply(targets));
        sample.phases.push_back(st.phases[static_cast<std::size_t>(t)]);
      }
    };

    if (spec.is_3d) {
      for (int t : frame_list) transform_one(t, true);
    } else if (spec.input_mode == InputMode::replicate) {
      transform_one(sample.record.frame, true);
      sample.planes.push_back(sample.planes[0]);
      sample.planes.push_back(sample.planes[0]);
    } else {
      for (std::size_t i = 0; i < frame_list.size(); ++i)
        transform_one(frame_list[i], /*want_targets=*/i == 1);
    }
    batch.push_back(std::move(sample));
  }
  return batch;
}

}  // namespace lvq::augment
