#include "lvq/indices.hpp"

#include <cmath>

#include "lvq/common.hpp"

namespace lvq::indices {

const std::array<std::string, 11>& IndexVector::names() {
  static const std::array<std::string, 11> n = {"cavity_area", "myo_area", "dim1", "dim2",
                                                "dim3",        "rwt1",     "rwt2", "rwt3",
                                                "rwt4",        "rwt5",     "rwt6"};
  return n;
}

const char* phase_name(Phase p) { return p == Phase::systole ? "systole" : "diastole"; }

Phase phase_from_name(const std::string& s) {
  if (s == "systole") return Phase::systole;
  if (s == "diastole") return Phase::diastole;
  throw BadInput("unknown phase label '" + s + "'");
}

int sector_of_angle_deg(double theta_deg) {
  double t = std::fmod(theta_deg + 30.0, 360.0);
  if (t < 0) t += 360.0;
  return static_cast<int>(t / 60.0) % 6;
}

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRayStep = 0.25;  // pixels

// Bilinear interpolation of a label-indicator field.
inline double indicator_at(const MaskPlane& m, double r, double c, std::uint8_t lo_label) {
  std::int64_t r0 = static_cast<std::int64_t>(std::floor(r));
  std::int64_t c0 = static_cast<std::int64_t>(std::floor(c));
  double fr = r - static_cast<double>(r0);
  double fc = c - static_cast<double>(c0);
  double acc = 0.0;
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc) {
      std::int64_t rr = r0 + dr, cc = c0 + dc;
      double wgt = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
      if (wgt == 0.0) continue;
      double val = 0.0;
      if (rr >= 0 && rr < m.h && cc >= 0 && cc < m.w) val = m.at(rr, cc) >= lo_label ? 1.0 : 0.0;
      acc += wgt * val;
    }
  return acc;
}

struct RayHit {
  double r_endo = -1.0;  // pixels from centroid
  double r_epi = -1.0;
};

// March one ray from the centroid; indicator crossings at 0.5 give the
// endocardial and epicardial radii with sub-pixel interpolation.
RayHit march_ray(const MaskPlane& m, double cy, double cx, double theta_deg) {
  double t = theta_deg * kPi / 180.0;
  double dx = std::cos(t);
  double dy = -std::sin(t);  // +Y is -row
  double rmax = static_cast<double>(m.h + m.w);  // generous; bounds-checked below

  RayHit hit;
  double prev_cav = indicator_at(m, cy, cx, 2);
  double prev_epi = indicator_at(m, cy, cx, 1);
  if (prev_cav < 0.5) throw DegenerateMask("cavity centroid not inside cavity");
  double prev_r = 0.0;
  for (double r = kRayStep; r < rmax; r += kRayStep) {
    double pr = cy + dy * r;
    double pc = cx + dx * r;
    bool inside_image = pr > -1.0 && pr < static_cast<double>(m.h) && pc > -1.0 &&
                        pc < static_cast<double>(m.w);
    double cav = inside_image ? indicator_at(m, pr, pc, 2) : 0.0;
    double epi = inside_image ? indicator_at(m, pr, pc, 1) : 0.0;
    if (hit.r_endo < 0.0 && prev_cav >= 0.5 && cav < 0.5) {
      double f = (prev_cav - 0.5) / (prev_cav - cav);
      hit.r_endo = prev_r + f * (r - prev_r);
      if (epi < 0.5 && prev_epi < 0.5)
        throw DegenerateMask("no myocardium beyond cavity boundary");
    }
    if (hit.r_endo >= 0.0 && prev_epi >= 0.5 && epi < 0.5) {
      double f = (prev_epi - 0.5) / (prev_epi - epi);
      hit.r_epi = prev_r + f * (r - prev_r);
      break;
    }
    if (!inside_image) break;
    prev_cav = cav;
    prev_epi = epi;
    prev_r = r;
  }
  if (hit.r_endo < 0.0) throw DegenerateMask("no endocardial crossing on ray");
  if (hit.r_epi < 0.0) throw DegenerateMask("no epicardial crossing on ray");
  if (hit.r_epi <= hit.r_endo) throw DegenerateMask("inverted boundary radii on ray");
  return hit;
}

}  // namespace

IndexVector indices_from_mask(const MaskPlane& mask, double spacing_mm) {
  std::int64_t n_cav = 0, n_myo = 0;
  double sum_r = 0.0, sum_c = 0.0;
  for (std::int64_t r = 0; r < mask.h; ++r)
    for (std::int64_t c = 0; c < mask.w; ++c) {
      std::uint8_t l = mask.at(r, c);
      if (l == 2) {
        ++n_cav;
        sum_r += static_cast<double>(r);
        sum_c += static_cast<double>(c);
      } else if (l == 1) {
        ++n_myo;
      }
    }
  if (n_cav == 0) throw DegenerateMask("empty cavity");
  if (n_myo == 0) throw DegenerateMask("empty myocardium");
  double cy = sum_r / static_cast<double>(n_cav);
  double cx = sum_c / static_cast<double>(n_cav);

  std::array<RayHit, 360> rays;
  for (int k = 0; k < 360; ++k) rays[static_cast<std::size_t>(k)] = march_ray(mask, cy, cx, static_cast<double>(k));

  IndexVector iv;
  iv.cavity_area = static_cast<double>(n_cav) * spacing_mm * spacing_mm;
  iv.myo_area = static_cast<double>(n_myo) * spacing_mm * spacing_mm;
  // Chord radii averaged over +-15 degrees about each measurement axis. A
  // single grid-aligned ray reads the boundary staircase with whole-pixel
  // steps: at the chord tangent the staircase runs flat for ~sqrt(2r) pixels
  // (an arc of ~sqrt(2/r) radians), so the window must span several runs for
  // the quantization to average out.
  auto endo_near = [&](int deg) {
    double acc = 0.0;
    for (int k = -15; k <= 15; ++k) acc += rays[static_cast<std::size_t>(((deg + k) % 360 + 360) % 360)].r_endo;
    return acc / 31.0;
  };
  for (int j = 0; j < 3; ++j)
    iv.dims[static_cast<std::size_t>(j)] = (endo_near(j * 60) + endo_near(j * 60 + 180)) * spacing_mm;
  std::array<double, 6> acc{};
  std::array<int, 6> cnt{};
  for (int k = 0; k < 360; ++k) {
    int s = sector_of_angle_deg(static_cast<double>(k));
    acc[static_cast<std::size_t>(s)] += rays[static_cast<std::size_t>(k)].r_epi - rays[static_cast<std::size_t>(k)].r_endo;
    cnt[static_cast<std::size_t>(s)] += 1;
  }
  for (int s = 0; s < 6; ++s)
    iv.rwt[static_cast<std::size_t>(s)] = acc[static_cast<std::size_t>(s)] / static_cast<double>(cnt[static_cast<std::size_t>(s)]) * spacing_mm;
  return iv;
}

std::vector<Phase> phase_labels(const std::vector<double>& curve) {
  std::size_t n = curve.size();
  if (n < 2) throw BadInput("phase_labels needs at least 2 frames");
  std::size_t imax = 0, imin = 0;
  bool tie_max = false, tie_min = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (curve[i] > curve[imax]) imax = i;
    else if (curve[i] == curve[imax]) tie_max = true;
    if (curve[i] < curve[imin]) imin = i;
    else if (curve[i] == curve[imin]) tie_min = true;
  }
  if (tie_max) warn("phase_labels: non-unique area maximum, using earliest frame");
  if (tie_min) warn("phase_labels: non-unique area minimum, using earliest frame");
  if (imax == imin)
    throw AmbiguousPhase("area curve has coincident argmax and argmin (frame " +
                         std::to_string(imax) + ")");
  std::vector<Phase> out(n, Phase::diastole);
  for (std::size_t i = (imax + 1) % n;; i = (i + 1) % n) {
    out[i] = Phase::systole;
    if (i == imin) break;
  }
  return out;
}

}  // namespace lvq::indices
