#include "lvq/phantom.hpp"

#include <cmath>
#include <sstream>

#include "lvq/data.hpp"
#include "lvq/rng.hpp"

namespace lvq::phantom {

namespace {
constexpr double kPi = 3.14159265358979323846;

double beta_waveform(double u, double us) {
  // Smooth cyclic contraction: 0 at u=0, single peak 1 at u=us, back to 0 at
  // u=1 with zero slope at both junctions.
  if (u <= us) return 0.5 * (1.0 - std::cos(kPi * u / us));
  return 0.5 * (1.0 + std::cos(kPi * (u - us) / (1.0 - us)));
}

// Endocardial polar radius about the cavity center at end-diastole.
double endo_radius_ed(const PhantomParams& p, double theta_deg) {
  double a = p.semi_axis_a();
  double b = p.semi_axis_b();
  double psi = (theta_deg - p.orientation_deg) * kPi / 180.0;
  double cb = b * std::cos(psi);
  double sa = a * std::sin(psi);
  return a * b / std::sqrt(cb * cb + sa * sa);
}

// J = integral over theta of r_endo(theta, ED) * wall_mult(sector(theta)),
// by per-sector composite Simpson so the piecewise-constant multiplier never
// crosses an integration panel.
double sector_weighted_radius_integral(const PhantomParams& p) {
  double total = 0.0;
  const int panels = 240;  // per 60-degree sector, even
  for (int s = 0; s < 6; ++s) {
    double lo = 60.0 * s - 30.0;
    double hi = 60.0 * s + 30.0;
    double h = (hi - lo) / panels;
    double acc = endo_radius_ed(p, lo) + endo_radius_ed(p, hi);
    for (int i = 1; i < panels; ++i)
      acc += endo_radius_ed(p, lo + h * i) * (i % 2 ? 4.0 : 2.0);
    acc *= h / 3.0 * kPi / 180.0;
    total += acc * p.wall_mult[static_cast<std::size_t>(s)];
  }
  return total;
}

double half_sq_mult_integral(const PhantomParams& p) {
  // I2 = 1/2 * integral of wall_mult(theta)^2 = pi/6 * sum of m_k^2
  double s = 0.0;
  for (double m : p.wall_mult) s += m * m;
  return s * kPi / 6.0;
}

double wall_mult_at(const PhantomParams& p, double theta_deg) {
  return p.wall_mult[static_cast<std::size_t>(indices::sector_of_angle_deg(theta_deg))];
}
}  // namespace

double PhantomParams::semi_axis_a() const {
  return base_endo_radius_mm / std::sqrt(axis_ratio);
}
double PhantomParams::semi_axis_b() const {
  return base_endo_radius_mm * std::sqrt(axis_ratio);
}

double contraction_scale(const PhantomParams& p, int t) {
  double u = static_cast<double>(t) / kFramesPerCycle;
  return 1.0 - p.contraction_amplitude * beta_waveform(u, p.systole_fraction);
}

double wall_scale(const PhantomParams& p, int t) {
  double J = sector_weighted_radius_integral(p);
  double I2 = half_sq_mult_integral(p);
  double W0 = p.base_wall_thickness_mm;
  double M0 = W0 * J + W0 * W0 * I2;  // myocardial area at end-diastole
  double sigma = contraction_scale(p, t);
  return (-sigma * J + std::sqrt(sigma * sigma * J * J + 4.0 * I2 * M0)) / (2.0 * I2);
}

indices::IndexVector analytic_indices(const PhantomParams& p, int t) {
  if (t < 0 || t >= kFramesPerCycle) throw BadInput("frame index out of range");
  double sigma = contraction_scale(p, t);
  double W = wall_scale(p, t);
  double J = sector_weighted_radius_integral(p);
  double I2 = half_sq_mult_integral(p);

  indices::IndexVector iv;
  double r0 = p.base_endo_radius_mm;
  iv.cavity_area = kPi * r0 * r0 * sigma * sigma;
  iv.myo_area = W * sigma * J + W * W * I2;
  for (int j = 0; j < 3; ++j)
    iv.dims[static_cast<std::size_t>(j)] = 2.0 * sigma * endo_radius_ed(p, 60.0 * j);
  for (int s = 0; s < 6; ++s) iv.rwt[static_cast<std::size_t>(s)] = W * p.wall_mult[static_cast<std::size_t>(s)];
  return iv;
}

PhantomParams sample_params(std::uint64_t seed) {
  Rng rng(seed, /*stream=*/0xA11CE);
  PhantomParams p;
  p.patient_seed = seed;
  p.center_x_mm = rng.uniform(-8.0, 8.0);
  p.center_y_mm = rng.uniform(-8.0, 8.0);
  p.base_endo_radius_mm = rng.uniform(17.0, 23.0);
  p.base_wall_thickness_mm = rng.uniform(6.0, 11.0);
  p.contraction_amplitude = rng.uniform(0.18, 0.35);
  p.systole_fraction = rng.uniform(0.30, 0.50);
  for (auto& m : p.wall_mult) m = rng.uniform(0.80, 1.25);
  p.axis_ratio = rng.uniform(0.99, 1.0);
  p.orientation_deg = rng.uniform(0.0, 180.0);
  p.intensity_bg = rng.uniform(0.08, 0.20);
  p.intensity_myo = rng.uniform(0.35, 0.55);
  p.intensity_blood = rng.uniform(0.70, 0.92);
  p.noise_sigma = rng.uniform(0.02, 0.05);
  p.bias_amplitude = rng.uniform(0.03, 0.10);
  if (rng.uniform() < 0.5) {
    p.resolution = 256;
    p.pixel_spacing = rng.uniform(1.1719, 1.7188);
  } else {
    p.resolution = 512;
    p.pixel_spacing = rng.uniform(0.6836, 0.8594);
  }
  return p;
}

namespace {
struct FrameGeometry {
  const PhantomParams* p;
  double sigma, wall;
  double cx_px, cy_px;  // cavity center in pixel coordinates

  // region: 2 cavity, 1 myocardium, 0 background, for a point in px coords
  int region(double r, double c) const {
    double X = (c - cx_px) * p->pixel_spacing;
    double Y = (cy_px - r) * p->pixel_spacing;
    double rad = std::sqrt(X * X + Y * Y);
    double theta = std::atan2(Y, X) * 180.0 / kPi;
    double re = sigma * endo_radius_ed(*p, theta);
    if (rad <= re) return 2;
    if (rad <= re + wall * wall_mult_at(*p, theta)) return 1;
    return 0;
  }

  double intensity_of(int region_label) const {
    switch (region_label) {
      case 2: return p->intensity_blood;
      case 1: return p->intensity_myo;
      default: return p->intensity_bg;
    }
  }
};
}  // namespace

Study render_study(const PhantomParams& p) {
  // Field-of-view check across the whole cycle.
  double half_fov = 0.5 * p.resolution * p.pixel_spacing;
  double max_center = std::max(std::abs(p.center_x_mm), std::abs(p.center_y_mm));
  for (int t = 0; t < kFramesPerCycle; ++t) {
    double sigma = contraction_scale(p, t);
    double W = wall_scale(p, t);
    for (int k = 0; k < 360; ++k) {
      double re = sigma * endo_radius_ed(p, static_cast<double>(k));
      double repi = re + W * wall_mult_at(p, static_cast<double>(k));
      if (repi + max_center > half_fov - 2.0 * p.pixel_spacing)
        throw GeometryOverflow("epicardium exceeds field of view at frame " + std::to_string(t));
    }
  }

  Study s;
  s.patient_id = "seed" + std::to_string(p.patient_seed);
  s.spacing = p.pixel_spacing;
  int res = p.resolution;

  Rng bias_rng(p.patient_seed, 0xB1A5);
  double b_lin_x = bias_rng.uniform(-1.0, 1.0);
  double b_lin_y = bias_rng.uniform(-1.0, 1.0);
  double b_xy = bias_rng.uniform(-1.0, 1.0);
  double b_xx = bias_rng.uniform(-1.0, 1.0);
  double b_yy = bias_rng.uniform(-1.0, 1.0);
  Rng noise_rng(p.patient_seed, 0x9015E);

  std::vector<double> cavity_curve;
  for (int t = 0; t < kFramesPerCycle; ++t) {
    FrameGeometry g;
    g.p = &p;
    g.sigma = contraction_scale(p, t);
    g.wall = wall_scale(p, t);
    g.cx_px = (res - 1) / 2.0 + p.center_x_mm / p.pixel_spacing;
    g.cy_px = (res - 1) / 2.0 - p.center_y_mm / p.pixel_spacing;

    MaskPlane mask(res, res);
    ImagePlane img(res, res);
    for (std::int64_t r = 0; r < res; ++r) {
      for (std::int64_t c = 0; c < res; ++c) {
        int center_region = g.region(static_cast<double>(r), static_cast<double>(c));
        mask.at(r, c) = static_cast<std::uint8_t>(center_region);

        // Supersample only where the pixel's corners disagree.
        int c00 = g.region(r - 0.5, c - 0.5);
        int c01 = g.region(r - 0.5, c + 0.5);
        int c10 = g.region(r + 0.5, c - 0.5);
        int c11 = g.region(r + 0.5, c + 0.5);
        double base;
        if (c00 == c01 && c00 == c10 && c00 == c11 && c00 == center_region) {
          base = g.intensity_of(center_region);
        } else {
          double acc = 0.0;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              acc += g.intensity_of(
                  g.region(r - 0.5 + (i + 0.5) / 3.0, c - 0.5 + (j + 0.5) / 3.0));
          base = acc / 9.0;
        }
        double xn = 2.0 * c / (res - 1) - 1.0;
        double yn = 2.0 * r / (res - 1) - 1.0;
        double bias = p.bias_amplitude * (b_lin_x * xn + b_lin_y * yn + b_xy * xn * yn +
                                          b_xx * xn * xn + b_yy * yn * yn);
        img.at(r, c) = base + bias + noise_rng.normal(0.0, p.noise_sigma);
      }
    }
    s.masks.push_back(std::move(mask));
    s.frames.push_back(std::move(img));
    s.targets.push_back(analytic_indices(p, t));
    cavity_curve.push_back(s.targets.back().cavity_area);
  }
  if (p.contraction_amplitude == 0.0) {
    // No motion: the phase rule has no argmax/argmin to anchor on.
    warn("motionless phantom, labeling all frames diastole");
    s.phases.assign(kFramesPerCycle, indices::Phase::diastole);
  } else {
    s.phases = indices::phase_labels(cavity_curve);
  }
  return s;
}

std::vector<ManifestRecord> generate_dataset(int n_patients, std::uint64_t seed,
                                             const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DatasetWriteError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestRecord> manifest;
  for (int i = 0; i < n_patients; ++i) {
    std::uint64_t pseed = mix64(seed + static_cast<std::uint64_t>(i));
    PhantomParams params = sample_params(pseed);
    Study s = render_study(params);
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "p%03d", i);
    s.patient_id = idbuf;
    data::write_study(s, out_dir / s.patient_id);
    manifest.push_back({s.patient_id, pseed, params.pixel_spacing, params.resolution});
  }

  std::ostringstream ms;
  ms << "id\tseed\tspacing\tresolution\n";
  for (const auto& m : manifest)
    ms << m.id << "\t" << m.seed << "\t" << fmt_double(m.spacing) << "\t" << m.resolution
       << "\n";
  write_text_file(out_dir / "manifest.tsv", ms.str());
  return manifest;
}

std::vector<ManifestRecord> read_manifest(const fs::path& dataset_dir) {
  std::string text = read_text_file(dataset_dir / "manifest.tsv");
  std::vector<ManifestRecord> out;
  bool header = true;
  for (const auto& line : split(text, '\n')) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 4) throw BadInput("malformed manifest line: " + line);
    ManifestRecord r;
    r.id = f[0];
    r.seed = std::strtoull(f[1].c_str(), nullptr, 10);
    r.spacing = std::strtod(f[2].c_str(), nullptr);
    r.resolution = std::atoi(f[3].c_str());
    out.push_back(r);
  }
  return out;
}

}  // namespace lvq::phantom
