#include <doctest.h>

#include <cmath>
#include <queue>

#include "lvq/data.hpp"
#include "lvq/indices.hpp"
#include "lvq/phantom.hpp"

using namespace lvq;
using phantom::PhantomParams;

namespace {
constexpr double kPi = 3.14159265358979323846;

double oracle_tolerance(double analytic, double spacing) {
  return std::max(0.02 * std::abs(analytic), spacing);
}

// Flood fill from the border over non-myocardium labels; the cavity must be
// unreachable (annulus topology).
bool cavity_sealed(const MaskPlane& m) {
  std::vector<std::uint8_t> seen(m.v.size(), 0);
  std::queue<std::pair<std::int64_t, std::int64_t>> q;
  auto push = [&](std::int64_t r, std::int64_t c) {
    if (r < 0 || r >= m.h || c < 0 || c >= m.w) return;
    std::size_t i = static_cast<std::size_t>(r * m.w + c);
    if (seen[i] || m.v[i] == 1) return;
    seen[i] = 1;
    q.emplace(r, c);
  };
  for (std::int64_t r = 0; r < m.h; ++r) {
    push(r, 0);
    push(r, m.w - 1);
  }
  for (std::int64_t c = 0; c < m.w; ++c) {
    push(0, c);
    push(m.h - 1, c);
  }
  while (!q.empty()) {
    auto [r, c] = q.front();
    q.pop();
    if (m.at(r, c) == 2) return false;  // reached the cavity without crossing wall
    push(r - 1, c);
    push(r + 1, c);
    push(r, c - 1);
    push(r, c + 1);
  }
  return true;
}
}  // namespace

TEST_CASE("sampled parameters stay in the declared ranges and are deterministic") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    PhantomParams p = phantom::sample_params(seed);
    CHECK(p.pixel_spacing >= 0.6836);
    CHECK(p.pixel_spacing <= 1.7188);
    CHECK((p.resolution == 256 || p.resolution == 512));
    CHECK(p.axis_ratio >= 0.85);
    CHECK(p.axis_ratio <= 1.0);
    CHECK(p.contraction_amplitude < 1.0);
    CHECK(p.systole_fraction >= 0.3);
    CHECK(p.systole_fraction <= 0.5);
    for (double m : p.wall_mult) {
      CHECK(m >= 0.7);
      CHECK(m <= 1.3);
    }
  }
  PhantomParams a = phantom::sample_params(0);
  PhantomParams b = phantom::sample_params(0);
  CHECK(a.base_endo_radius_mm == b.base_endo_radius_mm);
  CHECK(a.pixel_spacing == b.pixel_spacing);
  CHECK(a.orientation_deg == b.orientation_deg);
}

TEST_CASE("analytic indices of a circular phantom match circle formulas") {
  PhantomParams p;
  p.base_endo_radius_mm = 20.0;
  p.base_wall_thickness_mm = 8.0;
  p.axis_ratio = 1.0;
  p.contraction_amplitude = 0.0;
  auto iv = phantom::analytic_indices(p, 0);
  CHECK(iv.cavity_area == doctest::Approx(kPi * 400.0).epsilon(1e-9));
  for (double d : iv.dims) CHECK(d == doctest::Approx(40.0).epsilon(1e-9));
  for (double t : iv.rwt) CHECK(t == doctest::Approx(8.0).epsilon(1e-9));
  // annulus area, exactly
  CHECK(iv.myo_area == doctest::Approx(kPi * (28.0 * 28.0 - 20.0 * 20.0)).epsilon(1e-7));
}

TEST_CASE("analytic indices of an eccentric phantom match ellipse formulas") {
  PhantomParams p;
  p.base_endo_radius_mm = std::sqrt(22.0 * 18.0);
  p.axis_ratio = 18.0 / 22.0;
  p.orientation_deg = 0.0;
  p.contraction_amplitude = 0.0;
  auto iv = phantom::analytic_indices(p, 0);
  CHECK(iv.dims[0] == doctest::Approx(44.0).epsilon(1e-9));
  CHECK(iv.cavity_area == doctest::Approx(kPi * 22.0 * 18.0).epsilon(1e-9));
}

TEST_CASE("zero contraction renders twenty identical frames") {
  PhantomParams p = phantom::sample_params(42);
  p.contraction_amplitude = 0.0;
  p.noise_sigma = 0.0;
  Study s = phantom::render_study(p);
  REQUIRE(s.n_frames() == kFramesPerCycle);
  for (int t = 1; t < 20; ++t) {
    CHECK(s.frames[static_cast<std::size_t>(t)].v == s.frames[0].v);
    CHECK(s.masks[static_cast<std::size_t>(t)].v == s.masks[0].v);
    CHECK(s.targets[static_cast<std::size_t>(t)].flat() == s.targets[0].flat());
  }
}

TEST_CASE("the cavity area curve has a single minimum and peaks at frame 0") {
  for (std::uint64_t seed : {1ull, 5ull, 9ull}) {
    PhantomParams p = phantom::sample_params(seed);
    std::vector<double> areas;
    for (int t = 0; t < 20; ++t) areas.push_back(phantom::analytic_indices(p, t).cavity_area);
    int argmin = 0, minima = 0;
    for (int t = 0; t < 20; ++t) {
      if (areas[static_cast<std::size_t>(t)] < areas[static_cast<std::size_t>(argmin)]) argmin = t;
      double prev = areas[static_cast<std::size_t>((t + 19) % 20)];
      double next = areas[static_cast<std::size_t>((t + 1) % 20)];
      if (areas[static_cast<std::size_t>(t)] < prev && areas[static_cast<std::size_t>(t)] < next) ++minima;
    }
    CHECK(minima == 1);
    CHECK(areas[0] == *std::max_element(areas.begin(), areas.end()));
    // cycle closure: wrap step no larger than the largest intra-cycle step
    double max_step = 0.0;
    for (int t = 0; t + 1 < 20; ++t)
      max_step = std::max(max_step, std::abs(areas[static_cast<std::size_t>(t + 1)] - areas[static_cast<std::size_t>(t)]));
    CHECK(std::abs(areas[19] - areas[0]) <= max_step);
  }
}

TEST_CASE("rasterized masks agree with the analytic oracle") {
  PhantomParams p = phantom::sample_params(3);
  Study s = phantom::render_study(p);
  for (int t : {0, 7, 13}) {
    auto analytic = s.targets[static_cast<std::size_t>(t)];
    auto oracle = indices::indices_from_mask(s.masks[static_cast<std::size_t>(t)], s.spacing);
    auto af = analytic.flat(), of = oracle.flat();
    for (std::size_t i = 0; i < 11; ++i)
      CHECK(std::abs(af[i] - of[i]) <= oracle_tolerance(af[i], s.spacing));
  }
}

TEST_CASE("mask phase labels equal the analytic phase labels") {
  PhantomParams p = phantom::sample_params(8);
  Study s = phantom::render_study(p);
  std::vector<double> mask_curve;
  for (int t = 0; t < 20; ++t)
    mask_curve.push_back(indices::indices_from_mask(s.masks[static_cast<std::size_t>(t)], s.spacing).cavity_area);
  auto from_mask = indices::phase_labels(mask_curve);
  for (int t = 0; t < 20; ++t) CHECK(from_mask[static_cast<std::size_t>(t)] == s.phases[static_cast<std::size_t>(t)]);
}

TEST_CASE("annulus topology holds on every rendered frame") {
  PhantomParams p = phantom::sample_params(21);
  Study s = phantom::render_study(p);
  for (const auto& m : s.masks) CHECK(cavity_sealed(m));
}

TEST_CASE("myocardial area is conserved over the cycle") {
  PhantomParams p = phantom::sample_params(17);
  double m0 = phantom::analytic_indices(p, 0).myo_area;
  for (int t = 1; t < 20; ++t)
    CHECK(phantom::analytic_indices(p, t).myo_area == doctest::Approx(m0).epsilon(1e-9));
}

TEST_CASE("geometry overflow is detected") {
  PhantomParams p;
  p.base_endo_radius_mm = 100.0;
  p.base_wall_thickness_mm = 30.0;
  p.resolution = 256;
  p.pixel_spacing = 0.6836;  // FOV 175 mm, radius 130 mm cannot fit
  CHECK_THROWS_AS(phantom::render_study(p), GeometryOverflow);
}

TEST_CASE("dataset generation is deterministic and writes the manifest") {
  fs::path dir = fs::temp_directory_path() / "lvq_test_phantom_ds";
  fs::remove_all(dir);
  auto manifest = phantom::generate_dataset(2, 7, dir);
  REQUIRE(manifest.size() == 2);
  CHECK(manifest[0].id == "p000");
  CHECK(fs::exists(dir / "p000" / "frames.bin"));
  CHECK(fs::exists(dir / "manifest.tsv"));

  auto first = read_text_file(dir / "p001" / "frames.bin");
  fs::path dir2 = fs::temp_directory_path() / "lvq_test_phantom_ds2";
  fs::remove_all(dir2);
  phantom::generate_dataset(2, 7, dir2);
  CHECK(read_text_file(dir2 / "p001" / "frames.bin") == first);

  auto parsed = phantom::read_manifest(dir);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].seed == manifest[1].seed);
  CHECK(parsed[1].spacing == manifest[1].spacing);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
