#include <doctest.h>

#include <cmath>

#include "lvq/indices.hpp"
#include "lvq/kernels.hpp"
#include "lvq/rng.hpp"

using namespace lvq;
using indices::IndexVector;
using indices::Phase;

namespace {
// Rasterize a centered annulus: cavity radius rc, wall w (pixels).
MaskPlane disk_annulus(int size, double cx, double cy, double rc, double w) {
  MaskPlane m(size, size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double d = std::hypot(c - cx, r - cy);
      if (d <= rc) m.at(r, c) = 2;
      else if (d <= rc + w) m.at(r, c) = 1;
    }
  return m;
}
}  // namespace

TEST_CASE("disk cavity with uniform wall reproduces circle analytics") {
  double rc = 20.0, w = 8.0;
  MaskPlane m = disk_annulus(96, 47.5, 47.5, rc, w);
  IndexVector iv = indices::indices_from_mask(m, 1.0);
  double expected_area = 3.14159265358979 * rc * rc;
  CHECK(iv.cavity_area == doctest::Approx(expected_area).epsilon(0.02));
  for (double d : iv.dims) CHECK(d == doctest::Approx(2 * rc).epsilon(0.03));
  for (double t : iv.rwt) CHECK(t == doctest::Approx(w).epsilon(0.08));

  SUBCASE("spacing scales areas quadratically and lengths linearly") {
    IndexVector half = indices::indices_from_mask(m, 0.5);
    CHECK(half.cavity_area == doctest::Approx(iv.cavity_area * 0.25));
    CHECK(half.myo_area == doctest::Approx(iv.myo_area * 0.25));
    for (int i = 0; i < 3; ++i) CHECK(half.dims[i] == doctest::Approx(iv.dims[i] * 0.5));
    for (int i = 0; i < 6; ++i) CHECK(half.rwt[i] == doctest::Approx(iv.rwt[i] * 0.5));
  }
}

TEST_CASE("dimension symmetry for a circular cavity") {
  MaskPlane m = disk_annulus(128, 63.5, 63.5, 25.0, 9.0);
  IndexVector iv = indices::indices_from_mask(m, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(iv.dims[static_cast<std::size_t>(i)] - iv.dims[static_cast<std::size_t>(j)]) < 1.0);
}

TEST_CASE("degenerate masks are rejected") {
  MaskPlane empty(32, 32);
  CHECK_THROWS_AS(indices::indices_from_mask(empty, 1.0), DegenerateMask);

  MaskPlane no_wall(64, 64);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (std::hypot(c - 31.5, r - 31.5) <= 10) no_wall.at(r, c) = 2;
  CHECK_THROWS_AS(indices::indices_from_mask(no_wall, 1.0), DegenerateMask);

  // broken annulus: a wedge of the wall removed
  MaskPlane broken = disk_annulus(96, 47.5, 47.5, 20.0, 8.0);
  for (int r = 0; r < 96; ++r)
    for (int c = 0; c < 96; ++c) {
      double ang = std::atan2(47.5 - r, c - 47.5);
      if (broken.at(r, c) == 1 && std::abs(ang) < 0.15) broken.at(r, c) = 0;
    }
  CHECK_THROWS_AS(indices::indices_from_mask(broken, 1.0), DegenerateMask);
}

TEST_CASE("rotation equivariance of areas") {
  MaskPlane m = disk_annulus(96, 44.0, 50.0, 18.0, 7.0);
  IndexVector base = indices::indices_from_mask(m, 1.0);
  for (double theta : {23.0, 90.0, 141.0, 280.0}) {
    MaskPlane rot(m.h, m.w);
    kernels::rotate_nearest(rot, m, theta);
    IndexVector iv = indices::indices_from_mask(rot, 1.0);
    CHECK(iv.cavity_area == doctest::Approx(base.cavity_area).epsilon(0.02));
    CHECK(iv.myo_area == doctest::Approx(base.myo_area).epsilon(0.02));
  }
}

TEST_CASE("phase labels follow the argmax-to-argmin rule") {
  std::vector<double> curve(20);
  for (int t = 0; t <= 8; ++t) curve[static_cast<std::size_t>(t)] = 100.0 - 10.0 * t;
  for (int t = 9; t < 20; ++t) curve[static_cast<std::size_t>(t)] = 20.0 + 7.0 * (t - 8);
  auto labels = indices::phase_labels(curve);
  for (int t = 1; t <= 8; ++t) CHECK(labels[static_cast<std::size_t>(t)] == Phase::systole);
  CHECK(labels[0] == Phase::diastole);
  for (int t = 9; t < 20; ++t) CHECK(labels[static_cast<std::size_t>(t)] == Phase::diastole);
}

TEST_CASE("phase labels partition the cycle into two contiguous cyclic arcs") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    int tmin = rng.range_int(4, 15);
    std::vector<double> curve(20);
    for (int t = 0; t < 20; ++t) {
      double u = std::abs(t - tmin);
      u = std::min(u, 20.0 - u);
      curve[static_cast<std::size_t>(t)] = 50.0 + 10.0 * u + rng.uniform(0.0, 0.5);
    }
    auto labels = indices::phase_labels(curve);
    int transitions = 0;
    for (int t = 0; t < 20; ++t)
      if (labels[static_cast<std::size_t>(t)] != labels[static_cast<std::size_t>((t + 1) % 20)]) ++transitions;
    CHECK(transitions == 2);
    bool has_sys = false, has_dia = false;
    for (auto l : labels) (l == Phase::systole ? has_sys : has_dia) = true;
    CHECK(has_sys);
    CHECK(has_dia);
  }
}

TEST_CASE("constant area curve raises AmbiguousPhase") {
  std::vector<double> curve(20, 42.0);
  CHECK_THROWS_AS(indices::phase_labels(curve), AmbiguousPhase);
}

TEST_CASE("sector convention: sector 0 centered on +x, counter-clockwise") {
  CHECK(indices::sector_of_angle_deg(0.0) == 0);
  CHECK(indices::sector_of_angle_deg(29.9) == 0);
  CHECK(indices::sector_of_angle_deg(-29.9) == 0);
  CHECK(indices::sector_of_angle_deg(60.0) == 1);
  CHECK(indices::sector_of_angle_deg(120.0) == 2);
  CHECK(indices::sector_of_angle_deg(180.0) == 3);
  CHECK(indices::sector_of_angle_deg(240.0) == 4);
  CHECK(indices::sector_of_angle_deg(300.0) == 5);
  CHECK(indices::sector_of_angle_deg(330.0) == 0);
}
