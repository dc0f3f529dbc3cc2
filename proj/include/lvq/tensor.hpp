#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "lvq/common.hpp"

namespace lvq {

// Dense row-major tensor of doubles, up to 5 dims (N, C, D, H, W).
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel()), 0.0);
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(0.0); }
};

// Byte plane types used by the data path.
struct MaskPlane {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> v;
  MaskPlane() = default;
  MaskPlane(std::int64_t hh, std::int64_t ww) : h(hh), w(ww), v(static_cast<std::size_t>(hh * ww), 0) {}
  std::uint8_t& at(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * w + c)]; }
  std::uint8_t at(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * w + c)]; }
};

struct ImagePlane {
  std::int64_t h = 0, w = 0;
  std::vector<double> v;
  ImagePlane() = default;
  ImagePlane(std::int64_t hh, std::int64_t ww) : h(hh), w(ww), v(static_cast<std::size_t>(hh * ww), 0.0) {}
  double& at(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * w + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * w + c)]; }
};

}  // namespace lvq
