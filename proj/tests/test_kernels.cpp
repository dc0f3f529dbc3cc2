#include <doctest.h>

#include "lvq/kernels.hpp"
#include "lvq/rng.hpp"

using namespace lvq;

namespace {
void fill_random(Tensor& t, Rng& rng) {
  for (auto& v : t.v) v = rng.normal(0.0, 1.0);
}
bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}
}  // namespace

TEST_CASE("conv serial and parallel agree bit-for-bit") {
  Rng rng(1);
  for (auto [kd, stride] : {std::pair{1, 1}, std::pair{3, 1}, std::pair{1, 2}, std::pair{3, 2}}) {
    Tensor x({2, 3, 5, 17, 19});
    Tensor w({4, 3, kd, 3, 3});
    Tensor b({4});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    std::int64_t oh = (17 + 2 - 3) / stride + 1, ow = (19 + 2 - 3) / stride + 1;
    Tensor ys({2, 4, 5, oh, ow}), yp(ys.shape);
    kernels::conv_forward_serial(ys, x, w, b, stride, 1);
    kernels::conv_forward_parallel(yp, x, w, b, stride, 1);
    CHECK(bitwise_equal(ys, yp));

    Tensor gy(ys.shape);
    fill_random(gy, rng);
    Tensor gxs(x.shape), gxp(x.shape);
    kernels::conv_backward_input_serial(gxs, gy, w, stride, 1);
    kernels::conv_backward_input_parallel(gxp, gy, w, stride, 1);
    CHECK(bitwise_equal(gxs, gxp));

    Tensor gws(w.shape), gbs({4}), gwp(w.shape), gbp({4});
    kernels::conv_backward_weight_serial(gws, gbs, x, gy, stride, 1);
    kernels::conv_backward_weight_parallel(gwp, gbp, x, gy, stride, 1);
    CHECK(bitwise_equal(gws, gwp));
    CHECK(bitwise_equal(gbs, gbp));
  }
}

TEST_CASE("conv forward matches a hand-computed example") {
  // 1x1 input channel, identity-ish kernel
  Tensor x({1, 1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x[i] = i + 1;  // 1..9
  Tensor w({1, 1, 1, 3, 3});
  w.zero();
  w[4] = 2.0;  // center tap
  Tensor b({1});
  b[0] = 0.5;
  Tensor y({1, 1, 1, 3, 3});
  kernels::conv_forward(y, x, w, b, 1, 1);
  for (int i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(2.0 * (i + 1) + 0.5));
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(2);
  Tensor x({1, 2, 3, 6, 6}), w({2, 2, 3, 3, 3}), b({2});
  fill_random(x, rng);
  fill_random(w, rng);
  fill_random(b, rng);
  Tensor y({1, 2, 3, 6, 6});
  kernels::conv_forward(y, x, w, b, 1, 1);
  Tensor gy(y.shape);
  fill_random(gy, rng);

  auto loss = [&]() {
    Tensor yy(y.shape);
    kernels::conv_forward(yy, x, w, b, 1, 1);
    double s = 0.0;
    for (std::int64_t i = 0; i < yy.numel(); ++i) s += yy[i] * gy[i];
    return s;
  };

  Tensor gx(x.shape), gw(w.shape), gb({2});
  kernels::conv_backward_input(gx, gy, w, 1, 1);
  kernels::conv_backward_weight(gw, gb, x, gy, 1, 1);

  Rng pick(3);
  double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    std::int64_t i = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(x.numel())));
    double keep = x[i];
    x[i] = keep + h;
    double up = loss();
    x[i] = keep - h;
    double dn = loss();
    x[i] = keep;
    CHECK(gx[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
  }
  for (int trial = 0; trial < 10; ++trial) {
    std::int64_t i = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(w.numel())));
    double keep = w[i];
    w[i] = keep + h;
    double up = loss();
    w[i] = keep - h;
    double dn = loss();
    w[i] = keep;
    CHECK(gw[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("maxpool, bn stats, resample and rotate parallel variants are exact") {
  Rng rng(4);
  Tensor x({3, 5, 2, 14, 14});
  fill_random(x, rng);
  Tensor ys({3, 5, 2, 7, 7}), yp(ys.shape);
  std::vector<std::uint8_t> as, ap;
  kernels::maxpool_forward_serial(ys, as, x);
  kernels::maxpool_forward_parallel(yp, ap, x);
  CHECK(bitwise_equal(ys, yp));
  CHECK(as == ap);

  std::vector<double> ms, vs, mp, vp;
  kernels::bn_stats_serial(ms, vs, x);
  kernels::bn_stats_parallel(mp, vp, x);
  CHECK(ms == mp);
  CHECK(vs == vp);

  ImagePlane img(64, 48);
  for (auto& v : img.v) v = rng.uniform();
  ImagePlane rs(40, 30), rp(40, 30);
  kernels::resample_bilinear_serial(rs, img);
  kernels::resample_bilinear_parallel(rp, img);
  CHECK(rs.v == rp.v);

  ImagePlane qs(64, 48), qp(64, 48);
  kernels::rotate_bilinear_serial(qs, img, 33.0);
  kernels::rotate_bilinear_parallel(qp, img, 33.0);
  CHECK(qs.v == qp.v);
}

TEST_CASE("identity-size bilinear resample reproduces the input exactly") {
  Rng rng(5);
  ImagePlane img(33, 41);
  for (auto& v : img.v) v = rng.uniform();
  ImagePlane out(33, 41);
  kernels::resample_bilinear(out, img);
  CHECK(out.v == img.v);
}

TEST_CASE("rotation by zero is the identity; 180 twice returns close") {
  Rng rng(6);
  ImagePlane img(50, 50);
  for (auto& v : img.v) v = rng.uniform();
  ImagePlane r0(50, 50);
  kernels::rotate_bilinear(r0, img, 0.0);
  CHECK(r0.v == img.v);

  ImagePlane r1(50, 50), r2(50, 50);
  kernels::rotate_bilinear(r1, img, 180.0);
  kernels::rotate_bilinear(r2, r1, 180.0);
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < img.v.size(); ++i) mean_abs += std::abs(r2.v[i] - img.v[i]);
  mean_abs /= static_cast<double>(img.v.size());
  CHECK(mean_abs < 1e-3);
}

TEST_CASE("upsample2 backward is the adjoint of forward") {
  Rng rng(7);
  Tensor x({1, 2, 1, 5, 5}), gy({1, 2, 1, 10, 10});
  fill_random(x, rng);
  fill_random(gy, rng);
  Tensor y({1, 2, 1, 10, 10});
  kernels::upsample2_forward(y, x);
  Tensor gx(x.shape);
  kernels::upsample2_backward(gx, gy);
  double lhs = 0.0, rhs = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) lhs += y[i] * gy[i];
  for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * gx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
