// Throughput comparison of the serial reference kernels against the
// OpenMP-parallel implementations, plus an exactness check on each pair.
#include <chrono>
#include <cstdio>
#include <functional>

#include "lvq/kernels.hpp"
#include "lvq/rng.hpp"

using namespace lvq;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
         static_cast<double>(reps);
}

void fill_random(Tensor& t, Rng& rng) {
  for (auto& v : t.v) v = rng.normal(0.0, 1.0);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void report(const char* name, double serial_s, double parallel_s, bool exact) {
  std::printf("%-24s serial %8.2f ms   parallel %8.2f ms   speedup %5.2fx   %s\n", name,
              serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              exact ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(99);

  {  // conv forward, depth 1 (2D path)
    Tensor x({4, 16, 1, 56, 56}), w({32, 16, 1, 3, 3}), b({32});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    Tensor ys({4, 32, 1, 56, 56}), yp(ys.shape);
    double ts = time_of([&] { kernels::conv_forward_serial(ys, x, w, b, 1, 1); }, 3);
    double tp = time_of([&] { kernels::conv_forward_parallel(yp, x, w, b, 1, 1); }, 3);
    report("conv fwd 2d", ts, tp, bitwise_equal(ys, yp));
  }
  {  // conv forward, depth 3 (inflated path)
    Tensor x({2, 8, 5, 40, 40}), w({16, 8, 3, 3, 3}), b({16});
    fill_random(x, rng);
    fill_random(w, rng);
    fill_random(b, rng);
    Tensor ys({2, 16, 5, 40, 40}), yp(ys.shape);
    double ts = time_of([&] { kernels::conv_forward_serial(ys, x, w, b, 1, 1); }, 3);
    double tp = time_of([&] { kernels::conv_forward_parallel(yp, x, w, b, 1, 1); }, 3);
    report("conv fwd 3d", ts, tp, bitwise_equal(ys, yp));
  }
  {  // conv backward input
    Tensor gy({4, 32, 1, 56, 56}), w({32, 16, 1, 3, 3});
    fill_random(gy, rng);
    fill_random(w, rng);
    Tensor gs({4, 16, 1, 56, 56}), gp(gs.shape);
    double ts = time_of([&] { kernels::conv_backward_input_serial(gs, gy, w, 1, 1); }, 3);
    double tp = time_of([&] { kernels::conv_backward_input_parallel(gp, gy, w, 1, 1); }, 3);
    report("conv bwd input", ts, tp, bitwise_equal(gs, gp));
  }
  {  // conv backward weight
    Tensor x({4, 16, 1, 56, 56}), gy({4, 32, 1, 56, 56});
    fill_random(x, rng);
    fill_random(gy, rng);
    Tensor gws({32, 16, 1, 3, 3}), gbs({32}), gwp(gws.shape), gbp(gbs.shape);
    double ts = time_of(
        [&] {
          gws.zero();
          gbs.zero();
          kernels::conv_backward_weight_serial(gws, gbs, x, gy, 1, 1);
        },
        3);
    double tp = time_of(
        [&] {
          gwp.zero();
          gbp.zero();
          kernels::conv_backward_weight_parallel(gwp, gbp, x, gy, 1, 1);
        },
        3);
    report("conv bwd weight", ts, tp, bitwise_equal(gws, gwp) && bitwise_equal(gbs, gbp));
  }
  {  // batch-norm statistics
    Tensor x({8, 64, 1, 56, 56});
    fill_random(x, rng);
    std::vector<double> ms, vs, mp, vp;
    double ts = time_of([&] { kernels::bn_stats_serial(ms, vs, x); }, 5);
    double tp = time_of([&] { kernels::bn_stats_parallel(mp, vp, x); }, 5);
    report("bn stats", ts, tp, ms == mp && vs == vp);
  }
  {  // bilinear resampling
    ImagePlane src(512, 512), ds(350, 350), dp(350, 350);
    for (auto& v : src.v) v = rng.uniform();
    double ts = time_of([&] { kernels::resample_bilinear_serial(ds, src); }, 5);
    double tp = time_of([&] { kernels::resample_bilinear_parallel(dp, src); }, 5);
    report("resample bilinear", ts, tp, ds.v == dp.v);
  }
  {  // rotation
    ImagePlane src(300, 300), ds(300, 300), dp(300, 300);
    for (auto& v : src.v) v = rng.uniform();
    double ts = time_of([&] { kernels::rotate_bilinear_serial(ds, src, 37.5); }, 5);
    double tp = time_of([&] { kernels::rotate_bilinear_parallel(dp, src, 37.5); }, 5);
    report("rotate bilinear", ts, tp, ds.v == dp.v);
  }
  {  // max pooling
    Tensor x({8, 32, 1, 56, 56});
    fill_random(x, rng);
    Tensor ys({8, 32, 1, 28, 28}), yp(ys.shape);
    std::vector<std::uint8_t> as, ap;
    double ts = time_of([&] { kernels::maxpool_forward_serial(ys, as, x); }, 5);
    double tp = time_of([&] { kernels::maxpool_forward_parallel(yp, ap, x); }, 5);
    report("maxpool fwd", ts, tp, bitwise_equal(ys, yp) && as == ap);
  }
  return 0;
}
