#include "lvq/nn.hpp"

#include <cmath>

namespace lvq::nn {

namespace {
std::vector<std::int64_t> conv_out_shape(const Tensor& x, int out_ch, int k, int stride,
                                         int pad) {
  std::int64_t oh = (x.dim(3) + 2 * pad - k) / stride + 1;
  std::int64_t ow = (x.dim(4) + 2 * pad - k) / stride + 1;
  return {x.dim(0), out_ch, x.dim(2), oh, ow};
}
}  // namespace

// ---------------------------------------------------------------------------
// Conv

Conv::Conv(int in, int out, int kk, int kkd, int s, int p)
    : in_ch(in), out_ch(out), k(kk), kd(kkd), stride(s), pad(p) {
  w = Tensor({out, in, kd, k, k});
  b = Tensor({out});
  gw = Tensor(w.shape);
  gb = Tensor(b.shape);
}

void Conv::init_he(Rng& rng) {
  double fan_in = static_cast<double>(in_ch) * k * k * kd;
  double std = std::sqrt(2.0 / fan_in);
  for (auto& x : w.v) x = rng.normal(0.0, std);
  b.zero();
}

void Conv::init_head(Rng& rng, double wstd) {
  for (auto& x : w.v) x = rng.normal(0.0, wstd);
  b.zero();
}

Tensor Conv::forward_train(const Tensor& x) {
  x_cache_ = x;
  return forward_eval(x);
}

Tensor Conv::forward_eval(const Tensor& x) const {
  Tensor y(conv_out_shape(x, out_ch, k, stride, pad));
  kernels::conv_forward(y, x, w, b, stride, pad);
  return y;
}

Tensor Conv::backward(const Tensor& gy) {
  kernels::conv_backward_weight(gw, gb, x_cache_, gy, stride, pad);
  Tensor gx(x_cache_.shape);
  kernels::conv_backward_input(gx, gy, w, stride, pad);
  return gx;
}

void Conv::collect(std::vector<ParamRef>& out, const std::string& prefix) {
  out.push_back({prefix + ".w", &w, &gw});
  out.push_back({prefix + ".b", &b, &gb});
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(int channels) : ch(channels) {
  gamma = Tensor({channels});
  beta = Tensor({channels});
  ggamma = Tensor({channels});
  gbeta = Tensor({channels});
  running_mean = Tensor({channels});
  running_var = Tensor({channels});
  gamma.fill(1.0);
  running_var.fill(1.0);
}

Tensor BatchNorm::forward_train(const Tensor& x) {
  std::vector<double> mean, var;
  kernels::bn_stats(mean, var, x);
  std::int64_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3) * x.dim(4);
  double count = static_cast<double>(N * M);

  invstd_cache_.assign(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t c = 0; c < C; ++c)
    invstd_cache_[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps);

  Tensor y(x.shape);
  xhat_cache_ = Tensor(x.shape);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double mu = mean[static_cast<std::size_t>(c)];
    double is = invstd_cache_[static_cast<std::size_t>(c)];
    double g = gamma[c], bb = beta[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const double* xp = x.data() + (n * C + c) * M;
      double* hp = xhat_cache_.data() + (n * C + c) * M;
      double* yp = y.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) {
        double h = (xp[i] - mu) * is;
        hp[i] = h;
        yp[i] = g * h + bb;
      }
    }
  }
  // Unbiased variance feeds the running estimate.
  for (std::int64_t c = 0; c < C; ++c) {
    double unbiased = count > 1.0 ? var[static_cast<std::size_t>(c)] * count / (count - 1.0)
                                  : var[static_cast<std::size_t>(c)];
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[static_cast<std::size_t>(c)];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * unbiased;
  }
  return y;
}

Tensor BatchNorm::forward_eval(const Tensor& x) const {
  std::int64_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3) * x.dim(4);
  Tensor y(x.shape);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double mu = running_mean[c];
    double is = 1.0 / std::sqrt(running_var[c] + eps);
    double g = gamma[c], bb = beta[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const double* xp = x.data() + (n * C + c) * M;
      double* yp = y.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) yp[i] = g * (xp[i] - mu) * is + bb;
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& gy) {
  const Tensor& xh = xhat_cache_;
  std::int64_t N = gy.dim(0), C = gy.dim(1), M = gy.dim(2) * gy.dim(3) * gy.dim(4);
  double count = static_cast<double>(N * M);
  Tensor gx(gy.shape);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double sum_gy = 0.0, sum_gy_xh = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* gp = gy.data() + (n * C + c) * M;
      const double* hp = xh.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) {
        sum_gy += gp[i];
        sum_gy_xh += gp[i] * hp[i];
      }
    }
    ggamma[c] += sum_gy_xh;
    gbeta[c] += sum_gy;
    double g = gamma[c];
    double is = invstd_cache_[static_cast<std::size_t>(c)];
    double mg = sum_gy / count;
    double mgh = sum_gy_xh / count;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* gp = gy.data() + (n * C + c) * M;
      const double* hp = xh.data() + (n * C + c) * M;
      double* op = gx.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) op[i] = g * is * (gp[i] - mg - hp[i] * mgh);
    }
  }
  return gx;
}

void BatchNorm::collect(std::vector<ParamRef>& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", &gamma, &ggamma});
  out.push_back({prefix + ".beta", &beta, &gbeta});
  out.push_back({prefix + ".running_mean", &running_mean, nullptr});
  out.push_back({prefix + ".running_var", &running_var, nullptr});
}

// ---------------------------------------------------------------------------
// Relu / MaxPool / SpatialGap / Upsample2

Tensor Relu::forward_train(const Tensor& x) {
  y_cache_ = forward_eval(x);
  return y_cache_;
}

Tensor Relu::forward_eval(const Tensor& x) const {
  Tensor y(x.shape);
  const double* xp = x.data();
  double* yp = y.data();
  std::int64_t n = x.numel();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  return y;
}

Tensor Relu::backward(const Tensor& gy) {
  Tensor gx(gy.shape);
  const double* gp = gy.data();
  const double* yp = y_cache_.data();
  double* op = gx.data();
  std::int64_t n = gy.numel();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) op[i] = yp[i] > 0.0 ? gp[i] : 0.0;
  return gx;
}

Tensor MaxPool::forward_train(const Tensor& x) {
  in_shape_ = x.shape;
  Tensor y({x.dim(0), x.dim(1), x.dim(2), x.dim(3) / 2, x.dim(4) / 2});
  kernels::maxpool_forward(y, arg_cache_, x);
  return y;
}

Tensor MaxPool::forward_eval(const Tensor& x) const {
  std::vector<std::uint8_t> arg;
  Tensor y({x.dim(0), x.dim(1), x.dim(2), x.dim(3) / 2, x.dim(4) / 2});
  kernels::maxpool_forward(y, arg, x);
  return y;
}

Tensor MaxPool::backward(const Tensor& gy) {
  Tensor gx(in_shape_);
  kernels::maxpool_backward(gx, gy, arg_cache_);
  return gx;
}

Tensor SpatialGap::forward(const Tensor& x) {
  in_shape_ = x.shape;
  return forward_eval(x);
}

Tensor SpatialGap::forward_eval(const Tensor& x) const {
  std::int64_t P = x.dim(0) * x.dim(1) * x.dim(2), HW = x.dim(3) * x.dim(4);
  Tensor y({x.dim(0), x.dim(1), x.dim(2), 1, 1});
  for (std::int64_t p = 0; p < P; ++p) {
    double s = 0.0;
    const double* xp = x.data() + p * HW;
    for (std::int64_t i = 0; i < HW; ++i) s += xp[i];
    y[p] = s / static_cast<double>(HW);
  }
  return y;
}

Tensor SpatialGap::backward(const Tensor& gy) const {
  Tensor gx(in_shape_);
  std::int64_t P = gx.dim(0) * gx.dim(1) * gx.dim(2), HW = gx.dim(3) * gx.dim(4);
  for (std::int64_t p = 0; p < P; ++p) {
    double g = gy[p] / static_cast<double>(HW);
    double* xp = gx.data() + p * HW;
    for (std::int64_t i = 0; i < HW; ++i) xp[i] = g;
  }
  return gx;
}

Tensor Upsample2::forward(const Tensor& x) {
  in_shape_ = x.shape;
  return forward_eval(x);
}

Tensor Upsample2::forward_eval(const Tensor& x) const {
  Tensor y({x.dim(0), x.dim(1), x.dim(2), x.dim(3) * 2, x.dim(4) * 2});
  kernels::upsample2_forward(y, x);
  return y;
}

Tensor Upsample2::backward(const Tensor& gy) const {
  Tensor gx(in_shape_);
  kernels::upsample2_backward(gx, gy);
  return gx;
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlock::ResBlock(int in_ch, int out_ch, int stride, int kd)
    : conv1(in_ch, out_ch, 3, kd, stride, 1),
      conv2(out_ch, out_ch, 3, kd, 1, 1),
      bn1(out_ch),
      bn2(out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    has_proj = true;
    proj = Conv(in_ch, out_ch, 1, 1, stride, 0);
    proj_bn = BatchNorm(out_ch);
  }
}

Tensor ResBlock::forward_train(const Tensor& x) {
  Tensor h = relu1.forward_train(bn1.forward_train(conv1.forward_train(x)));
  h = bn2.forward_train(conv2.forward_train(h));
  Tensor sc = has_proj ? proj_bn.forward_train(proj.forward_train(x)) : x;
  add_inplace(h, sc);
  return relu_out.forward_train(h);
}

Tensor ResBlock::forward_eval(const Tensor& x) const {
  Tensor h = relu1.forward_eval(bn1.forward_eval(conv1.forward_eval(x)));
  h = bn2.forward_eval(conv2.forward_eval(h));
  Tensor sc = has_proj ? proj_bn.forward_eval(proj.forward_eval(x)) : x;
  add_inplace(h, sc);
  return relu_out.forward_eval(h);
}

Tensor ResBlock::backward(const Tensor& gy) {
  Tensor g = relu_out.backward(gy);
  Tensor g_main = conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(g)))));
  Tensor g_skip = has_proj ? proj.backward(proj_bn.backward(g)) : g;
  add_inplace(g_main, g_skip);
  return g_main;
}

void ResBlock::collect(std::vector<ParamRef>& out, const std::string& prefix) {
  conv1.collect(out, prefix + ".conv1");
  bn1.collect(out, prefix + ".bn1");
  conv2.collect(out, prefix + ".conv2");
  bn2.collect(out, prefix + ".bn2");
  if (has_proj) {
    proj.collect(out, prefix + ".proj");
    proj_bn.collect(out, prefix + ".proj_bn");
  }
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y = a;
  add_inplace(y, b);
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  std::int64_t n = a.numel();
  double* ap = a.data();
  const double* bp = b.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) ap[i] += bp[i];
}

}  // namespace lvq::nn
