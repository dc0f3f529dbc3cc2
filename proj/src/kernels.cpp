#include "lvq/kernels.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvq::kernels {

namespace {
std::atomic<Exec> g_exec{
#ifdef _OPENMP
    Exec::parallel
#else
    Exec::serial
#endif
};

struct ConvDims {
  std::int64_t N, Cin, D, H, W, Cout, KD, KH, KW, OH, OW;
  int tpad;  // temporal padding (KD-1)/2
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  ConvDims d{};
  d.N = x.dim(0);
  d.Cin = x.dim(1);
  d.D = x.dim(2);
  d.H = x.dim(3);
  d.W = x.dim(4);
  d.Cout = w.dim(0);
  d.KD = w.dim(2);
  d.KH = w.dim(3);
  d.KW = w.dim(4);
  d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
  d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
  d.tpad = static_cast<int>((d.KD - 1) / 2);
  return d;
}
}  // namespace

Exec exec_mode() { return g_exec.load(); }
void set_exec_mode(Exec e) { g_exec.store(e); }

// ---------------------------------------------------------------------------
// conv forward

void conv_forward_serial(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                         int stride, int pad) {
  ConvDims c = conv_dims(x, w, stride, pad);
  for (std::int64_t n = 0; n < c.N; ++n)
    for (std::int64_t oc = 0; oc < c.Cout; ++oc)
      for (std::int64_t d = 0; d < c.D; ++d)
        for (std::int64_t oh = 0; oh < c.OH; ++oh)
          for (std::int64_t ow = 0; ow < c.OW; ++ow) {
            double acc = b[oc];
            for (std::int64_t ic = 0; ic < c.Cin; ++ic)
              for (std::int64_t kd = 0; kd < c.KD; ++kd) {
                std::int64_t din = d - c.tpad + kd;
                if (din < 0 || din >= c.D) continue;
                for (std::int64_t kh = 0; kh < c.KH; ++kh) {
                  std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= c.H) continue;
                  for (std::int64_t kw = 0; kw < c.KW; ++kw) {
                    std::int64_t iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= c.W) continue;
                    acc += w[(((oc * c.Cin + ic) * c.KD + kd) * c.KH + kh) * c.KW + kw] *
                           x[(((n * c.Cin + ic) * c.D + din) * c.H + ih) * c.W + iw];
                  }
                }
              }
            y[(((n * c.Cout + oc) * c.D + d) * c.OH + oh) * c.OW + ow] = acc;
          }
}

void conv_forward_parallel(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                           int stride, int pad) {
  ConvDims c = conv_dims(x, w, stride, pad);
  const double* xd = x.data();
  const double* wd = w.data();
  double* yd = y.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::int64_t n = 0; n < c.N; ++n)
    for (std::int64_t oc = 0; oc < c.Cout; ++oc) {
      double* yplane = yd + (n * c.Cout + oc) * c.D * c.OH * c.OW;
      double bias = b[oc];
      for (std::int64_t i = 0; i < c.D * c.OH * c.OW; ++i) yplane[i] = bias;
      for (std::int64_t ic = 0; ic < c.Cin; ++ic)
        for (std::int64_t kd = 0; kd < c.KD; ++kd)
          for (std::int64_t kh = 0; kh < c.KH; ++kh)
            for (std::int64_t kw = 0; kw < c.KW; ++kw) {
              double wv = wd[(((oc * c.Cin + ic) * c.KD + kd) * c.KH + kh) * c.KW + kw];
              std::int64_t ow_lo = 0, ow_hi = c.OW - 1;
              // valid ow range: 0 <= ow*stride - pad + kw < W
              while (ow_lo * stride - pad + kw < 0) ++ow_lo;
              while (ow_hi >= 0 && ow_hi * stride - pad + kw >= c.W) --ow_hi;
              for (std::int64_t d = 0; d < c.D; ++d) {
                std::int64_t din = d - c.tpad + kd;
                if (din < 0 || din >= c.D) continue;
                double* ydp = yplane + d * c.OH * c.OW;
                const double* xdp = xd + ((n * c.Cin + ic) * c.D + din) * c.H * c.W;
                for (std::int64_t oh = 0; oh < c.OH; ++oh) {
                  std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= c.H) continue;
                  double* yrow = ydp + oh * c.OW;
                  const double* xrow = xdp + ih * c.W - pad + kw;
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    yrow[ow] += wv * xrow[ow * stride];
                }
              }
            }
    }
}

void conv_forward(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                  int stride, int pad) {
  if (exec_mode() == Exec::parallel)
    conv_forward_parallel(y, x, w, b, stride, pad);
  else
    conv_forward_serial(y, x, w, b, stride, pad);
}

// ---------------------------------------------------------------------------
// conv backward w.r.t. input (gather form; each gx element owned by one thread)

void conv_backward_input_serial(Tensor& gx, const Tensor& gy, const Tensor& w,
                                int stride, int pad) {
  std::int64_t N = gx.dim(0), Cin = gx.dim(1), D = gx.dim(2), H = gx.dim(3), W = gx.dim(4);
  std::int64_t Cout = w.dim(0), KD = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  std::int64_t OH = gy.dim(3), OW = gy.dim(4);
  int tpad = static_cast<int>((KD - 1) / 2);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ic = 0; ic < Cin; ++ic)
      for (std::int64_t din = 0; din < D; ++din)
        for (std::int64_t ih = 0; ih < H; ++ih)
          for (std::int64_t iw = 0; iw < W; ++iw) {
            double acc = 0.0;
            for (std::int64_t oc = 0; oc < Cout; ++oc)
              for (std::int64_t kd = 0; kd < KD; ++kd) {
                std::int64_t d = din + tpad - kd;
                if (d < 0 || d >= D) continue;
                for (std::int64_t kh = 0; kh < KH; ++kh) {
                  std::int64_t t = ih + pad - kh;
                  if (t < 0 || t % stride != 0) continue;
                  std::int64_t oh = t / stride;
                  if (oh >= OH) continue;
                  for (std::int64_t kw = 0; kw < KW; ++kw) {
                    std::int64_t u = iw + pad - kw;
                    if (u < 0 || u % stride != 0) continue;
                    std::int64_t ow = u / stride;
                    if (ow >= OW) continue;
                    acc += w[(((oc * Cin + ic) * KD + kd) * KH + kh) * KW + kw] *
                           gy[(((n * Cout + oc) * D + d) * OH + oh) * OW + ow];
                  }
                }
              }
            gx[(((n * Cin + ic) * D + din) * H + ih) * W + iw] = acc;
          }
}

void conv_backward_input_parallel(Tensor& gx, const Tensor& gy, const Tensor& w,
                                  int stride, int pad) {
  std::int64_t N = gx.dim(0), Cin = gx.dim(1), D = gx.dim(2), H = gx.dim(3), W = gx.dim(4);
  std::int64_t Cout = w.dim(0), KD = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  std::int64_t OH = gy.dim(3), OW = gy.dim(4);
  int tpad = static_cast<int>((KD - 1) / 2);
  const double* wd = w.data();
  const double* gyd = gy.data();
  double* gxd = gx.data();

  if (stride == 1) {
    // Row-walk form; per-element accumulation order (oc, kd, kh, kw) matches
    // the serial reference, so the results stay bitwise identical.
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t ic = 0; ic < Cin; ++ic) {
        double* gxplane = gxd + (n * Cin + ic) * D * H * W;
        for (std::int64_t i = 0; i < D * H * W; ++i) gxplane[i] = 0.0;
        for (std::int64_t oc = 0; oc < Cout; ++oc)
          for (std::int64_t kd = 0; kd < KD; ++kd)
            for (std::int64_t kh = 0; kh < KH; ++kh)
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                double wv = wd[(((oc * Cin + ic) * KD + kd) * KH + kh) * KW + kw];
                std::int64_t iw_lo = kw - pad > 0 ? kw - pad : 0;
                std::int64_t iw_hi = OW - 1 - pad + kw < W - 1 ? OW - 1 - pad + kw : W - 1;
                for (std::int64_t din = 0; din < D; ++din) {
                  std::int64_t d = din + tpad - kd;
                  if (d < 0 || d >= D) continue;
                  const double* gyp = gyd + ((n * Cout + oc) * D + d) * OH * OW;
                  double* gxp = gxplane + din * H * W;
                  for (std::int64_t ih = 0; ih < H; ++ih) {
                    std::int64_t oh = ih + pad - kh;
                    if (oh < 0 || oh >= OH) continue;
                    const double* gyrow = gyp + oh * OW + pad - kw;
                    double* gxrow = gxp + ih * W;
                    for (std::int64_t iw = iw_lo; iw <= iw_hi; ++iw)
                      gxrow[iw] += wv * gyrow[iw];
                  }
                }
              }
      }
    return;
  }

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t ic = 0; ic < Cin; ++ic)
      for (std::int64_t din = 0; din < D; ++din)
        for (std::int64_t ih = 0; ih < H; ++ih)
          for (std::int64_t iw = 0; iw < W; ++iw) {
            double acc = 0.0;
            for (std::int64_t oc = 0; oc < Cout; ++oc)
              for (std::int64_t kd = 0; kd < KD; ++kd) {
                std::int64_t d = din + tpad - kd;
                if (d < 0 || d >= D) continue;
                const double* gyp = gyd + ((n * Cout + oc) * D + d) * OH * OW;
                const double* wp = wd + ((oc * Cin + ic) * KD + kd) * KH * KW;
                for (std::int64_t kh = 0; kh < KH; ++kh) {
                  std::int64_t t = ih + pad - kh;
                  if (t < 0 || t % stride != 0) continue;
                  std::int64_t oh = t / stride;
                  if (oh >= OH) continue;
                  for (std::int64_t kw = 0; kw < KW; ++kw) {
                    std::int64_t u = iw + pad - kw;
                    if (u < 0 || u % stride != 0) continue;
                    std::int64_t ow = u / stride;
                    if (ow >= OW) continue;
                    acc += wp[kh * KW + kw] * gyp[oh * OW + ow];
                  }
                }
              }
            gxd[(((n * Cin + ic) * D + din) * H + ih) * W + iw] = acc;
          }
}

void conv_backward_input(Tensor& gx, const Tensor& gy, const Tensor& w, int stride, int pad) {
  if (exec_mode() == Exec::parallel)
    conv_backward_input_parallel(gx, gy, w, stride, pad);
  else
    conv_backward_input_serial(gx, gy, w, stride, pad);
}

// ---------------------------------------------------------------------------
// conv backward w.r.t. weights

void conv_backward_weight_serial(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                                 int stride, int pad) {
  std::int64_t N = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::int64_t Cout = gy.dim(1), OH = gy.dim(3), OW = gy.dim(4);
  std::int64_t KD = gw.dim(2), KH = gw.dim(3), KW = gw.dim(4);
  int tpad = static_cast<int>((KD - 1) / 2);
  for (std::int64_t oc = 0; oc < Cout; ++oc) {
    for (std::int64_t ic = 0; ic < Cin; ++ic)
      for (std::int64_t kd = 0; kd < KD; ++kd)
        for (std::int64_t kh = 0; kh < KH; ++kh)
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t d = 0; d < D; ++d) {
                std::int64_t din = d - tpad + kd;
                if (din < 0 || din >= D) continue;
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                  std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= H) continue;
                  for (std::int64_t ow = 0; ow < OW; ++ow) {
                    std::int64_t iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= W) continue;
                    acc += gy[(((n * Cout + oc) * D + d) * OH + oh) * OW + ow] *
                           x[(((n * Cin + ic) * D + din) * H + ih) * W + iw];
                  }
                }
              }
            gw[(((oc * Cin + ic) * KD + kd) * KH + kh) * KW + kw] += acc;
          }
    double bacc = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < D * OH * OW; ++i)
        bacc += gy[(n * Cout + oc) * D * OH * OW + i];
    gb[oc] += bacc;
  }
}

void conv_backward_weight_parallel(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                                   int stride, int pad) {
  std::int64_t N = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::int64_t Cout = gy.dim(1), OH = gy.dim(3), OW = gy.dim(4);
  std::int64_t KD = gw.dim(2), KH = gw.dim(3), KW = gw.dim(4);
  int tpad = static_cast<int>((KD - 1) / 2);
  const double* xd = x.data();
  const double* gyd = gy.data();
  double* gwd = gw.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::int64_t oc = 0; oc < Cout; ++oc)
    for (std::int64_t ic = 0; ic < Cin; ++ic)
      for (std::int64_t kd = 0; kd < KD; ++kd)
        for (std::int64_t kh = 0; kh < KH; ++kh)
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t d = 0; d < D; ++d) {
                std::int64_t din = d - tpad + kd;
                if (din < 0 || din >= D) continue;
                const double* gyp = gyd + ((n * Cout + oc) * D + d) * OH * OW;
                const double* xp = xd + ((n * Cin + ic) * D + din) * H * W;
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                  std::int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= H) continue;
                  const double* gyrow = gyp + oh * OW;
                  const double* xrow = xp + ih * W - pad + kw;
                  std::int64_t ow_lo = 0, ow_hi = OW - 1;
                  while (ow_lo * stride - pad + kw < 0) ++ow_lo;
                  while (ow_hi >= 0 && ow_hi * stride - pad + kw >= W) --ow_hi;
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    acc += gyrow[ow] * xrow[ow * stride];
                }
              }
            gwd[(((oc * Cin + ic) * KD + kd) * KH + kh) * KW + kw] += acc;
          }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t oc = 0; oc < Cout; ++oc) {
    double bacc = 0.0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t i = 0; i < D * OH * OW; ++i)
        bacc += gyd[(n * Cout + oc) * D * OH * OW + i];
    gb[oc] += bacc;
  }
}

void conv_backward_weight(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                          int stride, int pad) {
  if (exec_mode() == Exec::parallel)
    conv_backward_weight_parallel(gw, gb, x, gy, stride, pad);
  else
    conv_backward_weight_serial(gw, gb, x, gy, stride, pad);
}

// ---------------------------------------------------------------------------
// max pooling (spatial 2x2, stride 2)

namespace {
inline void maxpool_one(const double* xp, double* yp, std::uint8_t* ap,
                        std::int64_t H, std::int64_t W, std::int64_t OH, std::int64_t OW) {
  for (std::int64_t oh = 0; oh < OH; ++oh)
    for (std::int64_t ow = 0; ow < OW; ++ow) {
      std::int64_t ih = oh * 2, iw = ow * 2;
      double best = xp[ih * W + iw];
      std::uint8_t code = 0;
      static const int dh[4] = {0, 0, 1, 1};
      static const int dw[4] = {0, 1, 0, 1};
      for (int k = 1; k < 4; ++k) {
        std::int64_t r = ih + dh[k], c = iw + dw[k];
        if (r < H && c < W) {
          double v = xp[r * W + c];
          if (v > best) {
            best = v;
            code = static_cast<std::uint8_t>(k);
          }
        }
      }
      yp[oh * OW + ow] = best;
      ap[oh * OW + ow] = code;
    }
}
}  // namespace

void maxpool_forward_serial(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x) {
  std::int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::int64_t OH = H / 2, OW = W / 2;
  arg.assign(static_cast<std::size_t>(N * C * D * OH * OW), 0);
  for (std::int64_t p = 0; p < N * C * D; ++p)
    maxpool_one(x.data() + p * H * W, y.data() + p * OH * OW, arg.data() + p * OH * OW, H, W,
                OH, OW);
}

void maxpool_forward_parallel(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x) {
  std::int64_t N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::int64_t OH = H / 2, OW = W / 2;
  arg.assign(static_cast<std::size_t>(N * C * D * OH * OW), 0);
  const double* xd = x.data();
  double* yd = y.data();
  std::uint8_t* ad = arg.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < N * C * D; ++p)
    maxpool_one(xd + p * H * W, yd + p * OH * OW, ad + p * OH * OW, H, W, OH, OW);
}

void maxpool_forward(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x) {
  if (exec_mode() == Exec::parallel)
    maxpool_forward_parallel(y, arg, x);
  else
    maxpool_forward_serial(y, arg, x);
}

void maxpool_backward(Tensor& gx, const Tensor& gy, const std::vector<std::uint8_t>& arg) {
  std::int64_t N = gx.dim(0), C = gx.dim(1), D = gx.dim(2), H = gx.dim(3), W = gx.dim(4);
  std::int64_t OH = H / 2, OW = W / 2;
  gx.zero();
  const double* gyd = gy.data();
  double* gxd = gx.data();
  static const int dh[4] = {0, 0, 1, 1};
  static const int dw[4] = {0, 1, 0, 1};
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < N * C * D; ++p) {
    const double* gyp = gyd + p * OH * OW;
    const std::uint8_t* ap = arg.data() + p * OH * OW;
    double* gxp = gxd + p * H * W;
    for (std::int64_t oh = 0; oh < OH; ++oh)
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        int k = ap[oh * OW + ow];
        gxp[(oh * 2 + dh[k]) * W + (ow * 2 + dw[k])] += gyp[oh * OW + ow];
      }
  }
}

// ---------------------------------------------------------------------------
// batch-norm statistics

void bn_stats_serial(std::vector<double>& mean, std::vector<double>& var, const Tensor& x) {
  std::int64_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3) * x.dim(4);
  mean.assign(static_cast<std::size_t>(C), 0.0);
  var.assign(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = x.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) s += p[i];
    }
    double mu = s / static_cast<double>(N * M);
    double q = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = x.data() + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) {
        double d = p[i] - mu;
        q += d * d;
      }
    }
    mean[static_cast<std::size_t>(c)] = mu;
    var[static_cast<std::size_t>(c)] = q / static_cast<double>(N * M);
  }
}

void bn_stats_parallel(std::vector<double>& mean, std::vector<double>& var, const Tensor& x) {
  std::int64_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3) * x.dim(4);
  mean.assign(static_cast<std::size_t>(C), 0.0);
  var.assign(static_cast<std::size_t>(C), 0.0);
  const double* xd = x.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = xd + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) s += p[i];
    }
    double mu = s / static_cast<double>(N * M);
    double q = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const double* p = xd + (n * C + c) * M;
      for (std::int64_t i = 0; i < M; ++i) {
        double d = p[i] - mu;
        q += d * d;
      }
    }
    mean[static_cast<std::size_t>(c)] = mu;
    var[static_cast<std::size_t>(c)] = q / static_cast<double>(N * M);
  }
}

void bn_stats(std::vector<double>& mean, std::vector<double>& var, const Tensor& x) {
  if (exec_mode() == Exec::parallel)
    bn_stats_parallel(mean, var, x);
  else
    bn_stats_serial(mean, var, x);
}

// ---------------------------------------------------------------------------
// nearest-neighbor x2 upsampling

void upsample2_forward(Tensor& y, const Tensor& x) {
  std::int64_t P = x.dim(0) * x.dim(1) * x.dim(2), H = x.dim(3), W = x.dim(4);
  const double* xd = x.data();
  double* yd = y.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < P; ++p) {
    const double* xp = xd + p * H * W;
    double* yp = yd + p * 4 * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) {
        double v = xp[h * W + w];
        double* q = yp + (2 * h) * (2 * W) + 2 * w;
        q[0] = v;
        q[1] = v;
        q[2 * W] = v;
        q[2 * W + 1] = v;
      }
  }
}

void upsample2_backward(Tensor& gx, const Tensor& gy) {
  std::int64_t P = gx.dim(0) * gx.dim(1) * gx.dim(2), H = gx.dim(3), W = gx.dim(4);
  const double* gyd = gy.data();
  double* gxd = gx.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t p = 0; p < P; ++p) {
    const double* gyp = gyd + p * 4 * H * W;
    double* gxp = gxd + p * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) {
        const double* q = gyp + (2 * h) * (2 * W) + 2 * w;
        gxp[h * W + w] = q[0] + q[1] + q[2 * W] + q[2 * W + 1];
      }
  }
}

// ---------------------------------------------------------------------------
// plane resampling

namespace {
inline double bilinear_at(const ImagePlane& src, double r, double c) {
  // clamp-to-edge
  if (r < 0) r = 0;
  if (c < 0) c = 0;
  if (r > static_cast<double>(src.h - 1)) r = static_cast<double>(src.h - 1);
  if (c > static_cast<double>(src.w - 1)) c = static_cast<double>(src.w - 1);
  std::int64_t r0 = static_cast<std::int64_t>(std::floor(r));
  std::int64_t c0 = static_cast<std::int64_t>(std::floor(c));
  std::int64_t r1 = r0 + 1 < src.h ? r0 + 1 : r0;
  std::int64_t c1 = c0 + 1 < src.w ? c0 + 1 : c0;
  double fr = r - static_cast<double>(r0);
  double fc = c - static_cast<double>(c0);
  double top = src.at(r0, c0) * (1.0 - fc) + src.at(r0, c1) * fc;
  double bot = src.at(r1, c0) * (1.0 - fc) + src.at(r1, c1) * fc;
  return top * (1.0 - fr) + bot * fr;
}

inline void resample_row(ImagePlane& dst, const ImagePlane& src, std::int64_t r,
                         double rscale, double cscale) {
  double sr = (static_cast<double>(r) + 0.5) * rscale - 0.5;
  for (std::int64_t c = 0; c < dst.w; ++c) {
    double sc = (static_cast<double>(c) + 0.5) * cscale - 0.5;
    dst.at(r, c) = bilinear_at(src, sr, sc);
  }
}
}  // namespace

void resample_bilinear_serial(ImagePlane& dst, const ImagePlane& src) {
  double rscale = static_cast<double>(src.h) / static_cast<double>(dst.h);
  double cscale = static_cast<double>(src.w) / static_cast<double>(dst.w);
  for (std::int64_t r = 0; r < dst.h; ++r) resample_row(dst, src, r, rscale, cscale);
}

void resample_bilinear_parallel(ImagePlane& dst, const ImagePlane& src) {
  double rscale = static_cast<double>(src.h) / static_cast<double>(dst.h);
  double cscale = static_cast<double>(src.w) / static_cast<double>(dst.w);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t r = 0; r < dst.h; ++r) resample_row(dst, src, r, rscale, cscale);
}

void resample_bilinear(ImagePlane& dst, const ImagePlane& src) {
  if (exec_mode() == Exec::parallel)
    resample_bilinear_parallel(dst, src);
  else
    resample_bilinear_serial(dst, src);
}

void resample_nearest(MaskPlane& dst, const MaskPlane& src) {
  double rscale = static_cast<double>(src.h) / static_cast<double>(dst.h);
  double cscale = static_cast<double>(src.w) / static_cast<double>(dst.w);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t r = 0; r < dst.h; ++r) {
    std::int64_t sr = static_cast<std::int64_t>(std::floor((static_cast<double>(r) + 0.5) * rscale));
    if (sr < 0) sr = 0;
    if (sr >= src.h) sr = src.h - 1;
    for (std::int64_t c = 0; c < dst.w; ++c) {
      std::int64_t sc =
          static_cast<std::int64_t>(std::floor((static_cast<double>(c) + 0.5) * cscale));
      if (sc < 0) sc = 0;
      if (sc >= src.w) sc = src.w - 1;
      dst.at(r, c) = src.at(sr, sc);
    }
  }
}

namespace {
// Exact 1D squared-distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  std::int64_t n = static_cast<std::int64_t>(f.size());
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  std::int64_t k = 0;
  v[0] = 0;
  z[0] = -1e300;
  z[1] = 1e300;
  for (std::int64_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      std::int64_t p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + static_cast<double>(q * q)) -
           (f[static_cast<std::size_t>(p)] + static_cast<double>(p * p))) /
          (2.0 * static_cast<double>(q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = 1e300;
  }
  k = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < static_cast<double>(q)) ++k;
    std::int64_t p = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = static_cast<double>((q - p) * (q - p)) + f[static_cast<std::size_t>(p)];
  }
}

ImagePlane squared_edt(const MaskPlane& m, std::uint8_t label, bool inside) {
  ImagePlane g(m.h, m.w);
  std::vector<double> col(static_cast<std::size_t>(m.h)), dcol(static_cast<std::size_t>(m.h));
  for (std::int64_t c = 0; c < m.w; ++c) {
    for (std::int64_t r = 0; r < m.h; ++r)
      col[static_cast<std::size_t>(r)] = ((m.at(r, c) == label) == inside) ? 1e300 : 0.0;
    edt_1d(col, dcol);
    for (std::int64_t r = 0; r < m.h; ++r) g.at(r, c) = dcol[static_cast<std::size_t>(r)];
  }
  std::vector<double> row(static_cast<std::size_t>(m.w)), drow(static_cast<std::size_t>(m.w));
  for (std::int64_t r = 0; r < m.h; ++r) {
    for (std::int64_t c = 0; c < m.w; ++c) row[static_cast<std::size_t>(c)] = g.at(r, c);
    edt_1d(row, drow);
    for (std::int64_t c = 0; c < m.w; ++c) g.at(r, c) = drow[static_cast<std::size_t>(c)];
  }
  return g;
}

// Signed distance to the label's boundary: positive inside, negative outside.
// The zero level sits midway between inside and outside pixel centers with no
// convexity bias, unlike thresholded indicator interpolation.
ImagePlane signed_distance(const MaskPlane& m, std::uint8_t label) {
  ImagePlane to_complement = squared_edt(m, label, /*inside=*/true);
  ImagePlane to_label = squared_edt(m, label, /*inside=*/false);
  ImagePlane s(m.h, m.w);
  for (std::size_t i = 0; i < s.v.size(); ++i) {
    if (m.v[i] == label)
      s.v[i] = std::sqrt(to_complement.v[i]) - 0.5;
    else
      s.v[i] = -(std::sqrt(to_label.v[i]) - 0.5);
  }
  return s;
}

// Separable binomial blur [1,4,6,4,1]/16 with clamped borders. Applied to the
// signed distance it filters the staircase sawtooth out of the zero level
// (the field is locally linear there, so the level itself does not move);
// without it, rescaling by factors near 1 re-reads the source raster's own
// quantization coherently and areas drift by several percent.
void blur_binomial(ImagePlane& f) {
  static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  ImagePlane tmp(f.h, f.w);
  for (std::int64_t r = 0; r < f.h; ++r)
    for (std::int64_t c = 0; c < f.w; ++c) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t) {
        std::int64_t cc = std::clamp<std::int64_t>(c + t, 0, f.w - 1);
        acc += k[t + 2] * f.at(r, cc);
      }
      tmp.at(r, c) = acc;
    }
  for (std::int64_t r = 0; r < f.h; ++r)
    for (std::int64_t c = 0; c < f.w; ++c) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t) {
        std::int64_t rr = std::clamp<std::int64_t>(r + t, 0, f.h - 1);
        acc += k[t + 2] * tmp.at(rr, c);
      }
      f.at(r, c) = acc;
    }
}

inline double field_at(const ImagePlane& f, double r, double c) {
  std::int64_t r0 = static_cast<std::int64_t>(std::floor(r));
  std::int64_t c0 = static_cast<std::int64_t>(std::floor(c));
  if (r0 < 0) r0 = 0;
  if (c0 < 0) c0 = 0;
  if (r0 > f.h - 2) r0 = f.h - 2;
  if (c0 > f.w - 2) c0 = f.w - 2;
  double fr = r - static_cast<double>(r0);
  double fc = c - static_cast<double>(c0);
  double top = f.at(r0, c0) * (1.0 - fc) + f.at(r0, c0 + 1) * fc;
  double bot = f.at(r0 + 1, c0) * (1.0 - fc) + f.at(r0 + 1, c0 + 1) * fc;
  return top * (1.0 - fr) + bot * fr;
}
}  // namespace

void resample_labels_smooth(MaskPlane& dst, const MaskPlane& src) {
  // Cumulative regions (cavity, and cavity+myocardium) are both thick, so
  // their blurred distance fields keep clean zero levels; the thin ring is
  // their set difference and never gets eroded on its own.
  MaskPlane cav_bin(src.h, src.w), epi_bin(src.h, src.w);
  for (std::size_t i = 0; i < src.v.size(); ++i) {
    cav_bin.v[i] = src.v[i] == 2 ? 1 : 0;
    epi_bin.v[i] = src.v[i] >= 1 ? 1 : 0;
  }
  ImagePlane dcav = signed_distance(cav_bin, 1);
  ImagePlane depi = signed_distance(epi_bin, 1);
  blur_binomial(dcav);
  blur_binomial(depi);
  double rscale = static_cast<double>(src.h) / static_cast<double>(dst.h);
  double cscale = static_cast<double>(src.w) / static_cast<double>(dst.w);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t r = 0; r < dst.h; ++r) {
    double sr = (static_cast<double>(r) + 0.5) * rscale - 0.5;
    for (std::int64_t c = 0; c < dst.w; ++c) {
      double sc = (static_cast<double>(c) + 0.5) * cscale - 0.5;
      if (sr < -0.5 || sc < -0.5 || sr > static_cast<double>(src.h) - 0.5 ||
          sc > static_cast<double>(src.w) - 0.5) {
        dst.at(r, c) = 0;
        continue;
      }
      if (field_at(depi, sr, sc) < 0.0)
        dst.at(r, c) = 0;
      else
        dst.at(r, c) = field_at(dcav, sr, sc) >= 0.0 ? 2 : 1;
    }
  }
}

// ---------------------------------------------------------------------------
// rotation

namespace {
struct RotMap {
  double cx, cy, cos_t, sin_t;
  // Inverse map: where dst pixel (r, c) samples in the source.
  inline void src_of(std::int64_t r, std::int64_t c, double& sr, double& sc) const {
    double X = static_cast<double>(c) - cx;
    double Y = cy - static_cast<double>(r);  // Y axis points up
    double Xs = X * cos_t + Y * sin_t;       // rotate by -theta
    double Ys = -X * sin_t + Y * cos_t;
    sc = cx + Xs;
    sr = cy - Ys;
  }
};

RotMap rot_map(std::int64_t h, std::int64_t w, double theta_deg) {
  double t = theta_deg * (3.14159265358979323846 / 180.0);
  return RotMap{(static_cast<double>(w) - 1.0) / 2.0, (static_cast<double>(h) - 1.0) / 2.0,
                std::cos(t), std::sin(t)};
}

inline double rotate_sample_bilinear(const ImagePlane& src, double sr, double sc) {
  if (sr < -0.5 || sc < -0.5 || sr > static_cast<double>(src.h) - 0.5 ||
      sc > static_cast<double>(src.w) - 0.5)
    return 0.0;  // zero fill outside
  std::int64_t r0 = static_cast<std::int64_t>(std::floor(sr));
  std::int64_t c0 = static_cast<std::int64_t>(std::floor(sc));
  double fr = sr - static_cast<double>(r0);
  double fc = sc - static_cast<double>(c0);
  double acc = 0.0;
  for (int dr = 0; dr < 2; ++dr)
    for (int dc = 0; dc < 2; ++dc) {
      std::int64_t rr = r0 + dr, cc = c0 + dc;
      double wgt = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
      if (rr >= 0 && rr < src.h && cc >= 0 && cc < src.w && wgt != 0.0)
        acc += wgt * src.at(rr, cc);
    }
  return acc;
}
}  // namespace

void rotate_bilinear_serial(ImagePlane& dst, const ImagePlane& src, double theta_deg) {
  RotMap m = rot_map(src.h, src.w, theta_deg);
  for (std::int64_t r = 0; r < dst.h; ++r)
    for (std::int64_t c = 0; c < dst.w; ++c) {
      double sr, sc;
      m.src_of(r, c, sr, sc);
      dst.at(r, c) = rotate_sample_bilinear(src, sr, sc);
    }
}

void rotate_bilinear_parallel(ImagePlane& dst, const ImagePlane& src, double theta_deg) {
  RotMap m = rot_map(src.h, src.w, theta_deg);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t r = 0; r < dst.h; ++r)
    for (std::int64_t c = 0; c < dst.w; ++c) {
      double sr, sc;
      m.src_of(r, c, sr, sc);
      dst.at(r, c) = rotate_sample_bilinear(src, sr, sc);
    }
}

void rotate_bilinear(ImagePlane& dst, const ImagePlane& src, double theta_deg) {
  if (exec_mode() == Exec::parallel)
    rotate_bilinear_parallel(dst, src, theta_deg);
  else
    rotate_bilinear_serial(dst, src, theta_deg);
}

void rotate_nearest(MaskPlane& dst, const MaskPlane& src, double theta_deg) {
  RotMap m = rot_map(src.h, src.w, theta_deg);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t r = 0; r < dst.h; ++r)
    for (std::int64_t c = 0; c < dst.w; ++c) {
      double sr, sc;
      m.src_of(r, c, sr, sc);
      std::int64_t rr = static_cast<std::int64_t>(std::lround(sr));
      std::int64_t cc = static_cast<std::int64_t>(std::lround(sc));
      dst.at(r, c) =
          (rr >= 0 && rr < src.h && cc >= 0 && cc < src.w) ? src.at(rr, cc) : std::uint8_t{0};
    }
}

}  // namespace lvq::kernels
