#pragma once

#include <cstdint>
#include <vector>

#include "lvq/tensor.hpp"

// Data-parallel kernels. Every parallel kernel has a plain serial reference
// implementation; the two must agree bit-for-bit (each output element is
// accumulated in the same order in both variants, and no cross-element
// reductions depend on the schedule). Tests assert exact equality and the
// bench tool compares throughput.
namespace lvq::kernels {

enum class Exec { serial, parallel };

Exec exec_mode();
void set_exec_mode(Exec e);

// Convolution over (N, C, D, H, W) with weights (Cout, Cin, KD, KH, KW).
// Temporal axis D: stride 1, zero padding (KD-1)/2, so D is preserved.
// Spatial axes: stride `stride`, zero padding `pad`.
void conv_forward_serial(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                         int stride, int pad);
void conv_forward_parallel(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                           int stride, int pad);
void conv_forward(Tensor& y, const Tensor& x, const Tensor& w, const Tensor& b,
                  int stride, int pad);

void conv_backward_input_serial(Tensor& gx, const Tensor& gy, const Tensor& w,
                                int stride, int pad);
void conv_backward_input_parallel(Tensor& gx, const Tensor& gy, const Tensor& w,
                                  int stride, int pad);
void conv_backward_input(Tensor& gx, const Tensor& gy, const Tensor& w, int stride, int pad);

// Accumulates into gw/gb.
void conv_backward_weight_serial(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                                 int stride, int pad);
void conv_backward_weight_parallel(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                                   int stride, int pad);
void conv_backward_weight(Tensor& gw, Tensor& gb, const Tensor& x, const Tensor& gy,
                          int stride, int pad);

// Spatial 2x2/stride-2 max pooling; argmax codes 0..3 recorded for backward.
void maxpool_forward_serial(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x);
void maxpool_forward_parallel(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x);
void maxpool_forward(Tensor& y, std::vector<std::uint8_t>& arg, const Tensor& x);
void maxpool_backward(Tensor& gx, const Tensor& gy, const std::vector<std::uint8_t>& arg);

// Per-channel mean and biased variance over (N, D, H, W).
void bn_stats_serial(std::vector<double>& mean, std::vector<double>& var, const Tensor& x);
void bn_stats_parallel(std::vector<double>& mean, std::vector<double>& var, const Tensor& x);
void bn_stats(std::vector<double>& mean, std::vector<double>& var, const Tensor& x);

// Nearest-neighbor spatial x2 upsampling and its adjoint.
void upsample2_forward(Tensor& y, const Tensor& x);
void upsample2_backward(Tensor& gx, const Tensor& gy);

// Plane resampling to a new size; bilinear clamps at edges, so an
// identity-size call reproduces the input exactly.
void resample_bilinear_serial(ImagePlane& dst, const ImagePlane& src);
void resample_bilinear_parallel(ImagePlane& dst, const ImagePlane& src);
void resample_bilinear(ImagePlane& dst, const ImagePlane& src);
void resample_nearest(MaskPlane& dst, const MaskPlane& src);

// Label resampling through bilinear interpolation of the per-label indicator
// fields (argmax wins). The boundary follows the interpolated 0.5 level set,
// which avoids the correlated rounding that plain nearest-neighbor shows at
// scale factors near 1.
void resample_labels_smooth(MaskPlane& dst, const MaskPlane& src);

// Content rotation by theta degrees counter-clockwise about the image center,
// in axes X = +col, Y = -row. Zero (or label 0) outside the source.
void rotate_bilinear_serial(ImagePlane& dst, const ImagePlane& src, double theta_deg);
void rotate_bilinear_parallel(ImagePlane& dst, const ImagePlane& src, double theta_deg);
void rotate_bilinear(ImagePlane& dst, const ImagePlane& src, double theta_deg);
void rotate_nearest(MaskPlane& dst, const MaskPlane& src, double theta_deg);

}  // namespace lvq::kernels
