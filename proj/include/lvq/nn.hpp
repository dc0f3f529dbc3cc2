#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lvq/kernels.hpp"
#include "lvq/rng.hpp"
#include "lvq/tensor.hpp"

// Layers operate on (N, C, D, H, W). The temporal axis D rides along with
// stride 1 everywhere: 2D models are simply depth-1 instances, and 2D->3D
// inflation only changes convolution kernel depths. Each layer provides
// forward_train (caches what backward needs), a pure forward_eval for
// reentrant inference, and backward (accumulates parameter gradients).
namespace lvq::nn {

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;  // nullptr for non-trainable buffers
};

class Conv {
 public:
  int in_ch = 0, out_ch = 0, k = 1, kd = 1, stride = 1, pad = 0;
  Tensor w, b, gw, gb;

  Conv() = default;
  Conv(int in, int out, int kk, int kkd, int s, int p);
  void init_he(Rng& rng);
  void init_head(Rng& rng, double wstd = 0.01);

  Tensor forward_train(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy);

  void collect(std::vector<ParamRef>& out, const std::string& prefix);

 private:
  Tensor x_cache_;
};

class BatchNorm {
 public:
  int ch = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor gamma, beta, ggamma, gbeta;
  Tensor running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(int channels);

  Tensor forward_train(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy);

  void collect(std::vector<ParamRef>& out, const std::string& prefix);

 private:
  Tensor xhat_cache_;
  std::vector<double> invstd_cache_;
};

class Relu {
 public:
  Tensor forward_train(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy);

 private:
  Tensor y_cache_;
};

class MaxPool {
 public:
  Tensor forward_train(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy);

 private:
  std::vector<std::uint8_t> arg_cache_;
  std::vector<std::int64_t> in_shape_;
};

// Global average pooling over the spatial axes only; depth is preserved.
class SpatialGap {
 public:
  Tensor forward(const Tensor& x);         // also records shape for backward
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy) const;

 private:
  std::vector<std::int64_t> in_shape_;
};

// Nearest-neighbor x2 spatial upsampling.
class Upsample2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy) const;

 private:
  std::vector<std::int64_t> in_shape_;
};

// Basic residual block: conv3-bn-relu-conv3-bn plus identity (or projected)
// shortcut, final relu.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int in_ch, int out_ch, int stride, int kd);

  Tensor forward_train(const Tensor& x);
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Tensor& gy);
  void collect(std::vector<ParamRef>& out, const std::string& prefix);

  Conv conv1, conv2;
  BatchNorm bn1, bn2;
  Relu relu1, relu_out;
  bool has_proj = false;
  Conv proj;
  BatchNorm proj_bn;
};

// Elementwise helpers used by the model and losses.
Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);

}  // namespace lvq::nn
