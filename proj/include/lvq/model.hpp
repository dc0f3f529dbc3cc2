#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lvq/common.hpp"
#include "lvq/nn.hpp"

namespace lvq::model {

// Backbone family: stem conv (3x3, stride 2) + max pool, then residual
// stages. Stage 1 keeps resolution; every later stage opens with a stride-2
// block, so a 4-stage spec downsamples 5 times (stem, pool, stages 2..4) and
// a 224 input reaches a 7x7 feature map.
struct BackboneSpec {
  std::string id;
  int stem_channels = 16;
  std::vector<int> stage_channels;
  std::vector<int> stage_blocks;
  int input_size = 224;

  int n_stages() const { return static_cast<int>(stage_channels.size()); }
  int downsamplings() const { return 2 + n_stages() - 1; }
  int feature_channels() const { return stage_channels.back(); }

  // "small" 4 stages [16,32,64,128]x1, "base" 4 stages [32,64,128,256]x2,
  // "tiny" 2 stages stem 8 [16,32]x1 (the miniature used by the test suites).
  static BackboneSpec by_name(const std::string& name);
  std::string serialize() const;
  static BackboneSpec deserialize(const std::string& text);
  bool operator==(const BackboneSpec& o) const;
};

enum class TargetMode { regression, classification, joint };
const char* target_mode_name(TargetMode m);
TargetMode target_mode_from_name(const std::string& s);
int head_outputs(TargetMode m);

struct ModelOutput {
  Tensor head;                 // (N, outputs, D, 1, 1)
  std::optional<Tensor> seg;   // (N, 3, D, H, W) logits when requested
  std::vector<std::int64_t> feature_shape;
};

class Model {
 public:
  BackboneSpec spec;
  TargetMode targets = TargetMode::regression;
  int n_outputs = 11;          // overridable (pretext classification heads)
  bool inflated = false;       // true after 2D->3D inflation
  int kernel_depth = 1;        // d_c used at inflation
  std::string init_lineage = "random";
  std::map<std::string, std::string> metadata;  // free-form (pretext accuracy, ...)

  nn::Conv stem;
  nn::BatchNorm stem_bn;
  nn::Relu stem_relu;
  nn::MaxPool pool;
  std::vector<std::vector<nn::ResBlock>> stages;

  nn::SpatialGap gap;
  nn::Conv head;  // kernel-1 convolution over the temporal axis

  struct DecoderStage {
    nn::Conv halve;  // kernel-1, channel halving
    nn::Upsample2 up;
    nn::ResBlock block;
  };
  bool has_decoder = false;
  std::vector<DecoderStage> decoder;
  nn::Conv decoder_proj;  // kernel-1 to 3 classes

  // Forward; input (N, 3, D, H, W). want_seg requires the decoder.
  ModelOutput forward_train(const Tensor& x, bool want_seg);
  ModelOutput forward_eval(const Tensor& x, bool want_seg = false) const;

  // g_head matches head output shape; g_seg (may be empty) the decoder's.
  void backward(const Tensor& g_head, const Tensor* g_seg);

  std::vector<nn::ParamRef> trainable();
  std::vector<nn::ParamRef> all_tensors();  // trainable + running stats
  void zero_grad();

  // Pre-pooling feature map of an eval-mode forward (inflation consistency
  // checks compare these between a 2D model and its inflated counterpart).
  Tensor features_eval(const Tensor& x) const;

 private:
  Tensor features_train_(const Tensor& x);
  Tensor decoder_forward_train_(const Tensor& f);
  Tensor decoder_forward_eval_(const Tensor& f) const;
  Tensor decoder_backward_(const Tensor& g_seg);
};

// Builds a depth-1 (2D) model. init "random" draws fresh body weights;
// "pretrained" copies the body from a pretext checkpoint directory and always
// re-initializes the head. Throws ShapeMismatch if the checkpoint's backbone
// spec differs from the requested one.
Model build_2d(const BackboneSpec& spec, TargetMode targets, const std::string& init,
               const fs::path& pretext_checkpoint, std::uint64_t seed,
               int n_outputs_override = 0);

// Replaces every layer by its 3D counterpart. Convolution kernels with
// spatial extent > 1 get depth d_c (odd); kernel-1 convolutions and the whole
// decoder stay at depth 1. Each inflated kernel holds d_c copies of the 2D
// kernel scaled by 1/d_c, with the last depth slice absorbing the rounding
// remainder so the depth sum reproduces the 2D kernel exactly. Pooling stays
// spatial-only; normalization statistics and affine parameters are copied.
Model inflate_to_3d(const Model& m2d, int d_c);

// Appends the segmentation-regularization decoder: one stage per backbone
// downsampling, each [kernel-1 halving conv -> nearest x2 upsample ->
// residual block], then a kernel-1 projection to 3 classes. Throws
// ChannelUnderflow if channel halving drops below 3 before the projection.
void attach_sr_decoder(Model& m, std::uint64_t seed);

// Named-array checkpoint: params.bin (float32 little-endian records) plus a
// structured-text model.txt manifest.
void save_checkpoint(const Model& m, const fs::path& dir,
                     const std::string& scaler_reference = "");
Model load_checkpoint(const fs::path& dir);
// Body-only load into an existing model (head shapes may differ).
void load_body_weights(Model& dst, const fs::path& dir);

}  // namespace lvq::model
