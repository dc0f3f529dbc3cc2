#pragma once

#include "lvq/model.hpp"
#include "lvq/rng.hpp"
#include "lvq/tensor.hpp"

namespace lvq::pretext {

// Classification surrogate for large-scale pretraining: textured geometric
// shapes (disks, annuli, ellipses, bars) rendered with the same intensity,
// noise and bias-field treatment as the phantom studies. The trained body is
// saved as a checkpoint for init=pretrained; the classifier head is dropped.
constexpr int kClasses = 12;

ImagePlane render_class_image(int class_id, int size, Rng& rng);

struct PretextResult {
  double val_accuracy = 0.0;
  int n_val = 0;
  fs::path checkpoint_dir;
};

PretextResult pretext_pretrain(const model::BackboneSpec& spec, int n_train, int n_val,
                               int epochs, double lr, std::uint64_t seed,
                               const fs::path& out_dir);

}  // namespace lvq::pretext
