#pragma once

#include <map>
#include <string>
#include <vector>

#include "lvq/augment.hpp"
#include "lvq/data.hpp"
#include "lvq/model.hpp"

namespace lvq::train {

// One training setup s_i. The tuple fully determines a training run given the
// dataset, the fold plan and the training profile.
struct Configuration {
  std::string name;  // label from the experiment file
  std::string arch = "small";
  bool is_3d = false;
  int n_slices = 5;  // 3D only, in {3,5,7,10}
  std::string init = "pretrained";
  bool sr = false;
  model::TargetMode targets = model::TargetMode::regression;
  augment::InputMode input_mode = augment::InputMode::replicate;  // 2D only
  std::uint64_t seed = 17;

  std::string id() const;         // canonical compact id
  std::string hash() const;       // job-store directory name
  std::string serialize() const;  // key=value lines
  static Configuration deserialize(const std::string& text);
};

// Training profile; full-scale defaults, shrunk by the desk-scale flag.
struct TrainParams {
  int epochs = 150;
  int batch_size = 8;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_p = 0.05;
  double lambda_s = 0.1;
  int crops_per_patient = 10;
  int crop_size = 224;
  int view_downsample = 1;  // >1 trains/evaluates on a coarser view
  int kernel_depth = 3;     // d_c for 2D->3D inflation
};

// Assembled batch tensors. Input layout (B, 3, D, H, W); D = 1 for 2D, and 3D
// inputs replicate the frame stack across the 3 channels.
struct Batch {
  Tensor x;
  std::vector<double> reg_targets;  // [n][d][i], scaled units
  std::vector<int> phase_labels;    // [n][d]
  std::vector<std::uint8_t> seg;    // [n][d][h][w]
  std::int64_t B = 0, D = 0, H = 0, W = 0;
  std::vector<augment::TransformRecord> records;
};

Batch assemble_batch(const std::vector<augment::AugmentedSample>& samples, bool is_3d);

struct LossComponents {
  double total = 0.0, mse = 0.0, ce_phase = 0.0, ce_seg = 0.0;
  bool has_mse = false, has_phase = false, has_seg = false;
};

// total = MSE + lambda_p * CE_phase + lambda_s * CE_seg over the enabled
// terms; reductions are means over batch, temporal positions and (for the
// segmentation term) pixels. When grads is non-null the gradients w.r.t. the
// head output and segmentation logits are produced (lambda factors included).
LossComponents composite_loss(const model::ModelOutput& out, const Batch& batch,
                              model::TargetMode mode, bool sr, double lambda_p,
                              double lambda_s, Tensor* g_head, Tensor* g_seg);

class Adam {
 public:
  Adam(double lr, double b1, double b2, double eps) : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}
  void step(std::vector<nn::ParamRef>& params);

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  LossComponents loss;  // means over the epoch's steps
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  fs::path checkpoint_dir;
  std::string serialize_csv() const;
  static std::vector<EpochRecord> parse_csv(const std::string& text);
};

// Trains configuration `config` with fold `fold` held out. One epoch draws
// crops_per_patient * n_training samples in batches of batch_size, dropping
// the last partial batch. Adam with the profile's parameters, no schedule,
// no early stopping. Checkpoint and target scaler land in run_dir.
// Throws NonFiniteLoss (after logging the offending batch's transform
// records to run_dir/error.txt) if the loss leaves the reals.
TrainRecord train_one(const Configuration& config, int fold,
                      const std::map<std::string, Study>& studies, const data::FoldPlan& plan,
                      const TrainParams& params, const fs::path& run_dir,
                      const fs::path& pretext_checkpoint);

// Job-store layout: runs_root/<config-hash>/<fold>/{checkpoint/, record.csv,
// scaler.txt, predictions.csv, config.txt}. Existing complete runs are
// skipped; failures are recorded per run and do not stop the sweep.
struct RunSpaceResult {
  int trained = 0, skipped = 0, failed = 0;
};
RunSpaceResult run_space(const std::vector<Configuration>& configs,
                         const std::map<std::string, Study>& studies,
                         const data::FoldPlan& plan, const TrainParams& params,
                         const fs::path& runs_root, const fs::path& pretext_checkpoint);

bool run_is_complete(const fs::path& run_dir);

// Held-out-fold predictions from the persisted checkpoint (the canonical
// inference path; training always predicts through the saved weights).
void predict_run(const Configuration& config, int fold,
                 const std::map<std::string, Study>& studies, const data::FoldPlan& plan,
                 const TrainParams& params, const fs::path& run_dir);

}  // namespace lvq::train
