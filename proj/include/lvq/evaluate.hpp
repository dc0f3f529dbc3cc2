#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lvq/augment.hpp"
#include "lvq/data.hpp"
#include "lvq/model.hpp"
#include "lvq/study.hpp"

namespace lvq::evaluate {

struct FramePrediction {
  std::array<double, 11> reg{};  // physical units after unscaling
  double p_systole = 0.0, p_diastole = 0.0;
  bool has_reg = false, has_phase = false;
};

// Model adapter: maps an input (1, 3, D, H, W) to head outputs
// (1, outputs, D, 1, 1). Stub models in tests use plain lambdas.
using Forward = std::function<Tensor(const Tensor&)>;

// Four corner-anchored crops of size crop covering the whole slice; outputs
// are averaged per crop (phase in probability space) and then unscaled.
std::vector<FramePrediction> predict_2d(const Forward& f, const Study& study, int crop,
                                        augment::InputMode input_mode, model::TargetMode mode,
                                        const data::TargetScaler* scaler);

// All 20 cyclic window positions; every frame is covered by exactly n_slices
// windows and takes the mean of its window outputs, then unscaling.
std::vector<FramePrediction> predict_3d(const Forward& f, const Study& study, int n_slices,
                                        int crop, model::TargetMode mode,
                                        const data::TargetScaler* scaler);

Forward model_forward(const model::Model& m);

// --------------------------------------------------------------------------
// Prediction tables

struct PredictionRow {
  std::string patient;
  int frame = 0;
  std::array<double, 11> reg{};
  bool has_reg = false;
  double p_systole = 0.0, p_diastole = 0.0;
  bool has_phase = false;
  int fold = -1;
};

struct PredictionSet {
  std::string config_id;
  std::vector<PredictionRow> rows;  // kept sorted by (patient, frame)

  void sort_rows();
  std::string serialize_csv() const;
  static PredictionSet parse_csv(const std::string& text);
};

// Ground truth arranged like a prediction table (from study targets/phases).
struct GroundTruth {
  // patient -> per-frame flat targets and phase labels
  std::map<std::string, std::vector<std::array<double, 11>>> targets;
  std::map<std::string, std::vector<indices::Phase>> phases;
};
GroundTruth ground_truth_of(const std::map<std::string, Study>& studies);

// --------------------------------------------------------------------------
// Metrics

struct MaeResult {
  double mean = 0.0;
  double sd = 0.0;  // population std of the absolute errors
};
MaeResult mae(const std::vector<double>& pred, const std::vector<double>& gt);

// Pearson correlation; throws PccUndefined when either side has zero
// variance rather than silently returning 0.
double pcc(const std::vector<double>& pred, const std::vector<double>& gt);

double error_rate(const std::vector<int>& pred, const std::vector<int>& gt);

// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
// are dropped (throws TooFewPairs below n = 6), ties are mid-ranked, the
// distribution is exact for n <= 25 and a tie-corrected normal approximation
// above. statistic = min(W+, W-).
struct WilcoxonResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool significant = false;  // at alpha = 0.05
  int n_used = 0;
};
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// --------------------------------------------------------------------------
// Task grouping: areas = indices {0,1}, dims {2,3,4}, rwt {5..10}, phase.
enum class Task { areas, dims, rwt, phase };
const char* task_name(Task t);
std::vector<std::size_t> task_indices(Task t);

struct TaskMetrics {
  MaeResult mae;      // regression tasks
  double pcc = 0.0;   // mean of per-index PCCs within the group
  double er = 0.0;    // phase
  bool has_reg = false, has_phase = false;
};

// Metrics of one prediction set against ground truth, optionally restricted
// to a patient subset.
TaskMetrics task_metrics(const PredictionSet& pred, const GroundTruth& gt, Task task,
                         const std::vector<std::string>* patient_filter = nullptr);

// Per-entry absolute errors of a regression task (for significance tests).
std::vector<double> absolute_errors(const PredictionSet& pred, const GroundTruth& gt, Task task);

}  // namespace lvq::evaluate
