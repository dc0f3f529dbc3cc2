#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lvq/data.hpp"
#include "lvq/evaluate.hpp"

namespace lvq::ensemble {

using evaluate::GroundTruth;
using evaluate::PredictionSet;
using evaluate::Task;

struct EnsembleSelection {
  Task task = Task::areas;
  std::vector<std::string> members;  // config ids, sorted
  double selection_error = 0.0;      // error on the split the subset was chosen on
  double evaluation_error = -1.0;    // nested protocol only; -1 when absent
  std::string pool_hash;

  std::string serialize() const;
  static EnsembleSelection deserialize(const std::string& text);
};

// Configs sorted ascending by individual task error (MAE for regression
// tasks, ER for phase); ties break on config id. At most k survive.
std::vector<std::string> rank_candidates(const std::vector<PredictionSet>& sets,
                                         const GroundTruth& gt, Task task, int k = 20,
                                         const std::vector<std::string>* patient_filter = nullptr);

// Exhaustive search over every non-empty subset of at most 20 candidates.
// The subset prediction is the unweighted member mean (probability-space for
// phase, argmax afterwards). Ties prefer smaller subsets, then the
// lexicographically smaller member list. The returned selection_error is
// re-checked against the full average and every singleton.
EnsembleSelection search_optimal_subset(const std::vector<PredictionSet>& candidates,
                                        const GroundTruth& gt, Task task,
                                        const std::vector<std::string>* patient_filter = nullptr);

// Error of an explicit subset (oracle-style direct evaluation).
double subset_error(const std::vector<const PredictionSet*>& members, const GroundTruth& gt,
                    Task task, const std::vector<std::string>* patient_filter = nullptr);

// Nested half-split protocol: candidates are ranked and the subset is chosen
// using only half-A patients; the reported evaluation error uses only half-B.
std::vector<EnsembleSelection> nested_protocol(const std::vector<PredictionSet>& sets,
                                               const GroundTruth& gt,
                                               const data::FoldPlan& plan, int top_k = 20);

// Plain protocol (selection and report on the same full CV predictions).
std::vector<EnsembleSelection> full_protocol(const std::vector<PredictionSet>& sets,
                                             const GroundTruth& gt, int top_k = 20);

// Mean of member predictions (fold-model averaging is the provider's job:
// the callback returns one PredictionSet per config id for the new studies).
using ConfigPredictor = std::function<PredictionSet(const std::string& config_id)>;
PredictionSet ensemble_predict(const EnsembleSelection& sel, const ConfigPredictor& predictor);

// Unweighted mean of a set of aligned prediction tables.
PredictionSet average_predictions(const std::vector<const PredictionSet*>& sets,
                                  const std::string& out_id);

}  // namespace lvq::ensemble
