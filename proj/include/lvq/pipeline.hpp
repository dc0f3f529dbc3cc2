#pragma once

#include <map>
#include <string>
#include <vector>

#include "lvq/common.hpp"
#include "lvq/evaluate.hpp"
#include "lvq/train.hpp"

namespace lvq::pipeline {

// Nested key-value experiment file:
//   defaults { key = value ... }
//   config <name> { key = value ... }
struct ExperimentFile {
  std::map<std::string, std::string> defaults;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> configs;

  static ExperimentFile parse(const std::string& text);
  static ExperimentFile load(const fs::path& p);
};

train::TrainParams params_from_defaults(const std::map<std::string, std::string>& defaults);
train::Configuration config_from_section(const std::string& name,
                                         const std::map<std::string, std::string>& section,
                                         const std::map<std::string, std::string>& defaults);

// Desk-scale profile: miniature backbone view for CI. Applied on top of the
// experiment defaults; every contract stays intact.
void apply_desk_scale(train::TrainParams& params);

// --------------------------------------------------------------------------
// Run manifests. Deterministic content only (command, resolved options,
// input hashes, output paths, seed); wall time goes to timing.log next to
// the manifest so reruns stay byte-identical.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> options;  // resolved, sorted
  std::vector<std::pair<std::string, std::string>> input_hashes;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;

  std::string serialize() const;
};

// Returns true if dir/manifest.txt exists and matches `m` byte-for-byte
// (the command is then a no-op).
bool manifest_matches(const RunManifest& m, const fs::path& dir);
void write_manifest(const RunManifest& m, const fs::path& dir, double wall_seconds);

// Moves a partially written output directory aside after a failure.
void quarantine(const fs::path& dir);

// --------------------------------------------------------------------------
// Command implementations (the CLI is a thin parser over these).
struct CommonOpts {
  std::uint64_t seed = 7;
  bool desk_scale = false;
  fs::path experiment_file;
  double lambda_p = 0.05;
  double lambda_s = 0.1;
  bool lambda_override_p = false;  // explicit flag wins over the experiment file
  bool lambda_override_s = false;
  int n_slices = 0;  // 0 = per-config value
};

int cmd_phantom_gen(int n_patients, std::uint64_t seed, const fs::path& out_dir);
int cmd_preprocess(const fs::path& raw_dir, const fs::path& out_dir);
int cmd_pretext(const fs::path& out_dir, const std::string& arch, const CommonOpts& opts);
int cmd_train(const fs::path& canonical_dir, const fs::path& runs_root,
              const fs::path& pretext_dir, const CommonOpts& opts);
int cmd_predict(const fs::path& canonical_dir, const fs::path& runs_root,
                const CommonOpts& opts);
int cmd_ensemble_search(const fs::path& canonical_dir, const fs::path& runs_root,
                        const fs::path& out_dir, bool nested, int top_k,
                        const CommonOpts& opts);
int cmd_evaluate(const fs::path& canonical_dir, const fs::path& runs_root,
                 const fs::path& out_file, const std::string& wilcoxon_a,
                 const std::string& wilcoxon_b, const std::string& wilcoxon_task,
                 const CommonOpts& opts);
int cmd_report(const fs::path& canonical_dir, const fs::path& runs_root,
               const fs::path& out_dir, bool nested, bool plots, const CommonOpts& opts);

// Helpers shared by commands and tests.
std::map<std::string, Study> load_studies(const fs::path& canonical_dir, int view_downsample);
std::vector<std::pair<train::Configuration, evaluate::PredictionSet>> load_prediction_sets(
    const fs::path& runs_root);

}  // namespace lvq::pipeline
