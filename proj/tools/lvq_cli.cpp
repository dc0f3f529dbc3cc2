#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lvq/kernels.hpp"
#include "lvq/pipeline.hpp"

using namespace lvq;

int main(int argc, char** argv) {
  CLI::App app{"Left-ventricle quantification pipeline on synthetic phantom data"};
  app.require_subcommand(1);

  pipeline::CommonOpts opts;
  bool serial = false;
  app.add_flag("--serial", serial, "run kernels on the serial reference implementations");

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic phantom dataset");
  int gen_patients = 56;
  std::uint64_t gen_seed = 7;
  std::string gen_out = "data/raw";
  gen->add_option("--patients", gen_patients, "number of patients");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "resample, crop and normalize studies");
  std::string pre_in = "data/raw", pre_out = "data/canonical";
  pre->add_option("--in", pre_in, "raw dataset directory")->required();
  pre->add_option("--out", pre_out, "canonical output directory")->required();

  // pretext
  auto* ptx = app.add_subcommand("pretext", "pretrain a backbone on the shape classification surrogate");
  std::string ptx_out = "pretext";
  std::string ptx_arch = "tiny";
  std::uint64_t ptx_seed = 11;
  std::string ptx_exp;
  bool ptx_desk = false;
  ptx->add_option("--out", ptx_out, "checkpoint directory")->required();
  ptx->add_option("--arch", ptx_arch, "backbone architecture id");
  ptx->add_option("--seed", ptx_seed, "seed");
  ptx->add_option("--experiment", ptx_exp, "experiment file for the profile");
  ptx->add_flag("--desk-scale", ptx_desk, "CI profile");

  // train
  auto* trn = app.add_subcommand("train", "train the configuration space with 5-fold CV");
  std::string trn_data, trn_runs = "runs", trn_pretext = "pretext", trn_exp;
  std::uint64_t trn_seed = 17;
  bool trn_desk = false;
  double trn_lp = 0.05, trn_ls = 0.1;
  int trn_ns = 0;
  trn->add_option("--data", trn_data, "canonical dataset directory")->required();
  trn->add_option("--runs", trn_runs, "job-store root");
  trn->add_option("--pretext", trn_pretext, "pretext checkpoint directory");
  trn->add_option("--experiment", trn_exp, "experiment file")->required();
  trn->add_option("--seed", trn_seed, "global seed (fold plan)");
  auto* lp_opt = trn->add_option("--lambda-p", trn_lp, "phase loss weight");
  auto* ls_opt = trn->add_option("--lambda-s", trn_ls, "segmentation loss weight");
  trn->add_option("--ns", trn_ns, "override N_S for 3D configurations");
  trn->add_flag("--desk-scale", trn_desk, "CI profile");

  // predict
  auto* prd = app.add_subcommand("predict", "write held-out predictions for trained runs");
  std::string prd_data, prd_runs = "runs", prd_exp;
  std::uint64_t prd_seed = 17;
  bool prd_desk = false;
  prd->add_option("--data", prd_data, "canonical dataset directory")->required();
  prd->add_option("--runs", prd_runs, "job-store root");
  prd->add_option("--experiment", prd_exp, "experiment file")->required();
  prd->add_option("--seed", prd_seed, "global seed (fold plan)");
  prd->add_flag("--desk-scale", prd_desk, "CI profile");

  // ensemble-search
  auto* ens = app.add_subcommand("ensemble-search", "optimal-subset search over CV predictions");
  std::string ens_data, ens_runs = "runs", ens_out = "ensembles";
  bool ens_nested = false;
  int ens_topk = 20;
  ens->add_option("--data", ens_data, "canonical dataset directory")->required();
  ens->add_option("--runs", ens_runs, "job-store root");
  ens->add_option("--out", ens_out, "selection output directory")->required();
  ens->add_flag("--nested", ens_nested, "nested half-split protocol");
  ens->add_option("--top-k", ens_topk, "candidate pool size");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "metric tables for trained configurations");
  std::string evl_data, evl_runs = "runs", evl_out;
  std::string evl_wa, evl_wb, evl_wt = "areas";
  evl->add_option("--data", evl_data, "canonical dataset directory")->required();
  evl->add_option("--runs", evl_runs, "job-store root");
  evl->add_option("--out", evl_out, "output TSV file");
  evl->add_option("--wilcoxon-a", evl_wa, "first configuration for the signed-rank test");
  evl->add_option("--wilcoxon-b", evl_wb, "second configuration for the signed-rank test");
  evl->add_option("--wilcoxon-task", evl_wt, "task for the signed-rank test");

  // report
  auto* rep = app.add_subcommand("report", "summary table with ensemble rows, optional plots");
  std::string rep_data, rep_runs = "runs", rep_out = "report";
  bool rep_nested = false, rep_plots = false;
  rep->add_option("--data", rep_data, "canonical dataset directory")->required();
  rep->add_option("--runs", rep_runs, "job-store root");
  rep->add_option("--out", rep_out, "report output directory");
  rep->add_flag("--nested", rep_nested, "add nested-protocol rows");
  rep->add_flag("--plots", rep_plots, "emit scatter and Bland-Altman SVGs");

  CLI11_PARSE(app, argc, argv);
  if (serial) kernels::set_exec_mode(kernels::Exec::serial);

  try {
    if (gen->parsed()) return pipeline::cmd_phantom_gen(gen_patients, gen_seed, gen_out);
    if (pre->parsed()) return pipeline::cmd_preprocess(pre_in, pre_out);
    if (ptx->parsed()) {
      opts.seed = ptx_seed;
      opts.desk_scale = ptx_desk;
      opts.experiment_file = ptx_exp;
      return pipeline::cmd_pretext(ptx_out, ptx_arch, opts);
    }
    if (trn->parsed()) {
      opts.seed = trn_seed;
      opts.desk_scale = trn_desk;
      opts.experiment_file = trn_exp;
      if (lp_opt->count() > 0) opts.lambda_p = trn_lp;
      if (ls_opt->count() > 0) opts.lambda_s = trn_ls;
      opts.lambda_override_p = lp_opt->count() > 0;
      opts.lambda_override_s = ls_opt->count() > 0;
      opts.n_slices = trn_ns;
      return pipeline::cmd_train(trn_data, trn_runs, trn_pretext, opts);
    }
    if (prd->parsed()) {
      opts.seed = prd_seed;
      opts.desk_scale = prd_desk;
      opts.experiment_file = prd_exp;
      return pipeline::cmd_predict(prd_data, prd_runs, opts);
    }
    if (ens->parsed())
      return pipeline::cmd_ensemble_search(ens_data, ens_runs, ens_out, ens_nested, ens_topk, opts);
    if (evl->parsed())
      return pipeline::cmd_evaluate(evl_data, evl_runs, evl_out, evl_wa, evl_wb, evl_wt, opts);
    if (rep->parsed())
      return pipeline::cmd_report(rep_data, rep_runs, rep_out, rep_nested, rep_plots, opts);
  } catch (const std::exception& e) {
    // single-line machine-parseable error class
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
