#include "lvq/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "lvq/ensemble.hpp"
#include "lvq/phantom.hpp"
#include "lvq/pretext.hpp"

namespace lvq::pipeline {

// ---------------------------------------------------------------------------
// Experiment file

ExperimentFile ExperimentFile::parse(const std::string& text) {
  ExperimentFile ef;
  std::map<std::string, std::string>* current = nullptr;
  for (const auto& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.back() == '{') {
      std::string header = trim(line.substr(0, line.size() - 1));
      if (header == "defaults") {
        current = &ef.defaults;
      } else {
        auto parts = split(header, ' ');
        if (parts.size() != 2 || parts[0] != "config")
          throw BadInput("bad experiment section header: " + line);
        ef.configs.emplace_back(parts[1], std::map<std::string, std::string>{});
        current = &ef.configs.back().second;
      }
    } else if (line == "}") {
      current = nullptr;
    } else {
      auto pos = line.find('=');
      if (pos == std::string::npos || current == nullptr)
        throw BadInput("bad experiment line: " + line);
      (*current)[trim(line.substr(0, pos))] = trim(line.substr(pos + 1));
    }
  }
  return ef;
}

ExperimentFile ExperimentFile::load(const fs::path& p) {
  return parse(read_text_file(p));
}

namespace {
double get_d(const std::map<std::string, std::string>& m, const std::string& k, double dflt) {
  auto it = m.find(k);
  return it == m.end() ? dflt : std::strtod(it->second.c_str(), nullptr);
}
int get_i(const std::map<std::string, std::string>& m, const std::string& k, int dflt) {
  auto it = m.find(k);
  return it == m.end() ? dflt : std::atoi(it->second.c_str());
}
std::string get_s(const std::map<std::string, std::string>& m, const std::string& k,
                  const std::string& dflt) {
  auto it = m.find(k);
  return it == m.end() ? dflt : it->second;
}
}  // namespace

train::TrainParams params_from_defaults(const std::map<std::string, std::string>& d) {
  train::TrainParams p;
  p.epochs = get_i(d, "epochs", p.epochs);
  p.batch_size = get_i(d, "batch_size", p.batch_size);
  p.lr = get_d(d, "lr", p.lr);
  p.adam_beta1 = get_d(d, "adam_beta1", p.adam_beta1);
  p.adam_beta2 = get_d(d, "adam_beta2", p.adam_beta2);
  p.adam_eps = get_d(d, "adam_eps", p.adam_eps);
  p.lambda_p = get_d(d, "lambda_p", p.lambda_p);
  p.lambda_s = get_d(d, "lambda_s", p.lambda_s);
  p.crops_per_patient = get_i(d, "crops_per_patient", p.crops_per_patient);
  p.crop_size = get_i(d, "crop_size", p.crop_size);
  p.view_downsample = get_i(d, "view_downsample", p.view_downsample);
  p.kernel_depth = get_i(d, "kernel_depth", p.kernel_depth);
  return p;
}

train::Configuration config_from_section(const std::string& name,
                                         const std::map<std::string, std::string>& s,
                                         const std::map<std::string, std::string>& d) {
  train::Configuration c;
  c.name = name;
  c.arch = get_s(s, "arch", get_s(d, "arch", "small"));
  c.is_3d = get_s(s, "dim", "2d") == "3d";
  c.n_slices = get_i(s, "n_slices", get_i(d, "n_slices", 5));
  c.init = get_s(s, "init", get_s(d, "init", "pretrained"));
  c.sr = get_s(s, "sr", get_s(d, "sr", "off")) == "on";
  c.targets = model::target_mode_from_name(get_s(s, "targets", get_s(d, "targets", "regression")));
  c.input_mode = augment::input_mode_from_name(
      get_s(s, "input_mode", get_s(d, "input_mode", "replicate")));
  c.seed = static_cast<std::uint64_t>(get_i(s, "seed", get_i(d, "seed", 17)));
  return c;
}

void apply_desk_scale(train::TrainParams& params) {
  params.epochs = std::min(params.epochs, 16);
  params.crop_size = 64;
  params.view_downsample = 4;
  // The fixed 150-epoch/1e-4 recipe belongs to the full-scale profile; at
  // 16 epochs the miniature backbone needs the larger step to converge.
  params.lr = 3e-4;
}

// ---------------------------------------------------------------------------
// Manifests

std::string RunManifest::serialize() const {
  std::ostringstream ss;
  ss << "command=" << command << "\n";
  ss << "seed=" << seed << "\n";
  auto opts = options;
  std::sort(opts.begin(), opts.end());
  for (const auto& [k, v] : opts) ss << "option." << k << "=" << v << "\n";
  auto ins = input_hashes;
  std::sort(ins.begin(), ins.end());
  for (const auto& [k, v] : ins) ss << "input." << k << "=" << v << "\n";
  auto outs = outputs;
  std::sort(outs.begin(), outs.end());
  for (const auto& o : outs) ss << "output=" << o << "\n";
  return ss.str();
}

bool manifest_matches(const RunManifest& m, const fs::path& dir) {
  fs::path f = dir / "manifest.txt";
  if (!fs::exists(f)) return false;
  return read_text_file(f) == m.serialize();
}

void write_manifest(const RunManifest& m, const fs::path& dir, double wall_seconds) {
  fs::create_directories(dir);
  write_text_file(dir / "manifest.txt", m.serialize());
  // Volatile data lives outside the manifest so reruns stay byte-identical.
  write_text_file(dir / "timing.log",
                  "wall_seconds=" + fmt_double(wall_seconds) + "\n");
}

void quarantine(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  fs::path q = dir;
  q += ".quarantined";
  std::error_code ec;
  fs::remove_all(q, ec);
  fs::rename(dir, q, ec);
  if (!ec) warn("partial outputs moved to " + q.string());
}

// ---------------------------------------------------------------------------
// Shared loaders

std::map<std::string, Study> load_studies(const fs::path& canonical_dir, int view_downsample) {
  auto manifest = phantom::read_manifest(canonical_dir);
  std::map<std::string, Study> studies;
  for (const auto& rec : manifest) {
    Study s = data::read_study(canonical_dir / rec.id);
    studies[rec.id] = view_downsample > 1 ? data::downsample_view(s, view_downsample)
                                          : std::move(s);
  }
  return studies;
}

namespace {
// Ground truth without pixel data; cheap enough for metric-only commands.
std::map<std::string, Study> load_targets_only(const fs::path& canonical_dir) {
  auto manifest = phantom::read_manifest(canonical_dir);
  std::map<std::string, Study> studies;
  for (const auto& rec : manifest) {
    // read indices.json only
    Study s;
    s.patient_id = rec.id;
    auto j = nlohmann::json::parse(read_text_file(canonical_dir / rec.id / "indices.json"));
    for (const auto& jf : j["frames"]) {
      indices::IndexVector iv;
      iv.cavity_area = jf["cavity_area"].get<double>();
      iv.myo_area = jf["myo_area"].get<double>();
      auto dd = jf["dims"].get<std::vector<double>>();
      auto rr = jf["rwt"].get<std::vector<double>>();
      std::copy(dd.begin(), dd.end(), iv.dims.begin());
      std::copy(rr.begin(), rr.end(), iv.rwt.begin());
      s.targets.push_back(iv);
      s.phases.push_back(indices::phase_from_name(jf["phase"].get<std::string>()));
    }
    studies[rec.id] = std::move(s);
  }
  return studies;
}
}  // namespace

std::vector<std::pair<train::Configuration, evaluate::PredictionSet>> load_prediction_sets(
    const fs::path& runs_root) {
  std::vector<std::pair<train::Configuration, evaluate::PredictionSet>> out;
  if (!fs::exists(runs_root)) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs_root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    fs::path any_config;
    evaluate::PredictionSet ps;
    train::Configuration config;
    bool have = false;
    for (int fold = 0;; ++fold) {
      fs::path fd = dir / std::to_string(fold);
      if (!fs::exists(fd)) break;
      if (!fs::exists(fd / "predictions.csv")) continue;
      if (!have) {
        config = train::Configuration::deserialize(read_text_file(fd / "config.txt"));
        have = true;
      }
      evaluate::PredictionSet fold_ps =
          evaluate::PredictionSet::parse_csv(read_text_file(fd / "predictions.csv"));
      for (auto& r : fold_ps.rows) ps.rows.push_back(r);
    }
    if (!have) continue;
    ps.config_id = config.id();
    ps.sort_rows();
    out.emplace_back(config, std::move(ps));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first.id() < b.first.id(); });
  return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {
struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};
}  // namespace

int cmd_phantom_gen(int n_patients, std::uint64_t seed, const fs::path& out_dir) {
  RunManifest m;
  m.command = "phantom-gen";
  m.seed = seed;
  m.options = {{"patients", std::to_string(n_patients)}};
  m.outputs = {out_dir.string()};
  if (manifest_matches(m, out_dir)) {
    std::cout << "phantom-gen: up to date\n";
    return 0;
  }
  Timer t;
  try {
    phantom::generate_dataset(n_patients, seed, out_dir);
  } catch (...) {
    quarantine(out_dir);
    throw;
  }
  write_manifest(m, out_dir, t.seconds());
  std::cout << "phantom-gen: wrote " << n_patients << " studies to " << out_dir.string() << "\n";
  return 0;
}

int cmd_preprocess(const fs::path& raw_dir, const fs::path& out_dir) {
  RunManifest m;
  m.command = "preprocess";
  m.input_hashes = {{"raw_manifest", hex64(hash_file(raw_dir / "manifest.tsv"))}};
  m.outputs = {out_dir.string()};
  if (manifest_matches(m, out_dir)) {
    std::cout << "preprocess: up to date\n";
    return 0;
  }
  Timer t;
  try {
    auto manifest = phantom::read_manifest(raw_dir);
    fs::create_directories(out_dir);
    std::ostringstream ms;
    ms << "id\tseed\tspacing\tresolution\n";
    for (const auto& rec : manifest) {
      Study raw = data::read_study(raw_dir / rec.id);
      Study canonical = data::preprocess_study(raw);
      data::write_study(canonical, out_dir / rec.id);
      ms << rec.id << "\t" << rec.seed << "\t" << fmt_double(canonical.spacing) << "\t"
         << data::kCanonicalSize << "\n";
    }
    write_text_file(out_dir / "manifest.tsv", ms.str());
  } catch (...) {
    quarantine(out_dir);
    throw;
  }
  write_manifest(m, out_dir, t.seconds());
  std::cout << "preprocess: canonical studies in " << out_dir.string() << "\n";
  return 0;
}

int cmd_pretext(const fs::path& out_dir, const std::string& arch, const CommonOpts& opts) {
  train::TrainParams params;
  std::map<std::string, std::string> defaults;
  if (!opts.experiment_file.empty()) defaults = ExperimentFile::load(opts.experiment_file).defaults;
  params = params_from_defaults(defaults);
  if (opts.desk_scale) apply_desk_scale(params);
  int n_train = get_i(defaults, "pretext_train", opts.desk_scale ? 960 : 2000);
  int n_val = get_i(defaults, "pretext_val", 240);
  int epochs = get_i(defaults, "pretext_epochs", opts.desk_scale ? 5 : 8);
  double lr = get_d(defaults, "pretext_lr", 1e-3);

  RunManifest m;
  m.command = "pretext";
  m.seed = opts.seed;
  m.options = {{"arch", arch},
               {"input", std::to_string(params.crop_size)},
               {"train", std::to_string(n_train)},
               {"val", std::to_string(n_val)},
               {"epochs", std::to_string(epochs)},
               {"lr", fmt_double(lr)}};
  m.outputs = {out_dir.string()};
  if (manifest_matches(m, out_dir)) {
    std::cout << "pretext: up to date\n";
    return 0;
  }
  Timer t;
  pretext::PretextResult res;
  try {
    model::BackboneSpec spec = model::BackboneSpec::by_name(arch);
    spec.input_size = params.crop_size;
    res = pretext::pretext_pretrain(spec, n_train, n_val, epochs, lr, opts.seed, out_dir);
  } catch (...) {
    quarantine(out_dir);
    throw;
  }
  write_manifest(m, out_dir, t.seconds());
  std::cout << "pretext: val accuracy " << fmt_double(res.val_accuracy) << " on " << res.n_val
            << " held-out images\n";
  return 0;
}

namespace {
std::pair<train::TrainParams, std::vector<train::Configuration>> resolve_experiment(
    const CommonOpts& opts) {
  if (opts.experiment_file.empty()) throw BadInput("an experiment file is required");
  ExperimentFile ef = ExperimentFile::load(opts.experiment_file);
  train::TrainParams params = params_from_defaults(ef.defaults);
  if (opts.desk_scale) apply_desk_scale(params);
  if (opts.lambda_override_p) params.lambda_p = opts.lambda_p;
  if (opts.lambda_override_s) params.lambda_s = opts.lambda_s;
  std::vector<train::Configuration> configs;
  for (const auto& [name, section] : ef.configs) {
    train::Configuration c = config_from_section(name, section, ef.defaults);
    if (opts.n_slices > 0 && c.is_3d) c.n_slices = opts.n_slices;
    configs.push_back(c);
  }
  return {params, configs};
}

data::FoldPlan load_or_make_fold_plan(const fs::path& runs_root,
                                      const std::map<std::string, Study>& studies,
                                      std::uint64_t seed) {
  fs::path f = runs_root / "fold_plan.txt";
  if (fs::exists(f)) return data::FoldPlan::deserialize(read_text_file(f));
  std::vector<std::string> ids;
  for (const auto& [id, s] : studies) ids.push_back(id);
  data::FoldPlan plan = data::make_fold_plan(ids, seed);
  fs::create_directories(runs_root);
  write_text_file(f, plan.serialize());
  return plan;
}
}  // namespace

int cmd_train(const fs::path& canonical_dir, const fs::path& runs_root,
              const fs::path& pretext_dir, const CommonOpts& opts) {
  auto [params, configs] = resolve_experiment(opts);
  RunManifest m;
  m.command = "train";
  m.seed = opts.seed;
  m.input_hashes = {{"experiment", hex64(hash_file(opts.experiment_file))},
                    {"canonical_manifest", hex64(hash_file(canonical_dir / "manifest.tsv"))}};
  m.options = {{"epochs", std::to_string(params.epochs)},
               {"crop", std::to_string(params.crop_size)},
               {"view", std::to_string(params.view_downsample)},
               {"lambda_p", fmt_double(params.lambda_p)},
               {"lambda_s", fmt_double(params.lambda_s)},
               {"lr", fmt_double(params.lr)}};
  for (const auto& c : configs) m.options.emplace_back("config." + c.name, c.id());
  m.outputs = {runs_root.string()};
  if (manifest_matches(m, runs_root)) {
    std::cout << "train: up to date\n";
    return 0;
  }
  Timer t;
  auto studies = load_studies(canonical_dir, params.view_downsample);
  data::FoldPlan plan = load_or_make_fold_plan(runs_root, studies, opts.seed);
  train::RunSpaceResult res =
      train::run_space(configs, studies, plan, params, runs_root, pretext_dir);
  std::cout << "train: " << res.trained << " trained, " << res.skipped << " skipped, "
            << res.failed << " failed\n";
  if (res.failed != 0) return 1;  // failed runs stay retryable; no manifest
  write_manifest(m, runs_root, t.seconds());
  return 0;
}

int cmd_predict(const fs::path& canonical_dir, const fs::path& runs_root,
                const CommonOpts& opts) {
  auto [params, configs] = resolve_experiment(opts);
  auto studies = load_studies(canonical_dir, params.view_downsample);
  data::FoldPlan plan = load_or_make_fold_plan(runs_root, studies, opts.seed);
  int made = 0;
  for (const auto& config : configs) {
    for (int fold = 0; fold < plan.n_folds; ++fold) {
      fs::path run_dir = runs_root / config.hash() / std::to_string(fold);
      if (!fs::exists(run_dir / "checkpoint" / "model.txt")) continue;
      if (fs::exists(run_dir / "predictions.csv")) continue;
      train::predict_run(config, fold, studies, plan, params, run_dir);
      ++made;
    }
  }
  std::cout << "predict: wrote " << made << " prediction tables\n";
  return 0;
}

int cmd_ensemble_search(const fs::path& canonical_dir, const fs::path& runs_root,
                        const fs::path& out_dir, bool nested, int top_k,
                        const CommonOpts& opts) {
  RunManifest m;
  m.command = "ensemble-search";
  m.seed = opts.seed;
  m.options = {{"nested", nested ? "1" : "0"}, {"top_k", std::to_string(top_k)}};
  m.input_hashes = {{"canonical_manifest", hex64(hash_file(canonical_dir / "manifest.tsv"))}};
  m.outputs = {out_dir.string()};
  Timer t;
  auto gt_studies = load_targets_only(canonical_dir);
  evaluate::GroundTruth gt = evaluate::ground_truth_of(gt_studies);
  auto sets_with_configs = load_prediction_sets(runs_root);
  std::vector<evaluate::PredictionSet> sets;
  for (auto& [c, ps] : sets_with_configs) sets.push_back(ps);
  if (sets.empty()) throw BadInput("no prediction sets under " + runs_root.string());
  for (const auto& ps : sets)
    m.input_hashes.emplace_back("predictions." + ps.config_id, hex64(fnv1a(ps.serialize_csv())));
  if (manifest_matches(m, out_dir)) {
    std::cout << "ensemble-search: up to date\n";
    return 0;
  }
  try {
    std::vector<ensemble::EnsembleSelection> sels;
    if (nested) {
      data::FoldPlan plan =
          data::FoldPlan::deserialize(read_text_file(runs_root / "fold_plan.txt"));
      sels = ensemble::nested_protocol(sets, gt, plan, top_k);
    } else {
      sels = ensemble::full_protocol(sets, gt, top_k);
    }
    fs::create_directories(out_dir);
    for (const auto& sel : sels) {
      write_text_file(out_dir / (std::string("ensemble_") + evaluate::task_name(sel.task) + ".txt"),
                      sel.serialize());
      std::cout << "ensemble-search[" << evaluate::task_name(sel.task) << "]: {";
      for (std::size_t i = 0; i < sel.members.size(); ++i)
        std::cout << (i ? "," : "") << sel.members[i];
      std::cout << "} selection_error=" << fmt_double(sel.selection_error);
      if (sel.evaluation_error >= 0)
        std::cout << " evaluation_error=" << fmt_double(sel.evaluation_error);
      std::cout << "\n";
    }
  } catch (...) {
    quarantine(out_dir);
    throw;
  }
  write_manifest(m, out_dir, t.seconds());
  return 0;
}

namespace {
std::string metrics_cell(const evaluate::TaskMetrics& tm, bool reg) {
  std::ostringstream ss;
  if (reg && tm.has_reg) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%.4g +- %.3g\t%.4f", tm.mae.mean, tm.mae.sd, tm.pcc);
    ss << buf;
  } else if (!reg && tm.has_phase) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", tm.er);
    ss << buf;
  } else {
    ss << (reg ? "-\t-" : "-");
  }
  return ss.str();
}

std::string table_row(const std::string& label, const evaluate::PredictionSet& ps,
                      const evaluate::GroundTruth& gt,
                      const std::vector<std::string>* filter = nullptr) {
  std::ostringstream ss;
  ss << label;
  bool any_reg = false, any_phase = false;
  for (const auto& r : ps.rows) {
    any_reg |= r.has_reg;
    any_phase |= r.has_phase;
  }
  for (auto task : {evaluate::Task::areas, evaluate::Task::dims, evaluate::Task::rwt}) {
    if (any_reg)
      ss << "\t" << metrics_cell(evaluate::task_metrics(ps, gt, task, filter), true);
    else
      ss << "\t-\t-";
  }
  if (any_phase)
    ss << "\t" << metrics_cell(evaluate::task_metrics(ps, gt, evaluate::Task::phase, filter), false);
  else
    ss << "\t-";
  return ss.str();
}

void write_scatter_svg(const fs::path& file, const std::vector<double>& gt,
                       const std::vector<double>& pred, const std::string& title) {
  double lo = 1e300, hi = -1e300;
  for (double v : gt) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : pred) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (!(hi > lo)) { lo -= 1; hi += 1; }
  double pad = 0.05 * (hi - lo);
  lo -= pad; hi += pad;
  const int S = 420, M = 40;
  auto X = [&](double v) { return M + (v - lo) / (hi - lo) * (S - 2 * M); };
  auto Y = [&](double v) { return S - M - (v - lo) / (hi - lo) * (S - 2 * M); };
  std::ostringstream ss;
  ss << "<svg xmlns='http://www.w3.org/2000/svg' width='" << S << "' height='" << S << "'>\n";
  ss << "<rect width='100%' height='100%' fill='white'/>\n";
  ss << "<text x='" << S / 2 << "' y='18' text-anchor='middle' font-size='13'>" << title
     << "</text>\n";
  ss << "<line x1='" << X(lo + pad) << "' y1='" << Y(lo + pad) << "' x2='" << X(hi - pad)
     << "' y2='" << Y(hi - pad) << "' stroke='gray' stroke-dasharray='4'/>\n";
  for (std::size_t i = 0; i < gt.size(); ++i)
    ss << "<circle cx='" << X(gt[i]) << "' cy='" << Y(pred[i])
       << "' r='2' fill='steelblue' fill-opacity='0.5'/>\n";
  ss << "<text x='" << S / 2 << "' y='" << S - 8 << "' text-anchor='middle' font-size='11'>"
     << "ground truth</text>\n";
  ss << "</svg>\n";
  write_text_file(file, ss.str());
}

void write_bland_altman_svg(const fs::path& file, const std::vector<double>& gt,
                            const std::vector<double>& pred, const std::string& title) {
  std::vector<double> mean_v, diff_v;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mean_v.push_back((gt[i] + pred[i]) / 2.0);
    diff_v.push_back(pred[i] - gt[i]);
  }
  double mlo = 1e300, mhi = -1e300, dmax = 0;
  double bias = 0;
  for (std::size_t i = 0; i < mean_v.size(); ++i) {
    mlo = std::min(mlo, mean_v[i]);
    mhi = std::max(mhi, mean_v[i]);
    dmax = std::max(dmax, std::abs(diff_v[i]));
    bias += diff_v[i];
  }
  bias /= static_cast<double>(diff_v.size());
  if (!(mhi > mlo)) { mlo -= 1; mhi += 1; }
  if (dmax == 0) dmax = 1;
  const int W = 460, H = 320, M = 40;
  auto X = [&](double v) { return M + (v - mlo) / (mhi - mlo) * (W - 2 * M); };
  auto Y = [&](double v) { return H / 2.0 - v / (1.1 * dmax) * (H / 2.0 - M); };
  std::ostringstream ss;
  ss << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  ss << "<rect width='100%' height='100%' fill='white'/>\n";
  ss << "<text x='" << W / 2 << "' y='18' text-anchor='middle' font-size='13'>" << title
     << " (Bland-Altman)</text>\n";
  ss << "<line x1='" << M << "' y1='" << Y(0) << "' x2='" << W - M << "' y2='" << Y(0)
     << "' stroke='gray'/>\n";
  ss << "<line x1='" << M << "' y1='" << Y(bias) << "' x2='" << W - M << "' y2='" << Y(bias)
     << "' stroke='tomato' stroke-dasharray='4'/>\n";
  for (std::size_t i = 0; i < mean_v.size(); ++i)
    ss << "<circle cx='" << X(mean_v[i]) << "' cy='" << Y(diff_v[i])
       << "' r='2' fill='steelblue' fill-opacity='0.5'/>\n";
  ss << "</svg>\n";
  write_text_file(file, ss.str());
}
}  // namespace

int cmd_evaluate(const fs::path& canonical_dir, const fs::path& runs_root,
                 const fs::path& out_file, const std::string& wilcoxon_a,
                 const std::string& wilcoxon_b, const std::string& wilcoxon_task,
                 const CommonOpts& opts) {
  (void)opts;
  auto gt_studies = load_targets_only(canonical_dir);
  evaluate::GroundTruth gt = evaluate::ground_truth_of(gt_studies);
  auto sets = load_prediction_sets(runs_root);
  if (sets.empty()) throw BadInput("no prediction sets under " + runs_root.string());

  std::ostringstream ss;
  ss << "configuration\tareas_mae\tareas_pcc\tdims_mae\tdims_pcc\trwt_mae\trwt_pcc\tphase_er\n";
  for (const auto& [config, ps] : sets) ss << table_row(config.id(), ps, gt) << "\n";
  if (!out_file.empty()) {
    write_text_file(out_file, ss.str());
    std::cout << "evaluate: wrote " << out_file.string() << "\n";
  }
  std::cout << ss.str();

  if (!wilcoxon_a.empty() && !wilcoxon_b.empty()) {
    const evaluate::PredictionSet* pa = nullptr;
    const evaluate::PredictionSet* pb = nullptr;
    for (const auto& [config, ps] : sets) {
      if (config.id() == wilcoxon_a || config.name == wilcoxon_a) pa = &ps;
      if (config.id() == wilcoxon_b || config.name == wilcoxon_b) pb = &ps;
    }
    if (pa == nullptr || pb == nullptr) throw BadInput("wilcoxon: configuration not found");
    evaluate::Task task = evaluate::Task::areas;
    for (auto t : {evaluate::Task::areas, evaluate::Task::dims, evaluate::Task::rwt})
      if (wilcoxon_task == evaluate::task_name(t)) task = t;
    auto ea = evaluate::absolute_errors(*pa, gt, task);
    auto eb = evaluate::absolute_errors(*pb, gt, task);
    evaluate::WilcoxonResult w = evaluate::wilcoxon_signed_rank(ea, eb);
    std::cout << "wilcoxon[" << wilcoxon_task << "] " << wilcoxon_a << " vs " << wilcoxon_b
              << ": W=" << fmt_double(w.statistic) << " p=" << fmt_double(w.p_value)
              << (w.significant ? " significant" : " not significant") << " (n=" << w.n_used
              << ")\n";
  }
  return 0;
}

int cmd_report(const fs::path& canonical_dir, const fs::path& runs_root,
               const fs::path& out_dir, bool nested, bool plots, const CommonOpts& opts) {
  auto gt_studies = load_targets_only(canonical_dir);
  evaluate::GroundTruth gt = evaluate::ground_truth_of(gt_studies);
  auto sets_with_configs = load_prediction_sets(runs_root);
  if (sets_with_configs.empty()) throw BadInput("no prediction sets under " + runs_root.string());
  std::vector<evaluate::PredictionSet> sets;
  for (auto& [c, ps] : sets_with_configs) sets.push_back(ps);

  RunManifest manifest;
  manifest.command = "report";
  manifest.seed = opts.seed;
  manifest.options = {{"nested", nested ? "1" : "0"}, {"plots", plots ? "1" : "0"}};
  manifest.input_hashes = {
      {"canonical_manifest", hex64(hash_file(canonical_dir / "manifest.tsv"))}};
  for (const auto& ps : sets)
    manifest.input_hashes.emplace_back("predictions." + ps.config_id,
                                       hex64(fnv1a(ps.serialize_csv())));
  manifest.outputs = {out_dir.string()};
  if (manifest_matches(manifest, out_dir)) {
    std::cout << "report: up to date\n";
    std::cout << read_text_file(out_dir / "report.tsv");
    return 0;
  }

  Timer t;
  fs::create_directories(out_dir);
  std::ostringstream ss;
  ss << "configuration\tareas_mae\tareas_pcc\tdims_mae\tdims_pcc\trwt_mae\trwt_pcc\tphase_er\n";
  for (const auto& [config, ps] : sets_with_configs) ss << table_row(config.id(), ps, gt) << "\n";

  // Ensemble Average: unweighted mean over every config that serves a task.
  std::vector<const evaluate::PredictionSet*> reg_sets, phase_sets;
  for (const auto& ps : sets) {
    bool any_reg = false, any_phase = false;
    for (const auto& r : ps.rows) {
      any_reg |= r.has_reg;
      any_phase |= r.has_phase;
    }
    if (any_reg) reg_sets.push_back(&ps);
    if (any_phase) phase_sets.push_back(&ps);
  }
  auto average_row = [&](const std::string& label, const std::vector<std::string>* filter) {
    std::ostringstream row;
    row << label;
    for (auto task : {evaluate::Task::areas, evaluate::Task::dims, evaluate::Task::rwt}) {
      if (reg_sets.empty()) { row << "\t-\t-"; continue; }
      auto avg = ensemble::average_predictions(reg_sets, "avg");
      row << "\t" << metrics_cell(evaluate::task_metrics(avg, gt, task, filter), true);
    }
    if (phase_sets.empty()) { row << "\t-"; }
    else {
      auto avgp = ensemble::average_predictions(phase_sets, "avg");
      row << "\t"
          << metrics_cell(evaluate::task_metrics(avgp, gt, evaluate::Task::phase, filter), false);
    }
    return row.str();
  };
  ss << average_row("Ensemble Average", nullptr) << "\n";

  // Ensemble Optimal: per-task exhaustive subset search.
  auto selections = ensemble::full_protocol(sets, gt);
  {
    std::ostringstream row;
    row << "Ensemble Optimal";
    for (auto task : {evaluate::Task::areas, evaluate::Task::dims, evaluate::Task::rwt,
                      evaluate::Task::phase}) {
      const ensemble::EnsembleSelection* sel = nullptr;
      for (const auto& s : selections)
        if (s.task == task) sel = &s;
      if (sel == nullptr) {
        row << (task == evaluate::Task::phase ? "\t-" : "\t-\t-");
        continue;
      }
      std::vector<const evaluate::PredictionSet*> members;
      for (const auto& id : sel->members)
        for (const auto& ps : sets)
          if (ps.config_id == id) members.push_back(&ps);
      auto ens = ensemble::average_predictions(members, "optimal");
      if (task == evaluate::Task::phase)
        row << "\t" << metrics_cell(evaluate::task_metrics(ens, gt, task), false);
      else
        row << "\t" << metrics_cell(evaluate::task_metrics(ens, gt, task), true);
    }
    ss << row.str() << "\n";
  }

  if (nested) {
    data::FoldPlan plan = data::FoldPlan::deserialize(read_text_file(runs_root / "fold_plan.txt"));
    std::vector<std::string> half_b;
    for (const auto& [id, h] : plan.half_of)
      if (h == 1) half_b.push_back(id);
    std::sort(half_b.begin(), half_b.end());
    ss << average_row("Ensemble Average*", &half_b) << "\n";
    auto nested_sels = ensemble::nested_protocol(sets, gt, plan);
    std::ostringstream row;
    row << "Ensemble Optimal*";
    for (auto task : {evaluate::Task::areas, evaluate::Task::dims, evaluate::Task::rwt,
                      evaluate::Task::phase}) {
      const ensemble::EnsembleSelection* sel = nullptr;
      for (const auto& s : nested_sels)
        if (s.task == task) sel = &s;
      if (sel == nullptr) {
        row << (task == evaluate::Task::phase ? "\t-" : "\t-\t-");
        continue;
      }
      std::vector<const evaluate::PredictionSet*> members;
      for (const auto& id : sel->members)
        for (const auto& ps : sets)
          if (ps.config_id == id) members.push_back(&ps);
      auto ens = ensemble::average_predictions(members, "optimal*");
      if (task == evaluate::Task::phase)
        row << "\t" << metrics_cell(evaluate::task_metrics(ens, gt, task, &half_b), false);
      else
        row << "\t" << metrics_cell(evaluate::task_metrics(ens, gt, task, &half_b), true);
    }
    ss << row.str() << "\n";
  }

  write_text_file(out_dir / "report.tsv", ss.str());
  std::cout << ss.str();

  if (plots && !selections.empty() && !reg_sets.empty()) {
    fs::path plot_dir = out_dir / "plots";
    fs::create_directories(plot_dir);
    for (const auto& sel : selections) {
      if (sel.task == evaluate::Task::phase) continue;
      std::vector<const evaluate::PredictionSet*> members;
      for (const auto& id : sel.members)
        for (const auto& ps : sets)
          if (ps.config_id == id) members.push_back(&ps);
      auto ens = ensemble::average_predictions(members, "optimal");
      std::vector<double> p, g;
      auto idx = evaluate::task_indices(sel.task);
      for (const auto& r : ens.rows) {
        if (!r.has_reg) continue;
        const auto& tv = gt.targets.at(r.patient)[static_cast<std::size_t>(r.frame)];
        for (std::size_t k : idx) {
          p.push_back(r.reg[k]);
          g.push_back(tv[k]);
        }
      }
      std::string name = evaluate::task_name(sel.task);
      write_scatter_svg(plot_dir / ("scatter_" + name + ".svg"), g, p,
                        "optimal ensemble: " + name);
      write_bland_altman_svg(plot_dir / ("bland_altman_" + name + ".svg"), g, p, name);
    }
  }
  write_manifest(manifest, out_dir, t.seconds());
  return 0;
}

}  // namespace lvq::pipeline
