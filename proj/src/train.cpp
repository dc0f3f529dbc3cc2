#include "lvq/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "lvq/evaluate.hpp"

namespace lvq::train {

// ---------------------------------------------------------------------------
// Configuration

std::string Configuration::id() const {
  std::ostringstream ss;
  ss << arch << "-" << (is_3d ? "3d" + std::to_string(n_slices) : "2d");
  if (!is_3d) ss << "-" << (input_mode == augment::InputMode::replicate ? "rep" : "nbr");
  ss << "-" << model::target_mode_name(targets);
  ss << "-" << (init == "pretrained" ? "pre" : "rnd");
  ss << (sr ? "-sr" : "");
  ss << "-s" << seed;
  return ss.str();
}

std::string Configuration::serialize() const {
  std::ostringstream ss;
  ss << "name=" << name << "\n";
  ss << "arch=" << arch << "\n";
  ss << "dim=" << (is_3d ? "3d" : "2d") << "\n";
  ss << "n_slices=" << n_slices << "\n";
  ss << "init=" << init << "\n";
  ss << "sr=" << (sr ? "on" : "off") << "\n";
  ss << "targets=" << model::target_mode_name(targets) << "\n";
  ss << "input_mode=" << augment::input_mode_name(input_mode) << "\n";
  ss << "seed=" << seed << "\n";
  return ss.str();
}

Configuration Configuration::deserialize(const std::string& text) {
  Configuration c;
  for (const auto& line : split(text, '\n')) {
    auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    std::string k = line.substr(0, pos), v = line.substr(pos + 1);
    if (k == "name") c.name = v;
    else if (k == "arch") c.arch = v;
    else if (k == "dim") c.is_3d = v == "3d";
    else if (k == "n_slices") c.n_slices = std::atoi(v.c_str());
    else if (k == "init") c.init = v;
    else if (k == "sr") c.sr = v == "on";
    else if (k == "targets") c.targets = model::target_mode_from_name(v);
    else if (k == "input_mode") c.input_mode = augment::input_mode_from_name(v);
    else if (k == "seed") c.seed = std::strtoull(v.c_str(), nullptr, 10);
  }
  return c;
}

std::string Configuration::hash() const { return hex64(fnv1a(serialize())); }

// ---------------------------------------------------------------------------
// Batch assembly

Batch assemble_batch(const std::vector<augment::AugmentedSample>& samples, bool is_3d) {
  Batch b;
  b.B = static_cast<std::int64_t>(samples.size());
  b.D = is_3d ? static_cast<std::int64_t>(samples[0].planes.size()) : 1;
  b.H = samples[0].planes[0].h;
  b.W = samples[0].planes[0].w;
  b.x = Tensor({b.B, 3, b.D, b.H, b.W});
  b.reg_targets.assign(static_cast<std::size_t>(b.B * b.D * 11), 0.0);
  b.phase_labels.assign(static_cast<std::size_t>(b.B * b.D), 0);
  b.seg.assign(static_cast<std::size_t>(b.B * b.D * b.H * b.W), 0);

  std::int64_t hw = b.H * b.W;
  for (std::int64_t n = 0; n < b.B; ++n) {
    const auto& s = samples[static_cast<std::size_t>(n)];
    b.records.push_back(s.record);
    for (int c = 0; c < 3; ++c)
      for (std::int64_t d = 0; d < b.D; ++d) {
        // 2D: planes are the 3 channels; 3D: the frame stack on every channel.
        const ImagePlane& src = is_3d ? s.planes[static_cast<std::size_t>(d)] : s.planes[static_cast<std::size_t>(c)];
        double* dst = b.x.data() + ((n * 3 + c) * b.D + d) * hw;
        std::copy(src.v.begin(), src.v.end(), dst);
      }
    for (std::int64_t d = 0; d < b.D; ++d) {
      const auto& t = s.targets_scaled[static_cast<std::size_t>(d)];
      for (int i = 0; i < 11; ++i) b.reg_targets[static_cast<std::size_t>((n * b.D + d) * 11 + i)] = t[static_cast<std::size_t>(i)];
      b.phase_labels[static_cast<std::size_t>(n * b.D + d)] =
          static_cast<int>(s.phases[static_cast<std::size_t>(d)]);
      const MaskPlane& m = s.masks[static_cast<std::size_t>(d)];
      std::copy(m.v.begin(), m.v.end(), b.seg.begin() + static_cast<std::ptrdiff_t>((n * b.D + d) * hw));
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Composite loss

LossComponents composite_loss(const model::ModelOutput& out, const Batch& batch,
                              model::TargetMode mode, bool sr, double lambda_p,
                              double lambda_s, Tensor* g_head, Tensor* g_seg) {
  LossComponents lc;
  const Tensor& y = out.head;
  std::int64_t outs = y.dim(1), D = y.dim(2), B = y.dim(0);
  if (g_head != nullptr) *g_head = Tensor(y.shape);

  bool has_reg = mode != model::TargetMode::classification;
  bool has_phase = mode != model::TargetMode::regression;
  int phase_off = mode == model::TargetMode::joint ? 11 : 0;

  if (has_reg) {
    double cnt = static_cast<double>(B * D * 11);
    double acc = 0.0;
    for (std::int64_t n = 0; n < B; ++n)
      for (std::int64_t d = 0; d < D; ++d)
        for (int i = 0; i < 11; ++i) {
          double p = y[((n * outs + i) * D + d)];
          double t = batch.reg_targets[static_cast<std::size_t>((n * D + d) * 11 + i)];
          acc += (p - t) * (p - t);
          if (g_head != nullptr) (*g_head)[((n * outs + i) * D + d)] = 2.0 * (p - t) / cnt;
        }
    lc.mse = acc / cnt;
    lc.has_mse = true;
  }

  if (has_phase) {
    double cnt = static_cast<double>(B * D);
    double acc = 0.0;
    for (std::int64_t n = 0; n < B; ++n)
      for (std::int64_t d = 0; d < D; ++d) {
        double l0 = y[((n * outs + phase_off) * D + d)];
        double l1 = y[((n * outs + phase_off + 1) * D + d)];
        int label = batch.phase_labels[static_cast<std::size_t>(n * D + d)];
        double m = std::max(l0, l1);
        double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
        double z = e0 + e1;
        double p0 = e0 / z, p1 = e1 / z;
        acc -= std::log(label == 0 ? p0 : p1);
        if (g_head != nullptr) {
          (*g_head)[((n * outs + phase_off) * D + d)] =
              lambda_p * (p0 - (label == 0 ? 1.0 : 0.0)) / cnt;
          (*g_head)[((n * outs + phase_off + 1) * D + d)] =
              lambda_p * (p1 - (label == 1 ? 1.0 : 0.0)) / cnt;
        }
      }
    lc.ce_phase = acc / cnt;
    lc.has_phase = true;
  }

  if (sr) {
    if (!out.seg.has_value()) throw BadInput("SR loss requested without segmentation output");
    const Tensor& s = *out.seg;
    std::int64_t H = s.dim(3), W = s.dim(4);
    if (g_seg != nullptr) *g_seg = Tensor(s.shape);
    double cnt = static_cast<double>(B * D * H * W);
    double acc = 0.0;
    std::int64_t hw = H * W;
    for (std::int64_t n = 0; n < B; ++n)
      for (std::int64_t d = 0; d < D; ++d) {
        const double* l0 = s.data() + ((n * 3 + 0) * D + d) * hw;
        const double* l1 = s.data() + ((n * 3 + 1) * D + d) * hw;
        const double* l2 = s.data() + ((n * 3 + 2) * D + d) * hw;
        const std::uint8_t* lbl = batch.seg.data() + (n * D + d) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          double m = std::max(l0[i], std::max(l1[i], l2[i]));
          double e0 = std::exp(l0[i] - m), e1 = std::exp(l1[i] - m), e2 = std::exp(l2[i] - m);
          double z = e0 + e1 + e2;
          double p[3] = {e0 / z, e1 / z, e2 / z};
          acc -= std::log(p[lbl[i]]);
          if (g_seg != nullptr)
            for (int c = 0; c < 3; ++c)
              (*g_seg)[((n * 3 + c) * D + d) * hw + i] =
                  lambda_s * (p[c] - (lbl[i] == c ? 1.0 : 0.0)) / cnt;
        }
      }
    lc.ce_seg = acc / cnt;
    lc.has_seg = true;
  }

  lc.total = (lc.has_mse ? lc.mse : 0.0) + (lc.has_phase ? lambda_p * lc.ce_phase : 0.0) +
             (lc.has_seg ? lambda_s * lc.ce_seg : 0.0);
  return lc;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::vector<nn::ParamRef>& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, t_);
  double bc2 = 1.0 - std::pow(b2_, t_);
  for (auto& p : params) {
    Tensor& m = m_[p.name];
    Tensor& v = v_[p.name];
    if (m.numel() != p.value->numel()) {
      m = Tensor(p.value->shape);
      v = Tensor(p.value->shape);
    }
    double* wv = p.value->data();
    const double* gv = p.grad->data();
    double* mv = m.data();
    double* vv = v.data();
    std::int64_t n = p.value->numel();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t i = 0; i < n; ++i) {
      mv[i] = b1_ * mv[i] + (1.0 - b1_) * gv[i];
      vv[i] = b2_ * vv[i] + (1.0 - b2_) * gv[i] * gv[i];
      double mh = mv[i] / bc1;
      double vh = vv[i] / bc2;
      wv[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// record.csv

std::string TrainRecord::serialize_csv() const {
  std::ostringstream ss;
  ss << "epoch,total,mse,ce_phase,ce_seg\n";
  for (const auto& e : epochs)
    ss << e.epoch << "," << fmt_double(e.loss.total) << "," << fmt_double(e.loss.mse) << ","
       << fmt_double(e.loss.ce_phase) << "," << fmt_double(e.loss.ce_seg) << "\n";
  return ss.str();
}

std::vector<EpochRecord> TrainRecord::parse_csv(const std::string& text) {
  std::vector<EpochRecord> out;
  bool header = true;
  for (const auto& line : split(text, '\n')) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 5) throw BadInput("malformed record row: " + line);
    EpochRecord e;
    e.epoch = std::atoi(f[0].c_str());
    e.loss.total = std::strtod(f[1].c_str(), nullptr);
    e.loss.mse = std::strtod(f[2].c_str(), nullptr);
    e.loss.ce_phase = std::strtod(f[3].c_str(), nullptr);
    e.loss.ce_seg = std::strtod(f[4].c_str(), nullptr);
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// train_one

namespace {
model::Model build_model_for(const Configuration& config, const TrainParams& params,
                             std::uint64_t run_seed, const fs::path& pretext_checkpoint) {
  model::BackboneSpec spec = model::BackboneSpec::by_name(config.arch);
  spec.input_size = params.crop_size;
  model::Model m = model::build_2d(spec, config.targets, config.init, pretext_checkpoint,
                                   run_seed);
  if (config.sr) model::attach_sr_decoder(m, mix64(run_seed + 1));
  if (config.is_3d) m = model::inflate_to_3d(m, params.kernel_depth);
  return m;
}
}  // namespace

TrainRecord train_one(const Configuration& config, int fold,
                      const std::map<std::string, Study>& studies, const data::FoldPlan& plan,
                      const TrainParams& params, const fs::path& run_dir,
                      const fs::path& pretext_checkpoint) {
  auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(run_dir);

  auto train_ids = plan.patients_not_in_fold(fold);
  std::sort(train_ids.begin(), train_ids.end());
  std::vector<const Study*> train_studies;
  for (const auto& id : train_ids) train_studies.push_back(&studies.at(id));

  data::TargetScaler scaler = data::fit_target_scaler(train_studies);
  std::uint64_t run_seed = mix64(config.seed ^ mix64(static_cast<std::uint64_t>(fold) + 1));
  model::Model m = build_model_for(config, params, run_seed, pretext_checkpoint);

  augment::BatchSpec bspec;
  bspec.is_3d = config.is_3d;
  bspec.batch_size = params.batch_size;
  bspec.crop_size = params.crop_size;
  bspec.n_slices = config.n_slices;
  bspec.input_mode = config.input_mode;

  Adam opt(params.lr, params.adam_beta1, params.adam_beta2, params.adam_eps);
  auto trainable = m.trainable();
  // One data-loader worker; stream seeded from (run seed, worker id).
  Rng data_rng(run_seed, /*stream=*/1);

  int n_train = static_cast<int>(train_studies.size());
  int steps = params.crops_per_patient * n_train / params.batch_size;  // drop last partial
  if (steps < 1) throw InsufficientPatients("profile yields zero optimizer steps per epoch");

  TrainRecord rec;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    LossComponents mean{};
    for (int step = 0; step < steps; ++step) {
      auto samples = augment::build_batch(train_studies, bspec, scaler, data_rng);
      Batch batch = assemble_batch(samples, config.is_3d);
      model::ModelOutput out = m.forward_train(batch.x, config.sr);
      Tensor g_head, g_seg;
      LossComponents lc = composite_loss(out, batch, config.targets, config.sr,
                                         params.lambda_p, params.lambda_s, &g_head, &g_seg);
      if (!std::isfinite(lc.total)) {
        std::ostringstream ss;
        ss << "non-finite loss at epoch " << epoch << " step " << step << "\n";
        for (const auto& r : batch.records) ss << r.describe() << "\n";
        write_text_file(run_dir / "error.txt", ss.str());
        throw NonFiniteLoss("epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      m.zero_grad();
      m.backward(g_head, config.sr ? &g_seg : nullptr);
      opt.step(trainable);
      mean.total += lc.total;
      mean.mse += lc.mse;
      mean.ce_phase += lc.ce_phase;
      mean.ce_seg += lc.ce_seg;
      mean.has_mse |= lc.has_mse;
      mean.has_phase |= lc.has_phase;
      mean.has_seg |= lc.has_seg;
    }
    mean.total /= steps;
    mean.mse /= steps;
    mean.ce_phase /= steps;
    mean.ce_seg /= steps;
    rec.epochs.push_back({epoch, mean});
  }

  rec.checkpoint_dir = run_dir / "checkpoint";
  model::save_checkpoint(m, rec.checkpoint_dir, "scaler.txt");
  write_text_file(run_dir / "scaler.txt", scaler.serialize());
  write_text_file(run_dir / "record.csv", rec.serialize_csv());
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// run_space

bool run_is_complete(const fs::path& run_dir) {
  return fs::exists(run_dir / "checkpoint" / "model.txt") &&
         fs::exists(run_dir / "record.csv") && fs::exists(run_dir / "predictions.csv");
}

void predict_run(const Configuration& config, int fold,
                 const std::map<std::string, Study>& studies, const data::FoldPlan& plan,
                 const TrainParams& params, const fs::path& run_dir) {
  model::Model m = model::load_checkpoint(run_dir / "checkpoint");
  data::TargetScaler scaler = data::TargetScaler::deserialize(read_text_file(run_dir / "scaler.txt"));

  auto held_out = plan.patients_in_fold(fold);
  std::sort(held_out.begin(), held_out.end());

  evaluate::PredictionSet ps;
  ps.config_id = config.id();
  auto fwd = evaluate::model_forward(m);
  for (const auto& id : held_out) {
    const Study& s = studies.at(id);
    std::vector<evaluate::FramePrediction> fps =
        config.is_3d
            ? evaluate::predict_3d(fwd, s, config.n_slices, params.crop_size, config.targets,
                                   &scaler)
            : evaluate::predict_2d(fwd, s, params.crop_size, config.input_mode, config.targets,
                                   &scaler);
    for (int t = 0; t < static_cast<int>(fps.size()); ++t) {
      evaluate::PredictionRow row;
      row.patient = id;
      row.frame = t;
      row.has_reg = fps[static_cast<std::size_t>(t)].has_reg;
      row.reg = fps[static_cast<std::size_t>(t)].reg;
      row.has_phase = fps[static_cast<std::size_t>(t)].has_phase;
      row.p_systole = fps[static_cast<std::size_t>(t)].p_systole;
      row.p_diastole = fps[static_cast<std::size_t>(t)].p_diastole;
      row.fold = fold;
      ps.rows.push_back(row);
    }
  }
  ps.sort_rows();
  write_text_file(run_dir / "predictions.csv", ps.serialize_csv());
}

RunSpaceResult run_space(const std::vector<Configuration>& configs,
                         const std::map<std::string, Study>& studies,
                         const data::FoldPlan& plan, const TrainParams& params,
                         const fs::path& runs_root, const fs::path& pretext_checkpoint) {
  RunSpaceResult res;
  for (const auto& config : configs) {
    for (int fold = 0; fold < plan.n_folds; ++fold) {
      fs::path run_dir = runs_root / config.hash() / std::to_string(fold);
      if (run_is_complete(run_dir)) {
        ++res.skipped;
        continue;
      }
      try {
        fs::create_directories(run_dir);
        write_text_file(run_dir / "config.txt", config.serialize());
        train_one(config, fold, studies, plan, params, run_dir, pretext_checkpoint);
        predict_run(config, fold, studies, plan, params, run_dir);
        ++res.trained;
      } catch (const std::exception& e) {
        write_text_file(run_dir / "error.txt", std::string(e.what()) + "\n");
        warn("run " + config.id() + " fold " + std::to_string(fold) + " failed: " + e.what());
        ++res.failed;
      }
    }
  }
  return res;
}

}  // namespace lvq::train
