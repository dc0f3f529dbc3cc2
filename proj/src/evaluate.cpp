#include "lvq/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lvq::evaluate {

namespace {

std::vector<std::pair<int, int>> corner_offsets(std::int64_t size, int crop) {
  int off = static_cast<int>(size) - crop;
  if (off < 0) throw BadInput("crop larger than slice");
  return {{0, 0}, {0, off}, {off, 0}, {off, off}};
}

void fill_channel(Tensor& x, int channel, int d, const ImagePlane& plane, int r0, int c0,
                  int crop) {
  std::int64_t D = x.dim(2);
  double* p = x.data() + ((0 * 3 + channel) * D + d) * crop * crop;
  for (int r = 0; r < crop; ++r)
    for (int c = 0; c < crop; ++c) p[r * crop + c] = plane.at(r0 + r, c0 + c);
}

Tensor input_2d(const Study& s, int t, augment::InputMode mode, int r0, int c0, int crop) {
  Tensor x({1, 3, 1, crop, crop});
  auto ch = augment::make_3ch_frames(t, s.n_frames(), mode);
  for (int c = 0; c < 3; ++c)
    fill_channel(x, c, 0, s.frames[static_cast<std::size_t>(ch[static_cast<std::size_t>(c)])], r0, c0, crop);
  return x;
}

Tensor input_3d(const Study& s, int start, int n_slices, int r0, int c0, int crop) {
  Tensor x({1, 3, n_slices, crop, crop});
  for (int i = 0; i < n_slices; ++i) {
    int t = (start + i) % s.n_frames();
    // the gray frame stack is replicated across the 3 channels
    for (int c = 0; c < 3; ++c)
      fill_channel(x, c, i, s.frames[static_cast<std::size_t>(t)], r0, c0, crop);
  }
  return x;
}

struct RawOutputs {
  std::vector<double> reg;  // 11 per temporal position
  std::vector<double> p_sys, p_dia;
};

// Softmax of the phase logit pair.
void phase_probs(double l0, double l1, double& p0, double& p1) {
  double m = std::max(l0, l1);
  double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  p0 = e0 / (e0 + e1);
  p1 = e1 / (e0 + e1);
}

// Head output (1, outs, D, 1, 1) -> per-position raw values; phase logits
// converted to probabilities before any averaging.
RawOutputs split_outputs(const Tensor& y, model::TargetMode mode) {
  std::int64_t outs = y.dim(1), D = y.dim(2);
  RawOutputs r;
  bool has_reg = mode != model::TargetMode::classification;
  bool has_phase = mode != model::TargetMode::regression;
  int phase_off = mode == model::TargetMode::joint ? 11 : 0;
  if (has_reg) r.reg.resize(static_cast<std::size_t>(11 * D));
  if (has_phase) {
    r.p_sys.resize(static_cast<std::size_t>(D));
    r.p_dia.resize(static_cast<std::size_t>(D));
  }
  for (std::int64_t d = 0; d < D; ++d) {
    if (has_reg)
      for (int i = 0; i < 11; ++i) r.reg[static_cast<std::size_t>(d * 11 + i)] = y[i * D + d];
    if (has_phase) {
      double l0 = y[(phase_off + 0) * D + d];
      double l1 = y[(phase_off + 1) * D + d];
      phase_probs(l0, l1, r.p_sys[static_cast<std::size_t>(d)], r.p_dia[static_cast<std::size_t>(d)]);
    }
  }
  (void)outs;
  return r;
}

FramePrediction finalize(std::array<double, 11> reg_scaled, double p_sys, double p_dia,
                         model::TargetMode mode, const data::TargetScaler* scaler) {
  FramePrediction fp;
  if (mode != model::TargetMode::classification) {
    fp.has_reg = true;
    fp.reg = scaler != nullptr ? scaler->invert(reg_scaled) : reg_scaled;
  }
  if (mode != model::TargetMode::regression) {
    fp.has_phase = true;
    fp.p_systole = p_sys;
    fp.p_diastole = p_dia;
  }
  return fp;
}

}  // namespace

std::vector<FramePrediction> predict_2d(const Forward& f, const Study& study, int crop,
                                        augment::InputMode input_mode, model::TargetMode mode,
                                        const data::TargetScaler* scaler) {
  auto offsets = corner_offsets(study.height(), crop);
  std::vector<FramePrediction> out;
  for (int t = 0; t < study.n_frames(); ++t) {
    std::array<double, 11> reg{};
    double psys = 0.0, pdia = 0.0;
    for (const auto& [r0, c0] : offsets) {
      Tensor y = f(input_2d(study, t, input_mode, r0, c0, crop));
      RawOutputs r = split_outputs(y, mode);
      for (std::size_t i = 0; i < r.reg.size(); ++i) reg[i] += r.reg[i];
      if (!r.p_sys.empty()) {
        psys += r.p_sys[0];
        pdia += r.p_dia[0];
      }
    }
    double k = static_cast<double>(offsets.size());
    for (auto& v : reg) v /= k;
    out.push_back(finalize(reg, psys / k, pdia / k, mode, scaler));
  }
  return out;
}

std::vector<FramePrediction> predict_3d(const Forward& f, const Study& study, int n_slices,
                                        int crop, model::TargetMode mode,
                                        const data::TargetScaler* scaler) {
  int T = study.n_frames();
  auto offsets = corner_offsets(study.height(), crop);
  double k = static_cast<double>(offsets.size());

  std::vector<std::array<double, 11>> reg_acc(static_cast<std::size_t>(T));
  std::vector<double> psys_acc(static_cast<std::size_t>(T), 0.0), pdia_acc(static_cast<std::size_t>(T), 0.0);
  for (auto& a : reg_acc) a.fill(0.0);

  for (int start = 0; start < T; ++start) {
    // crop-averaged window outputs
    std::vector<double> reg(static_cast<std::size_t>(11 * n_slices), 0.0);
    std::vector<double> psys(static_cast<std::size_t>(n_slices), 0.0), pdia(static_cast<std::size_t>(n_slices), 0.0);
    for (const auto& [r0, c0] : offsets) {
      Tensor y = f(input_3d(study, start, n_slices, r0, c0, crop));
      RawOutputs r = split_outputs(y, mode);
      for (std::size_t i = 0; i < r.reg.size(); ++i) reg[i] += r.reg[i];
      for (std::size_t d = 0; d < r.p_sys.size(); ++d) {
        psys[d] += r.p_sys[d];
        pdia[d] += r.p_dia[d];
      }
    }
    for (int i = 0; i < n_slices; ++i) {
      int t = (start + i) % T;
      if (mode != model::TargetMode::classification)
        for (int j = 0; j < 11; ++j)
          reg_acc[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] += reg[static_cast<std::size_t>(i * 11 + j)] / k;
      if (mode != model::TargetMode::regression) {
        psys_acc[static_cast<std::size_t>(t)] += psys[static_cast<std::size_t>(i)] / k;
        pdia_acc[static_cast<std::size_t>(t)] += pdia[static_cast<std::size_t>(i)] / k;
      }
    }
  }

  std::vector<FramePrediction> out;
  for (int t = 0; t < T; ++t) {
    std::array<double, 11> reg = reg_acc[static_cast<std::size_t>(t)];
    for (auto& v : reg) v /= static_cast<double>(n_slices);  // each frame sits in n_slices windows
    out.push_back(finalize(reg, psys_acc[static_cast<std::size_t>(t)] / n_slices,
                           pdia_acc[static_cast<std::size_t>(t)] / n_slices, mode, scaler));
  }
  return out;
}

Forward model_forward(const model::Model& m) {
  return [&m](const Tensor& x) { return m.forward_eval(x).head; };
}

// ---------------------------------------------------------------------------
// Prediction tables

void PredictionSet::sort_rows() {
  std::sort(rows.begin(), rows.end(), [](const PredictionRow& a, const PredictionRow& b) {
    if (a.patient != b.patient) return a.patient < b.patient;
    return a.frame < b.frame;
  });
}

std::string PredictionSet::serialize_csv() const {
  std::ostringstream ss;
  ss << "config_id,patient_id,frame";
  for (const auto& n : indices::IndexVector::names()) ss << "," << n;
  ss << ",p_systole,p_diastole,fold\n";
  for (const auto& r : rows) {
    ss << config_id << "," << r.patient << "," << r.frame;
    for (int i = 0; i < 11; ++i)
      ss << "," << (r.has_reg ? fmt_double(r.reg[static_cast<std::size_t>(i)]) : "");
    ss << "," << (r.has_phase ? fmt_double(r.p_systole) : "")
       << "," << (r.has_phase ? fmt_double(r.p_diastole) : "") << "," << r.fold << "\n";
  }
  return ss.str();
}

PredictionSet PredictionSet::parse_csv(const std::string& text) {
  PredictionSet ps;
  bool header = true;
  for (const auto& line : split(text, '\n')) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 17) throw BadInput("malformed prediction row: " + line);
    PredictionRow r;
    ps.config_id = f[0];
    r.patient = f[1];
    r.frame = std::atoi(f[2].c_str());
    r.has_reg = !f[3].empty();
    if (r.has_reg)
      for (int i = 0; i < 11; ++i) r.reg[static_cast<std::size_t>(i)] = std::strtod(f[static_cast<std::size_t>(3 + i)].c_str(), nullptr);
    r.has_phase = !f[14].empty();
    if (r.has_phase) {
      r.p_systole = std::strtod(f[14].c_str(), nullptr);
      r.p_diastole = std::strtod(f[15].c_str(), nullptr);
    }
    r.fold = std::atoi(f[16].c_str());
    ps.rows.push_back(r);
  }
  ps.sort_rows();
  return ps;
}

GroundTruth ground_truth_of(const std::map<std::string, Study>& studies) {
  GroundTruth gt;
  for (const auto& [id, s] : studies) {
    std::vector<std::array<double, 11>> t;
    for (const auto& iv : s.targets) t.push_back(iv.flat());
    gt.targets[id] = std::move(t);
    gt.phases[id] = s.phases;
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Metrics

MaeResult mae(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.empty()) throw BadInput("mae: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gt[i]);
  double mean = s / static_cast<double>(pred.size());
  double q = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = std::abs(pred[i] - gt[i]) - mean;
    q += d * d;
  }
  return {mean, std::sqrt(q / static_cast<double>(pred.size()))};
}

double pcc(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.size() < 2) throw BadInput("pcc: need >= 2 pairs");
  double n = static_cast<double>(pred.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ma += pred[i];
    mb += gt[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double da = pred[i] - ma, db = gt[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw PccUndefined("zero variance in " + std::string(saa == 0.0 ? "predictions" : "ground truth"));
  return sab / std::sqrt(saa * sbb);
}

double error_rate(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size() || pred.empty()) throw BadInput("error_rate: size mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != gt[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

namespace {
double normal_sf(double z) {  // P(Z > z)
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}
}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw BadInput("wilcoxon: size mismatch");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double di = a[i] - b[i];
    if (di != 0.0) d.push_back(di);
  }
  int n = static_cast<int>(d.size());
  if (n < 6) throw TooFewPairs("only " + std::to_string(n) + " nonzero differences");

  // mid-ranks of |d|
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<double> rank(d.size(), 0.0);
  std::vector<double> tie_sizes;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    tie_sizes.push_back(static_cast<double>(j - i + 1));
    i = j + 1;
  }

  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k)
    (d[k] > 0 ? w_plus : w_minus) += rank[k];

  WilcoxonResult res;
  res.n_used = n;
  res.statistic = std::min(w_plus, w_minus);

  if (n <= 25) {
    // Exact null distribution over all 2^n sign assignments by dynamic
    // programming over doubled ranks (ties make ranks half-integral).
    std::vector<int> r2(d.size());
    int total2 = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      r2[k] = static_cast<int>(std::lround(rank[k] * 2.0));
      total2 += r2[k];
    }
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    for (int rk : r2)
      for (int s = total2; s >= rk; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - rk)];
    double denom = std::pow(2.0, n);
    int w2 = static_cast<int>(std::lround(w_plus * 2.0));
    double p_le = 0.0, p_ge = 0.0;
    for (int s = 0; s <= total2; ++s) {
      if (s <= w2) p_le += count[static_cast<std::size_t>(s)];
      if (s >= w2) p_ge += count[static_cast<std::size_t>(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge) / denom);
  } else {
    double nn = static_cast<double>(n);
    double mu = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    for (double t : tie_sizes) var -= (t * t * t - t) / 48.0;
    double z = (w_plus - mu) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  }
  res.significant = res.p_value < 0.05;
  return res;
}

// ---------------------------------------------------------------------------
// Task metrics

const char* task_name(Task t) {
  switch (t) {
    case Task::areas: return "areas";
    case Task::dims: return "dims";
    case Task::rwt: return "rwt";
    default: return "phase";
  }
}

std::vector<std::size_t> task_indices(Task t) {
  switch (t) {
    case Task::areas: return {0, 1};
    case Task::dims: return {2, 3, 4};
    case Task::rwt: return {5, 6, 7, 8, 9, 10};
    default: return {};
  }
}

namespace {
bool keep_patient(const std::string& id, const std::vector<std::string>* filter) {
  if (filter == nullptr) return true;
  return std::find(filter->begin(), filter->end(), id) != filter->end();
}
}  // namespace

TaskMetrics task_metrics(const PredictionSet& pred, const GroundTruth& gt, Task task,
                         const std::vector<std::string>* patient_filter) {
  TaskMetrics tm;
  if (task == Task::phase) {
    std::vector<int> p, g;
    for (const auto& r : pred.rows) {
      if (!r.has_phase || !keep_patient(r.patient, patient_filter)) continue;
      p.push_back(r.p_systole > r.p_diastole ? 0 : 1);
      g.push_back(static_cast<int>(gt.phases.at(r.patient)[static_cast<std::size_t>(r.frame)]));
    }
    if (p.empty()) throw BadInput("no phase predictions for task metrics");
    tm.er = error_rate(p, g);
    tm.has_phase = true;
    return tm;
  }

  auto idx = task_indices(task);
  std::vector<double> all_p, all_g;
  std::vector<std::vector<double>> per_index_p(idx.size()), per_index_g(idx.size());
  for (const auto& r : pred.rows) {
    if (!r.has_reg || !keep_patient(r.patient, patient_filter)) continue;
    const auto& t = gt.targets.at(r.patient)[static_cast<std::size_t>(r.frame)];
    for (std::size_t k = 0; k < idx.size(); ++k) {
      all_p.push_back(r.reg[idx[k]]);
      all_g.push_back(t[idx[k]]);
      per_index_p[k].push_back(r.reg[idx[k]]);
      per_index_g[k].push_back(t[idx[k]]);
    }
  }
  if (all_p.empty()) throw BadInput("no regression predictions for task metrics");
  tm.mae = mae(all_p, all_g);
  double pccs = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) pccs += pcc(per_index_p[k], per_index_g[k]);
  tm.pcc = pccs / static_cast<double>(idx.size());
  tm.has_reg = true;
  return tm;
}

std::vector<double> absolute_errors(const PredictionSet& pred, const GroundTruth& gt,
                                    Task task) {
  auto idx = task_indices(task);
  std::vector<double> out;
  for (const auto& r : pred.rows) {
    if (!r.has_reg) continue;
    const auto& t = gt.targets.at(r.patient)[static_cast<std::size_t>(r.frame)];
    for (std::size_t k : idx) out.push_back(std::abs(r.reg[k] - t[k]));
  }
  return out;
}

}  // namespace lvq::evaluate
