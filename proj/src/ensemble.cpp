#include "lvq/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvq::ensemble {

using evaluate::PredictionRow;

namespace {

// Entry matrix of one candidate for one task: regression tasks use the group
// values per (patient, frame) row; phase uses p_systole. Rows are the
// canonical sorted (patient, frame) order, identical across candidates.
struct TaskTable {
  std::vector<double> entries;  // candidates-aligned flat values
  std::vector<double> gt;       // ground truth (regression) or label (phase)
};

struct TaskData {
  std::vector<std::vector<double>> per_candidate;  // m x E
  std::vector<double> gt;                          // E
  bool is_phase = false;
};

bool keep(const std::string& id, const std::vector<std::string>* filter) {
  if (filter == nullptr) return true;
  return std::find(filter->begin(), filter->end(), id) != filter->end();
}

TaskData build_task_data(const std::vector<const PredictionSet*>& sets, const GroundTruth& gt,
                         Task task, const std::vector<std::string>* filter) {
  TaskData td;
  td.is_phase = task == Task::phase;
  auto idx = evaluate::task_indices(task);

  // Row keys from the first candidate; all candidates must match.
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& r : sets[0]->rows) {
    if (!keep(r.patient, filter)) continue;
    if (td.is_phase ? !r.has_phase : !r.has_reg) continue;
    keys.emplace_back(r.patient, r.frame);
  }
  if (keys.empty()) throw BadInput("no usable rows for ensemble task");

  for (const PredictionSet* ps : sets) {
    std::vector<double> e;
    std::size_t ki = 0;
    for (const auto& r : ps->rows) {
      if (!keep(r.patient, filter)) continue;
      if (td.is_phase ? !r.has_phase : !r.has_reg) continue;
      if (ki >= keys.size() || keys[ki] != std::make_pair(r.patient, r.frame))
        throw BadInput("prediction sets do not cover identical rows");
      ++ki;
      if (td.is_phase) {
        e.push_back(r.p_systole);
      } else {
        for (std::size_t k : idx) e.push_back(r.reg[k]);
      }
    }
    if (ki != keys.size()) throw BadInput("prediction sets do not cover identical rows");
    td.per_candidate.push_back(std::move(e));
  }

  for (const auto& [patient, frame] : keys) {
    if (td.is_phase) {
      td.gt.push_back(static_cast<double>(static_cast<int>(gt.phases.at(patient)[static_cast<std::size_t>(frame)])));
    } else {
      const auto& t = gt.targets.at(patient)[static_cast<std::size_t>(frame)];
      for (std::size_t k : idx) td.gt.push_back(t[k]);
    }
  }
  return td;
}

double error_of_sum(const std::vector<double>& sum, int count, const TaskData& td) {
  double inv = 1.0 / static_cast<double>(count);
  std::size_t E = td.gt.size();
  if (td.is_phase) {
    std::size_t wrong = 0;
    for (std::size_t e = 0; e < E; ++e) {
      // mean p_systole > 0.5 predicts systole (label 0)
      int pred = sum[e] * inv > 0.5 ? 0 : 1;
      if (pred != static_cast<int>(td.gt[e])) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(E);
  }
  double acc = 0.0;
  for (std::size_t e = 0; e < E; ++e) acc += std::abs(sum[e] * inv - td.gt[e]);
  return acc / static_cast<double>(E);
}

struct SearchBest {
  double error = std::numeric_limits<double>::infinity();
  std::uint32_t bits = 0;
  int count = 0;
  bool valid = false;
};

// Total order: error, then subset size, then lexicographic sorted-id lists.
bool better(const SearchBest& a, const SearchBest& b,
            const std::vector<std::string>& ids) {
  if (!b.valid) return true;
  if (a.error != b.error) return a.error < b.error;
  if (a.count != b.count) return a.count < b.count;
  std::vector<std::string> ia, ib;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (a.bits & (1u << k)) ia.push_back(ids[k]);
    if (b.bits & (1u << k)) ib.push_back(ids[k]);
  }
  std::sort(ia.begin(), ia.end());
  std::sort(ib.begin(), ib.end());
  return ia < ib;
}

// Depth-first enumeration with a stack of partial sums: sums are always
// exact in-order accumulations over the chosen candidates, so re-evaluating
// the winning subset reproduces its error bit-for-bit.
void dfs(int i, int m, int count, std::uint32_t bits, const TaskData& td,
         std::vector<std::vector<double>>& sum_stack, SearchBest& best,
         const std::vector<std::string>& ids) {
  if (i == m) {
    if (count == 0) return;
    SearchBest cand;
    cand.error = error_of_sum(sum_stack[static_cast<std::size_t>(count)], count, td);
    cand.bits = bits;
    cand.count = count;
    cand.valid = true;
    if (better(cand, best, ids)) best = cand;
    return;
  }
  dfs(i + 1, m, count, bits, td, sum_stack, best, ids);
  const auto& cur = sum_stack[static_cast<std::size_t>(count)];
  auto& next = sum_stack[static_cast<std::size_t>(count) + 1];
  const auto& member = td.per_candidate[static_cast<std::size_t>(i)];
  for (std::size_t e = 0; e < member.size(); ++e) next[e] = cur[e] + member[e];
  dfs(i + 1, m, count + 1, bits | (1u << i), td, sum_stack, best, ids);
}

}  // namespace

std::string EnsembleSelection::serialize() const {
  std::ostringstream ss;
  ss << "task=" << evaluate::task_name(task) << "\n";
  ss << "members=";
  for (std::size_t i = 0; i < members.size(); ++i) ss << (i ? "," : "") << members[i];
  ss << "\n";
  ss << "selection_error=" << fmt_double(selection_error) << "\n";
  ss << "evaluation_error=" << fmt_double(evaluation_error) << "\n";
  ss << "pool_hash=" << pool_hash << "\n";
  return ss.str();
}

EnsembleSelection EnsembleSelection::deserialize(const std::string& text) {
  EnsembleSelection sel;
  for (const auto& line : split(text, '\n')) {
    auto pos = line.find('=');
    if (pos == std::string::npos) continue;
    std::string k = line.substr(0, pos), v = line.substr(pos + 1);
    if (k == "task") {
      for (Task t : {Task::areas, Task::dims, Task::rwt, Task::phase})
        if (v == evaluate::task_name(t)) sel.task = t;
    } else if (k == "members") {
      for (const auto& id : split(v, ','))
        if (!id.empty()) sel.members.push_back(id);
    } else if (k == "selection_error") {
      sel.selection_error = std::strtod(v.c_str(), nullptr);
    } else if (k == "evaluation_error") {
      sel.evaluation_error = std::strtod(v.c_str(), nullptr);
    } else if (k == "pool_hash") {
      sel.pool_hash = v;
    }
  }
  return sel;
}

std::vector<std::string> rank_candidates(const std::vector<PredictionSet>& sets,
                                         const GroundTruth& gt, Task task, int k,
                                         const std::vector<std::string>* patient_filter) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& ps : sets) {
    bool usable = false;
    for (const auto& r : ps.rows)
      if (task == Task::phase ? r.has_phase : r.has_reg) usable = true;
    if (!usable) continue;
    evaluate::TaskMetrics tm = evaluate::task_metrics(ps, gt, task, patient_filter);
    scored.emplace_back(task == Task::phase ? tm.er : tm.mae.mean, ps.config_id);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> out;
  for (const auto& [err, id] : scored) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back(id);
  }
  return out;
}

double subset_error(const std::vector<const PredictionSet*>& members, const GroundTruth& gt,
                    Task task, const std::vector<std::string>* patient_filter) {
  if (members.empty()) throw BadInput("empty subset");
  TaskData td = build_task_data(members, gt, task, patient_filter);
  std::vector<double> sum(td.gt.size(), 0.0);
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t e = 0; e < td.per_candidate[i].size(); ++e)
      sum[e] += td.per_candidate[i][e];
  return error_of_sum(sum, static_cast<int>(members.size()), td);
}

EnsembleSelection search_optimal_subset(const std::vector<PredictionSet>& candidates,
                                        const GroundTruth& gt, Task task,
                                        const std::vector<std::string>* patient_filter) {
  int m = static_cast<int>(candidates.size());
  if (m == 0) throw BadInput("no candidates");
  if (m > 20) throw CandidateOverflow(std::to_string(m) + " candidates (max 20)");

  std::vector<const PredictionSet*> ptrs;
  std::vector<std::string> ids;
  for (const auto& c : candidates) {
    ptrs.push_back(&c);
    ids.push_back(c.config_id);
  }
  TaskData td = build_task_data(ptrs, gt, task, patient_filter);
  std::size_t E = td.gt.size();

  // Partition the subset space on the leading candidates; each branch keeps
  // its own sum stack, and the final reduce walks branches in index order.
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  int L = 0;
  while ((1 << L) < 4 * threads && L < m) ++L;
  if (m <= 4) L = 0;
  int n_branches = 1 << L;

  std::vector<SearchBest> branch_best(static_cast<std::size_t>(n_branches));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int br = 0; br < n_branches; ++br) {
    std::vector<std::vector<double>> sum_stack(static_cast<std::size_t>(m + 1),
                                               std::vector<double>(E, 0.0));
    int count = 0;
    std::uint32_t bits = 0;
    bool ok = true;
    for (int i = 0; i < L; ++i) {
      if (br & (1 << i)) {
        const auto& member = td.per_candidate[static_cast<std::size_t>(i)];
        auto& next = sum_stack[static_cast<std::size_t>(count) + 1];
        const auto& cur = sum_stack[static_cast<std::size_t>(count)];
        for (std::size_t e = 0; e < E; ++e) next[e] = cur[e] + member[e];
        ++count;
        bits |= 1u << i;
      }
    }
    if (ok) {
      SearchBest best;
      dfs(L, m, count, bits, td, sum_stack, best, ids);
      branch_best[static_cast<std::size_t>(br)] = best;
    }
  }
  SearchBest best;
  for (const auto& b : branch_best)
    if (b.valid && better(b, best, ids)) best = b;

  EnsembleSelection sel;
  sel.task = task;
  for (int i = 0; i < m; ++i)
    if (best.bits & (1u << i)) sel.members.push_back(ids[static_cast<std::size_t>(i)]);
  sel.selection_error = best.error;
  std::string pool;
  for (const auto& id : ids) pool += id + "\n";
  sel.pool_hash = hex64(fnv1a(pool));

  // Optimality is structural; verify it against the two canonical baselines.
  std::vector<const PredictionSet*> winners;
  for (int i = 0; i < m; ++i)
    if (best.bits & (1u << i)) winners.push_back(ptrs[static_cast<std::size_t>(i)]);
  double recheck = subset_error(winners, gt, task, patient_filter);
  if (recheck != sel.selection_error)
    throw BadInput("subset search bookkeeping error: re-evaluation mismatch");
  double full = subset_error(ptrs, gt, task, patient_filter);
  if (sel.selection_error > full)
    throw BadInput("subset search bookkeeping error: worse than full average");
  for (const auto* p : ptrs) {
    double single = subset_error({p}, gt, task, patient_filter);
    if (sel.selection_error > single)
      throw BadInput("subset search bookkeeping error: worse than singleton");
  }
  return sel;
}

std::vector<EnsembleSelection> nested_protocol(const std::vector<PredictionSet>& sets,
                                               const GroundTruth& gt,
                                               const data::FoldPlan& plan, int top_k) {
  std::vector<std::string> half_a, half_b;
  for (const auto& [id, h] : plan.half_of) (h == 0 ? half_a : half_b).push_back(id);
  std::sort(half_a.begin(), half_a.end());
  std::sort(half_b.begin(), half_b.end());

  std::vector<EnsembleSelection> out;
  for (Task task : {Task::areas, Task::dims, Task::rwt, Task::phase}) {
    auto ranked = rank_candidates(sets, gt, task, top_k, &half_a);
    if (ranked.empty()) continue;
    std::vector<PredictionSet> pool;
    for (const auto& id : ranked)
      for (const auto& ps : sets)
        if (ps.config_id == id) pool.push_back(ps);
    EnsembleSelection sel = search_optimal_subset(pool, gt, task, &half_a);
    std::vector<const PredictionSet*> winners;
    for (const auto& id : sel.members)
      for (const auto& ps : pool)
        if (ps.config_id == id) winners.push_back(&ps);
    sel.evaluation_error = subset_error(winners, gt, task, &half_b);
    out.push_back(std::move(sel));
  }
  return out;
}

std::vector<EnsembleSelection> full_protocol(const std::vector<PredictionSet>& sets,
                                             const GroundTruth& gt, int top_k) {
  std::vector<EnsembleSelection> out;
  for (Task task : {Task::areas, Task::dims, Task::rwt, Task::phase}) {
    auto ranked = rank_candidates(sets, gt, task, top_k);
    if (ranked.empty()) continue;
    std::vector<PredictionSet> pool;
    for (const auto& id : ranked)
      for (const auto& ps : sets)
        if (ps.config_id == id) pool.push_back(ps);
    out.push_back(search_optimal_subset(pool, gt, task));
  }
  return out;
}

PredictionSet average_predictions(const std::vector<const PredictionSet*>& sets,
                                  const std::string& out_id) {
  if (sets.empty()) throw BadInput("nothing to average");
  PredictionSet out;
  out.config_id = out_id;
  const auto& base = sets[0]->rows;
  for (std::size_t i = 0; i < base.size(); ++i) {
    PredictionRow row = base[i];
    row.fold = -1;
    for (std::size_t s = 1; s < sets.size(); ++s) {
      const auto& r = sets[s]->rows[i];
      if (r.patient != row.patient || r.frame != row.frame)
        throw BadInput("prediction sets are not aligned");
      row.has_reg = row.has_reg && r.has_reg;
      row.has_phase = row.has_phase && r.has_phase;
      for (std::size_t k = 0; k < 11; ++k) row.reg[k] += r.reg[k];
      row.p_systole += r.p_systole;
      row.p_diastole += r.p_diastole;
    }
    double inv = 1.0 / static_cast<double>(sets.size());
    for (auto& v : row.reg) v *= inv;
    row.p_systole *= inv;
    row.p_diastole *= inv;
    out.rows.push_back(row);
  }
  return out;
}

PredictionSet ensemble_predict(const EnsembleSelection& sel, const ConfigPredictor& predictor) {
  if (sel.members.empty()) throw BadInput("empty ensemble selection");
  std::vector<PredictionSet> member_sets;
  for (const auto& id : sel.members) member_sets.push_back(predictor(id));
  std::vector<const PredictionSet*> ptrs;
  for (const auto& ps : member_sets) ptrs.push_back(&ps);
  return average_predictions(ptrs, std::string("ensemble-") + evaluate::task_name(sel.task));
}

}  // namespace lvq::ensemble
