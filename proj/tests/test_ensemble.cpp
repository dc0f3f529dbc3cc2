#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lvq/ensemble.hpp"
#include "lvq/rng.hpp"

using namespace lvq;
using ensemble::EnsembleSelection;
using evaluate::GroundTruth;
using evaluate::PredictionRow;
using evaluate::PredictionSet;
using evaluate::Task;

namespace {
// Synthetic CV predictions: n_patients x 20 frames, reg + phase.
struct Fixture {
  GroundTruth gt;
  std::vector<std::string> patients;

  explicit Fixture(int n_patients, std::uint64_t seed) {
    Rng rng(seed);
    for (int p = 0; p < n_patients; ++p) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "p%03d", p);
      patients.push_back(buf);
      std::vector<std::array<double, 11>> tg;
      std::vector<indices::Phase> ph;
      for (int t = 0; t < 20; ++t) {
        std::array<double, 11> tv{};
        tv[0] = rng.uniform(800, 2000);
        tv[1] = rng.uniform(800, 1800);
        for (int i = 2; i < 5; ++i) tv[static_cast<std::size_t>(i)] = rng.uniform(30, 50);
        for (int i = 5; i < 11; ++i) tv[static_cast<std::size_t>(i)] = rng.uniform(5, 15);
        tg.push_back(tv);
        ph.push_back(t < 9 ? indices::Phase::systole : indices::Phase::diastole);
      }
      gt.targets[buf] = tg;
      gt.phases[buf] = ph;
    }
  }

  // constant-offset configuration: pred = gt + offset on every regression
  // index; phase probability = accuracy-controlled
  PredictionSet offset_config(const std::string& id, double offset, double p_sys_correct,
                              std::uint64_t seed) const {
    Rng rng(seed);
    PredictionSet ps;
    ps.config_id = id;
    for (const auto& pid : patients) {
      const auto& tg = gt.targets.at(pid);
      const auto& ph = gt.phases.at(pid);
      for (int t = 0; t < 20; ++t) {
        PredictionRow r;
        r.patient = pid;
        r.frame = t;
        r.has_reg = true;
        for (std::size_t i = 0; i < 11; ++i) r.reg[i] = tg[static_cast<std::size_t>(t)][i] + offset;
        r.has_phase = true;
        double correct = rng.uniform() < p_sys_correct ? 0.9 : 0.1;
        bool sys = ph[static_cast<std::size_t>(t)] == indices::Phase::systole;
        r.p_systole = sys ? correct : 1.0 - correct;
        r.p_diastole = 1.0 - r.p_systole;
        r.fold = 0;
        ps.rows.push_back(r);
      }
    }
    ps.sort_rows();
    return ps;
  }
};

// Direct brute-force oracle over every non-empty subset.
std::pair<std::vector<std::string>, double> brute_force_best(
    const std::vector<PredictionSet>& pool, const GroundTruth& gt, Task task) {
  int m = static_cast<int>(pool.size());
  double best_err = 1e300;
  std::vector<std::string> best_ids;
  int best_count = 1 << 30;
  for (int bits = 1; bits < (1 << m); ++bits) {
    std::vector<const PredictionSet*> members;
    std::vector<std::string> ids;
    for (int i = 0; i < m; ++i)
      if (bits & (1 << i)) {
        members.push_back(&pool[static_cast<std::size_t>(i)]);
        ids.push_back(pool[static_cast<std::size_t>(i)].config_id);
      }
    double err = ensemble::subset_error(members, gt, task);
    int count = static_cast<int>(members.size());
    std::vector<std::string> sorted_ids = ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    std::vector<std::string> best_sorted = best_ids;
    std::sort(best_sorted.begin(), best_sorted.end());
    if (err < best_err || (err == best_err && count < best_count) ||
        (err == best_err && count == best_count && sorted_ids < best_sorted)) {
      best_err = err;
      best_ids = ids;
      best_count = count;
    }
  }
  return {best_ids, best_err};
}
}  // namespace

TEST_CASE("candidates rank by per-task error") {
  Fixture fx(6, 1);
  std::vector<PredictionSet> sets;
  sets.push_back(fx.offset_config("a", 150.0, 0.9, 10));
  sets.push_back(fx.offset_config("b", 120.0, 0.5, 11));
  sets.push_back(fx.offset_config("c", 130.0, 0.99, 12));
  auto ranked = ensemble::rank_candidates(sets, fx.gt, Task::areas, 20);
  CHECK(ranked == std::vector<std::string>{"b", "c", "a"});

  SUBCASE("k smaller than the pool truncates") {
    auto top2 = ensemble::rank_candidates(sets, fx.gt, Task::areas, 2);
    CHECK(top2 == std::vector<std::string>{"b", "c"});
  }
  SUBCASE("phase ranks by error rate, not regression error") {
    auto phase_rank = ensemble::rank_candidates(sets, fx.gt, Task::phase, 20);
    CHECK(phase_rank[0] == "c");  // highest phase accuracy
  }
}

TEST_CASE("exhaustive subset search with cancelling offsets") {
  Fixture fx(6, 2);
  std::vector<PredictionSet> pool;
  pool.push_back(fx.offset_config("a", 2.0, 0.9, 20));
  pool.push_back(fx.offset_config("b", -2.0, 0.9, 21));
  pool.push_back(fx.offset_config("c", 2.0, 0.9, 22));

  EnsembleSelection sel = ensemble::search_optimal_subset(pool, fx.gt, Task::areas);
  // {a,b} and {b,c} both hit MAE 0; lexicographic tie-break picks {a,b}
  CHECK(sel.members == std::vector<std::string>{"a", "b"});
  CHECK(sel.selection_error == 0.0);

  auto [oracle_ids, oracle_err] = brute_force_best(pool, fx.gt, Task::areas);
  CHECK(sel.members == oracle_ids);
  CHECK(sel.selection_error == oracle_err);
}

TEST_CASE("a perfect member dominates") {
  Fixture fx(6, 3);
  std::vector<PredictionSet> pool;
  pool.push_back(fx.offset_config("perfect", 0.0, 0.9, 30));
  pool.push_back(fx.offset_config("biased", 25.0, 0.9, 31));
  EnsembleSelection sel = ensemble::search_optimal_subset(pool, fx.gt, Task::areas);
  CHECK(sel.members == std::vector<std::string>{"perfect"});
  CHECK(sel.selection_error == 0.0);
}

TEST_CASE("ties prefer the smaller subset") {
  Fixture fx(6, 4);
  std::vector<PredictionSet> pool;
  pool.push_back(fx.offset_config("a", 0.0, 0.9, 40));
  pool.push_back(fx.offset_config("b", 0.0, 0.9, 41));  // duplicate of a
  EnsembleSelection sel = ensemble::search_optimal_subset(pool, fx.gt, Task::areas);
  CHECK(sel.members == std::vector<std::string>{"a"});
}

TEST_CASE("random subsets never beat the exhaustive optimum") {
  Fixture fx(8, 5);
  std::vector<PredictionSet> pool;
  Rng rng(50);
  for (int i = 0; i < 9; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "c%02d", i);
    pool.push_back(fx.offset_config(buf, rng.normal(0.0, 40.0), rng.uniform(0.6, 0.99),
                                    100 + static_cast<std::uint64_t>(i)));
  }
  for (Task task : {Task::areas, Task::dims, Task::rwt, Task::phase}) {
    EnsembleSelection sel = ensemble::search_optimal_subset(pool, fx.gt, task);

    // re-evaluating the stored subset reproduces the stored error bit for bit
    std::vector<const PredictionSet*> members;
    for (const auto& id : sel.members)
      for (const auto& ps : pool)
        if (ps.config_id == id) members.push_back(&ps);
    CHECK(ensemble::subset_error(members, fx.gt, task) == sel.selection_error);

    // dominance over the full average and every singleton
    std::vector<const PredictionSet*> all;
    for (const auto& ps : pool) all.push_back(&ps);
    CHECK(sel.selection_error <= ensemble::subset_error(all, fx.gt, task));
    for (const auto& ps : pool)
      CHECK(sel.selection_error <= ensemble::subset_error({&ps}, fx.gt, task));

    // 1000 random subsets
    Rng sub_rng(60);
    for (int trial = 0; trial < 1000; ++trial) {
      std::uint32_t bits =
          1 + static_cast<std::uint32_t>(sub_rng.below((1u << pool.size()) - 1));
      std::vector<const PredictionSet*> subset;
      for (std::size_t i = 0; i < pool.size(); ++i)
        if (bits & (1u << i)) subset.push_back(&pool[i]);
      CHECK(ensemble::subset_error(subset, fx.gt, task) >= sel.selection_error);
    }

    // determinism
    EnsembleSelection again = ensemble::search_optimal_subset(pool, fx.gt, task);
    CHECK(again.members == sel.members);
    CHECK(again.selection_error == sel.selection_error);
  }
}

TEST_CASE("more than 20 candidates overflow") {
  Fixture fx(6, 6);
  std::vector<PredictionSet> pool;
  for (int i = 0; i < 21; ++i)
    pool.push_back(fx.offset_config("c" + std::to_string(i), 1.0 * i, 0.9,
                                    static_cast<std::uint64_t>(i)));
  CHECK_THROWS_AS(ensemble::search_optimal_subset(pool, fx.gt, Task::areas), CandidateOverflow);
}

TEST_CASE("nested protocol separates selection and evaluation patients") {
  for (std::uint64_t run = 0; run < 20; ++run) {
    Fixture fx(12, 100 + run);
    data::FoldPlan plan = data::make_fold_plan(fx.patients, run);
    std::vector<PredictionSet> sets;
    Rng rng(run);
    for (int i = 0; i < 5; ++i)
      sets.push_back(fx.offset_config("c" + std::to_string(i), rng.normal(0.0, 30.0),
                                      rng.uniform(0.6, 0.95), run * 10 + static_cast<std::uint64_t>(i)));
    auto sels = ensemble::nested_protocol(sets, fx.gt, plan);
    REQUIRE(!sels.empty());

    // disjointness audit
    std::set<std::string> half_a, half_b;
    for (const auto& [id, h] : plan.half_of) (h == 0 ? half_a : half_b).insert(id);
    std::vector<std::string> overlap;
    std::set_intersection(half_a.begin(), half_a.end(), half_b.begin(), half_b.end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
    CHECK(half_a.size() + half_b.size() == fx.patients.size());
    for (const auto& sel : sels) {
      CHECK(!sel.members.empty());
      CHECK(sel.evaluation_error >= 0.0);
    }
  }
}

TEST_CASE("selection error understates evaluation error in expectation") {
  // Noisy configs make subset choice overfit the selection half.
  double mean_gap = 0.0;
  int runs = 24;
  for (int run = 0; run < runs; ++run) {
    Fixture fx(12, 300 + static_cast<std::uint64_t>(run));
    data::FoldPlan plan = data::make_fold_plan(fx.patients, static_cast<std::uint64_t>(run));
    std::vector<PredictionSet> sets;
    Rng rng(500 + static_cast<std::uint64_t>(run));
    for (int i = 0; i < 6; ++i) {
      PredictionSet ps = fx.offset_config("c" + std::to_string(i), 0.0, 0.8,
                                          static_cast<std::uint64_t>(run * 31 + i));
      // per-row noise so that subsets can overfit half A
      for (auto& r : ps.rows)
        for (auto& v : r.reg) v += rng.normal(0.0, 60.0);
      sets.push_back(std::move(ps));
    }
    auto sels = ensemble::nested_protocol(sets, fx.gt, plan);
    for (const auto& sel : sels)
      if (sel.task == Task::areas) mean_gap += sel.evaluation_error - sel.selection_error;
  }
  mean_gap /= runs;
  CHECK(mean_gap > 0.0);
}

TEST_CASE("degenerate pool of one configuration") {
  Fixture fx(10, 7);
  data::FoldPlan plan = data::make_fold_plan(fx.patients, 7);
  std::vector<PredictionSet> sets = {fx.offset_config("only", 12.0, 0.9, 70)};
  auto sels = ensemble::nested_protocol(sets, fx.gt, plan);
  for (const auto& sel : sels) {
    CHECK(sel.members == std::vector<std::string>{"only"});
    if (sel.task == Task::areas) {
      std::vector<std::string> half_a, half_b;
      for (const auto& [id, h] : plan.half_of) (h == 0 ? half_a : half_b).push_back(id);
      CHECK(sel.selection_error ==
            ensemble::subset_error({&sets[0]}, fx.gt, Task::areas, &half_a));
      CHECK(sel.evaluation_error ==
            ensemble::subset_error({&sets[0]}, fx.gt, Task::areas, &half_b));
    }
  }
}

TEST_CASE("ensemble prediction averages member tables") {
  Fixture fx(4, 8);
  PredictionSet plus = fx.offset_config("plus", 10.0, 0.9, 80);
  PredictionSet minus = fx.offset_config("minus", -10.0, 0.9, 81);

  EnsembleSelection sel;
  sel.task = Task::areas;
  sel.members = {"plus", "minus"};
  auto predictor = [&](const std::string& id) { return id == "plus" ? plus : minus; };
  PredictionSet ens = ensemble::ensemble_predict(sel, predictor);
  for (std::size_t i = 0; i < ens.rows.size(); ++i) {
    const auto& tg = fx.gt.targets.at(ens.rows[i].patient)[static_cast<std::size_t>(ens.rows[i].frame)];
    for (std::size_t k = 0; k < 11; ++k)
      CHECK(ens.rows[i].reg[k] == doctest::Approx(tg[k]).epsilon(1e-12));  // offsets cancel
  }

  SUBCASE("singleton ensembles equal the member") {
    EnsembleSelection one;
    one.task = Task::areas;
    one.members = {"plus"};
    PredictionSet e1 = ensemble::ensemble_predict(one, predictor);
    REQUIRE(e1.rows.size() == plus.rows.size());
    for (std::size_t i = 0; i < e1.rows.size(); ++i) CHECK(e1.rows[i].reg == plus.rows[i].reg);
  }
}

TEST_CASE("selection serialization round trip") {
  EnsembleSelection sel;
  sel.task = Task::rwt;
  sel.members = {"cfg-b", "cfg-a"};
  sel.selection_error = 1.25;
  sel.evaluation_error = 1.5;
  sel.pool_hash = "00ff00ff00ff00ff";
  EnsembleSelection back = EnsembleSelection::deserialize(sel.serialize());
  CHECK(back.task == Task::rwt);
  CHECK(back.members == sel.members);
  CHECK(back.selection_error == sel.selection_error);
  CHECK(back.evaluation_error == sel.evaluation_error);
  CHECK(back.pool_hash == sel.pool_hash);
}
