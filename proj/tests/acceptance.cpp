// Acceptance run: one PASS/FAIL line per criterion 1-10.
//
// Usage: acceptance [criterion numbers...]   (default: all)
// Exit status is 0 only when every selected criterion passes.

#include "geometry_properties.hpp"
#include "model_gradcheck.hpp"
#include "objective_oracle.hpp"
#include "retrieval_fixture.hpp"
#include "support.hpp"

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace hhch;
using namespace hhch::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Desk-scale ablation setup: 8 superclasses x 4 classes, 64-d features,
// 2000 train / 400 query, 16-bit codes, 30 epochs, library defaults otherwise.
// Hierarchy counts follow the planted class structure.
constexpr std::uint64_t kSeeds = 5;

SynthConfig ablation_data(std::uint64_t seed) {
  SynthConfig s;
  s.seed = seed;
  return s;
}

TrainConfig ablation_config(std::uint64_t seed, Objective objective, Metric metric = Metric::hyperbolic,
                            double lambda = 0.01) {
  TrainConfig c;
  c.epochs = 30;
  c.shape.code_bits = 16;
  c.cluster.counts = {32, 8};
  c.loss.objective = objective;
  c.loss.metric = metric;
  c.loss.lambda = lambda;
  c.seed = seed;
  c.log_timing = false;
  return c;
}

struct RunRecord {
  double map = 0.0;
  double mean_abs_code = 0.0;
  std::string model;
  std::string log;
};

RunRecord run_ablation(std::uint64_t seed, const TrainConfig& cfg) {
  const SynthData data = make_synthetic(ablation_data(seed));
  const auto r = train({data.train.features, data.train.labels}, cfg);
  RunRecord out;
  out.map = evaluate_map(r.model, data.train.features, data.train.labels, EvalSplit{data.query.features, data.query.labels}, 100);
  out.mean_abs_code = encode(r.model, data.train.features).cwiseAbs().mean();
  std::stringstream ms;
  save_model(r.model, ms);
  out.model = ms.str();
  for (const auto& m : r.log) out.log += metrics_record(m).dump() + "\n";
  return out;
}

// Criterion 6 runs are shared with 7, 8 and 10.
std::map<std::pair<Objective, std::uint64_t>, RunRecord> ablation_runs;
double ablation_seconds = 0.0;

void ensure_ablation() {
  if (!ablation_runs.empty()) return;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    for (Objective o : {Objective::full, Objective::hic, Objective::ic, Objective::hpc, Objective::pc}) {
      ablation_runs[{o, seed}] = run_ablation(seed, ablation_config(seed, o));
    }
  }
  ablation_seconds = seconds_since(start);
}

double median_map(Objective o) {
  std::vector<double> v;
  for (std::uint64_t s = 0; s < kSeeds; ++s) v.push_back(ablation_runs.at({o, s}).map);
  return median(v);
}

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string worst;
  double worst_ratio = 0.0;
  for (double c : {0.01, 0.1, 1.0}) {
    for (const auto& p : geometry_invariants(c, 1000, 1)) {
      ok = ok && p.ok();
      const double ratio = p.tolerance > 0 ? p.worst / p.tolerance : (p.worst > 0 ? INFINITY : 0.0);
      if (ratio >= worst_ratio) {
        worst_ratio = ratio;
        worst = fmt("%s at c=%g: %.3g (tol %.0e)", p.name.c_str(), c, p.worst, p.tolerance);
      }
    }
  }
  const double t = seconds_since(start);
  return {ok && t < 10.0, fmt("16 invariants x 1000 cases x 3 curvatures; tightest %s; %.2f s (< 10 s)", worst.c_str(), t)};
}

Outcome criterion2() {
  const auto start = std::chrono::steady_clock::now();
  const double e = euclidean_limit_error(1e-6, 100, 2);
  const double t = seconds_since(start);
  return {e <= 1e-3 && t < 1.0, fmt("c=1e-6, 100 pairs: worst relative gap %.3g (<= 1e-3); %.3f s (< 1 s)", e, t)};
}

Outcome criterion3() {
  const auto start = std::chrono::steady_clock::now();
  const double e = loss_oracle_worst(100, 3);
  const double t = seconds_since(start);
  return {e <= 1e-9 && t < 30.0, fmt("100 random batches: worst relative error %.3g (<= 1e-9); %.2f s (< 30 s)", e, t)};
}

Outcome criterion4() {
  const auto start = std::chrono::steady_clock::now();
  double worst_max = 0.0, worst_median = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = model_gradient_check(random_grad_problem(seed));
    worst_max = std::max(worst_max, r.max_rel);
    worst_median = std::max(worst_median, r.median_rel);
  }
  const double t = seconds_since(start);
  return {worst_max <= 1e-2 && worst_median <= 1e-4 && t < 60.0,
          fmt("20 configurations: worst max rel %.3g (<= 1e-2), worst median rel %.3g (<= 1e-4); %.2f s (< 60 s)",
              worst_max, worst_median, t)};
}

Outcome criterion5() {
  const auto start = std::chrono::steady_clock::now();
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // 4 x 3 clusters of 40 points; subcluster radius 0.25 vs spread 0.02.
    const auto p = planted_hierarchy(1000 + seed, 4, 3, 40, 0.1);
    const auto h = hierarchical_kmeans(p.points, Curvature(0.1), ClusterConfig{{12, 4}, 30, 1e-4, seed});
    std::vector<std::size_t> top(static_cast<std::size_t>(p.points.rows()));
    for (std::size_t i = 0; i < top.size(); ++i) top[i] = h.ancestor(i, 2);
    if (adjusted_rand_index(h.instance_parent, p.sub) == 1.0 && adjusted_rand_index(top, p.super) == 1.0) ++successes;
  }
  const double t = seconds_since(start);
  return {successes >= 9 && t < 30.0, fmt("480 points, counts [12, 4]: %d/10 seeds exact (>= 9); %.2f s (< 30 s)", successes, t)};
}

Outcome criterion6() {
  ensure_ablation();
  const double full = median_map(Objective::full), hic = median_map(Objective::hic), ic = median_map(Objective::ic);
  const double hpc = median_map(Objective::hpc), pc = median_map(Objective::pc);
  const bool order = full >= hic && hic >= ic && full >= hpc && hpc >= pc;
  const bool margin = full - ic >= 0.02;
  return {order && margin && ablation_seconds <= 300.0,
          fmt("median mAP@100 full %.4f hic %.4f ic %.4f hpc %.4f pc %.4f; full>=hic>=ic %s, full>=hpc>=pc %s, "
              "full-ic %.4f (>= 0.02); %.1f s (<= 300 s)",
              full, hic, ic, hpc, pc, full >= hic && hic >= ic ? "yes" : "no", full >= hpc && hpc >= pc ? "yes" : "no",
              full - ic, ablation_seconds)};
}

Outcome criterion7() {
  ensure_ablation();
  std::vector<double> cosine;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    cosine.push_back(run_ablation(s, ablation_config(s, Objective::full, Metric::cosine)).map);
  }
  const double hyp = median_map(Objective::full), cos = median(cosine);
  return {hyp >= cos - 0.01, fmt("median mAP@100 hyperbolic %.4f vs cosine %.4f (>= cosine - 0.01); strictly better: %s",
                                 hyp, cos, hyp > cos ? "yes" : "no")};
}

Outcome criterion8() {
  ensure_ablation();
  double with = 1.0, without = 0.0;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    with = std::min(with, ablation_runs.at({Objective::full, s}).mean_abs_code);
    without = std::max(without, run_ablation(s, ablation_config(s, Objective::full, Metric::hyperbolic, 0.0)).mean_abs_code);
  }
  return {with >= 0.9 && without < 0.9,
          fmt("mean |code| over train set, 5 seeds: lambda=0.01 min %.4f (>= 0.9), lambda=0 max %.4f (< 0.9)", with, without)};
}

Outcome criterion9() {
  const auto start = std::chrono::steady_clock::now();
  const auto s = five_item_fixture();
  const FixtureExpectations want;
  const std::vector<std::size_t> ns{1, 2, 3, 5};
  const auto p = precision_at_n(s, ns);
  const auto d = intra_inter_distances(s);
  // 5/6 and 2/3 are not representable; "exact" means within 4 ulp of the
  // correctly rounded fraction, the same rule as gtest's DOUBLE_EQ.
  auto same = [](double got, double want) {
    const auto a = std::bit_cast<std::int64_t>(got), b = std::bit_cast<std::int64_t>(want);
    return (a >= 0) == (b >= 0) && std::llabs(a - b) <= 4;
  };
  bool ok = same(map_at_k(s, 5), want.map5) && same(precision_at_radius2(s), want.p_radius2) &&
            d.intra == want.d_intra && d.inter == want.d_inter;
  for (int i = 0; i < 4; ++i) ok = ok && same(p[static_cast<std::size_t>(i)], want.p_at[i]);
  const double t = seconds_since(start);
  return {ok && t < 1.0, fmt("mAP@5 %.6f (5/6), P@{1,2,3,5} %.4f %.4f %.4f %.4f, P@H<=2 %.4f, d_intra %.1f, d_inter %.1f; "
                             "values within 4 ulp; %.4f s (< 1 s)",
                             map_at_k(s, 5), p[0], p[1], p[2], p[3], precision_at_radius2(s), d.intra, d.inter, t)};
}

Outcome criterion10() {
  ensure_ablation();
  // Second run of every criterion-6 objective at seed 0.
  int identical = 0;
  for (Objective o : {Objective::full, Objective::hic, Objective::ic, Objective::hpc, Objective::pc}) {
    const auto again = run_ablation(0, ablation_config(0, o));
    const auto& first = ablation_runs.at({o, 0});
    if (again.model == first.model && again.log == first.log) ++identical;
  }
  return {identical == 5, fmt("seed 0 rerun of all 5 objectives: %d/5 byte-identical model files and metrics logs", identical)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9, criterion10};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  for (int k = 1; k <= 10; ++k) {
    if (!selected.empty() && !selected.count(k)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(k - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
