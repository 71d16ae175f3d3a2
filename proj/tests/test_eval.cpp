#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "rpf/eval.hpp"
#include "rpf/train.hpp"

using namespace rpf;

namespace {

TrialResult make_trial(int32_t d0, int32_t df, int executed) {
  TrialResult r;
  r.initial_dist = d0;
  r.shortest = d0;
  r.final_dist = df;
  r.executed_steps = executed;
  r.success = df >= 0 && df <= std::max(2.0, 0.1 * d0);
  r.valid = true;
  return r;
}

class StayAgent final : public Agent {
 public:
  void reset(const MemorySpec&) override {}
  Action act(const Observation&) override { return Action::Stay; }
};

TrialSetup setup_for(std::uint64_t world_seed) {
  RunConfig cfg;
  cfg.traj_len = 10;
  TrialSetup s;
  for (std::uint64_t k = 0; k < 32 && !s.valid; ++k)
    s = make_trial_setup(cfg, world_seed + k, derive_seed(8, k), derive_seed(8, 0xC0 + k));
  REQUIRE(s.valid);
  return s;
}

}  // namespace

TEST_CASE("success thresholds at d0 in {10, 20, 30} are {2, 2, 3}") {
  CHECK(make_trial(10, 0, 1).success_threshold() == doctest::Approx(2.0));
  CHECK(make_trial(20, 0, 1).success_threshold() == doctest::Approx(2.0));
  CHECK(make_trial(30, 0, 1).success_threshold() == doctest::Approx(3.0));

  // Boundary behavior: d_f equal to the threshold succeeds, one past fails.
  CHECK(make_trial(30, 3, 1).success);
  CHECK_FALSE(make_trial(30, 4, 1).success);
  CHECK(make_trial(10, 2, 1).success);
  CHECK_FALSE(make_trial(10, 3, 1).success);
}

TEST_CASE("metrics agree exactly with a brute-force oracle on 50 random trial sets") {
  Rng rng = make_rng(42, 0);
  std::uniform_int_distribution<int> ud0(5, 40), usize(3, 25);
  std::uniform_real_distribution<double> uf(0.0, 1.2), up(0.8, 3.0);
  for (int set = 0; set < 50; ++set) {
    std::vector<TrialResult> trials;
    int n = usize(rng);
    for (int i = 0; i < n; ++i) {
      int d0 = ud0(rng);
      int df = static_cast<int>(uf(rng) * d0);
      int p = static_cast<int>(up(rng) * d0);
      trials.push_back(make_trial(d0, df, p));
    }

    // Independent recomputation from the definitions.
    double want_sr = 0, want_spl = 0;
    std::vector<double> nds;
    for (const auto& t : trials) {
      bool succ = t.final_dist <= std::max(2.0, 0.1 * t.initial_dist);
      want_sr += succ ? 1.0 : 0.0;
      if (succ) want_spl += double(t.shortest) / std::max(t.executed_steps, int(t.shortest));
      nds.push_back(double(t.final_dist) / double(t.initial_dist));
    }
    want_sr /= n;
    want_spl /= n;
    std::sort(nds.begin(), nds.end());
    double want_med = n % 2 ? nds[n / 2] : 0.5 * (nds[n / 2 - 1] + nds[n / 2]);

    CHECK(success_rate(trials) == doctest::Approx(want_sr).epsilon(1e-12));
    CHECK(spl(trials) == doctest::Approx(want_spl).epsilon(1e-12));
    CHECK(median_norm_dist(trials) == doctest::Approx(want_med).epsilon(1e-12));

    // Report invariants.
    MetricsReport rep = compute_metrics(trials);
    CHECK(rep.spl <= rep.success + 1e-12);
    CHECK(rep.success >= 0.0);
    CHECK(rep.success <= 1.0);
    CHECK(rep.success_lo <= rep.success + 1e-12);
    CHECK(rep.success_hi >= rep.success - 1e-12);
    CHECK(rep.n_trials == n);
  }
}

TEST_CASE("spl closed forms") {
  // All successes along shortest paths -> 1.
  std::vector<TrialResult> best = {make_trial(10, 0, 10), make_trial(20, 1, 20)};
  CHECK(spl(best) == doctest::Approx(1.0));

  // All failures -> 0.
  std::vector<TrialResult> worst = {make_trial(20, 15, 20), make_trial(30, 30, 5)};
  CHECK(spl(worst) == doctest::Approx(0.0));

  // Single success with p = 2l -> 0.5.
  std::vector<TrialResult> half = {make_trial(10, 0, 20)};
  CHECK(spl(half) == doctest::Approx(0.5));

  // Success with p < l never exceeds 1 (max(p, l) in the denominator).
  CHECK(spl({make_trial(10, 0, 3)}) == doctest::Approx(1.0));
}

TEST_CASE("median normalized distance of an all-success set is small") {
  std::vector<TrialResult> trials;
  Rng rng = make_rng(5, 5);
  std::uniform_int_distribution<int> ud0(10, 30);
  int32_t min_d0 = 1000;
  for (int i = 0; i < 25; ++i) {
    int d0 = ud0(rng);
    min_d0 = std::min<int32_t>(min_d0, d0);
    trials.push_back(make_trial(d0, std::min(2, d0 / 10), 2 * d0));
    REQUIRE(trials.back().success);
  }
  CHECK(median_norm_dist(trials) <= std::max(2.0, 0.1 * min_d0) / double(min_d0));
}

TEST_CASE("bootstrap CI: zero width on constants, covers estimate, binomial width") {
  std::vector<double> same(100, 0.7);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  auto [lo0, hi0] = bootstrap_ci(same, mean, 1000, 0.95, 7);
  CHECK(lo0 == doctest::Approx(0.7));
  CHECK(hi0 == doctest::Approx(0.7));

  // Interval contains the point estimate.
  Rng rng = make_rng(1234, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> vals;
  for (int i = 0; i < 200; ++i) vals.push_back(u(rng));
  double est = mean(vals);
  auto [lo1, hi1] = bootstrap_ci(vals, mean, 1000, 0.95, 7);
  CHECK(lo1 <= est);
  CHECK(hi1 >= est);

  // 500 Bernoulli(0.5) trials: width ~ 2 * 1.96 * sqrt(0.25/500) = 0.0877.
  std::vector<double> bern;
  for (int i = 0; i < 500; ++i) bern.push_back(u(rng) < 0.5 ? 1.0 : 0.0);
  auto [lo2, hi2] = bootstrap_ci(bern, mean, 1000, 0.95, 7);
  double width = hi2 - lo2;
  CHECK(width > 0.0877 * 0.7);
  CHECK(width < 0.0877 * 1.3);
}

TEST_CASE("open-loop noiseless trial: exact arrival with SPL term ~1") {
  for (std::uint64_t ws : {200, 230, 260}) {
    TrialSetup s = setup_for(ws);
    OpenLoopAgent agent;
    TrialResult r = run_trial(s, agent, 0.0, 40, 3);
    REQUIRE(r.valid);
    CHECK(r.success);
    CHECK(r.final_dist == 0);
    // The demo holds a 0.6 m safety clearance, so its replay can be slightly
    // longer than the unconstrained geodesic the SPL denominator uses.
    CHECK(r.spl_term() <= 1.0);
    CHECK(r.spl_term() >= double(r.shortest) / (r.shortest + 2.0));
    CHECK(r.collisions == 0);
  }
}

TEST_CASE("stay-only agent: goes nowhere, fails, SPL 0") {
  TrialSetup s = setup_for(200);
  StayAgent agent;
  TrialResult r = run_trial(s, agent, 0.2, 40, 3);
  REQUIRE(r.valid);
  CHECK(r.final_dist == r.initial_dist);
  CHECK(r.executed_steps == 0);
  REQUIRE(r.initial_dist > r.success_threshold());
  CHECK_FALSE(r.success);
  CHECK(r.spl_term() == doctest::Approx(0.0));
}

TEST_CASE("evaluate: deterministic across runs and worker counts") {
  RunConfig cfg;
  cfg.traj_len = 8;
  cfg.horizon = 12;
  ParamMap none;  // open loop has no parameters
  cfg.kind = PolicyKind::OpenLoop;
  EvalOutcome a = evaluate(cfg, none, 12, 99, 1);
  EvalOutcome b = evaluate(cfg, none, 12, 99, 1);
  EvalOutcome c = evaluate(cfg, none, 12, 99, 3);
  REQUIRE(a.trials.size() == 12);
  REQUIRE(b.trials.size() == 12);
  REQUIRE(c.trials.size() == 12);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    CHECK(a.trials[i].initial_dist == b.trials[i].initial_dist);
    CHECK(a.trials[i].final_dist == b.trials[i].final_dist);
    CHECK(a.trials[i].executed_steps == b.trials[i].executed_steps);
    CHECK(a.trials[i].initial_dist == c.trials[i].initial_dist);
    CHECK(a.trials[i].final_dist == c.trials[i].final_dist);
    CHECK(a.trials[i].executed_steps == c.trials[i].executed_steps);
  }
}

TEST_CASE("sweep csv schema and axis application") {
  std::vector<SweepPoint> points(2);
  points[0].value = 0.0;
  points[0].report.success = 1;
  points[0].report.n_trials = 10;
  points[1].value = 0.1;
  points[1].report.n_trials = 10;
  std::string csv = sweep_csv(points);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "axis_value,metric,estimate,ci_low,ci_high,n");
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].find("success_rate") != std::string::npos);
  CHECK(rows[1].find("spl") != std::string::npos);
  CHECK(rows[2].find("median_norm_dist") != std::string::npos);

  RunConfig base;
  CHECK(apply_sweep_value(base, SweepAxis::Noise, 0.4).noise == doctest::Approx(0.4));
  CHECK(apply_sweep_value(base, SweepAxis::Clearance, 0.3).clearance == doctest::Approx(0.3));
  RunConfig ch = apply_sweep_value(base, SweepAxis::Change, 0.7);
  CHECK(ch.change_enabled);
  CHECK(ch.r_exec == doctest::Approx(0.7));
  CHECK(ch.r_demo == doctest::Approx(base.r_demo));
  RunConfig longer = apply_sweep_value(base, SweepAxis::Length, 2.0 * base.traj_len);
  CHECK(longer.traj_len == 2 * base.traj_len);
  CHECK(longer.horizon == 2 * base.horizon);
  CHECK(longer.world.grid_w == 2 * base.world.grid_w);
  CHECK(longer.world.grid_h == 2 * base.world.grid_h);
  CHECK(longer.world.rooms == base.world.rooms);
  CHECK(longer.world.door_width == 2 * base.world.door_width);
  CHECK(longer.world.object_count == 4 * base.world.object_count);
  RunConfig shorter = apply_sweep_value(base, SweepAxis::Length, 0.5 * base.traj_len);
  CHECK(shorter.world.grid_w == base.world.grid_w);
}

TEST_CASE("render_topview: valid SVG, deterministic, one polyline per rollout") {
  TrialSetup s = setup_for(200);

  std::string base = render_topview(s.exec_world, s.demo, {});
  CHECK(base.rfind("<svg", 0) == 0);
  CHECK(base.find("</svg>") != std::string::npos);
  CHECK(base.find("class=\"reference\"") != std::string::npos);
  CHECK(base == render_topview(s.exec_world, s.demo, {}));

  std::vector<TrajectoryTrace> rollouts(3);
  rollouts[0] = {"open_loop", s.demo.poses};
  rollouts[1] = {"rpf", s.demo.poses};
  rollouts[2] = {"rpf", s.demo.poses};
  std::string svg = render_topview(s.exec_world, s.demo, rollouts);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0, at = 0;
    while ((at = svg.find(needle, at)) != std::string::npos) {
      ++n;
      at += needle.size();
    }
    return n;
  };
  CHECK(count("class=\"open_loop\"") == 1);
  CHECK(count("class=\"rpf\"") == 2);
  CHECK(svg.size() > base.size());
}
