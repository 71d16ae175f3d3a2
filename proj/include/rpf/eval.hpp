#pragma once

// Trial harness and metrics: success rate, SPL, median normalized distance,
// percentile-bootstrap confidence intervals, generalization sweeps, and
// top-view SVG rendering.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rpf/common.hpp"
#include "rpf/config.hpp"
#include "rpf/envgen.hpp"
#include "rpf/policy.hpp"
#include "rpf/sim.hpp"

namespace rpf {

struct TrialResult {
  int32_t initial_dist = 0;   // geodesic steps at start
  int32_t final_dist = 0;     // geodesic steps at episode end; -1 if unreachable
  int executed_steps = 0;     // non-Stay actions
  int32_t shortest = 0;       // = initial_dist
  bool success = false;
  int collisions = 0;
  bool valid = false;

  double success_threshold() const { return std::max(2.0, 0.1 * initial_dist); }

  double norm_dist() const {
    if (initial_dist <= 0) return 1e9;
    return final_dist < 0 ? 1e9 : static_cast<double>(final_dist) / initial_dist;
  }

  double spl_term() const {
    if (!success) return 0.0;
    int denom = std::max(executed_steps, static_cast<int>(shortest));
    return denom > 0 ? static_cast<double>(shortest) / denom : 1.0;
  }
};

// ---------------------------------------------------------------------------
// Metric aggregates

inline double success_rate(const std::vector<TrialResult>& trials) {
  if (trials.empty()) return 0.0;
  double s = 0;
  for (const auto& t : trials) s += t.success ? 1.0 : 0.0;
  return s / trials.size();
}

inline double spl(const std::vector<TrialResult>& trials) {
  if (trials.empty()) return 0.0;
  double s = 0;
  for (const auto& t : trials) s += t.spl_term();
  return s / trials.size();
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_norm_dist(const std::vector<TrialResult>& trials) {
  std::vector<double> v;
  v.reserve(trials.size());
  for (const auto& t : trials) v.push_back(t.norm_dist());
  return median_of(v);
}

// Percentile bootstrap over trial resamples.
inline std::pair<double, double> bootstrap_ci(
    const std::vector<double>& values, const std::function<double(const std::vector<double>&)>& fn,
    int B = 1000, double level = 0.95, std::uint64_t seed = 7) {
  check(!values.empty(), "bootstrap_ci: empty sample");
  Rng rng = make_rng(seed, 0xB0);
  std::uniform_int_distribution<size_t> pick(0, values.size() - 1);
  std::vector<double> stats(B);
  std::vector<double> sample(values.size());
  for (int b = 0; b < B; ++b) {
    for (auto& s : sample) s = values[pick(rng)];
    stats[b] = fn(sample);
  }
  std::sort(stats.begin(), stats.end());
  double alpha = (1.0 - level) / 2.0;
  int lo = static_cast<int>(std::floor(alpha * (B - 1)));
  int hi = static_cast<int>(std::ceil((1.0 - alpha) * (B - 1)));
  return {stats[lo], stats[hi]};
}

struct MetricsReport {
  double success = 0, success_lo = 0, success_hi = 0;
  double spl = 0, spl_lo = 0, spl_hi = 0;
  double median_nd = 0, median_nd_lo = 0, median_nd_hi = 0;
  int n_trials = 0;
};

inline MetricsReport compute_metrics(const std::vector<TrialResult>& trials,
                                     std::uint64_t seed = 7) {
  MetricsReport r;
  r.n_trials = static_cast<int>(trials.size());
  if (trials.empty()) return r;
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  std::vector<double> succ, terms, nds;
  for (const auto& t : trials) {
    succ.push_back(t.success ? 1.0 : 0.0);
    terms.push_back(t.spl_term());
    nds.push_back(t.norm_dist());
  }
  r.success = success_rate(trials);
  r.spl = spl(trials);
  r.median_nd = median_norm_dist(trials);
  std::tie(r.success_lo, r.success_hi) = bootstrap_ci(succ, mean, 1000, 0.95, seed);
  std::tie(r.spl_lo, r.spl_hi) = bootstrap_ci(terms, mean, 1000, 0.95, seed + 1);
  std::tie(r.median_nd_lo, r.median_nd_hi) = bootstrap_ci(nds, median_of, 1000, 0.95, seed + 2);
  return r;
}

// ---------------------------------------------------------------------------
// Trial setup and rollout

struct TrialSetup {
  World demo_world, exec_world;
  Demonstration demo;       // forward demonstration
  Demonstration reference;  // direction actually executed (reversed for homing)
  MemorySpec memory;
  Pose start;
  LatticeState goal{};
  std::vector<int32_t> field;  // exec-world distance field to goal cell
  bool valid = false;
};

// Builds one trial (or training episode) environment. The execution world
// equals the demonstration world unless cfg.change_enabled, in which case
// it is an independent object-removal variant of the same base world.
inline TrialSetup make_trial_setup(const RunConfig& cfg, std::uint64_t world_seed,
                                   std::uint64_t demo_seed, std::uint64_t change_seed) {
  TrialSetup s;
  try {
    World base = generate_world(world_seed, cfg.world);
    Rng demo_rng = make_rng(change_seed, 0xD1);
    s.demo_world = apply_change(base, cfg.r_demo, demo_rng);
    if (cfg.change_enabled) {
      Rng exec_rng = make_rng(change_seed, 0xE2);
      s.exec_world = apply_change(base, cfg.r_exec, exec_rng);
    } else {
      s.exec_world = s.demo_world;
    }
    s.demo = sample_demonstration(s.demo_world, demo_seed, cfg.traj_len, cfg.clearance);
    s.demo.world_seed = world_seed;
    s.demo.change_r = cfg.r_demo;
  } catch (const GenerationError&) {
    return s;
  }

  ModelConfig m = cfg.model();
  bool use_visual = m.memory_visual() || cfg.kind == PolicyKind::NearestNeighbor;
  if (cfg.task == Task::Homing) {
    s.reference = reverse_demonstration(s.demo, s.demo_world);
    s.memory = build_memory(s.reference, use_visual, m.synthesize(), &s.demo);
  } else {
    s.reference = s.demo;
    s.memory = build_memory(s.reference, use_visual, false);
  }
  s.start = s.reference.poses.front();
  const Pose& goal_pose = s.reference.poses.back();
  s.goal = LatticeState{s.exec_world.cell_of(goal_pose.x), s.exec_world.cell_of(goal_pose.y), 0};
  Pose gc = lattice_pose(s.goal);
  if (!s.exec_world.disk_free(gc.x, gc.y) || !s.exec_world.disk_free(s.start.x, s.start.y))
    return s;  // change variant blocked the endpoints; caller resamples
  s.field = distance_field(s.exec_world, s.goal);
  if (distance_at(s.exec_world, s.field, s.start) <= 0) return s;
  s.valid = true;
  return s;
}

// Fixed-horizon rollout; collisions recorded, not fatal. The agent sees
// only observations; distances come from the execution world's field.
inline TrialResult run_trial(const TrialSetup& setup, Agent& agent, double noise_level,
                             int horizon, std::uint64_t noise_seed) {
  TrialResult r;
  // The start is an exact lattice pose, so read its own cell rather than the
  // 2x2 neighborhood minimum (which can borrow a one-step-closer neighbor and
  // understate the shortest path length).
  LatticeState s0{static_cast<int>(setup.start.x / kCellSize),
                  static_cast<int>(setup.start.y / kCellSize),
                  static_cast<int>(std::llround(setup.start.theta / kRotateDeg)) % kThetaBins};
  int32_t d0 = setup.exec_world.in_bounds(s0.i, s0.j)
                   ? setup.field[lattice_index(setup.exec_world, s0)]
                   : kUnreachable;
  if (d0 == kUnreachable) d0 = distance_at(setup.exec_world, setup.field, setup.start);
  if (d0 <= 0) return r;
  r.initial_dist = d0;
  r.shortest = d0;
  NoiseSpec noise;
  noise.level = noise_level;
  Rng rng = make_rng(noise_seed, 0x4E);
  agent.reset(setup.memory);
  Pose pose = setup.start;
  for (int t = 0; t < horizon; ++t) {
    Observation obs = render(setup.exec_world, pose);
    Action a = agent.act(obs);
    if (a != Action::Stay) ++r.executed_steps;
    StepResult sr = step(setup.exec_world, pose, a, noise, rng);
    if (sr.blocked) ++r.collisions;
    pose = sr.pose;
  }
  // Same convention as d0: prefer the exact lattice cell when the pose sits
  // on one (noiseless rollouts stay on the lattice), fall back to the robust
  // 2x2 neighborhood read for off-lattice poses.
  LatticeState sf{static_cast<int>(pose.x / kCellSize), static_cast<int>(pose.y / kCellSize),
                  static_cast<int>(std::llround(pose.theta / kRotateDeg)) % kThetaBins};
  bool on_lattice =
      std::abs(pose.x / kCellSize - (sf.i + 0.5)) < 1e-9 &&
      std::abs(pose.y / kCellSize - (sf.j + 0.5)) < 1e-9;
  if (on_lattice && setup.exec_world.in_bounds(sf.i, sf.j) &&
      setup.field[lattice_index(setup.exec_world, sf)] != kUnreachable)
    r.final_dist = setup.field[lattice_index(setup.exec_world, sf)];
  else
    r.final_dist = distance_at(setup.exec_world, setup.field, pose);
  r.success = r.final_dist >= 0 && r.final_dist <= r.success_threshold();
  r.valid = true;
  return r;
}

struct EvalOutcome {
  std::vector<TrialResult> trials;
  MetricsReport report;
  int errors = 0;  // trials that failed to generate after bounded retries
};

// Runs n trials on held-out seeds. Per-trial seeds derive from (root, index)
// so parallel and serial runs produce identical results.
inline EvalOutcome evaluate(const RunConfig& cfg, const ParamMap& params, int n_trials,
                            std::uint64_t root_seed, int workers = 1) {
  ModelConfig m = cfg.model();
  std::uint64_t range = cfg.test_hi - cfg.test_lo;
  check(range > 0, "empty test seed range");

  std::vector<TrialResult> slots(n_trials);
  std::atomic<int> next{0};
  auto worker = [&] {
    auto agent = make_agent(m, params);
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n_trials) break;
      TrialResult res;
      for (int attempt = 0; attempt < 12 && !res.valid; ++attempt) {
        std::uint64_t ws = cfg.test_lo +
                           (static_cast<std::uint64_t>(i) + attempt * 104729ULL) % range;
        std::uint64_t ds = derive_seed(root_seed, i * 131ULL + attempt);
        std::uint64_t cs = derive_seed(root_seed ^ 0x990055AAULL, i * 17ULL + attempt);
        TrialSetup setup = make_trial_setup(cfg, ws, ds, cs);
        if (!setup.valid) continue;
        res = run_trial(setup, *agent, cfg.noise, cfg.horizon, derive_seed(root_seed, i));
      }
      slots[i] = res;
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  EvalOutcome out;
  for (const auto& t : slots) {
    if (t.valid)
      out.trials.push_back(t);
    else
      ++out.errors;
  }
  out.report = compute_metrics(out.trials, derive_seed(root_seed, 0xC1));
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { Noise, Clearance, Length, Change };

inline const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::Noise: return "noise";
    case SweepAxis::Clearance: return "clearance";
    case SweepAxis::Length: return "length";
    case SweepAxis::Change: return "change";
  }
  return "?";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  for (SweepAxis a : {SweepAxis::Noise, SweepAxis::Clearance, SweepAxis::Length,
                      SweepAxis::Change})
    if (s == sweep_axis_name(a)) return a;
  throw ConfigError("unknown sweep axis: " + s);
}

inline RunConfig apply_sweep_value(RunConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::Noise:
      cfg.noise = value;
      break;
    case SweepAxis::Clearance:
      cfg.clearance = value;
      break;
    case SweepAxis::Length: {
      // Longer references need a proportionally larger arena: the sampler
      // requires a geodesic of length ~J, which is bounded by the room
      // diameter at the demo clearance. Lengths (grid, doors) scale
      // linearly, object count by area; room count stays fixed so room
      // diameters grow with J.
      double ratio = value / cfg.traj_len;
      cfg.traj_len = static_cast<int>(std::lround(value));
      cfg.horizon = static_cast<int>(std::lround(cfg.horizon * ratio));
      if (ratio > 1.0) {
        cfg.world.grid_w = static_cast<int>(std::lround(cfg.world.grid_w * ratio));
        cfg.world.grid_h = static_cast<int>(std::lround(cfg.world.grid_h * ratio));
        cfg.world.door_width = static_cast<int>(std::lround(cfg.world.door_width * ratio));
        cfg.world.object_count =
            static_cast<int>(std::lround(cfg.world.object_count * ratio * ratio));
      }
      break;
    }
    case SweepAxis::Change:
      cfg.change_enabled = true;
      cfg.r_exec = value;
      break;
  }
  return cfg;
}

struct SweepPoint {
  double value;
  MetricsReport report;
  int errors = 0;
};

// Policies are evaluated without retraining across the axis values.
inline std::vector<SweepPoint> sweep(const RunConfig& base, const ParamMap& params,
                                     SweepAxis axis, const std::vector<double>& values,
                                     int n_trials, std::uint64_t root_seed, int workers = 1) {
  std::vector<SweepPoint> points;
  for (double v : values) {
    RunConfig cfg = apply_sweep_value(base, axis, v);
    EvalOutcome out = evaluate(cfg, params, n_trials, root_seed, workers);
    points.push_back({v, out.report, out.errors});
    char buf[160];
    std::snprintf(buf, sizeof(buf), "sweep %s=%.3g success=%.3f spl=%.3f mnd=%.3f (n=%d)",
                  sweep_axis_name(axis), v, out.report.success, out.report.spl,
                  out.report.median_nd, out.report.n_trials);
    log_info(buf);
  }
  return points;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string csv = "axis_value,metric,estimate,ci_low,ci_high,n\n";
  char buf[256];
  for (const auto& p : points) {
    auto row = [&](const char* metric, double est, double lo, double hi) {
      std::snprintf(buf, sizeof(buf), "%.6g,%s,%.6f,%.6f,%.6f,%d\n", p.value, metric, est, lo,
                    hi, p.report.n_trials);
      csv += buf;
    };
    row("success_rate", p.report.success, p.report.success_lo, p.report.success_hi);
    row("spl", p.report.spl, p.report.spl_lo, p.report.spl_hi);
    row("median_norm_dist", p.report.median_nd, p.report.median_nd_lo, p.report.median_nd_hi);
  }
  return csv;
}

// Minimal line chart (one polyline per metric) for sweep results.
inline std::string sweep_plot_svg(const std::vector<SweepPoint>& points, const std::string& title) {
  const int W = 480, H = 320, M = 48;
  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%d\" "
                "height=\"%d\">\n<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n",
                W, H, W, H);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"20\" font-size=\"13\" text-anchor=\"middle\">%s</text>\n",
                W / 2, title.c_str());
  svg += buf;
  if (points.size() >= 2) {
    double x0 = points.front().value, x1 = points.back().value;
    if (x1 == x0) x1 = x0 + 1;
    auto px = [&](double v) { return M + (v - x0) / (x1 - x0) * (W - 2 * M); };
    auto py = [&](double v) { return H - M - std::clamp(v, 0.0, 1.0) * (H - 2 * M); };
    const char* colors[3] = {"#c0392b", "#2980b9", "#27ae60"};
    const char* names[3] = {"success_rate", "spl", "median_norm_dist"};
    for (int met = 0; met < 3; ++met) {
      std::string pts;
      for (const auto& p : points) {
        double v = met == 0 ? p.report.success : met == 1 ? p.report.spl : p.report.median_nd;
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(p.value), py(std::min(v, 1.0)));
        pts += buf;
      }
      std::snprintf(buf, sizeof(buf),
                    "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\" points=\"%s\"/>\n",
                    colors[met], pts.c_str());
      svg += buf;
      std::snprintf(buf, sizeof(buf),
                    "<text x=\"%d\" y=\"%d\" font-size=\"11\" fill=\"%s\">%s</text>\n", M,
                    H - 8 - met * 14, colors[met], names[met]);
      svg += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", M, H - M,
                  W - M, H - M);
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Top-view rendering

struct TrajectoryTrace {
  std::string policy;  // stroke class; "rpf" -> red, "open_loop" -> blue
  std::vector<Pose> poses;
};

// Occupancy in gray, objects by class color, reference in green, rollouts
// overlaid with per-policy stroke classes. Deterministic output.
inline std::string render_topview(const World& world, const Demonstration& demo,
                                  const std::vector<TrajectoryTrace>& rollouts) {
  const double px_per_m = 40.0;
  const int W = static_cast<int>(world.width() * kCellSize * px_per_m);
  const int H = static_cast<int>(world.height() * kCellSize * px_per_m);
  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"%d\" "
                "height=\"%d\" viewBox=\"0 0 %d %d\">\n",
                W, H, W, H);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double cs = kCellSize * px_per_m;
  for (int j = 0; j < world.height(); ++j) {
    for (int i = 0; i < world.width(); ++i) {
      uint8_t tg = world.tag(i, j);
      if (tg == kTagFree) continue;
      const char* fill = tg == kTagWall ? "#808080" : (tg == kTagObjA ? "#e67e22" : "#8e44ad");
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>\n",
                    i * cs, (world.height() - 1 - j) * cs, cs, cs, fill);
      svg += buf;
    }
  }
  auto polyline = [&](const std::vector<Pose>& poses, const char* stroke, const char* cls) {
    std::string pts;
    for (const auto& p : poses) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", p.x * px_per_m,
                    H - p.y * px_per_m);
      pts += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<polyline class=\"%s\" fill=\"none\" stroke=\"%s\" stroke-width=\"2\" "
                  "points=\"%s\"/>\n",
                  cls, stroke, pts.c_str());
    svg += buf;
  };
  polyline(demo.poses, "#27ae60", "reference");
  for (const auto& tr : rollouts) {
    const char* stroke = tr.policy == "open_loop" ? "#2980b9" : "#c0392b";
    polyline(tr.poses, stroke, tr.policy.c_str());
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace rpf
