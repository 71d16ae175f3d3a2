#pragma once

// Procedural environments, geodesic distance oracle on the macro-action
// lattice, and demonstration-trajectory sampling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "rpf/common.hpp"
#include "rpf/sim.hpp"

namespace rpf {

constexpr int kThetaBins = 12;  // 30-degree heading bins

struct LatticeState {
  int i = 0, j = 0, tb = 0;
  bool operator==(const LatticeState& o) const { return i == o.i && j == o.j && tb == o.tb; }
};

inline int lattice_index(const World& w, const LatticeState& s) {
  return (s.j * w.width() + s.i) * kThetaBins + s.tb;
}

inline int lattice_state_count(const World& w) {
  return w.width() * w.height() * kThetaBins;
}

inline LatticeState quantize(const World& w, const Pose& p) {
  int tb = static_cast<int>(std::llround(p.theta / kRotateDeg)) % kThetaBins;
  return {w.cell_of(p.x), w.cell_of(p.y), tb};
}

inline Pose lattice_pose(const LatticeState& s) {
  return Pose((s.i + 0.5) * kCellSize, (s.j + 0.5) * kCellSize, s.tb * kRotateDeg);
}

// ---------------------------------------------------------------------------
// Clearance (exact euclidean distance transform on cell centers)

namespace detail {

// Felzenszwalb-Huttenlocher 1D squared distance transform.
inline void edt_1d(const std::vector<double>& f, std::vector<double>* d) {
  int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  d->resize(n);
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    (*d)[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace detail

// Per-cell distance (meters) from the cell center to the nearest occupied
// cell center. Occupied cells get 0.
inline std::vector<double> clearance_field(const World& w) {
  const int W = w.width(), H = w.height();
  const double inf = 1e12;
  std::vector<double> g(static_cast<size_t>(W) * H);
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i)
      g[static_cast<size_t>(j) * W + i] = w.occupied(i, j) ? 0.0 : inf;
  // columns then rows
  std::vector<double> col(H), cold;
  for (int i = 0; i < W; ++i) {
    for (int j = 0; j < H; ++j) col[j] = g[static_cast<size_t>(j) * W + i];
    detail::edt_1d(col, &cold);
    for (int j = 0; j < H; ++j) g[static_cast<size_t>(j) * W + i] = cold[j];
  }
  std::vector<double> row(W), rowd;
  std::vector<double> out(static_cast<size_t>(W) * H);
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < W; ++i) row[i] = g[static_cast<size_t>(j) * W + i];
    detail::edt_1d(row, &rowd);
    for (int i = 0; i < W; ++i)
      out[static_cast<size_t>(j) * W + i] = std::sqrt(rowd[i]) * kCellSize;
  }
  return out;
}

// Exact distance from a point to the nearest occupied cell rectangle.
// Values above `cap` may be reported loosely (comparisons against
// thresholds below cap stay exact); the default cap keeps it exact.
inline double point_clearance(const World& w, double x, double y, double cap = 1e12) {
  double best = 1e12;
  double radius = 0.45;
  for (;;) {
    int i0 = std::max(w.cell_of(x - radius), 0);
    int j0 = std::max(w.cell_of(y - radius), 0);
    int i1 = std::min(w.cell_of(x + radius), w.width() - 1);
    int j1 = std::min(w.cell_of(y + radius), w.height() - 1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        if (w.occupied(i, j)) best = std::min(best, World::point_cell_dist(x, y, i, j));
    if (best <= radius || radius >= cap || radius > (w.width() + w.height()) * kCellSize) break;
    radius *= 2.0;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Lattice dynamics

// Noiseless successor on the lattice; Stay excluded from the graph.
// Forward uses cell-center dynamics with the endpoint rounded to its cell.
inline std::optional<LatticeState> lattice_successor(const World& w, const LatticeState& s,
                                                     Action a) {
  if (a == Action::RotateLeft) return LatticeState{s.i, s.j, (s.tb + 1) % kThetaBins};
  if (a == Action::RotateRight) return LatticeState{s.i, s.j, (s.tb + 11) % kThetaBins};
  if (a != Action::Forward) return std::nullopt;
  Pose p = lattice_pose(s);
  double rad = deg2rad(p.theta);
  double mx = p.x + 0.5 * kForwardDist * std::cos(rad);
  double my = p.y + 0.5 * kForwardDist * std::sin(rad);
  double ex = p.x + kForwardDist * std::cos(rad);
  double ey = p.y + kForwardDist * std::sin(rad);
  if (!w.disk_free(mx, my) || !w.disk_free(ex, ey)) return std::nullopt;
  LatticeState t{w.cell_of(ex), w.cell_of(ey), s.tb};
  if (!w.in_bounds(t.i, t.j)) return std::nullopt;
  Pose tc = lattice_pose(t);
  if (!w.disk_free(tc.x, tc.y)) return std::nullopt;
  return t;
}

constexpr int32_t kUnreachable = -1;

// Reversed noiseless action graph over lattice states (predecessor lists in
// CSR form). Built once per world so several goal fields stay cheap. States
// whose cell clearance is below min_clearance are excluded when a clearance
// field is supplied.
struct LatticeGraph {
  std::vector<int32_t> pred_off, preds;
  std::vector<uint8_t> cell_ok;  // per cell
};

inline LatticeGraph build_lattice_graph(const World& w,
                                        const std::vector<double>* clearance = nullptr,
                                        double min_clearance = 0.0) {
  const int W = w.width(), H = w.height();
  const int n = lattice_state_count(w);
  LatticeGraph g;
  g.cell_ok.assign(static_cast<size_t>(W) * H, 0);
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < W; ++i) {
      Pose c((i + 0.5) * kCellSize, (j + 0.5) * kCellSize, 0);
      if (!w.disk_free(c.x, c.y)) continue;
      if (clearance && (*clearance)[static_cast<size_t>(j) * W + i] < min_clearance) continue;
      g.cell_ok[static_cast<size_t>(j) * W + i] = 1;
    }
  }
  auto ok = [&](int i, int j) {
    return w.in_bounds(i, j) && g.cell_ok[static_cast<size_t>(j) * W + i] != 0;
  };

  // Forward successors, then invert into the predecessor list.
  std::vector<int32_t> succ(static_cast<size_t>(n) * 3, -1);
  std::vector<int32_t> indeg(n, 0);
  const Action acts[3] = {Action::RotateLeft, Action::RotateRight, Action::Forward};
  for (int j = 0; j < H; ++j) {
    for (int i = 0; i < W; ++i) {
      if (!ok(i, j)) continue;
      for (int tb = 0; tb < kThetaBins; ++tb) {
        LatticeState s{i, j, tb};
        int si = lattice_index(w, s);
        for (int a = 0; a < 3; ++a) {
          auto t = lattice_successor(w, s, acts[a]);
          if (!t || !ok(t->i, t->j)) continue;
          int ti = lattice_index(w, *t);
          succ[static_cast<size_t>(si) * 3 + a] = ti;
          ++indeg[ti];
        }
      }
    }
  }
  g.pred_off.assign(n + 1, 0);
  for (int k = 0; k < n; ++k) g.pred_off[k + 1] = g.pred_off[k] + indeg[k];
  g.preds.resize(g.pred_off[n]);
  std::vector<int32_t> fill(g.pred_off.begin(), g.pred_off.end() - 1);
  for (int si = 0; si < n; ++si) {
    for (int a = 0; a < 3; ++a) {
      int32_t ti = succ[static_cast<size_t>(si) * 3 + a];
      if (ti >= 0) g.preds[fill[ti]++] = si;
    }
  }
  return g;
}

// Minimum macro-action count from every lattice state to the goal *cell*
// (any final heading). BFS over the reversed noiseless action graph.
inline std::vector<int32_t> distance_field(const World& w, const LatticeGraph& g,
                                           const LatticeState& goal) {
  const int n = lattice_state_count(w);
  Pose gp = lattice_pose(goal);
  check(w.disk_free(gp.x, gp.y), "distance_field: goal cell in collision");
  std::vector<int32_t> dist(n, kUnreachable);
  std::queue<int32_t> q;
  if (w.in_bounds(goal.i, goal.j) &&
      g.cell_ok[static_cast<size_t>(goal.j) * w.width() + goal.i]) {
    for (int tb = 0; tb < kThetaBins; ++tb) {
      int gi = lattice_index(w, LatticeState{goal.i, goal.j, tb});
      dist[gi] = 0;
      q.push(gi);
    }
  }
  while (!q.empty()) {
    int32_t cur = q.front();
    q.pop();
    for (int32_t k = g.pred_off[cur]; k < g.pred_off[cur + 1]; ++k) {
      int32_t p = g.preds[k];
      if (dist[p] == kUnreachable) {
        dist[p] = dist[cur] + 1;
        q.push(p);
      }
    }
  }
  return dist;
}

inline std::vector<int32_t> distance_field(const World& w, const LatticeState& goal,
                                           const std::vector<double>* clearance = nullptr,
                                           double min_clearance = 0.0) {
  return distance_field(w, build_lattice_graph(w, clearance, min_clearance), goal);
}

// Distance lookup for a continuous pose: min over the 2x2 cells whose
// centers are nearest the point, at the rounded heading bin. Keeps labels
// and metrics robust when the agent sits near a cell edge.
inline int32_t distance_at(const World& w, const std::vector<int32_t>& field, const Pose& p) {
  int tb = static_cast<int>(std::llround(p.theta / kRotateDeg)) % kThetaBins;
  int i0 = static_cast<int>(std::floor(p.x / kCellSize - 0.5));
  int j0 = static_cast<int>(std::floor(p.y / kCellSize - 0.5));
  int32_t best = kUnreachable;
  for (int dj = 0; dj <= 1; ++dj) {
    for (int di = 0; di <= 1; ++di) {
      LatticeState s{i0 + di, j0 + dj, tb};
      if (!w.in_bounds(s.i, s.j)) continue;
      int32_t d = field[lattice_index(w, s)];
      if (d != kUnreachable && (best == kUnreachable || d < best)) best = d;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// World generation

struct WorldSpec {
  int grid_w = 80;
  int grid_h = 80;
  int rooms = 4;
  int object_count = 12;
  int door_width = 2;
};

namespace detail {

struct Rect {
  int x0, y0, x1, y1;  // inclusive interior cells
  int w() const { return x1 - x0 + 1; }
  int h() const { return y1 - y0 + 1; }
};

inline int free_component_count(const std::vector<uint8_t>& occ, int W, int H) {
  std::vector<uint8_t> seen(occ.size(), 0);
  int components = 0;
  std::vector<int> stack;
  for (int start = 0; start < W * H; ++start) {
    if (occ[start] || seen[start]) continue;
    ++components;
    if (components > 1) return components;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      int c = stack.back();
      stack.pop_back();
      int ci = c % W, cj = c / W;
      const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        int ni = ci + di[k], nj = cj + dj[k];
        if (ni < 0 || ni >= W || nj < 0 || nj >= H) continue;
        int nidx = nj * W + ni;
        if (!occ[nidx] && !seen[nidx]) {
          seen[nidx] = 1;
          stack.push_back(nidx);
        }
      }
    }
  }
  return components;
}

}  // namespace detail

inline int count_free_components(const World& w) {
  std::vector<uint8_t> occ(static_cast<size_t>(w.width()) * w.height());
  for (int j = 0; j < w.height(); ++j)
    for (int i = 0; i < w.width(); ++i)
      occ[static_cast<size_t>(j) * w.width() + i] = w.occupied(i, j) ? 1 : 0;
  return detail::free_component_count(occ, w.width(), w.height());
}

// Border walls, rooms carved by recursive splits with doors, removable
// objects placed so free space stays a single component. Deterministic per
// seed.
inline World generate_world(std::uint64_t seed, const WorldSpec& spec) {
  const int W = spec.grid_w, H = spec.grid_h;
  check(W >= 12 && H >= 12, "grid too small");
  Rng rng = make_rng(seed, 0x77);

  for (int attempt = 0; attempt < 32; ++attempt) {
    std::vector<uint8_t> walls(static_cast<size_t>(W) * H, 0);
    auto set_wall = [&](int i, int j) { walls[static_cast<size_t>(j) * W + i] = 1; };
    for (int i = 0; i < W; ++i) { set_wall(i, 0); set_wall(i, H - 1); }
    for (int j = 0; j < H; ++j) { set_wall(0, j); set_wall(W - 1, j); }

    std::vector<detail::Rect> rects{{1, 1, W - 2, H - 2}};
    const int min_side = 8;
    while (static_cast<int>(rects.size()) < spec.rooms) {
      // split the largest splittable rect
      int best = -1, best_area = 0;
      for (size_t k = 0; k < rects.size(); ++k) {
        const auto& r = rects[k];
        if (std::max(r.w(), r.h()) >= 2 * min_side + 1) {
          int area = r.w() * r.h();
          if (area > best_area) { best_area = area; best = static_cast<int>(k); }
        }
      }
      if (best < 0) break;
      detail::Rect r = rects[best];
      bool vertical = r.w() >= r.h();
      if (vertical) {
        std::uniform_int_distribution<int> pos(r.x0 + min_side, r.x1 - min_side);
        int sx = pos(rng);
        std::uniform_int_distribution<int> door(r.y0, r.y1 - spec.door_width + 1);
        int dy = door(rng);
        for (int j = r.y0; j <= r.y1; ++j)
          if (j < dy || j >= dy + spec.door_width) set_wall(sx, j);
        rects[best] = {r.x0, r.y0, sx - 1, r.y1};
        rects.push_back({sx + 1, r.y0, r.x1, r.y1});
      } else {
        std::uniform_int_distribution<int> pos(r.y0 + min_side, r.y1 - min_side);
        int sy = pos(rng);
        std::uniform_int_distribution<int> door(r.x0, r.x1 - spec.door_width + 1);
        int dx = door(rng);
        for (int i = r.x0; i <= r.x1; ++i)
          if (i < dx || i >= dx + spec.door_width) set_wall(i, sy);
        rects[best] = {r.x0, r.y0, r.x1, sy - 1};
        rects.push_back({r.x0, sy + 1, r.x1, r.y1});
      }
    }

    // objects: 1x1 / 2x1 / 1x2 footprints, kept if free space stays connected
    std::vector<uint8_t> occ = walls;
    std::vector<WorldObject> objects;
    std::uniform_int_distribution<int> xi(1, W - 3), yj(1, H - 3), shape(0, 2), cls(0, 1);
    int placed = 0, tries = 0;
    while (placed < spec.object_count && tries < spec.object_count * 300) {
      ++tries;
      int i = xi(rng), j = yj(rng);
      int s = shape(rng);
      std::vector<std::pair<int, int>> cells{{i, j}};
      if (s == 1) cells.emplace_back(i + 1, j);
      if (s == 2) cells.emplace_back(i, j + 1);
      bool ok = true;
      for (auto [ci, cj] : cells)
        if (occ[static_cast<size_t>(cj) * W + ci]) ok = false;
      if (!ok) continue;
      for (auto [ci, cj] : cells) occ[static_cast<size_t>(cj) * W + ci] = 1;
      if (detail::free_component_count(occ, W, H) != 1) {
        for (auto [ci, cj] : cells) occ[static_cast<size_t>(cj) * W + ci] = 0;
        continue;
      }
      WorldObject o;
      o.id = placed;
      o.cls = cls(rng);
      o.cells = std::move(cells);
      objects.push_back(std::move(o));
      ++placed;
    }
    if (placed < spec.object_count) continue;
    if (detail::free_component_count(walls, W, H) != 1) continue;
    return World::from_walls(W, H, std::move(walls), std::move(objects));
  }
  throw GenerationError("generate_world: placement failed after bounded retries");
}

// ---------------------------------------------------------------------------
// Demonstrations

struct Demonstration {
  std::vector<Pose> poses;
  std::vector<Action> actions;  // actions[k]: poses[k] -> poses[k+1]; last entry Stay
  std::vector<Observation> observations;
  std::uint64_t world_seed = 0;
  double change_r = 0.0;

  int size() const { return static_cast<int>(poses.size()); }
};

namespace detail {

struct AStarNode {
  Pose pose;
  int g = 0;
  int parent = -1;
  Action via = Action::Stay;
};

// Best-first search over continuous poses deduplicated by lattice key.
// Edges come from exact noiseless simulation so replaying the returned
// actions reproduces the poses bit-for-bit.
inline std::optional<std::vector<AStarNode>> plan_path(
    const World& w, const Pose& start, int goal_i, int goal_j, double min_clear,
    const std::vector<double>& clear_field, int max_expansions = 200000) {
  NoiseSpec noiseless{0.0, 57.3, 0.05};
  Rng dummy(0);
  std::vector<AStarNode> nodes;
  std::unordered_map<int64_t, int> best_g;
  auto key = [&](const Pose& p) {
    LatticeState s = quantize(w, p);
    return (static_cast<int64_t>(s.j) * w.width() + s.i) * kThetaBins + s.tb;
  };
  auto heuristic = [&](const Pose& p) {
    double gx = (goal_i + 0.5) * kCellSize, gy = (goal_j + 0.5) * kCellSize;
    return std::hypot(gx - p.x, gy - p.y) / kForwardDist;
  };
  using QEntry = std::pair<double, int>;  // (f, node)
  std::priority_queue<QEntry, std::vector<QEntry>, std::greater<>> open;
  nodes.push_back({start, 0, -1, Action::Stay});
  best_g[key(start)] = 0;
  open.push({heuristic(start), 0});
  int expansions = 0;
  while (!open.empty() && expansions < max_expansions) {
    auto [f, ni] = open.top();
    open.pop();
    AStarNode cur = nodes[ni];
    auto it = best_g.find(key(cur.pose));
    if (it != best_g.end() && it->second < cur.g) continue;  // stale
    ++expansions;
    if (w.cell_of(cur.pose.x) == goal_i && w.cell_of(cur.pose.y) == goal_j) {
      std::vector<AStarNode> path;
      for (int k = ni; k >= 0; k = nodes[k].parent) path.push_back(nodes[k]);
      std::reverse(path.begin(), path.end());
      return path;
    }
    const Action acts[3] = {Action::RotateLeft, Action::RotateRight, Action::Forward};
    for (Action a : acts) {
      Pose next;
      if (a == Action::Forward) {
        // clearance >= 0.6 m guarantees an unobstructed 0.4 m sweep
        double c0 = clear_field[static_cast<size_t>(w.cell_of(cur.pose.y)) * w.width() +
                                w.cell_of(cur.pose.x)];
        double rad = deg2rad(cur.pose.theta);
        next = Pose(cur.pose.x + kForwardDist * std::cos(rad),
                    cur.pose.y + kForwardDist * std::sin(rad), cur.pose.theta);
        if (c0 < 0.6) {
          StepResult sr = step(w, cur.pose, a, noiseless, dummy);
          if (sr.blocked) continue;
          next = sr.pose;
        }
        if (!w.in_bounds(w.cell_of(next.x), w.cell_of(next.y))) continue;
        if (point_clearance(w, next.x, next.y, min_clear + 0.01) < min_clear) continue;
      } else {
        next = (a == Action::RotateLeft)
                   ? Pose(cur.pose.x, cur.pose.y, cur.pose.theta + kRotateDeg)
                   : Pose(cur.pose.x, cur.pose.y, cur.pose.theta - kRotateDeg);
      }
      int g = cur.g + 1;
      int64_t k = key(next);
      auto found = best_g.find(k);
      if (found != best_g.end() && found->second <= g) continue;
      best_g[k] = g;
      nodes.push_back({next, g, ni, a});
      open.push({g + heuristic(next), static_cast<int>(nodes.size()) - 1});
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Samples a start/goal pair with geodesic distance within +-10% of J, plans
// on the lattice, rolls the plan forward noiselessly, and records
// poses/actions/observations. Every path pose keeps at least min_clearance
// meters of clearance.
inline Demonstration sample_demonstration(const World& world, std::uint64_t seed, int J,
                                          double min_clearance) {
  check(J >= 2, "demonstration length too short");
  Rng rng = make_rng(seed, 0xDE);
  auto clear = clearance_field(world);
  const int W = world.width(), H = world.height();

  // candidate cells for endpoints
  std::vector<int> cells;
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      Pose c((i + 0.5) * kCellSize, (j + 0.5) * kCellSize, 0);
      if (clear[static_cast<size_t>(j) * W + i] >= std::max(min_clearance, kAgentRadius + 0.02) &&
          world.disk_free(c.x, c.y))
        cells.push_back(j * W + i);
    }
  if (cells.empty()) throw GenerationError("sample_demonstration: no feasible cells");

  const int lo = J - J / 10, hi = J + J / 10;
  std::uniform_int_distribution<size_t> pick(0, cells.size() - 1);
  std::uniform_int_distribution<int> pick_tb(0, kThetaBins - 1);

  LatticeGraph graph = build_lattice_graph(world, &clear, min_clearance);
  for (int attempt = 0; attempt < 64; ++attempt) {
    int gc = cells[pick(rng)];
    LatticeState goal{gc % W, gc / W, pick_tb(rng)};
    auto field = distance_field(world, graph, goal);
    std::vector<int> starts;
    for (int c : cells) {
      for (int tb = 0; tb < kThetaBins; ++tb) {
        int idx = (c)*kThetaBins + tb;
        if (field[idx] >= lo && field[idx] <= hi) starts.push_back(idx);
      }
    }
    if (starts.empty()) continue;
    std::uniform_int_distribution<size_t> ps(0, starts.size() - 1);
    int sidx = starts[ps(rng)];
    LatticeState start{(sidx / kThetaBins) % W, (sidx / kThetaBins) / W, sidx % kThetaBins};

    auto path = detail::plan_path(world, lattice_pose(start), goal.i, goal.j,
                                  min_clearance, clear);
    if (!path) continue;
    int L = static_cast<int>(path->size()) - 1;  // action count
    if (L < lo || L > hi) continue;

    Demonstration demo;
    bool clear_ok = true;
    for (const auto& n : *path) {
      if (point_clearance(world, n.pose.x, n.pose.y, min_clearance + 0.01) < min_clearance)
        clear_ok = false;
      demo.poses.push_back(n.pose);
      demo.observations.push_back(render(world, n.pose));
    }
    if (!clear_ok) continue;
    for (size_t k = 1; k < path->size(); ++k) demo.actions.push_back((*path)[k].via);
    demo.actions.push_back(Action::Stay);
    return demo;
  }
  throw GenerationError("sample_demonstration: no feasible pair after retries");
}

inline Action mirror_action(Action a) {
  if (a == Action::RotateLeft) return Action::RotateRight;
  if (a == Action::RotateRight) return Action::RotateLeft;
  return a;
}

// Homing reference: poses reversed with headings flipped 180 degrees,
// rotation directions swapped, observations from a 180-degree rotated
// camera at the original poses.
inline Demonstration reverse_demonstration(const Demonstration& demo, const World& world) {
  check(!demo.poses.empty(), "reverse_demonstration: empty demo");
  Demonstration rev;
  rev.world_seed = demo.world_seed;
  rev.change_r = demo.change_r;
  const int J = demo.size();
  for (int k = 0; k < J; ++k) {
    const Pose& p = demo.poses[J - 1 - k];
    rev.poses.emplace_back(p.x, p.y, p.theta + 180.0);
    rev.observations.push_back(rotated_render(world, p, 180.0));
  }
  for (int k = 0; k < J - 1; ++k) rev.actions.push_back(mirror_action(demo.actions[J - 2 - k]));
  rev.actions.push_back(Action::Stay);
  return rev;
}

// JSON-lines: one header line with metadata, then one line per step.
inline void save_demonstration(const Demonstration& d, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open " + path);
  nlohmann::json header{{"steps", d.size()}, {"world_seed", d.world_seed}, {"change_r", d.change_r}};
  out << header.dump() << "\n";
  for (int t = 0; t < d.size(); ++t) {
    auto flat = d.observations[t].flat();
    nlohmann::json line{{"t", t},
                        {"pose", {d.poses[t].x, d.poses[t].y, d.poses[t].theta}},
                        {"action", static_cast<int>(d.actions[t])},
                        {"rays", std::vector<float>(flat.begin(), flat.end())}};
    out << line.dump() << "\n";
  }
}

inline Demonstration load_demonstration(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty demonstration file");
  nlohmann::json header = nlohmann::json::parse(line);
  Demonstration d;
  d.world_seed = header.at("world_seed").get<std::uint64_t>();
  d.change_r = header.at("change_r").get<double>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json js = nlohmann::json::parse(line);
    auto pose = js.at("pose");
    d.poses.emplace_back(pose[0].get<double>(), pose[1].get<double>(), pose[2].get<double>());
    d.actions.push_back(static_cast<Action>(js.at("action").get<int>()));
    Observation obs;
    auto rays = js.at("rays");
    for (int r = 0; r < kNumRays; ++r) {
      obs.depth[r] = rays[r * kRayChannels].get<float>();
      for (int c = 0; c < 4; ++c)
        if (rays[r * kRayChannels + 1 + c].get<float>() > 0.5f) obs.cls[r] = static_cast<uint8_t>(c);
    }
    d.observations.push_back(obs);
  }
  check(static_cast<int>(header.at("steps").get<int>()) == d.size(), "step count mismatch");
  return d;
}

}  // namespace rpf
