#pragma once

// 2D occupancy-grid world with macro-actions, truncated-normal actuation
// noise, first-person range-and-label observations, and object-level change.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rpf/common.hpp"

namespace rpf {

struct Pose {
  double x = 0.0;      // meters
  double y = 0.0;      // meters
  double theta = 0.0;  // degrees, normalized to [0, 360)

  Pose() = default;
  Pose(double x_, double y_, double t_) : x(x_), y(y_), theta(normalize_deg(t_)) {}

  bool operator==(const Pose& o) const {
    return x == o.x && y == o.y && theta == o.theta;
  }
};

enum class Action : int { Stay = 0, RotateLeft = 1, RotateRight = 2, Forward = 3 };

constexpr int kNumActions = 4;

inline const char* action_name(Action a) {
  switch (a) {
    case Action::Stay: return "stay";
    case Action::RotateLeft: return "rotate_left";
    case Action::RotateRight: return "rotate_right";
    case Action::Forward: return "forward";
  }
  return "?";
}

// Ray class channels, in the order used by the observation one-hot.
enum RayClass : int { kClassWall = 0, kClassObjectA = 1, kClassObjectB = 2, kClassNothing = 3 };

constexpr int kNumRays = 32;
constexpr int kRayChannels = 5;  // depth + 4-way class one-hot
constexpr double kFovDeg = 120.0;
constexpr double kMaxRange = 8.0;      // meters
constexpr double kAgentRadius = 0.15;  // meters
constexpr double kCellSize = 0.2;      // meters
constexpr double kRotateDeg = 30.0;
constexpr double kForwardDist = 0.4;

struct Observation {
  std::array<float, kNumRays> depth{};   // normalized to [0, 1]
  std::array<uint8_t, kNumRays> cls{};   // RayClass per ray

  // Flat 32x5 layout: per ray (depth, wall, objectA, objectB, nothing).
  std::array<float, kNumRays * kRayChannels> flat() const {
    std::array<float, kNumRays * kRayChannels> out{};
    for (int r = 0; r < kNumRays; ++r) {
      out[r * kRayChannels] = depth[r];
      out[r * kRayChannels + 1 + cls[r]] = 1.0f;
    }
    return out;
  }

  bool operator==(const Observation& o) const {
    return depth == o.depth && cls == o.cls;
  }
};

struct WorldObject {
  int id = 0;
  int cls = 0;  // 0 -> objectA, 1 -> objectB
  std::vector<std::pair<int, int>> cells;
};

// Tag values in the per-cell lookup grid.
enum CellTag : uint8_t { kTagFree = 0, kTagWall = 1, kTagObjA = 2, kTagObjB = 3 };

class World {
 public:
  World() = default;
  World(int w, int h) : w_(w), h_(h), wall_(static_cast<size_t>(w) * h, 0) { rebuild(); }

  static World from_walls(int w, int h, std::vector<uint8_t> walls,
                          std::vector<WorldObject> objects = {}) {
    World world(w, h);
    check(walls.size() == static_cast<size_t>(w) * h, "wall grid size mismatch");
    world.wall_ = std::move(walls);
    world.objects_ = std::move(objects);
    world.rebuild();
    return world;
  }

  int width() const { return w_; }
  int height() const { return h_; }
  double cell_size() const { return kCellSize; }
  const std::vector<WorldObject>& objects() const { return objects_; }
  const std::vector<uint8_t>& base_walls() const { return wall_; }

  bool in_bounds(int i, int j) const { return i >= 0 && i < w_ && j >= 0 && j < h_; }

  uint8_t tag(int i, int j) const {
    if (!in_bounds(i, j)) return kTagFree;
    return tag_[static_cast<size_t>(j) * w_ + i];
  }

  bool occupied(int i, int j) const { return tag(i, j) != kTagFree; }

  int cell_of(double v) const { return static_cast<int>(std::floor(v / kCellSize)); }

  // Distance from a point to the closed rectangle of cell (i, j).
  static double point_cell_dist(double x, double y, int i, int j) {
    double x0 = i * kCellSize, x1 = x0 + kCellSize;
    double y0 = j * kCellSize, y1 = y0 + kCellSize;
    double dx = std::max({x0 - x, 0.0, x - x1});
    double dy = std::max({y0 - y, 0.0, y - y1});
    return std::hypot(dx, dy);
  }

  // True if a disk of the given radius centered at (x, y) overlaps no
  // occupied cell. Cells outside the grid are free.
  bool disk_free(double x, double y, double radius = kAgentRadius) const {
    int i0 = cell_of(x - radius), i1 = cell_of(x + radius);
    int j0 = cell_of(y - radius), j1 = cell_of(y + radius);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        if (occupied(i, j) && point_cell_dist(x, y, i, j) < radius) return false;
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json walls = nlohmann::json::array();
    for (int j = 0; j < h_; ++j)
      for (int i = 0; i < w_; ++i)
        if (wall_[static_cast<size_t>(j) * w_ + i]) walls.push_back({i, j});
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : objects_) {
      nlohmann::json cells = nlohmann::json::array();
      for (auto [i, j] : o.cells) cells.push_back({i, j});
      objs.push_back({{"id", o.id}, {"class", o.cls}, {"cells", cells}});
    }
    return {{"grid_w", w_}, {"grid_h", h_}, {"cell_m", kCellSize},
            {"walls", walls}, {"objects", objs}};
  }

  static World from_json(const nlohmann::json& js) {
    World w(js.at("grid_w").get<int>(), js.at("grid_h").get<int>());
    for (const auto& c : js.at("walls"))
      w.wall_[static_cast<size_t>(c[1].get<int>()) * w.w_ + c[0].get<int>()] = 1;
    for (const auto& oj : js.at("objects")) {
      WorldObject o;
      o.id = oj.at("id").get<int>();
      o.cls = oj.at("class").get<int>();
      for (const auto& c : oj.at("cells")) o.cells.emplace_back(c[0].get<int>(), c[1].get<int>());
      w.objects_.push_back(std::move(o));
    }
    w.rebuild();
    return w;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "cannot open " + path);
    out << to_json().dump(2) << "\n";
  }

  static World load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open " + path);
    nlohmann::json js;
    in >> js;
    return from_json(js);
  }

  // New world with each object independently removed with probability r.
  // Base walls are untouched; the input world is not modified.
  World with_change(double removal_prob, Rng& rng) const {
    World out = *this;
    out.objects_.clear();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const auto& o : objects_) {
      if (u(rng) >= removal_prob) out.objects_.push_back(o);
    }
    out.rebuild();
    return out;
  }

  void set_objects(std::vector<WorldObject> objs) {
    objects_ = std::move(objs);
    rebuild();
  }

 private:
  void rebuild() {
    tag_.assign(static_cast<size_t>(w_) * h_, kTagFree);
    for (size_t k = 0; k < wall_.size(); ++k)
      if (wall_[k]) tag_[k] = kTagWall;
    for (const auto& o : objects_) {
      for (auto [i, j] : o.cells) {
        check(in_bounds(i, j), "object cell out of bounds");
        check(tag_[static_cast<size_t>(j) * w_ + i] != kTagWall, "object overlaps base wall");
        tag_[static_cast<size_t>(j) * w_ + i] = o.cls == 0 ? kTagObjA : kTagObjB;
      }
    }
  }

  int w_ = 0, h_ = 0;
  std::vector<uint8_t> wall_;  // base walls, always present
  std::vector<WorldObject> objects_;
  std::vector<uint8_t> tag_;  // combined occupancy with class tags
};

struct NoiseSpec {
  double level = 0.2;       // the paper's truncation factor; 0 = deterministic
  double rot_sigma = 57.3;  // degrees
  double trans_sigma = 0.05;  // meters
};

// Sample from N(mu, sigma^2) conditioned on (mu - delta, mu + delta) by
// rejection. delta = 0 short-circuits to mu exactly.
inline double sample_truncated_normal(double mu, double sigma, double delta, Rng& rng) {
  check(delta >= 0, "truncation half-width must be >= 0");
  if (delta == 0) return mu;
  check(sigma > 0, "sigma must be > 0 when delta > 0");
  std::normal_distribution<double> n(mu, sigma);
  for (;;) {
    double v = n(rng);
    if (v > mu - delta && v < mu + delta) return v;
  }
}

struct StepResult {
  Pose pose;
  bool blocked = false;  // forward motion was cut short by an obstacle
};

namespace detail {

// Longest collision-free travel along the heading, up to dist.
// The agent stops at the last free point; no sliding.
inline StepResult forward_sweep(const World& w, const Pose& p, double dist) {
  double rad = deg2rad(p.theta);
  double cx = std::cos(rad), sy = std::sin(rad);
  const double dt = 0.01;
  double last_free = 0.0;
  bool blocked = false;
  for (double t = dt;; t += dt) {
    if (t > dist) t = dist;
    if (w.disk_free(p.x + cx * t, p.y + sy * t)) {
      last_free = t;
    } else {
      blocked = true;
      break;
    }
    if (t >= dist) break;
  }
  return {Pose(p.x + cx * last_free, p.y + sy * last_free, p.theta), blocked};
}

}  // namespace detail

// One macro-action under actuation noise. Precondition: pose collision-free.
inline StepResult step(const World& w, const Pose& pose, Action a,
                       const NoiseSpec& noise, Rng& rng) {
  check(w.disk_free(pose.x, pose.y), "step precondition: pose must be collision-free");
  double n = noise.level;
  switch (a) {
    case Action::Stay:
      return {pose, false};
    case Action::RotateLeft: {
      double d = sample_truncated_normal(kRotateDeg, noise.rot_sigma, n * kRotateDeg, rng);
      return {Pose(pose.x, pose.y, pose.theta + d), false};
    }
    case Action::RotateRight: {
      double d = sample_truncated_normal(kRotateDeg, noise.rot_sigma, n * kRotateDeg, rng);
      return {Pose(pose.x, pose.y, pose.theta - d), false};
    }
    case Action::Forward: {
      double jitter = sample_truncated_normal(0.0, noise.rot_sigma, n * kRotateDeg, rng);
      Pose heading(pose.x, pose.y, pose.theta + jitter);
      double dist = sample_truncated_normal(kForwardDist, noise.trans_sigma, n * kForwardDist, rng);
      return detail::forward_sweep(w, heading, dist);
    }
  }
  throw ContractError("unknown action");
}

// Angle of ray k relative to the heading; rays sweep left-to-right across
// the field of view, endpoints inclusive.
inline double ray_offset_deg(int k) {
  return kFovDeg / 2.0 - k * (kFovDeg / (kNumRays - 1));
}

namespace detail {

// Amanatides-Woo traversal; returns hit distance and cell tag, or max range.
inline void cast_ray(const World& w, double ox, double oy, double angle_deg,
                     float* depth, uint8_t* cls) {
  double rad = deg2rad(angle_deg);
  double dx = std::cos(rad), dy = std::sin(rad);
  int i = w.cell_of(ox), j = w.cell_of(oy);
  int step_i = dx > 0 ? 1 : -1, step_j = dy > 0 ? 1 : -1;
  double t_max_x, t_max_y, t_dx, t_dy;
  if (std::abs(dx) < 1e-12) {
    t_max_x = 1e30;
    t_dx = 1e30;
  } else {
    double edge = (dx > 0 ? (i + 1) * kCellSize : i * kCellSize);
    t_max_x = (edge - ox) / dx;
    t_dx = kCellSize / std::abs(dx);
  }
  if (std::abs(dy) < 1e-12) {
    t_max_y = 1e30;
    t_dy = 1e30;
  } else {
    double edge = (dy > 0 ? (j + 1) * kCellSize : j * kCellSize);
    t_max_y = (edge - oy) / dy;
    t_dy = kCellSize / std::abs(dy);
  }
  double t = 0.0;
  // Origin cell is assumed free (pose precondition).
  while (t <= kMaxRange) {
    if (t_max_x < t_max_y) {
      t = t_max_x;
      t_max_x += t_dx;
      i += step_i;
    } else {
      t = t_max_y;
      t_max_y += t_dy;
      j += step_j;
    }
    if (t > kMaxRange) break;
    uint8_t tg = w.tag(i, j);
    if (tg != kTagFree) {
      *depth = static_cast<float>(std::min(t / kMaxRange, 1.0));
      *cls = tg == kTagWall ? kClassWall : (tg == kTagObjA ? kClassObjectA : kClassObjectB);
      return;
    }
  }
  *depth = 1.0f;
  *cls = kClassNothing;
}

}  // namespace detail

// Deterministic 32-ray scan over a 120-degree FOV centered on the heading.
inline Observation render(const World& w, const Pose& pose) {
  Observation obs;
  for (int k = 0; k < kNumRays; ++k) {
    detail::cast_ray(w, pose.x, pose.y, pose.theta + ray_offset_deg(k),
                     &obs.depth[k], &obs.cls[k]);
  }
  return obs;
}

inline Observation rotated_render(const World& w, const Pose& pose, double offset_deg) {
  return render(w, Pose(pose.x, pose.y, pose.theta + offset_deg));
}

inline World apply_change(const World& w, double removal_prob, Rng& rng) {
  check(removal_prob >= 0.0 && removal_prob <= 1.0, "removal probability in [0,1]");
  return w.with_change(removal_prob, rng);
}

}  // namespace rpf
