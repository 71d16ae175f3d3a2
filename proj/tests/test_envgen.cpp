#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <queue>
#include <set>

#include "rpf/envgen.hpp"

using namespace rpf;

namespace {

// Independent forward Dijkstra (uniform costs, so BFS) from one lattice
// state to the goal cell, using only lattice_successor.
int32_t bfs_to_goal_cell(const World& w, const LatticeState& start, int goal_i, int goal_j) {
  std::vector<int32_t> dist(lattice_state_count(w), -1);
  std::queue<LatticeState> q;
  dist[lattice_index(w, start)] = 0;
  q.push(start);
  const Action acts[3] = {Action::RotateLeft, Action::RotateRight, Action::Forward};
  while (!q.empty()) {
    LatticeState s = q.front();
    q.pop();
    int32_t d = dist[lattice_index(w, s)];
    if (s.i == goal_i && s.j == goal_j) return d;
    for (Action a : acts) {
      auto t = lattice_successor(w, s, a);
      if (!t) continue;
      int ti = lattice_index(w, *t);
      if (dist[ti] < 0) {
        dist[ti] = d + 1;
        q.push(*t);
      }
    }
  }
  return -1;
}

double brute_clearance_centers(const World& w, int ci, int cj) {
  double x = (ci + 0.5) * kCellSize, y = (cj + 0.5) * kCellSize;
  double best = 1e12;
  for (int j = 0; j < w.height(); ++j)
    for (int i = 0; i < w.width(); ++i)
      if (w.occupied(i, j))
        best = std::min(best, std::hypot(x - (i + 0.5) * kCellSize, y - (j + 0.5) * kCellSize));
  return best;
}

double brute_point_clearance(const World& w, double x, double y) {
  double best = 1e12;
  for (int j = 0; j < w.height(); ++j)
    for (int i = 0; i < w.width(); ++i)
      if (w.occupied(i, j)) best = std::min(best, World::point_cell_dist(x, y, i, j));
  return best;
}

}  // namespace

TEST_CASE("generated worlds are single connected components over 1000 seeds") {
  WorldSpec spec;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    World w = generate_world(seed, spec);
    CHECK(count_free_components(w) == 1);
    for (const auto& o : w.objects())
      for (auto [i, j] : o.cells) CHECK(w.in_bounds(i, j));
  }
}

TEST_CASE("object_count zero gives a walls-only world") {
  WorldSpec spec;
  spec.object_count = 0;
  World w = generate_world(7, spec);
  CHECK(w.objects().empty());
  bool any_wall = false;
  for (int i = 0; i < w.width(); ++i) any_wall = any_wall || w.occupied(i, 0);
  CHECK(any_wall);
}

TEST_CASE("distance field: goal and one-forward values") {
  WorldSpec spec;
  World w = generate_world(11, spec);
  Rng rng = make_rng(2, 2);
  std::uniform_int_distribution<int> ui(2, w.width() - 3), ut(0, kThetaBins - 1);
  for (int trial = 0; trial < 50; ++trial) {
    LatticeState goal{ui(rng), ui(rng), ut(rng)};
    Pose gp = lattice_pose(goal);
    if (!w.disk_free(gp.x, gp.y)) continue;
    auto field = distance_field(w, goal);
    for (int tb = 0; tb < kThetaBins; ++tb)
      CHECK(field[lattice_index(w, LatticeState{goal.i, goal.j, tb})] == 0);
    // any state whose forward successor is the goal cell sits at 1
    for (int tb = 0; tb < kThetaBins; ++tb) {
      LatticeState s{goal.i, goal.j, tb};
      // walk one forward *backwards*: find a predecessor by scanning neighbors
      for (int dj = -3; dj <= 3; ++dj) {
        for (int di = -3; di <= 3; ++di) {
          LatticeState c{goal.i + di, goal.j + dj, tb};
          if (!w.in_bounds(c.i, c.j) || (di == 0 && dj == 0)) continue;
          auto t = lattice_successor(w, c, Action::Forward);
          if (t && t->i == goal.i && t->j == goal.j) {
            int32_t d = field[lattice_index(w, c)];
            if (d >= 0) CHECK(d == 1);
          }
        }
      }
    }
    break;
  }
}

TEST_CASE("distance field values match an independent BFS over random pairs") {
  WorldSpec spec;
  Rng rng = make_rng(3, 3);
  std::uniform_int_distribution<int> ui(1, 78), ut(0, kThetaBins - 1);
  int checked = 0;
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    World w = generate_world(seed, spec);
    LatticeState goal{ui(rng), ui(rng), 0};
    Pose gp = lattice_pose(goal);
    if (!w.disk_free(gp.x, gp.y)) continue;
    auto field = distance_field(w, goal);
    for (int trial = 0; trial < 12; ++trial) {
      LatticeState s{ui(rng), ui(rng), ut(rng)};
      Pose sp = lattice_pose(s);
      if (!w.disk_free(sp.x, sp.y)) continue;
      CHECK(field[lattice_index(w, s)] == bfs_to_goal_cell(w, s, goal.i, goal.j));
      ++checked;
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("clearance field matches brute-force center distances") {
  WorldSpec spec;
  World w = generate_world(31, spec);
  auto clear = clearance_field(w);
  Rng rng = make_rng(4, 4);
  std::uniform_int_distribution<int> ui(0, 79);
  for (int trial = 0; trial < 60; ++trial) {
    int i = ui(rng), j = ui(rng);
    CHECK(clear[static_cast<size_t>(j) * w.width() + i] ==
          doctest::Approx(brute_clearance_centers(w, i, j)).epsilon(1e-9));
  }
}

TEST_CASE("point clearance matches a whole-grid scan") {
  WorldSpec spec;
  World w = generate_world(32, spec);
  Rng rng = make_rng(5, 5);
  std::uniform_real_distribution<double> u(0.3, 15.7);
  for (int trial = 0; trial < 60; ++trial) {
    double x = u(rng), y = u(rng);
    CHECK(point_clearance(w, x, y) == doctest::Approx(brute_point_clearance(w, x, y)).epsilon(1e-9));
  }
}

TEST_CASE("sampled demonstrations replay exactly and respect clearance") {
  WorldSpec spec;
  NoiseSpec noiseless;
  noiseless.level = 0.0;
  int sampled = 0;
  for (std::uint64_t seed = 50; seed < 58; ++seed) {
    World w = generate_world(seed, spec);
    Demonstration d;
    try {
      d = sample_demonstration(w, seed * 7 + 1, 30, 0.6);
    } catch (const GenerationError&) {
      continue;
    }
    ++sampled;
    REQUIRE(d.poses.size() == d.actions.size());
    REQUIRE(d.poses.size() == d.observations.size());
    CHECK(d.actions.back() == Action::Stay);
    int moves = static_cast<int>(d.actions.size()) - 1;
    CHECK(moves >= 27);
    CHECK(moves <= 33);

    Rng rng = make_rng(0, 0);
    Pose p = d.poses.front();
    for (size_t k = 0; k + 1 < d.poses.size(); ++k) {
      CHECK(point_clearance(w, d.poses[k].x, d.poses[k].y) >= 0.6);
      p = step(w, p, d.actions[k], noiseless, rng).pose;
      CHECK(p.x == d.poses[k + 1].x);
      CHECK(p.y == d.poses[k + 1].y);
      CHECK(p.theta == d.poses[k + 1].theta);
      CHECK(d.observations[k] == render(w, d.poses[k]));
    }
  }
  CHECK(sampled >= 4);
}

TEST_CASE("reversing a straight demo flips headings and keeps forwards") {
  World w = World::from_walls(30, 30, std::vector<uint8_t>(900, 0), {});
  Demonstration d;
  NoiseSpec noiseless;
  noiseless.level = 0.0;
  Rng rng = make_rng(0, 0);
  Pose p(2.0, 2.0, 0.0);
  for (int k = 0; k < 4; ++k) {
    d.poses.push_back(p);
    d.observations.push_back(render(w, p));
    if (k < 3) {
      d.actions.push_back(Action::Forward);
      p = step(w, p, Action::Forward, noiseless, rng).pose;
    } else {
      d.actions.push_back(Action::Stay);
    }
  }
  Demonstration r = reverse_demonstration(d, w);
  REQUIRE(r.poses.size() == 4);
  CHECK(r.poses.front().x == d.poses.back().x);
  CHECK(r.poses.front().theta == doctest::Approx(180.0));
  for (int k = 0; k < 3; ++k) CHECK(r.actions[k] == Action::Forward);
  CHECK(r.actions.back() == Action::Stay);
  // homing observations are 180-degree rotated renders at the original poses
  Observation want = rotated_render(w, d.poses.back(), 180.0);
  CHECK(r.observations.front() == want);
}

TEST_CASE("reversal swaps rotation directions in reversed order") {
  World w = World::from_walls(30, 30, std::vector<uint8_t>(900, 0), {});
  Demonstration d;
  NoiseSpec noiseless;
  noiseless.level = 0.0;
  Rng rng = make_rng(0, 0);
  Pose p(2.0, 2.0, 0.0);
  const Action seq[3] = {Action::RotateLeft, Action::Forward, Action::RotateRight};
  for (int k = 0; k < 4; ++k) {
    d.poses.push_back(p);
    d.observations.push_back(render(w, p));
    d.actions.push_back(k < 3 ? seq[k] : Action::Stay);
    if (k < 3) p = step(w, p, seq[k], noiseless, rng).pose;
  }
  Demonstration r = reverse_demonstration(d, w);
  CHECK(r.actions[0] == Action::RotateLeft);   // mirror of trailing RotateRight
  CHECK(r.actions[1] == Action::Forward);
  CHECK(r.actions[2] == Action::RotateRight);  // mirror of leading RotateLeft

  // replaying the reversed actions traverses the path backwards
  Pose q = r.poses.front();
  for (size_t k = 0; k + 1 < r.poses.size(); ++k) {
    q = step(w, q, r.actions[k], noiseless, rng).pose;
    CHECK(q.x == doctest::Approx(r.poses[k + 1].x));
    CHECK(q.y == doctest::Approx(r.poses[k + 1].y));
  }
}

TEST_CASE("demonstration JSONL round trip") {
  WorldSpec spec;
  World w = generate_world(60, spec);
  Demonstration d = sample_demonstration(w, 61, 30, 0.6);
  save_demonstration(d, "/tmp/rpf_test_demo.jsonl");
  Demonstration r = load_demonstration("/tmp/rpf_test_demo.jsonl");
  REQUIRE(r.size() == d.size());
  for (int k = 0; k < d.size(); ++k) {
    CHECK(r.poses[k].x == d.poses[k].x);
    CHECK(r.poses[k].y == d.poses[k].y);
    CHECK(r.poses[k].theta == d.poses[k].theta);
    CHECK(r.actions[k] == d.actions[k]);
    CHECK(r.observations[k] == d.observations[k]);
  }
  CHECK(r.world_seed == d.world_seed);
}

TEST_CASE("distance_at is finite near cell edges along a demo") {
  WorldSpec spec;
  World w = generate_world(62, spec);
  Demonstration d = sample_demonstration(w, 63, 30, 0.6);
  LatticeState goal{w.cell_of(d.poses.back().x), w.cell_of(d.poses.back().y), 0};
  auto field = distance_field(w, goal);
  for (const auto& p : d.poses) CHECK(distance_at(w, field, p) >= 0);
  CHECK(distance_at(w, field, d.poses.back()) == 0);
  CHECK(distance_at(w, field, d.poses.front()) >= 27);
}

TEST_CASE("lattice index is a bijection") {
  WorldSpec spec;
  World w = generate_world(64, spec);
  std::set<int> seen;
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i)
      for (int tb = 0; tb < kThetaBins; ++tb) {
        int idx = lattice_index(w, LatticeState{i, j, tb});
        CHECK(seen.insert(idx).second);
        CHECK(idx >= 0);
        CHECK(idx < lattice_state_count(w));
      }
}
