#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rnr/camera.hpp"
#include "rnr/common.hpp"
#include "rnr/image_io.hpp"
#include "rnr/random.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

using WorldPoint = std::array<double, 2>;  // (X, Y) metres on z=0

struct PlannerParams {
  double step = 0.5;
  double goal_bias = 0.1;
  double goal_tol = 0.5;
  int max_iters = 5000;
  double collision_res = 0.1;
  double inflation = 0.3;
  double x_min = -8.0, x_max = 8.0;
  double y_min = 0.0, y_max = 30.0;
};

// Obstacle footprints as axis-aligned world rectangles (x0,y0,x1,y1); the
// planner inflates them by params.inflation at query time.
struct GroundScene {
  std::vector<std::array<double, 4>> obstacles;
  WorldPoint start{0.0, 0.0};
};

struct Trajectory {
  std::vector<WorldPoint> waypoints;  // start first, goal end
};

inline double dist2(const WorldPoint& a, const WorldPoint& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}
inline double dist(const WorldPoint& a, const WorldPoint& b) { return std::sqrt(dist2(a, b)); }

inline bool point_free(const WorldPoint& p, const GroundScene& scene, const PlannerParams& pp) {
  if (p[0] < pp.x_min || p[0] > pp.x_max || p[1] < pp.y_min || p[1] > pp.y_max) return false;
  for (const auto& r : scene.obstacles)
    if (p[0] >= r[0] - pp.inflation && p[0] <= r[2] + pp.inflation && p[1] >= r[1] - pp.inflation &&
        p[1] <= r[3] + pp.inflation)
      return false;
  return true;
}

inline bool segment_free(const WorldPoint& a, const WorldPoint& b, const GroundScene& scene,
                         const PlannerParams& pp) {
  const double len = dist(a, b);
  const int steps = std::max(1, static_cast<int>(std::ceil(len / pp.collision_res)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    if (!point_free({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}, scene, pp)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// mask_to_goal: centre pixel of the thresholded mask (rounded centroid,
// snapped to the nearest mask pixel when the centroid falls outside a
// disconnected region), projected to the ground plane.
// ---------------------------------------------------------------------------
inline WorldPoint mask_to_goal(const Tensor<float>& prob, const CameraModel& cam,
                               double threshold = 0.5) {
  require_shape(prob.rank() == 2, "mask_to_goal: [H,W] mask required");
  const int H = prob.extent(0), W = prob.extent(1);
  double su = 0, sv = 0;
  std::size_t count = 0;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u)
      if (prob.data()[static_cast<std::size_t>(v) * W + u] >= threshold) {
        su += u;
        sv += v;
        ++count;
      }
  if (count == 0) throw NoRegionError("mask_to_goal: no pixel reaches threshold");
  int cu = static_cast<int>(std::lround(su / static_cast<double>(count)));
  int cv = static_cast<int>(std::lround(sv / static_cast<double>(count)));
  const auto in_mask = [&](int u, int v) {
    return prob.data()[static_cast<std::size_t>(v) * W + u] >= threshold;
  };
  if (!in_mask(cu, cv)) {
    // nearest mask pixel by Euclidean distance, ties at the smallest
    // row-major index
    long best_d2 = -1;
    int bu = 0, bv = 0;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        if (!in_mask(u, v)) continue;
        const long d2 = static_cast<long>(u - cu) * (u - cu) + static_cast<long>(v - cv) * (v - cv);
        if (best_d2 < 0 || d2 < best_d2) {
          best_d2 = d2;
          bu = u;
          bv = v;
        }
      }
    cu = bu;
    cv = bv;
  }
  if (!cam.below_horizon(cv))
    throw HorizonError("mask_to_goal: centre pixel (" + std::to_string(cv) + "," +
                       std::to_string(cu) + ") is at or above the horizon");
  const auto [X, Y] = cam.pixel_to_ground(cu, cv);
  return {X, Y};
}

// ---------------------------------------------------------------------------
// Seeded RRT. Deterministic for a fixed seed; fails with the tree size when
// the iteration budget runs out.
// ---------------------------------------------------------------------------
inline Trajectory rrt_plan(const GroundScene& scene, const WorldPoint& start,
                           const WorldPoint& goal, const PlannerParams& pp, std::uint64_t seed) {
  if (!point_free(start, scene, pp))
    throw ContractError("rrt_plan: start is outside the workspace or inside an obstacle");
  if (!point_free(goal, scene, pp))
    throw ContractError("rrt_plan: goal is outside the workspace or inside an obstacle");
  if (dist(start, goal) <= pp.goal_tol) return Trajectory{{start}};

  struct Node {
    WorldPoint p;
    int parent;
  };
  std::vector<Node> tree{{start, -1}};
  Xoshiro256 rng(seed);
  for (int iter = 0; iter < pp.max_iters; ++iter) {
    WorldPoint sample;
    if (rng.next_double() < pp.goal_bias) {
      sample = goal;
    } else {
      sample = {rng.uniform(pp.x_min, pp.x_max), rng.uniform(pp.y_min, pp.y_max)};
    }
    int nearest = 0;
    double best = dist2(tree[0].p, sample);
    for (std::size_t i = 1; i < tree.size(); ++i) {
      const double d = dist2(tree[i].p, sample);
      if (d < best) {
        best = d;
        nearest = static_cast<int>(i);
      }
    }
    const WorldPoint& from = tree[static_cast<std::size_t>(nearest)].p;
    const double d = std::sqrt(best);
    if (d < 1e-9) continue;
    WorldPoint next = sample;
    if (d > pp.step) {
      const double s = pp.step / d;
      next = {from[0] + s * (sample[0] - from[0]), from[1] + s * (sample[1] - from[1])};
    }
    if (!segment_free(from, next, scene, pp)) continue;
    tree.push_back({next, nearest});
    if (dist(next, goal) <= pp.goal_tol) {
      std::vector<WorldPoint> rev;
      for (int i = static_cast<int>(tree.size()) - 1; i >= 0; i = tree[static_cast<std::size_t>(i)].parent)
        rev.push_back(tree[static_cast<std::size_t>(i)].p);
      Trajectory traj;
      traj.waypoints.assign(rev.rbegin(), rev.rend());
      return traj;
    }
  }
  throw PlanningError("rrt_plan: iteration budget exhausted (tree size " +
                          std::to_string(tree.size()) + ")",
                      tree.size());
}

// ---------------------------------------------------------------------------
// Independent trajectory validation: step bound, collision freedom, terminal
// tolerance. Kept free of rrt_plan internals.
// ---------------------------------------------------------------------------
struct PathReport {
  bool pass = true;
  std::string detail = "ok";
  int failed_segment = -1;
};

inline PathReport validate_path(const Trajectory& traj, const GroundScene& scene,
                                const WorldPoint& start, const WorldPoint& goal,
                                const PlannerParams& pp) {
  PathReport rep;
  auto fail = [&](const std::string& why, int seg) {
    rep.pass = false;
    rep.detail = why;
    rep.failed_segment = seg;
    return rep;
  };
  if (traj.waypoints.empty()) return fail("empty trajectory", -1);
  if (dist(traj.waypoints.front(), start) > 1e-9) return fail("trajectory does not begin at start", -1);
  if (dist(traj.waypoints.back(), goal) > pp.goal_tol)
    return fail("final waypoint misses the goal tolerance", static_cast<int>(traj.waypoints.size()) - 1);

  auto blocked = [&](double x, double y) {
    if (x < pp.x_min || x > pp.x_max || y < pp.y_min || y > pp.y_max) return true;
    for (const auto& r : scene.obstacles)
      if (x >= r[0] - pp.inflation && x <= r[2] + pp.inflation && y >= r[1] - pp.inflation &&
          y <= r[3] + pp.inflation)
        return true;
    return false;
  };
  for (std::size_t i = 0; i < traj.waypoints.size(); ++i) {
    const auto& p = traj.waypoints[i];
    if (blocked(p[0], p[1])) return fail("waypoint inside an obstacle or out of bounds", static_cast<int>(i));
    if (i == 0) continue;
    const auto& q = traj.waypoints[i - 1];
    if (dist(p, q) > pp.step + 1e-9) return fail("step bound exceeded", static_cast<int>(i - 1));
    const int steps = std::max(1, static_cast<int>(std::ceil(dist(p, q) / pp.collision_res)));
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      if (blocked(q[0] + t * (p[0] - q[0]), q[1] + t * (p[1] - q[1])))
        return fail("segment collides", static_cast<int>(i - 1));
    }
  }
  return rep;
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write trajectory: " + path);
  f << "x_m,y_m\n";
  char buf[80];
  for (const auto& [x, y] : traj.waypoints) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", x, y);
    f << buf;
  }
}

}  // namespace rnr
