#pragma once

#include <cstdint>
#include <functional>

#include "dynanav/config.hpp"
#include "dynanav/decoder.hpp"
#include "dynanav/image.hpp"
#include "dynanav/rng.hpp"

namespace dynanav {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

struct Pose {
  Vec2 p;
  double theta = 0.0;  // yaw, normalized to (-pi, pi]
};

double normalize_yaw(double theta);

// Axis-aligned wall segment in meters.
struct Wall {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Colored rectangular obstacle (corner at x,y; extent w,h).
struct Landmark {
  double x = 0, y = 0, w = 0, h = 0;
  double r = 0, g = 0, b = 0;
};

struct World {
  std::uint64_t seed = 0;
  double size = 0.0;  // square map side, meters
  std::vector<Wall> walls;
  std::vector<Landmark> landmarks;
  Pose start;
  Vec2 goal;
};

// Agent disc at p intersects a wall or landmark.
bool collides(const World& world, const Vec2& p, double radius);

// Occupancy grid over the map at fixed resolution, obstacles inflated.
struct OccGrid {
  int n = 0;
  double res = 0.0;
  std::vector<std::uint8_t> occ;  // n*n, row-major by y then x

  bool occupied(int ix, int iy) const { return occ[static_cast<std::size_t>(iy) * n + ix] != 0; }
  int cell(double v) const;
};

OccGrid occupancy_grid(const World& world, double res, double inflate);
bool grid_connected(const OccGrid& grid, const Vec2& a, const Vec2& b);

// Deterministic world from seed; start/goal guaranteed connected (flood fill
// at 0.25 m) and at least goal_min_dist apart. Throws after retry exhaustion.
World gen_world(std::uint64_t seed, const RunConfig& cfg);

// Forward raycast rendering, 90 degree field of view, distance-shaded walls
// and landmark colors.
Image render(const World& world, const Pose& pose, int resolution);

struct Episode {
  std::uint64_t seed = 0;
  std::vector<Pose> poses;
  std::vector<std::vector<std::uint8_t>> frames;  // 8-bit RGB, res*res*3 each
  std::vector<std::uint8_t> goal_frame;
  int res = 0;
  double length = 0.0;  // meters

  Image frame_image(int t) const;
  Image goal_image() const;
  int steps() const { return static_cast<int>(poses.size()); }
};

// Shortest grid path start -> goal, smoothed and resampled at step_m, with
// rendered observations along it.
Episode expert_rollout(const World& world, const RunConfig& cfg);

// w = (P - P_t) R(theta_t): world offset into the agent frame (row vector).
Vec2 world_to_agent(const Pose& pt, const Vec2& p_abs);
// P = P_t + w R(theta_t)^T: exact inverse of world_to_agent.
Vec2 waypoint_to_world(const Pose& pt, const Vec2& w);

struct Targets {
  Tensor actions;    // (num_waypoints, 2), unit rows, agent frame
  Tensor waypoints;  // (num_waypoints, 2), agent frame
  double distance = 0.0;  // goal separation, normalized by max_goal_dist_m
};

// Ground truth at timestep t for goal frame t+d; indices clamp at episode end.
Targets sample_targets(const Episode& ep, int t, int d, const RunConfig& cfg);

struct Sample {
  int episode_id = 0;  // index into the owning episode vector
  int t = 0;
  int d = 0;
};

// p+1 observation images ending at t, oldest first.
std::vector<Image> sample_window(const Episode& ep, int t, const RunConfig& cfg);

struct Dataset {
  std::vector<Episode> train_episodes;
  std::vector<Episode> test_episodes;
  std::vector<Sample> train;  // refer to train_episodes
  std::vector<Sample> test;   // refer to test_episodes
};

// Deterministic per-episode world seeds and the episode-level id split used
// by make_dataset and the data-generation command.
std::vector<std::uint64_t> episode_seeds(int n_episodes, std::uint64_t seed);
std::pair<std::vector<int>, std::vector<int>> split_episode_ids(int n_episodes,
                                                               std::uint64_t seed,
                                                               double split_ratio);

// Pure function of (n_episodes, seed, split_ratio): generates worlds, expert
// episodes, an episode-level split, and per-episode samples. n_episodes >= 5.
Dataset make_dataset(int n_episodes, std::uint64_t seed, double split_ratio,
                     const RunConfig& cfg);

// Draws samples_per_episode samples from each episode (valid t and d only).
std::vector<Sample> draw_samples(const std::vector<Episode>& episodes, Rng& rng,
                                 const RunConfig& cfg);

// Policy maps (observation window, goal image, current pose) to the next
// agent-frame waypoint. Learned policies ignore the pose.
using Policy = std::function<Vec2(const std::vector<Image>&, const Image&, const Pose&)>;

// Closed-loop controller toward the policy's first waypoint with collision
// checks; per-world score = progress along the expert path / expert length,
// capped at 1 on goal reach. Returns the mean over worlds.
double eval_closed_loop(const Policy& policy, const std::vector<World>& worlds,
                        int max_steps, const RunConfig& cfg);

struct Metrics {
  double sim_a = 0.0;  // percent
  double sim_w = 0.0;  // percent
  double loss_action = 0.0;
  double loss_dist = 0.0;
};

// Mean per-sample cosine similarities (percent) and losses. Zero-norm rows
// score similarity 0 and emit a warning on stderr.
Metrics cosine_metrics(const std::vector<Prediction>& preds,
                       const std::vector<Targets>& targets);

// Episode archive: one directory per episode holding a versioned `meta` text
// file (seed, poses, actions, waypoints) plus frame_NNNN.ppm and goal.ppm.
void save_episode(const std::string& dir, const Episode& ep, const RunConfig& cfg);
Episode load_episode(const std::string& dir);

}  // namespace dynanav
