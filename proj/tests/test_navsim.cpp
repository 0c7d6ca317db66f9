#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dynanav/navsim.hpp"

using namespace dynanav;

namespace {

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("agent-frame transforms invert each other and match a hand oracle") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Pose pt{{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)}, rng.uniform(-3.0, 3.0)};
    Vec2 p{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    Vec2 back = waypoint_to_world(pt, world_to_agent(pt, p));
    CHECK(dist(back, p) < 1e-12);
  }
  // facing +y, one unit forward in the agent frame lands one unit up in the world
  Pose up{{2.0, 3.0}, M_PI / 2.0};
  Vec2 w = waypoint_to_world(up, {1.0, 0.0});
  CHECK(w.x == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(w.y == doctest::Approx(4.0).epsilon(1e-12));
  Vec2 a = world_to_agent(up, {2.0, 4.0});
  CHECK(a.x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(a.y) < 1e-12);

  CHECK(normalize_yaw(3.0 * M_PI) == doctest::Approx(M_PI).epsilon(1e-12));
  CHECK(normalize_yaw(-0.5) == doctest::Approx(-0.5).epsilon(1e-12));
  for (double t : {-10.0, -3.2, 0.0, 7.7, 100.0}) {
    double n = normalize_yaw(t);
    CHECK(n > -M_PI - 1e-12);
    CHECK(n <= M_PI + 1e-12);
    CHECK(std::fabs(std::sin(n) - std::sin(t)) < 1e-9);
    CHECK(std::fabs(std::cos(n) - std::cos(t)) < 1e-9);
  }
}

TEST_CASE("generated worlds are deterministic, connected and satisfy the goal separation") {
  RunConfig cfg;
  World a = gen_world(17, cfg);
  World b = gen_world(17, cfg);
  CHECK(a.walls.size() == b.walls.size());
  for (std::size_t i = 0; i < a.walls.size(); ++i) {
    CHECK(a.walls[i].x0 == b.walls[i].x0);
    CHECK(a.walls[i].y1 == b.walls[i].y1);
  }
  CHECK(a.start.p.x == b.start.p.x);
  CHECK(a.goal.y == b.goal.y);

  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    World w = gen_world(seed, cfg);
    CHECK(w.size == cfg.map_size);
    CHECK(w.walls.size() >= 4);  // boundary plus interior pieces
    CHECK_FALSE(collides(w, w.start.p, cfg.agent_radius));
    CHECK_FALSE(collides(w, w.goal, cfg.agent_radius));
    CHECK(dist(w.start.p, w.goal) >= cfg.goal_min_dist);
    OccGrid grid = occupancy_grid(w, 0.25, cfg.agent_radius + 0.05);
    CHECK(grid_connected(grid, w.start.p, w.goal));
  }
}

TEST_CASE("rendering is deterministic, yaw-periodic and fisheye-corrected") {
  RunConfig cfg;
  World w = gen_world(3, cfg);
  Pose pose = w.start;
  Image r1 = render(w, pose, cfg.image_size);
  Image r2 = render(w, pose, cfg.image_size);
  CHECK(r1.pixels == r2.pixels);
  Pose shifted = pose;
  shifted.theta = pose.theta + 2.0 * M_PI;
  Image r3 = render(w, shifted, cfg.image_size);
  for (std::size_t i = 0; i < r1.pixels.size(); ++i)
    CHECK(std::fabs(r1.pixels[i] - r3.pixels[i]) < 1e-9);

  // an empty room viewed square-on: every ray hits the same flat wall, so the
  // perpendicular-corrected band height is identical in every column
  World room;
  room.size = 12.0;
  room.walls = {{0, 0, 12, 0}, {12, 0, 12, 12}, {0, 12, 12, 12}, {0, 0, 0, 12}};
  Pose facing{{6.0, 2.0}, -M_PI / 2.0};  // two meters from the y=0 wall
  Image flat = render(room, facing, 32);
  for (int c = 1; c < 32; ++c)
    for (int r = 0; r < 32; ++r)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(std::fabs(flat.at(r, c, ch) - flat.at(r, 0, ch)) < 1e-9);
  // sky above, floor below, shaded wall in the middle
  CHECK(flat.at(0, 0, 2) == doctest::Approx(0.88).epsilon(1e-12));
  CHECK(flat.at(31, 0, 0) == doctest::Approx(0.30).epsilon(1e-12));
  double shade = std::clamp(1.2 / (1.0 + 0.35 * 2.0), 0.1, 1.0);
  CHECK(flat.at(16, 16, 0) == doctest::Approx(0.85 * shade).epsilon(1e-9));
}

TEST_CASE("expert episodes walk the map at the configured step and reach the goal") {
  RunConfig cfg;
  World w = gen_world(5, cfg);
  Episode ep = expert_rollout(w, cfg);
  REQUIRE(ep.steps() >= 2);
  CHECK(ep.seed == w.seed);
  CHECK(ep.res == cfg.image_size);
  CHECK(dist(ep.poses.front().p, w.start.p) < 1e-12);
  CHECK(dist(ep.poses.back().p, w.goal) < 1e-12);
  double total = 0.0;
  for (int i = 0; i + 1 < ep.steps(); ++i) {
    double seg = dist(ep.poses[i].p, ep.poses[i + 1].p);
    total += seg;
    CHECK(seg <= cfg.step_m + 1e-9);
    CHECK_FALSE(collides(w, ep.poses[i].p, cfg.agent_radius));
  }
  CHECK(ep.length == doctest::Approx(total).epsilon(1e-12));
  CHECK(ep.frames.size() == ep.poses.size());
  // frames are stored 8-bit: every decoded value is k/255
  Image f = ep.frame_image(0);
  for (double v : f.pixels) {
    double k = v * 255.0;
    CHECK(std::fabs(k - std::lround(k)) < 1e-9);
  }
}

TEST_CASE("sample targets carry unit actions and exact agent-frame waypoints") {
  RunConfig cfg;
  Episode ep = expert_rollout(gen_world(6, cfg), cfg);
  int n = ep.steps();
  REQUIRE(n > cfg.past_frames + 3);
  int t = cfg.past_frames + 1, d = std::min(8, n - 2 - t);
  REQUIRE(d >= 1);
  Targets tg = sample_targets(ep, t, d, cfg);
  REQUIRE(tg.actions.shape() == Shape{cfg.num_waypoints, 2});
  for (int h = 0; h < cfg.num_waypoints; ++h) {
    double n2 = tg.actions[h * 2] * tg.actions[h * 2] + tg.actions[h * 2 + 1] * tg.actions[h * 2 + 1];
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-9));
    Vec2 w{tg.waypoints[h * 2], tg.waypoints[h * 2 + 1]};
    Vec2 world = waypoint_to_world(ep.poses[t], w);
    CHECK(dist(world, ep.poses[std::min(t + h + 1, n - 1)].p) < 1e-9);
  }
  CHECK(tg.distance == doctest::Approx(d * cfg.step_m / cfg.max_goal_dist_m).epsilon(1e-12));
  CHECK_THROWS_AS(sample_targets(ep, t, n, cfg), ShapeError);
  CHECK_THROWS_AS(sample_targets(ep, t, 0, cfg), ShapeError);
  CHECK_THROWS_AS(sample_targets(ep, -1, 1, cfg), ShapeError);

  std::vector<Image> win = sample_window(ep, t, cfg);
  REQUIRE(static_cast<int>(win.size()) == cfg.window());
  Image last = ep.frame_image(t);
  CHECK(win.back().pixels == last.pixels);
  CHECK(win.front().pixels == ep.frame_image(t - cfg.past_frames).pixels);
  CHECK_THROWS_AS(sample_window(ep, cfg.past_frames - 1, cfg), ShapeError);
}

TEST_CASE("dataset assembly splits episodes 80/20 and draws only valid samples") {
  RunConfig cfg;
  Dataset ds = make_dataset(10, 42, 0.8, cfg);
  CHECK(ds.train_episodes.size() == 8);
  CHECK(ds.test_episodes.size() == 2);
  CHECK(ds.train.size() == 8 * static_cast<std::size_t>(cfg.samples_per_episode));
  CHECK(ds.test.size() == 2 * static_cast<std::size_t>(cfg.samples_per_episode));
  auto check_samples = [&](const std::vector<Sample>& ss, const std::vector<Episode>& eps) {
    for (const Sample& s : ss) {
      REQUIRE(s.episode_id >= 0);
      REQUIRE(s.episode_id < static_cast<int>(eps.size()));
      int n = eps[s.episode_id].steps();
      CHECK(s.t >= cfg.past_frames);
      CHECK(s.t <= n - 2);
      CHECK(s.d >= 1);
      CHECK(s.t + s.d <= n - 1);
      sample_targets(eps[s.episode_id], s.t, s.d, cfg);  // must not throw
    }
  };
  check_samples(ds.train, ds.train_episodes);
  check_samples(ds.test, ds.test_episodes);

  // train and test hold different worlds
  bool overlap = false;
  for (const Episode& a : ds.train_episodes)
    for (const Episode& b : ds.test_episodes)
      if (a.seed == b.seed) overlap = true;
  CHECK_FALSE(overlap);

  Dataset again = make_dataset(10, 42, 0.8, cfg);
  REQUIRE(again.train_episodes.size() == ds.train_episodes.size());
  for (std::size_t i = 0; i < ds.train_episodes.size(); ++i) {
    CHECK(again.train_episodes[i].seed == ds.train_episodes[i].seed);
    CHECK(again.train_episodes[i].poses.size() == ds.train_episodes[i].poses.size());
    CHECK(again.train_episodes[i].frames == ds.train_episodes[i].frames);
  }
  CHECK(again.train.size() == ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(again.train[i].t == ds.train[i].t);
    CHECK(again.train[i].d == ds.train[i].d);
  }
}

TEST_CASE("closed-loop scoring separates an expert from a frozen agent") {
  RunConfig cfg;
  std::vector<World> worlds{gen_world(11, cfg), gen_world(12, cfg)};
  for (const World& w : worlds) {
    Episode ep = expert_rollout(w, cfg);
    Policy expert = [&ep](const std::vector<Image>&, const Image&, const Pose& pose) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < ep.poses.size(); ++i) {
        double d = dist(ep.poses[i].p, pose.p);
        if (d < bd) {
          bd = d;
          best = i;
        }
      }
      std::size_t j = std::min(best + 2, ep.poses.size() - 1);
      return world_to_agent(pose, ep.poses[j].p);
    };
    double s = eval_closed_loop(expert, {w}, ep.steps() * 4, cfg);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Policy frozen = [](const std::vector<Image>&, const Image&, const Pose&) {
    return Vec2{0.0, 0.0};
  };
  CHECK(eval_closed_loop(frozen, worlds, 50, cfg) < 0.05);
  CHECK_THROWS_AS(eval_closed_loop(frozen, {}, 10, cfg), IoError);
}

TEST_CASE("cosine metrics match a hand computation and handle degenerate rows") {
  auto mk = [](std::vector<double> a, std::vector<double> w, double d) {
    Prediction p;
    int nw = static_cast<int>(a.size()) / 2;
    p.actions = Tensor({nw, 2}, std::move(a));
    p.waypoints = Tensor({nw, 2}, std::move(w));
    p.distance = Tensor::scalar(d);
    return p;
  };
  auto mt = [](std::vector<double> a, std::vector<double> w, double d) {
    Targets t;
    int nw = static_cast<int>(a.size()) / 2;
    t.actions = Tensor({nw, 2}, std::move(a));
    t.waypoints = Tensor({nw, 2}, std::move(w));
    t.distance = d;
    return t;
  };
  // identical: similarity 100, action loss 0, distance loss 0
  Metrics perfect = cosine_metrics({mk({1, 0, 0, 1}, {1, 2, 3, 4}, 0.5)},
                                   {mt({1, 0, 0, 1}, {1, 2, 3, 4}, 0.5)});
  CHECK(perfect.sim_a == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(perfect.sim_w == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(perfect.loss_action == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(perfect.loss_dist == doctest::Approx(0.0).epsilon(1e-12));

  // anti-parallel actions: similarity -100
  Metrics anti = cosine_metrics({mk({1, 0, 0, 1}, {1, 2, 3, 4}, 0.5)},
                                {mt({-1, 0, 0, -1}, {1, 2, 3, 4}, 0.25)});
  CHECK(anti.sim_a == doctest::Approx(-100.0).epsilon(1e-12));
  // hand decomposition: mse = mean of squared diffs = (4+0+0+4)/4 = 2; 1 - cos = 2
  CHECK(anti.loss_action == doctest::Approx(2.0 + 2.0).epsilon(1e-12));
  CHECK(anti.loss_dist == doctest::Approx(0.0625).epsilon(1e-12));

  // zero-norm target row scores 0 similarity for that row
  Metrics degen = cosine_metrics({mk({1, 0, 0, 1}, {1, 0, 0, 1}, 0.0)},
                                 {mt({1, 0, 0, 0}, {1, 0, 0, 1}, 0.0)});
  CHECK(degen.sim_a == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(degen.sim_w == doctest::Approx(100.0).epsilon(1e-12));

  CHECK_THROWS_AS(cosine_metrics({}, {}), ShapeError);
  CHECK_THROWS_AS(cosine_metrics({mk({1, 0}, {1, 0}, 0.0)},
                                 {mt({1, 0, 0, 1}, {1, 0, 0, 1}, 0.0)}),
                  ShapeError);
}

TEST_CASE("episode archives round-trip through the directory format") {
  RunConfig cfg;
  Episode ep = expert_rollout(gen_world(7, cfg), cfg);
  std::string dir = "/tmp/dynanav_test_episode";
  std::filesystem::remove_all(dir);
  save_episode(dir, ep, cfg);
  Episode back = load_episode(dir);
  CHECK(back.seed == ep.seed);
  CHECK(back.res == ep.res);
  CHECK(back.length == doctest::Approx(ep.length).epsilon(1e-15));
  REQUIRE(back.poses.size() == ep.poses.size());
  for (std::size_t i = 0; i < ep.poses.size(); ++i) {
    CHECK(back.poses[i].p.x == ep.poses[i].p.x);
    CHECK(back.poses[i].p.y == ep.poses[i].p.y);
    CHECK(back.poses[i].theta == ep.poses[i].theta);
  }
  CHECK(back.frames == ep.frames);  // 8-bit storage survives the PPM round trip
  CHECK(back.goal_frame == ep.goal_frame);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_episode("/tmp/dynanav_no_such_episode"), IoError);
}

TEST_CASE("dataset helpers expose the seed and split plan used by generation") {
  std::vector<std::uint64_t> s1 = episode_seeds(6, 9), s2 = episode_seeds(6, 9);
  CHECK(s1 == s2);
  CHECK(s1.size() == 6);
  auto [tr, te] = split_episode_ids(10, 9, 0.8);
  CHECK(tr.size() == 8);
  CHECK(te.size() == 2);
  std::vector<int> all = tr;
  all.insert(all.end(), te.begin(), te.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 10; ++i) CHECK(all[i] == i);
}
