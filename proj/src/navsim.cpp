#include "dynanav/navsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>

namespace dynanav {

namespace fs = std::filesystem;

double normalize_yaw(double theta) {
  double t = std::fmod(theta, 2.0 * M_PI);
  if (t <= -M_PI) t += 2.0 * M_PI;
  if (t > M_PI) t -= 2.0 * M_PI;
  return t;
}

namespace {

double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
Vec2 operator-(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator+(const Vec2& a, const Vec2& b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator*(const Vec2& a, double s) { return {a.x * s, a.y * s}; }
double norm(const Vec2& a) { return std::sqrt(dot(a, a)); }

double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 e = b - a;
  double len2 = dot(e, e);
  double t = len2 > 0.0 ? std::clamp(dot(p - a, e) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + e * t));
}

double point_rect_dist(const Vec2& p, const Landmark& l) {
  double dx = std::max({l.x - p.x, 0.0, p.x - (l.x + l.w)});
  double dy = std::max({l.y - p.y, 0.0, p.y - (l.y + l.h)});
  if (dx == 0.0 && dy == 0.0) return 0.0;  // inside
  return std::sqrt(dx * dx + dy * dy);
}

// First hit of the ray o + t*d against segment a-b; returns t or +inf.
double ray_segment(const Vec2& o, const Vec2& d, const Vec2& a, const Vec2& b) {
  Vec2 e = b - a;
  double den = cross(d, e);
  if (std::fabs(den) < 1e-12) return std::numeric_limits<double>::infinity();
  Vec2 ao = a - o;
  double t = cross(ao, e) / den;
  double s = cross(ao, d) / den;
  if (t > 1e-9 && s >= 0.0 && s <= 1.0) return t;
  return std::numeric_limits<double>::infinity();
}

struct Hit {
  double dist = std::numeric_limits<double>::infinity();
  double r = 0.85, g = 0.85, b = 0.85;  // wall gray
};

Hit cast_ray(const World& world, const Vec2& o, const Vec2& d) {
  Hit h;
  for (const Wall& w : world.walls) {
    double t = ray_segment(o, d, {w.x0, w.y0}, {w.x1, w.y1});
    if (t < h.dist) h = {t, 0.85, 0.85, 0.85};
  }
  for (const Landmark& l : world.landmarks) {
    Vec2 c[4] = {{l.x, l.y}, {l.x + l.w, l.y}, {l.x + l.w, l.y + l.h}, {l.x, l.y + l.h}};
    for (int i = 0; i < 4; ++i) {
      double t = ray_segment(o, d, c[i], c[(i + 1) % 4]);
      if (t < h.dist) h = {t, l.r, l.g, l.b};
    }
  }
  return h;
}

}  // namespace

bool collides(const World& world, const Vec2& p, double radius) {
  for (const Wall& w : world.walls)
    if (point_segment_dist(p, {w.x0, w.y0}, {w.x1, w.y1}) < radius) return true;
  for (const Landmark& l : world.landmarks)
    if (point_rect_dist(p, l) < radius) return true;
  return false;
}

int OccGrid::cell(double v) const {
  return std::clamp(static_cast<int>(std::floor(v / res)), 0, n - 1);
}

OccGrid occupancy_grid(const World& world, double res, double inflate) {
  OccGrid g;
  g.res = res;
  g.n = static_cast<int>(std::lround(world.size / res));
  g.occ.assign(static_cast<std::size_t>(g.n) * g.n, 0);
  for (int iy = 0; iy < g.n; ++iy)
    for (int ix = 0; ix < g.n; ++ix) {
      Vec2 c{(ix + 0.5) * res, (iy + 0.5) * res};
      if (collides(world, c, inflate)) g.occ[static_cast<std::size_t>(iy) * g.n + ix] = 1;
    }
  return g;
}

bool grid_connected(const OccGrid& grid, const Vec2& a, const Vec2& b) {
  int n = grid.n;
  int sx = grid.cell(a.x), sy = grid.cell(a.y);
  int tx = grid.cell(b.x), ty = grid.cell(b.y);
  if (grid.occupied(sx, sy) || grid.occupied(tx, ty)) return false;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n) * n, 0);
  std::deque<std::pair<int, int>> q{{sx, sy}};
  seen[static_cast<std::size_t>(sy) * n + sx] = 1;
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop_front();
    if (x == tx && y == ty) return true;
    static const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= n || ny >= n) continue;
      std::size_t idx = static_cast<std::size_t>(ny) * n + nx;
      if (seen[idx] || grid.occ[idx]) continue;
      seen[idx] = 1;
      q.emplace_back(nx, ny);
    }
  }
  return false;
}

namespace {

constexpr double kGridRes = 0.25;

double grid_inflate(const RunConfig& cfg) { return cfg.agent_radius + 0.05; }

Vec2 free_point(const World& world, const RunConfig& cfg, Rng& rng) {
  for (int i = 0; i < 200; ++i) {
    Vec2 p{rng.uniform(1.0, world.size - 1.0), rng.uniform(1.0, world.size - 1.0)};
    if (!collides(world, p, cfg.agent_radius + 0.15)) return p;
  }
  return {-1.0, -1.0};
}

}  // namespace

World gen_world(std::uint64_t seed, const RunConfig& cfg) {
  for (std::uint64_t attempt = 0; attempt < 300; ++attempt) {
    Rng rng = Rng(seed).fork(attempt);
    World w;
    w.seed = seed;
    w.size = cfg.map_size;
    double s = w.size;
    w.walls = {{0, 0, s, 0}, {s, 0, s, s}, {0, s, s, s}, {0, 0, 0, s}};

    auto add_interior = [&](bool vertical) {
      double coord = rng.uniform(2.0, s - 2.0);
      double gc = rng.uniform(1.5, s - 1.5);
      double gw = rng.uniform(0.9, 1.4);
      double lo = gc - gw, hi = gc + gw;
      auto piece = [&](double a, double b) {
        if (b - a < 0.3) return;
        if (vertical)
          w.walls.push_back({coord, a, coord, b});
        else
          w.walls.push_back({a, coord, b, coord});
      };
      piece(0.0, std::clamp(lo, 0.0, s));
      piece(std::clamp(hi, 0.0, s), s);
    };
    int nv = rng.uniform_int(1, 2), nh = rng.uniform_int(1, 2);
    for (int i = 0; i < nv; ++i) add_interior(true);
    for (int i = 0; i < nh; ++i) add_interior(false);

    static const double palette[6][3] = {{0.85, 0.2, 0.2}, {0.2, 0.7, 0.25}, {0.2, 0.35, 0.85},
                                         {0.9, 0.75, 0.15}, {0.75, 0.25, 0.8}, {0.15, 0.75, 0.75}};
    int nl = rng.uniform_int(4, 7);
    for (int i = 0; i < nl; ++i) {
      Landmark l;
      l.w = rng.uniform(0.4, 1.0);
      l.h = rng.uniform(0.4, 1.0);
      l.x = rng.uniform(0.5, s - 1.5);
      l.y = rng.uniform(0.5, s - 1.5);
      const double* c = palette[rng.uniform_int(0, 5)];
      l.r = c[0];
      l.g = c[1];
      l.b = c[2];
      w.landmarks.push_back(l);
    }

    Vec2 start = free_point(w, cfg, rng);
    if (start.x < 0.0) continue;
    w.start.p = start;
    w.start.theta = normalize_yaw(rng.uniform(-M_PI, M_PI));
    bool placed = false;
    for (int i = 0; i < 60 && !placed; ++i) {
      Vec2 g = free_point(w, cfg, rng);
      if (g.x < 0.0) break;
      if (norm(g - start) < cfg.goal_min_dist) continue;
      w.goal = g;
      placed = true;
    }
    if (!placed) continue;

    OccGrid grid = occupancy_grid(w, kGridRes, grid_inflate(cfg));
    if (!grid_connected(grid, w.start.p, w.goal)) continue;
    return w;
  }
  throw IoError("gen_world: retries exhausted for seed " + std::to_string(seed));
}

Image render(const World& world, const Pose& pose, int resolution) {
  const double fov = M_PI / 2.0;
  int R = resolution;
  Image img(R, R);
  double theta = normalize_yaw(pose.theta);
  for (int c = 0; c < R; ++c) {
    double delta = fov * (0.5 - (c + 0.5) / R);
    double ang = theta + delta;
    Hit h = cast_ray(world, pose.p, {std::cos(ang), std::sin(ang)});
    double dperp = h.dist * std::cos(delta);
    double hh = std::isfinite(dperp) ? std::min(R * 0.5, R * 0.35 / std::max(dperp, 0.15)) : 0.0;
    double shade = std::clamp(1.2 / (1.0 + 0.35 * dperp), 0.1, 1.0);
    for (int r = 0; r < R; ++r) {
      double off = (r + 0.5) - R * 0.5;
      double* px = &img.pixels[(static_cast<std::size_t>(r) * R + c) * 3];
      if (std::fabs(off) < hh) {
        px[0] = h.r * shade;
        px[1] = h.g * shade;
        px[2] = h.b * shade;
      } else if (off < 0.0) {
        px[0] = 0.60;
        px[1] = 0.72;
        px[2] = 0.88;
      } else {
        px[0] = 0.30;
        px[1] = 0.28;
        px[2] = 0.25;
      }
    }
  }
  img.clamp01();
  return img;
}

namespace {

std::vector<std::uint8_t> encode_frame(const Image& img) {
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  return out;
}

Image decode_frame(const std::vector<std::uint8_t>& raw, int res) {
  Image img(res, res);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

bool segment_free(const World& world, const Vec2& a, const Vec2& b, double radius) {
  double len = norm(b - a);
  int n = std::max(1, static_cast<int>(std::ceil(len / 0.06)));
  for (int i = 0; i <= n; ++i) {
    Vec2 p = a + (b - a) * (static_cast<double>(i) / n);
    if (collides(world, p, radius)) return false;
  }
  return true;
}

// A* over the occupancy grid, 8-connected.
std::vector<Vec2> grid_path(const World& world, const OccGrid& g, const Vec2& from,
                            const Vec2& to) {
  int n = g.n;
  int sx = g.cell(from.x), sy = g.cell(from.y);
  int tx = g.cell(to.x), ty = g.cell(to.y);
  auto id = [n](int x, int y) { return static_cast<std::size_t>(y) * n + x; };
  std::vector<double> dist(static_cast<std::size_t>(n) * n,
                           std::numeric_limits<double>::infinity());
  std::vector<int> prev(static_cast<std::size_t>(n) * n, -1);
  auto heur = [&](int x, int y) {
    double dx = std::fabs(x - tx), dy = std::fabs(y - ty);
    return std::max(dx, dy) + (M_SQRT2 - 1.0) * std::min(dx, dy);
  };
  using Node = std::pair<double, std::size_t>;
  std::priority_queue<Node, std::vector<Node>, std::greater<>> open;
  dist[id(sx, sy)] = 0.0;
  open.emplace(heur(sx, sy), id(sx, sy));
  while (!open.empty()) {
    auto [f, cur] = open.top();
    open.pop();
    int cx = static_cast<int>(cur % n), cy = static_cast<int>(cur / n);
    if (cx == tx && cy == ty) break;
    if (f > dist[cur] + heur(cx, cy) + 1e-12) continue;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        int nx = cx + dx, ny = cy + dy;
        if (nx < 0 || ny < 0 || nx >= n || ny >= n) continue;
        if (g.occupied(nx, ny)) continue;
        if (dx != 0 && dy != 0 && (g.occupied(cx + dx, cy) || g.occupied(cx, cy + dy)))
          continue;  // no corner cutting
        double step = (dx != 0 && dy != 0) ? M_SQRT2 : 1.0;
        std::size_t ni = id(nx, ny);
        if (dist[cur] + step < dist[ni] - 1e-12) {
          dist[ni] = dist[cur] + step;
          prev[ni] = static_cast<int>(cur);
          open.emplace(dist[ni] + heur(nx, ny), ni);
        }
      }
  }
  if (!std::isfinite(dist[id(tx, ty)]))
    throw IoError("expert_rollout: goal unreachable on the planning grid");
  std::vector<Vec2> pts;
  for (int cur = static_cast<int>(id(tx, ty)); cur >= 0; cur = prev[cur])
    pts.push_back({(cur % n + 0.5) * g.res, (cur / n + 0.5) * g.res});
  std::reverse(pts.begin(), pts.end());
  pts.front() = from;
  pts.back() = to;
  return pts;
}

std::vector<Vec2> shortcut(const World& world, const std::vector<Vec2>& pts, double radius) {
  std::vector<Vec2> out{pts.front()};
  std::size_t i = 0;
  while (i + 1 < pts.size()) {
    std::size_t j = pts.size() - 1;
    while (j > i + 1 && !segment_free(world, pts[i], pts[j], radius)) --j;
    out.push_back(pts[j]);
    i = j;
  }
  return out;
}

std::vector<Vec2> resample(const std::vector<Vec2>& pts, double step) {
  std::vector<Vec2> out{pts.front()};
  double carry = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    Vec2 a = pts[i], b = pts[i + 1];
    double seg = norm(b - a);
    if (seg < 1e-12) continue;
    Vec2 dir = (b - a) * (1.0 / seg);
    double s = step - carry;
    while (s <= seg) {
      out.push_back(a + dir * s);
      s += step;
    }
    carry = seg - (s - step);
  }
  Vec2 goal = pts.back();
  if (norm(goal - out.back()) < step * 0.5)
    out.back() = goal;
  else
    out.push_back(goal);
  return out;
}

}  // namespace

Episode expert_rollout(const World& world, const RunConfig& cfg) {
  OccGrid grid = occupancy_grid(world, kGridRes, grid_inflate(cfg));
  std::vector<Vec2> pts = grid_path(world, grid, world.start.p, world.goal);
  pts = shortcut(world, pts, cfg.agent_radius + 0.02);
  pts = resample(pts, cfg.step_m);

  Episode ep;
  ep.seed = world.seed;
  ep.res = cfg.image_size;
  ep.poses.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ep.poses[i].p = pts[i];
    if (i + 1 < pts.size()) {
      Vec2 d = pts[i + 1] - pts[i];
      ep.poses[i].theta = normalize_yaw(std::atan2(d.y, d.x));
    } else {
      ep.poses[i].theta = i > 0 ? ep.poses[i - 1].theta : world.start.theta;
    }
  }
  ep.length = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) ep.length += norm(pts[i + 1] - pts[i]);
  ep.frames.reserve(pts.size());
  for (const Pose& p : ep.poses) ep.frames.push_back(encode_frame(render(world, p, ep.res)));
  ep.goal_frame = encode_frame(render(world, ep.poses.back(), ep.res));
  return ep;
}

Image Episode::frame_image(int t) const { return decode_frame(frames.at(t), res); }
Image Episode::goal_image() const { return decode_frame(goal_frame, res); }

Vec2 world_to_agent(const Pose& pt, const Vec2& p_abs) {
  double c = std::cos(pt.theta), s = std::sin(pt.theta);
  Vec2 v = p_abs - pt.p;
  return {v.x * c + v.y * s, -v.x * s + v.y * c};
}

Vec2 waypoint_to_world(const Pose& pt, const Vec2& w) {
  double c = std::cos(pt.theta), s = std::sin(pt.theta);
  return {pt.p.x + w.x * c - w.y * s, pt.p.y + w.x * s + w.y * c};
}

Targets sample_targets(const Episode& ep, int t, int d, const RunConfig& cfg) {
  int n = ep.steps(), nw = cfg.num_waypoints;
  if (t < 0 || t >= n || d < 1 || t + d >= n)
    throw ShapeError("sample_targets: invalid (t, d) for episode of " + std::to_string(n) +
                     " poses");
  const Pose& pt = ep.poses[t];
  std::vector<double> act(static_cast<std::size_t>(nw) * 2);
  std::vector<double> wp(static_cast<std::size_t>(nw) * 2);
  for (int h = 1; h <= nw; ++h) {
    int j = std::min(t + h - 1, n - 2);
    Vec2 step = ep.poses[j + 1].p - ep.poses[j].p;
    double len = norm(step);
    Vec2 dir = len > 1e-12 ? step * (1.0 / len) : Vec2{std::cos(ep.poses[j].theta),
                                                       std::sin(ep.poses[j].theta)};
    Vec2 a = world_to_agent(Pose{{0.0, 0.0}, pt.theta}, dir);
    act[(h - 1) * 2] = a.x;
    act[(h - 1) * 2 + 1] = a.y;
    Vec2 w = world_to_agent(pt, ep.poses[std::min(t + h, n - 1)].p);
    wp[(h - 1) * 2] = w.x;
    wp[(h - 1) * 2 + 1] = w.y;
  }
  Targets tg;
  tg.actions = Tensor({nw, 2}, std::move(act));
  tg.waypoints = Tensor({nw, 2}, std::move(wp));
  tg.distance = d * cfg.step_m / cfg.max_goal_dist_m;
  return tg;
}

std::vector<Image> sample_window(const Episode& ep, int t, const RunConfig& cfg) {
  int p = cfg.past_frames;
  if (t < p || t >= ep.steps())
    throw ShapeError("sample_window: t must lie in [" + std::to_string(p) + ", episode end)");
  std::vector<Image> win;
  win.reserve(p + 1);
  for (int i = t - p; i <= t; ++i) win.push_back(ep.frame_image(i));
  return win;
}

std::vector<Sample> draw_samples(const std::vector<Episode>& episodes, Rng& rng,
                                 const RunConfig& cfg) {
  int p = cfg.past_frames;
  int d_min = std::max(1, static_cast<int>(std::ceil(cfg.min_goal_dist_m / cfg.step_m)));
  int d_cap = static_cast<int>(std::floor(cfg.max_goal_dist_m / cfg.step_m));
  std::vector<Sample> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    int n = episodes[e].steps();
    if (n < p + 2) continue;
    for (int k = 0; k < cfg.samples_per_episode; ++k) {
      int t = rng.uniform_int(p, n - 2);
      int hi = std::min(d_cap, n - 1 - t);
      int d = rng.uniform_int(std::min(d_min, hi), hi);
      out.push_back({static_cast<int>(e), t, d});
    }
  }
  return out;
}

std::vector<std::uint64_t> episode_seeds(int n_episodes, std::uint64_t seed) {
  Rng base(seed);
  std::vector<std::uint64_t> out(n_episodes);
  for (auto& s : out) s = base.next_u64();
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_episode_ids(int n_episodes,
                                                               std::uint64_t seed,
                                                               double split_ratio) {
  std::vector<int> ids(n_episodes);
  for (int i = 0; i < n_episodes; ++i) ids[i] = i;
  Rng split_rng = Rng(seed).fork(1);
  split_rng.shuffle(ids);
  int n_train = static_cast<int>(std::lround(split_ratio * n_episodes));
  n_train = std::clamp(n_train, 1, n_episodes - 1);
  std::vector<int> train_ids(ids.begin(), ids.begin() + n_train);
  std::vector<int> test_ids(ids.begin() + n_train, ids.end());
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  return {train_ids, test_ids};
}

Dataset make_dataset(int n_episodes, std::uint64_t seed, double split_ratio,
                     const RunConfig& cfg) {
  if (n_episodes < 5) throw IoError("make_dataset: need at least 5 episodes");
  std::vector<std::uint64_t> world_seeds = episode_seeds(n_episodes, seed);

  std::vector<Episode> all;
  all.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i)
    all.push_back(expert_rollout(gen_world(world_seeds[i], cfg), cfg));

  auto [train_ids, test_ids] = split_episode_ids(n_episodes, seed, split_ratio);

  Dataset ds;
  for (int i : train_ids) ds.train_episodes.push_back(std::move(all[i]));
  for (int i : test_ids) ds.test_episodes.push_back(std::move(all[i]));
  Rng train_rng = Rng(seed).fork(2);
  Rng test_rng = Rng(seed).fork(3);
  ds.train = draw_samples(ds.train_episodes, train_rng, cfg);
  ds.test = draw_samples(ds.test_episodes, test_rng, cfg);
  return ds;
}

double eval_closed_loop(const Policy& policy, const std::vector<World>& worlds,
                        int max_steps, const RunConfig& cfg) {
  if (worlds.empty()) throw IoError("eval_closed_loop: no worlds");
  double total = 0.0;
  for (const World& world : worlds) {
    Episode ep = expert_rollout(world, cfg);
    Image goal_img = ep.goal_image();
    std::vector<double> cum(ep.poses.size(), 0.0);
    for (std::size_t i = 1; i < ep.poses.size(); ++i)
      cum[i] = cum[i - 1] + norm(ep.poses[i].p - ep.poses[i - 1].p);

    // start from the expert's initial pose: same position as world.start but
    // facing the path, matching how episode pose 0 is recorded (world.start's
    // sampled heading is otherwise unused by the expert)
    Pose pose = ep.poses.front();
    std::vector<Image> window(cfg.window(), render(world, pose, cfg.image_size));
    double progress = 0.0;
    double score = 0.0;
    auto update_progress = [&](const Vec2& p) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t bi = 0;
      for (std::size_t i = 0; i < ep.poses.size(); ++i) {
        double d = norm(ep.poses[i].p - p);
        if (d < best) {
          best = d;
          bi = i;
        }
      }
      if (best < 1.0) progress = std::max(progress, cum[bi]);
    };
    update_progress(pose.p);
    for (int step = 0; step < max_steps; ++step) {
      if (norm(pose.p - world.goal) <= 0.25) {
        score = 1.0;
        break;
      }
      Vec2 w1 = policy(window, goal_img, pose);
      Vec2 target = waypoint_to_world(pose, w1);
      Vec2 dir = target - pose.p;
      double len = norm(dir);
      if (len < 1e-9) break;
      double move = std::min(cfg.step_m, len);
      Vec2 np = pose.p + dir * (move / len);
      // colliding moves are rejected rather than ending the rollout; the
      // agent stays put, the window still advances, and it may recover
      if (!collides(world, np, cfg.agent_radius)) {
        pose.p = np;
        pose.theta = normalize_yaw(std::atan2(dir.y, dir.x));
      }
      window.erase(window.begin());
      window.push_back(render(world, pose, cfg.image_size));
      update_progress(pose.p);
    }
    if (score < 1.0 && norm(pose.p - world.goal) <= 0.25) score = 1.0;
    if (score < 1.0) score = std::min(1.0, ep.length > 0.0 ? progress / ep.length : 0.0);
    total += score;
  }
  return total / static_cast<double>(worlds.size());
}

namespace {

bool warned_zero_norm = false;

double row_cosine(const double* a, const double* b, int k) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int i = 0; i < k; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) {
    if (!warned_zero_norm) {
      std::fprintf(stderr, "warning: zero-norm vector in cosine metric, similarity set to 0\n");
      warned_zero_norm = true;
    }
    return 0.0;
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

Metrics cosine_metrics(const std::vector<Prediction>& preds,
                       const std::vector<Targets>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw ShapeError("cosine_metrics: prediction/target count mismatch or empty batch");
  Metrics m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& pa = preds[i].actions.vec();
    const auto& pw = preds[i].waypoints.vec();
    const auto& ta = targets[i].actions.vec();
    const auto& tw = targets[i].waypoints.vec();
    if (pa.size() != ta.size() || pw.size() != tw.size())
      throw ShapeError("cosine_metrics: shape mismatch at sample " + std::to_string(i));
    int nw = static_cast<int>(pa.size()) / 2;
    double sim_a = 0.0, sim_w = 0.0, mse_a = 0.0;
    for (int r = 0; r < nw; ++r) {
      sim_a += row_cosine(&pa[2 * r], &ta[2 * r], 2);
      sim_w += row_cosine(&pw[2 * r], &tw[2 * r], 2);
    }
    sim_a /= nw;
    sim_w /= nw;
    for (std::size_t j = 0; j < pa.size(); ++j) mse_a += (pa[j] - ta[j]) * (pa[j] - ta[j]);
    mse_a /= static_cast<double>(pa.size());
    double dhat = preds[i].distance.item();
    m.sim_a += 100.0 * sim_a;
    m.sim_w += 100.0 * sim_w;
    m.loss_action += mse_a + (1.0 - sim_a);
    m.loss_dist += (dhat - targets[i].distance) * (dhat - targets[i].distance);
  }
  double n = static_cast<double>(preds.size());
  m.sim_a /= n;
  m.sim_w /= n;
  m.loss_action /= n;
  m.loss_dist /= n;
  return m;
}

// ---- episode archive ------------------------------------------------------

void save_episode(const std::string& dir, const Episode& ep, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ostringstream os;
  os.precision(17);
  os << "episode_version 1\n";
  os << "seed " << ep.seed << "\n";
  os << "res " << ep.res << "\n";
  os << "length " << ep.length << "\n";
  os << "poses " << ep.poses.size() << "\n";
  for (const Pose& p : ep.poses) os << p.p.x << " " << p.p.y << " " << p.theta << "\n";
  os << "actions " << (ep.poses.empty() ? 0 : ep.poses.size() - 1) << "\n";
  for (std::size_t i = 0; i + 1 < ep.poses.size(); ++i) {
    Vec2 d = ep.poses[i + 1].p - ep.poses[i].p;
    double len = norm(d);
    if (len > 1e-12) d = d * (1.0 / len);
    os << d.x << " " << d.y << "\n";
  }
  int nw = cfg.num_waypoints;
  os << "waypoints " << ep.poses.size() << " " << nw << "\n";
  for (std::size_t t = 0; t < ep.poses.size(); ++t) {
    for (int h = 1; h <= nw; ++h) {
      std::size_t j = std::min(t + h, ep.poses.size() - 1);
      Vec2 w = world_to_agent(ep.poses[t], ep.poses[j].p);
      os << w.x << " " << w.y << (h == nw ? "" : " ");
    }
    os << "\n";
  }
  atomic_write_file((fs::path(dir) / "meta").string(), os.str());
  char name[32];
  for (std::size_t t = 0; t < ep.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", t);
    write_ppm((fs::path(dir) / name).string(), ep.frame_image(static_cast<int>(t)));
  }
  write_ppm((fs::path(dir) / "goal.ppm").string(), ep.goal_image());
}

Episode load_episode(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "meta");
  if (!is) throw IoError("episode: cannot open " + dir + "/meta");
  std::string key;
  int version = 0;
  is >> key >> version;
  if (key != "episode_version" || version != 1)
    throw IoError("episode: bad meta header in " + dir);
  Episode ep;
  std::size_t n = 0;
  while (is >> key) {
    if (key == "seed") {
      is >> ep.seed;
    } else if (key == "res") {
      is >> ep.res;
    } else if (key == "length") {
      is >> ep.length;
    } else if (key == "poses") {
      is >> n;
      ep.poses.resize(n);
      for (Pose& p : ep.poses) is >> p.p.x >> p.p.y >> p.theta;
    } else if (key == "actions") {
      std::size_t na;
      is >> na;
      double v;
      for (std::size_t i = 0; i < na * 2; ++i) is >> v;  // derivable; skip
    } else if (key == "waypoints") {
      std::size_t np, nw;
      is >> np >> nw;
      double v;
      for (std::size_t i = 0; i < np * nw * 2; ++i) is >> v;
    } else {
      throw IoError("episode: unknown meta key '" + key + "' in " + dir);
    }
  }
  if (!n || ep.res <= 0) throw IoError("episode: incomplete meta in " + dir);
  char name[32];
  ep.frames.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", t);
    ep.frames.push_back(encode_frame(read_ppm((fs::path(dir) / name).string())));
  }
  ep.goal_frame = encode_frame(read_ppm((fs::path(dir) / "goal.ppm").string()));
  return ep;
}

}  // namespace dynanav
