#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dynanav/bo.hpp"
#include "dynanav/trainer.hpp"

using namespace dynanav;

namespace {

EvalResult quad_result(double v) {
  EvalResult r;
  r.J = v;
  r.V = v;
  return r;
}

}  // namespace

TEST_CASE("penalty combines weighted normalized violations with similarity floors") {
  Constraints c;
  c.t_max = 2.0;
  c.g_max = 4.0;
  c.f_max = 10.0;
  c.sim_a_min = 0.95;
  c.sim_w_min = 0.96;
  c.xi = {0.8, 0.5, 1.0};

  CostReport within;
  within.mean_time_units = 1.0;
  within.peak_mem_units = 3.0;
  within.mean_flops = 9.0;
  CHECK(penalty_P(within, 0.99, 0.99, c) == 0.0);

  CostReport over;
  over.mean_time_units = 3.0;  // violation (3-2)/2 = 0.5, weighted 0.4
  over.peak_mem_units = 2.0;   // satisfied
  over.mean_flops = 11.0;      // violation 0.1, weighted 0.1
  double p = penalty_P(over, 0.90, 1.0, c);  // sim_a shortfall 0.05
  CHECK(p == doctest::Approx(0.4 + 0.1 + 0.05).epsilon(1e-12));

  // memory-only violation exercises the middle weight
  CostReport mem;
  mem.mean_time_units = 1.0;
  mem.peak_mem_units = 6.0;  // violation 0.5, weighted 0.25
  mem.mean_flops = 1.0;
  CHECK(penalty_P(mem, 0.99, 0.99, c) == doctest::Approx(0.25).epsilon(1e-12));

  Constraints bad = c;
  bad.xi = {1.0};
  CHECK_THROWS_AS(penalty_P(within, 1.0, 1.0, bad), ShapeError);
}

TEST_CASE("constraint budgets scale the static cost by the configured ratios") {
  RunConfig cfg;
  CostCoefficients coeffs;
  int tokens = 100;
  Constraints c = Constraints::from_config(cfg, tokens, coeffs);
  double sf = static_cast<double>(cost::static_flops(cfg, tokens));
  double sm = static_cast<double>(cost::static_mem_elems(cfg, tokens));
  CHECK(c.f_max == doctest::Approx(cfg.flops_budget_ratio * sf).epsilon(1e-12));
  CHECK(c.t_max == doctest::Approx(cfg.time_budget_ratio * sf * coeffs.time_per_flop).epsilon(1e-12));
  CHECK(c.g_max == doctest::Approx(cfg.mem_budget_ratio * sm).epsilon(1e-12));
  CHECK(c.sim_a_min == cfg.sim_a_min);
  CHECK(c.xi == cfg.xi);
}

TEST_CASE("search points map onto runnable thresholds") {
  RunConfig cfg;
  SearchSpace space = SearchSpace::from_config(cfg);
  CHECK(space.dim() == cfg.decoder_layers);  // eta_2..eta_l plus the gate distance
  CHECK(space.hi.back() == cfg.gate_dist_max);
  CHECK(space.hi.front() == cfg.eta_max);

  ExitThresholds th = thresholds_from_point({0.1, 0.2, 0.3, 1.5}, cfg);
  CHECK(th.eta == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(th.pre_gate.feature_dist_threshold == 1.5);
  CHECK(th.pre_gate.max_masked_obs == cfg.max_masked_obs);
  CHECK(th.pre_gate.max_masked_goal == cfg.max_masked_goal);
  CHECK(th.pre_decoder_enabled);
  CHECK(th.layer_exit_enabled);
  CHECK_THROWS_AS(thresholds_from_point({0.1, 0.2}, cfg), ShapeError);
}

TEST_CASE("the optimizer closes in on a smooth 1-D optimum") {
  SearchSpace space;
  space.lo = {0.0};
  space.hi = {1.0};
  ObjectiveFn obj = [](const std::vector<double>& x) {
    double d = x[0] - 0.37;
    return quad_result(-d * d);
  };
  Rng rng(5);
  BOState st = optimize(space, obj, 20, rng);
  CHECK(st.history.size() == 20);
  CHECK(std::fabs(st.best_x[0] - 0.37) < 0.03);
  CHECK(st.best_v > -0.001);
}

TEST_CASE("the incumbent tracks the running maximum of V") {
  SearchSpace space;
  space.lo = {0.0, 0.0};
  space.hi = {1.0, 2.0};
  ObjectiveFn obj = [](const std::vector<double>& x) {
    return quad_result(std::sin(5.0 * x[0]) + 0.3 * x[1]);
  };
  Rng rng(6);
  BOState st = optimize(space, obj, 12, rng);
  double best = -1e18;
  std::vector<double> bx;
  for (const BORecord& r : st.history) {
    CHECK(r.r.V == r.r.J - r.r.P);
    if (r.r.V > best) {
      best = r.r.V;
      bx = r.x;
    }
    // every evaluated point stays inside the box
    CHECK(r.x[0] >= 0.0);
    CHECK(r.x[0] <= 1.0);
    CHECK(r.x[1] >= 0.0);
    CHECK(r.x[1] <= 2.0);
  }
  CHECK(st.best_v == best);
  CHECK(st.best_x == bx);

  // a flat objective still completes the budget and reports the constant
  ObjectiveFn flat = [](const std::vector<double>&) { return quad_result(0.25); };
  Rng rng2(7);
  BOState fs = optimize(space, flat, 8, rng2);
  CHECK(fs.history.size() == 8);
  CHECK(fs.best_v == 0.25);
}

TEST_CASE("seed points are evaluated first and the incumbent never falls below them") {
  SearchSpace space;
  space.lo = {0.0};
  space.hi = {1.0};
  ObjectiveFn obj = [](const std::vector<double>& x) { return quad_result(-x[0]); };
  Rng rng(8);
  BOState st = optimize(space, obj, 10, rng, {{0.0}});
  CHECK(st.history.front().x == std::vector<double>{0.0});
  CHECK(st.best_v >= st.history.front().r.V);
  CHECK(st.best_v == 0.0);  // the seed is the optimum here
  CHECK_THROWS_AS(optimize(space, obj, 2, rng), IoError);  // budget below dim + 2
}

TEST_CASE("history files persist every record and resume mid-run") {
  std::string path = "/tmp/dynanav_test_bo_history.txt";
  std::remove(path.c_str());
  SearchSpace space;
  space.lo = {0.0, 0.0};
  space.hi = {1.0, 1.0};
  int calls = 0;
  ObjectiveFn obj = [&calls](const std::vector<double>& x) {
    ++calls;
    return quad_result(x[0] * x[1]);
  };
  Rng rng(9);
  BOState first = optimize(space, obj, 6, rng, {}, path);
  CHECK(calls == 6);

  BOState loaded = load_history(path, 2);
  REQUIRE(loaded.history.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(loaded.history[i].x == first.history[i].x);
    CHECK(loaded.history[i].r.V == first.history[i].r.V);
    CHECK(loaded.history[i].r.J == first.history[i].r.J);
  }
  CHECK(loaded.best_v == first.best_v);

  // resuming with a larger budget only spends the remainder
  Rng rng2(10);
  BOState resumed = optimize(space, obj, 9, rng2, {}, path);
  CHECK(calls == 9);
  CHECK(resumed.history.size() == 9);
  for (std::size_t i = 0; i < 6; ++i) CHECK(resumed.history[i].x == first.history[i].x);
  std::remove(path.c_str());

  CHECK(load_history("/tmp/dynanav_no_such_history.txt", 2).history.empty());
}

TEST_CASE("threshold evaluation on real episodes reports V = J - P consistently") {
  RunConfig cfg;
  cfg.past_frames = 2;  // shorter window keeps this check quick
  Model m(cfg, 31);
  std::vector<Episode> eps{expert_rollout(gen_world(13, cfg), cfg)};
  CostCoefficients coeffs;
  ExitThresholds th = thresholds_from_point({0.0, 0.0, 0.0, 0.0}, cfg);
  Constraints c = Constraints::from_config(cfg, (cfg.window() + 1) * cfg.num_pixels(), coeffs);

  EvalResult r = evaluate_thresholds(m, eps, th, c, cfg, coeffs, 8);
  CHECK(r.V == r.J - r.P);
  CHECK(r.P == doctest::Approx(penalty_P(r.cost, r.sim_a, r.sim_w, c)).epsilon(1e-12));
  CHECK(r.J == doctest::Approx(r.sim_a + cfg.lambda * r.sim_w).epsilon(1e-12));
  CHECK(r.sim_a >= -1.0);
  CHECK(r.sim_a <= 1.0);
  CHECK(r.cost.mean_flops > 0.0);

  PolicyEval pe = eval_dynamic_policy(m, eps, th, cfg, coeffs, 8);
  CHECK(pe.J == r.J);
  CHECK(pe.cost.mean_flops == r.cost.mean_flops);
  CHECK_THROWS_AS(eval_dynamic_policy(m, {}, th, cfg, coeffs, 1), IoError);
  CHECK_THROWS_AS(eval_dynamic_policy(m, eps, th, cfg, coeffs, 0), ShapeError);
}
