#pragma once

#include "dynanav/exit_runtime.hpp"
#include "dynanav/navsim.hpp"

namespace dynanav {

// Threshold search box: eta_2..eta_l then the pre-decoder distance threshold.
struct SearchSpace {
  std::vector<double> lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  static SearchSpace from_config(const RunConfig& cfg);
};

struct Constraints {
  double t_max = 0.0;    // time units
  double g_max = 0.0;    // memory units
  double f_max = 0.0;    // FLOPs
  double sim_a_min = 0.0;
  double sim_w_min = 0.0;
  std::vector<double> xi;  // weights for the time, memory, FLOPs violations

  // Budgets as configured ratios of the static-model cost on the given shape.
  static Constraints from_config(const RunConfig& cfg, int static_tokens,
                                 const CostCoefficients& coeffs);
};

struct EvalResult {
  double J = 0.0, P = 0.0, V = 0.0;
  double sim_a = 0.0, sim_w = 0.0;  // fractions in [-1, 1]
  CostReport cost;
};

struct BORecord {
  std::vector<double> x;
  EvalResult r;
};

struct BOState {
  std::vector<BORecord> history;
  std::vector<double> best_x;
  double best_v = -std::numeric_limits<double>::infinity();
};

// Maps a search point to runnable thresholds (both exit mechanisms enabled).
ExitThresholds thresholds_from_point(const std::vector<double>& x, const RunConfig& cfg);

// Mean over timesteps of Sim(a) + lambda * Sim(w) under dynamic inference,
// plus the sims and cost report needed for the penalty.
struct PolicyEval {
  double J = 0.0;
  double sim_a = 0.0, sim_w = 0.0;
  CostReport cost;
};
PolicyEval eval_dynamic_policy(const Model& model, const std::vector<Episode>& episodes,
                               const ExitThresholds& th, const RunConfig& cfg,
                               const CostCoefficients& coeffs, int stride = 1);

// Weighted sum of normalized constraint violations; similarity floors enter
// with unit weight.
double penalty_P(const CostReport& cost, double sim_a, double sim_w, const Constraints& c);

EvalResult evaluate_thresholds(const Model& model, const std::vector<Episode>& episodes,
                               const ExitThresholds& th, const Constraints& c,
                               const RunConfig& cfg, const CostCoefficients& coeffs,
                               int stride = 1);

using ObjectiveFn = std::function<EvalResult(const std::vector<double>&)>;

// GP surrogate + expected improvement over V. The first ceil(budget/4) points
// are seed_points followed by Latin hypercube fill. With a history_path the
// run persists each evaluation and resumes from the file's records.
BOState optimize(const SearchSpace& space, const ObjectiveFn& objective, int budget,
                 Rng& rng, const std::vector<std::vector<double>>& seed_points = {},
                 const std::string& history_path = {});

void save_history(const std::string& path, const BOState& state);
BOState load_history(const std::string& path, int dim);

}  // namespace dynanav
