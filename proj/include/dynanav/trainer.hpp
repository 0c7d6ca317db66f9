#pragma once

#include <map>

#include "dynanav/bo.hpp"
#include "dynanav/exit_runtime.hpp"
#include "dynanav/navsim.hpp"

namespace dynanav {

// Decoupled-weight-decay adaptive-moment optimizer. Parameters whose gradient
// is absent or identically zero are left untouched (moments included).
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(Model& model, double lr, double weight_decay);
  int steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Cosine-annealed learning rate with linear warmup, per optimizer step.
double lr_schedule(const RunConfig& cfg, int step, int steps_per_epoch);
// Linear temperature anneal tau_start -> tau_end across epochs.
double tau_schedule(const RunConfig& cfg, int epoch);

// MSE(actions) + lambda * (MSE(waypoints) + MSE(distance)).
Tensor loss(const Prediction& pred, const Targets& target, double lambda);

// Training-mode forward: soft masks, every pixel tokenized, head applied at
// exit_layer (0 = pre-decoder head, otherwise decoder depth).
Prediction forward_train(const std::vector<Image>& window, const Image& goal, Model& model,
                         double tau, int exit_layer, Rng& noise_rng);

struct TrainResult {
  ParamMap best_params;
  double best_val_sim_w = 0.0;  // percent
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::string> log_lines;  // one structured line per epoch
};

// Full training run over the dataset's train split; deterministic given
// cfg.train_seed. Aborts with NumericError on NaN loss (offending batch id).
TrainResult train(const Dataset& ds, const RunConfig& cfg);

struct EvalReport {
  Metrics metrics;  // sims in percent
  CostReport cost;
  std::map<int, int> exit_histogram;
  std::vector<ExitTrace> traces;
  std::vector<TraceRecord> records;  // refer into traces
};

// Dynamic inference over every valid timestep of the episodes. Disabled
// thresholds reproduce the static full-depth pass bitwise.
EvalReport evaluate_policy(const Model& model, const std::vector<Episode>& episodes,
                           const ExitThresholds& th, const RunConfig& cfg,
                           const CostCoefficients& coeffs, int stride = 1);

// Closed-loop success over worlds regenerated from their seeds, driving the
// agent with run_dynamic's first predicted waypoint.
double closed_loop_success(const Model& model, const ExitThresholds& th,
                           const std::vector<std::uint64_t>& world_seeds, int max_steps,
                           const RunConfig& cfg, const CostCoefficients& coeffs);

}  // namespace dynanav
