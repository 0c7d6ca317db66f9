#pragma once

#include "dynanav/cost.hpp"
#include "dynanav/decoder.hpp"
#include "dynanav/encoder.hpp"

namespace dynanav {

// Pre-decoder bypass gate: skip the decoder when goal and current features
// are close and both masks are sparse enough.
struct PreGate {
  double feature_dist_threshold = 0.0;
  int max_masked_obs = 0;
  int max_masked_goal = 0;
};

struct ExitThresholds {
  std::vector<double> eta;  // size decoder_layers-1; eta[i] gates exit at layer i+2
  PreGate pre_gate;
  bool pre_decoder_enabled = false;
  bool layer_exit_enabled = false;

  static ExitThresholds disabled(const RunConfig& cfg);
};

struct ExitTrace {
  Prediction pred;
  int exit_layer = 0;  // 0 = pre-decoder bypass
  long long flops = 0;
  double time_units = 0.0;
  double mem_units = 0.0;
  std::vector<double> deltas;  // action-consistency deltas, layers 2..exit
  PipelineShape shape;
};

struct CostReport {
  double mean_flops = 0.0;
  double mean_time_units = 0.0;
  double peak_mem_units = 0.0;
};

// L2 distance between the joint (action, waypoint) vectors of two predictions.
double prediction_delta(const Prediction& a, const Prediction& b);

bool layer_exit_check(const Prediction& cur, const Prediction& prev, double eta);

bool pre_decoder_check(const Tensor& goal_mean, const Tensor& obs_mean,
                       int masked_obs, int masked_goal, const PreGate& gate);

// Full dynamic inference over one observation window. window holds the p+1
// observations oldest-first; exact FLOPs of the executed ops are recorded.
ExitTrace run_dynamic(const std::vector<Image>& window, const Image& goal,
                      const Model& model, const ExitThresholds& thresholds,
                      const CostCoefficients& coeffs);

// Plain full-depth forward pass (independent composition, used as the static
// reference; bitwise-identical to run_dynamic with every exit disabled).
ExitTrace run_static(const std::vector<Image>& window, const Image& goal,
                     const Model& model, const CostCoefficients& coeffs);

// Mean FLOPs/time over traces, peak memory across them.
CostReport trajectory_costs(const std::vector<ExitTrace>& traces);

struct TraceRecord {
  int traj_id = 0;
  int t = 0;
  const ExitTrace* trace = nullptr;
};

// Line-delimited log, one record per timestep; absent deltas print as "-".
std::string format_trace_log(const std::vector<TraceRecord>& records, int decoder_layers);

void save_thresholds(const std::string& path, const ExitThresholds& th);
ExitThresholds load_thresholds(const std::string& path);

}  // namespace dynanav
