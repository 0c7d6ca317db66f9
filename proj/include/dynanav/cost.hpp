#pragma once

#include "dynanav/config.hpp"

namespace dynanav {

// Deterministic modeled units: time is proportional to FLOPs, memory to the
// number of activation elements the pipeline materializes. Wall-clock and
// physical memory are never part of any reported metric.
struct CostCoefficients {
  double time_per_flop = 1e-9;
  double mem_per_elem = 1.0;
};

// Everything the analytic model needs to re-derive the cost of one dynamic
// inference: token counts and which stages actually ran.
struct PipelineShape {
  int tokens = 0;        // total token count entering the decoder
  int tokens_obs_t = 0;  // current-observation segment length
  int tokens_goal = 0;   // goal segment length
  int exit_layer = 0;    // 0 = pre-decoder bypass
  bool gate_checked = false;
  bool layer_exit_enabled = false;
};

namespace cost {

// Per-stage analytic FLOP counts (multiply-add = 2 FLOPs; conv is
// 2*Kh*Kw*Cin*Cout*Ho*Wo plus the bias adds; matmul is 2mkn).
long long conv_stack_flops(const RunConfig& cfg, int cin);
long long select_flops(const RunConfig& cfg);
long long apply_mask_flops(const RunConfig& cfg);
long long tokenize_flops(const RunConfig& cfg, int tokens);
long long decoder_layer_flops(const RunConfig& cfg, int tokens);
long long head_flops(const RunConfig& cfg, int tokens);
long long exit_check_flops(const RunConfig& cfg);
long long gate_check_flops(const RunConfig& cfg, int tokens_obs_t, int tokens_goal);

// Encoders + selectors + masking + tokenization, shared by every path.
long long frontend_flops(const RunConfig& cfg, int tokens);

// Full-depth static pass (single head evaluation, no checks).
long long static_flops(const RunConfig& cfg, int tokens);

// Cost of exactly the ops a dynamic pass with this shape executed.
long long dynamic_flops(const RunConfig& cfg, const PipelineShape& s);

// Modeled activation-element counts, same stage structure.
long long static_mem_elems(const RunConfig& cfg, int tokens);
long long dynamic_mem_elems(const RunConfig& cfg, const PipelineShape& s);

}  // namespace cost
}  // namespace dynanav
