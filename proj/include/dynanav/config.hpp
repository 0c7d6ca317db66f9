#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynanav/checkpoint.hpp"

namespace dynanav {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat, versioned key=value run configuration. Unknown keys are rejected.
struct RunConfig {
  // encoder / feature map
  int image_size = 32;
  int feat_h = 4, feat_w = 4, feat_c = 16;
  int enc_c1 = 6, enc_c2 = 8;  // conv channel plan: in -> c1 -> c2 -> feat_c

  // sequence / outputs
  int past_frames = 5;    // p; the window holds p+1 observations
  int num_waypoints = 5;  // predicted steps
  int decoder_layers = 4;
  int attn_heads = 4;
  int ffn_hidden = 64;
  int head_hidden = 64;

  // selector
  int selector_hidden = 32;  // 2C
  double tau_start = 1.0;
  double tau_end = 0.5;
  bool selector_enabled = true;

  // trainer
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int warmup_epochs = 3;
  double weight_decay = 1e-4;
  double lambda = 0.5;  // waypoint/distance balance in the loss
  double val_fraction = 0.1;
  std::uint64_t train_seed = 1;
  bool joint_exit_loss = false;  // sum losses over all exits instead of sampling one
  std::vector<int> train_exits = {0, 1, 2, 3, 4};  // exit layers sampled uniformly per batch

  // simulator / dataset
  double map_size = 12.0;
  double step_m = 0.125;  // distance per frame at 4 Hz capture
  double agent_radius = 0.2;
  double goal_min_dist = 5.0;
  double min_goal_dist_m = 0.0;
  double max_goal_dist_m = 20.0;
  int samples_per_episode = 2;

  // threshold optimization
  int bo_budget = 20;
  double eta_max = 2.0;        // upper bound of each layer-exit threshold
  double gate_dist_max = 8.0;  // upper bound of the pre-decoder distance threshold
  int max_masked_obs = 92;     // out of feat_h*feat_w*feat_c elements
  int max_masked_goal = 113;
  double flops_budget_ratio = 0.46;  // F_max as a fraction of the static cost
  double time_budget_ratio = 0.46;
  double mem_budget_ratio = 0.46;
  double sim_a_min = 0.950;
  double sim_w_min = 0.960;
  std::vector<double> xi = {0.8, 0.5, 1.0};  // time, memory, flops weights
  std::uint64_t bo_seed = 1;

  int token_dim() const { return feat_c; }
  int num_pixels() const { return feat_h * feat_w; }
  int mask_elems() const { return feat_h * feat_w * feat_c; }
  int window() const { return past_frames + 1; }
};

RunConfig parse_config_file(const std::string& path);
// Applies one "key=value" assignment; throws ConfigError on unknown keys.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);
std::string default_config_text();

}  // namespace dynanav
