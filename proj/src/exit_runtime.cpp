#include "dynanav/exit_runtime.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dynanav/checkpoint.hpp"

namespace dynanav {

ExitThresholds ExitThresholds::disabled(const RunConfig& cfg) {
  ExitThresholds th;
  th.eta.assign(cfg.decoder_layers - 1, 0.0);
  th.pre_gate.max_masked_obs = cfg.max_masked_obs;
  th.pre_gate.max_masked_goal = cfg.max_masked_goal;
  return th;
}

double prediction_delta(const Prediction& a, const Prediction& b) {
  return l2_norm(sub(a.joint(), b.joint())).item();
}

bool layer_exit_check(const Prediction& cur, const Prediction& prev, double eta) {
  if (eta < 0.0) throw NumericError("layer_exit_check: negative threshold");
  return prediction_delta(cur, prev) <= eta;
}

bool pre_decoder_check(const Tensor& goal_mean, const Tensor& obs_mean,
                       int masked_obs, int masked_goal, const PreGate& gate) {
  double dist = l2_norm(sub(goal_mean, obs_mean)).item();
  if (masked_obs > gate.max_masked_obs || masked_goal > gate.max_masked_goal) return false;
  return dist < gate.feature_dist_threshold;
}

namespace {

struct FrontendOutputs {
  Tensor tokens;  // (T, C)
  PipelineShape shape;
  Tensor obs_t_tokens;  // current-frame sparse tokens (pre-positional)
  Tensor goal_tokens;
  int masked_obs = 0;
  int masked_goal = 0;
};

FrontendOutputs run_frontend(const std::vector<Image>& window, const Image& goal,
                             const Model& model) {
  const RunConfig& cfg = model.cfg();
  if (static_cast<int>(window.size()) != cfg.window())
    throw ShapeError("run_dynamic: expected a window of " + std::to_string(cfg.window()) +
                     " observations");
  Rng dummy(0);  // eval-mode selection never draws noise
  double tau = cfg.tau_end;

  FrontendOutputs fo;
  std::vector<int> full = all_pixels(cfg);
  std::vector<TokenSource> frames;
  frames.reserve(window.size());
  for (std::size_t f = 0; f < window.size(); ++f) {
    Tensor feat = encode_obs(window[f], model);
    if (!cfg.selector_enabled) {
      frames.push_back({feat, full});
      if (f + 1 == window.size()) fo.obs_t_tokens = reshape(feat, {cfg.num_pixels(), cfg.feat_c});
      continue;
    }
    SelectionMask mask = select(feat, model, "selector.obs", tau, SelectMode::kEval, dummy);
    auto [masked, set] = apply_mask(feat, mask, SelectMode::kEval, "frame" + std::to_string(f));
    frames.push_back({masked, set.pixels});
    if (f + 1 == window.size()) {
      fo.obs_t_tokens = set.tokens;
      fo.masked_obs = mask.masked_elems();
    }
  }
  Tensor gfeat = encode_goal(window.back(), goal, model);
  TokenSource goal_src;
  if (cfg.selector_enabled) {
    SelectionMask gmask = select(gfeat, model, "selector.goal", tau, SelectMode::kEval, dummy);
    auto [gmasked, gset] = apply_mask(gfeat, gmask, SelectMode::kEval, "goal");
    fo.goal_tokens = gset.tokens;
    fo.masked_goal = gmask.masked_elems();
    goal_src = {gmasked, gset.pixels};
  } else {
    fo.goal_tokens = reshape(gfeat, {cfg.num_pixels(), cfg.feat_c});
    goal_src = {gfeat, full};
  }
  fo.tokens = tokenize(frames, goal_src, model);
  fo.shape.tokens = fo.tokens.shape()[0];
  fo.shape.tokens_obs_t = static_cast<int>(frames.back().pixels.size());
  fo.shape.tokens_goal = static_cast<int>(goal_src.pixels.size());
  return fo;
}

ExitTrace finish(ExitTrace trace, const FlopCounter& fc, const Model& model,
                 const CostCoefficients& coeffs) {
  trace.flops = fc.count();
  trace.time_units = static_cast<double>(trace.flops) * coeffs.time_per_flop;
  trace.mem_units = static_cast<double>(cost::dynamic_mem_elems(model.cfg(), trace.shape)) *
                    coeffs.mem_per_elem;
  return trace;
}

}  // namespace

ExitTrace run_dynamic(const std::vector<Image>& window, const Image& goal,
                      const Model& model, const ExitThresholds& thresholds,
                      const CostCoefficients& coeffs) {
  const RunConfig& cfg = model.cfg();
  if (static_cast<int>(thresholds.eta.size()) != cfg.decoder_layers - 1)
    throw ShapeError("run_dynamic: thresholds must carry " +
                     std::to_string(cfg.decoder_layers - 1) + " layer-exit entries");
  FlopCounter fc;
  FrontendOutputs fo = run_frontend(window, goal, model);

  ExitTrace trace;
  trace.shape = fo.shape;
  trace.shape.layer_exit_enabled = thresholds.layer_exit_enabled;

  if (thresholds.pre_decoder_enabled && fo.shape.tokens_obs_t > 0 && fo.shape.tokens_goal > 0) {
    trace.shape.gate_checked = true;
    Tensor obs_mean = mean_axis0(fo.obs_t_tokens);
    Tensor goal_mean = mean_axis0(fo.goal_tokens);
    if (pre_decoder_check(goal_mean, obs_mean, fo.masked_obs, fo.masked_goal,
                          thresholds.pre_gate)) {
      trace.pred = predict_head(fo.tokens, model);
      trace.exit_layer = 0;
      return finish(std::move(trace), fc, model, coeffs);
    }
  }

  int l = cfg.decoder_layers;
  if (!thresholds.layer_exit_enabled) {
    std::vector<Tensor> states = decode_to_layer(fo.tokens, model, l);
    trace.pred = predict_head(states.back(), model);
    trace.exit_layer = l;
    trace.shape.exit_layer = l;
    return finish(std::move(trace), fc, model, coeffs);
  }

  Tensor x = fo.tokens;
  Prediction prev;
  for (int i = 1; i <= l; ++i) {
    x = decode_layer(x, model, i);
    Prediction cur = predict_head(x, model);
    if (i >= 2) {
      double delta = prediction_delta(cur, prev);
      trace.deltas.push_back(delta);
      if (delta <= thresholds.eta[i - 2]) {
        trace.pred = cur;
        trace.exit_layer = i;
        trace.shape.exit_layer = i;
        return finish(std::move(trace), fc, model, coeffs);
      }
    }
    prev = cur;
  }
  trace.pred = prev;
  trace.exit_layer = l;
  trace.shape.exit_layer = l;
  return finish(std::move(trace), fc, model, coeffs);
}

ExitTrace run_static(const std::vector<Image>& window, const Image& goal,
                     const Model& model, const CostCoefficients& coeffs) {
  FlopCounter fc;
  FrontendOutputs fo = run_frontend(window, goal, model);
  int l = model.cfg().decoder_layers;
  std::vector<Tensor> states = decode_to_layer(fo.tokens, model, l);
  ExitTrace trace;
  trace.shape = fo.shape;
  trace.shape.exit_layer = l;
  trace.pred = predict_head(states.back(), model);
  trace.exit_layer = l;
  return finish(std::move(trace), fc, model, coeffs);
}

CostReport trajectory_costs(const std::vector<ExitTrace>& traces) {
  if (traces.empty()) throw NumericError("trajectory_costs: empty trace set");
  CostReport r;
  for (const ExitTrace& t : traces) {
    r.mean_flops += static_cast<double>(t.flops);
    r.mean_time_units += t.time_units;
    r.peak_mem_units = std::max(r.peak_mem_units, t.mem_units);
  }
  r.mean_flops /= static_cast<double>(traces.size());
  r.mean_time_units /= static_cast<double>(traces.size());
  return r;
}

std::string format_trace_log(const std::vector<TraceRecord>& records, int decoder_layers) {
  std::ostringstream os;
  os.precision(17);
  os << "traj_id t exit_layer flops time_units mem_units";
  for (int i = 2; i <= decoder_layers; ++i) os << " delta_" << i;
  os << "\n";
  for (const TraceRecord& r : records) {
    os << r.traj_id << " " << r.t << " " << r.trace->exit_layer << " " << r.trace->flops
       << " " << r.trace->time_units << " " << r.trace->mem_units;
    for (int i = 0; i < decoder_layers - 1; ++i) {
      if (i < static_cast<int>(r.trace->deltas.size()))
        os << " " << r.trace->deltas[i];
      else
        os << " -";
    }
    os << "\n";
  }
  return os.str();
}

void save_thresholds(const std::string& path, const ExitThresholds& th) {
  std::ostringstream os;
  os.precision(17);
  os << "thresholds_version 1\n";
  os << "eta";
  for (double e : th.eta) os << " " << e;
  os << "\n";
  os << "gate_dist " << th.pre_gate.feature_dist_threshold << "\n";
  os << "max_masked_obs " << th.pre_gate.max_masked_obs << "\n";
  os << "max_masked_goal " << th.pre_gate.max_masked_goal << "\n";
  os << "pre_decoder " << (th.pre_decoder_enabled ? 1 : 0) << "\n";
  os << "layer_exit " << (th.layer_exit_enabled ? 1 : 0) << "\n";
  atomic_write_file(path, os.str());
}

ExitThresholds load_thresholds(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("thresholds: cannot open " + path);
  ExitThresholds th;
  std::string line;
  bool versioned = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key.empty()) continue;
    if (key == "thresholds_version") {
      int v;
      ls >> v;
      if (v != 1) throw IoError("thresholds: unsupported version");
      versioned = true;
    } else if (key == "eta") {
      th.eta.clear();
      double e;
      while (ls >> e) th.eta.push_back(e);
    } else if (key == "gate_dist") {
      ls >> th.pre_gate.feature_dist_threshold;
    } else if (key == "max_masked_obs") {
      ls >> th.pre_gate.max_masked_obs;
    } else if (key == "max_masked_goal") {
      ls >> th.pre_gate.max_masked_goal;
    } else if (key == "pre_decoder") {
      int v;
      ls >> v;
      th.pre_decoder_enabled = v != 0;
    } else if (key == "layer_exit") {
      int v;
      ls >> v;
      th.layer_exit_enabled = v != 0;
    } else {
      throw IoError("thresholds: unknown key '" + key + "'");
    }
  }
  if (!versioned) throw IoError("thresholds: missing version header in " + path);
  return th;
}

}  // namespace dynanav
