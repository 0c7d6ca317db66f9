#include "dynanav/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dynanav {

AdamW::AdamW(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(Model& model, double lr, double weight_decay) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [name, param] : model.trainable()) {
    if (!param.has_grad()) continue;
    const std::vector<double>& g = param.grad();
    bool any = false;
    for (double v : g)
      if (v != 0.0) {
        any = true;
        break;
      }
    if (!any) continue;

    std::vector<double>& m = m_[name];
    std::vector<double>& v = v_[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    std::vector<double>& w = param.vec();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * w[i]);
    }
  }
}

double lr_schedule(const RunConfig& cfg, int step, int steps_per_epoch) {
  long long total = static_cast<long long>(cfg.epochs) * steps_per_epoch;
  long long warm = static_cast<long long>(cfg.warmup_epochs) * steps_per_epoch;
  if (warm > 0 && step < warm)
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  long long denom = std::max(1LL, total - warm);
  double progress = static_cast<double>(step - warm) / static_cast<double>(denom);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

double tau_schedule(const RunConfig& cfg, int epoch) {
  if (cfg.epochs <= 1) return cfg.tau_end;
  double f = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * f;
}

Tensor loss(const Prediction& pred, const Targets& target, double lambda) {
  auto mse = [](const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return mean_all(mul(d, d));
  };
  Tensor la = mse(pred.actions, target.actions);
  Tensor lw = mse(pred.waypoints, target.waypoints);
  Tensor ld = mse(pred.distance, Tensor::scalar(target.distance));
  return add(la, mul_scalar(add(lw, ld), lambda));
}

namespace {

Tensor train_tokens(const std::vector<Image>& window, const Image& goal, Model& model,
                    double tau, Rng& noise_rng) {
  const RunConfig& cfg = model.cfg();
  std::vector<int> pixels = all_pixels(cfg);
  std::vector<TokenSource> frames;
  frames.reserve(window.size());
  for (const Image& img : window) {
    Tensor feat = encode_obs(img, model);
    if (cfg.selector_enabled) {
      SelectionMask m = select(feat, model, "selector.obs", tau, SelectMode::kTrain, noise_rng);
      feat = apply_mask(feat, m, SelectMode::kTrain, "obs").first;
    }
    frames.push_back({feat, pixels});
  }
  Tensor gfeat = encode_goal(window.back(), goal, model);
  if (cfg.selector_enabled) {
    SelectionMask m = select(gfeat, model, "selector.goal", tau, SelectMode::kTrain, noise_rng);
    gfeat = apply_mask(gfeat, m, SelectMode::kTrain, "goal").first;
  }
  return tokenize(frames, {gfeat, pixels}, model);
}

ParamMap clone_params(const ParamMap& src) {
  ParamMap out;
  for (const auto& [name, t] : src) out.emplace(name, Tensor(t.shape(), t.vec()));
  return out;
}

}  // namespace

Prediction forward_train(const std::vector<Image>& window, const Image& goal, Model& model,
                         double tau, int exit_layer, Rng& noise_rng) {
  const RunConfig& cfg = model.cfg();
  if (exit_layer < 0 || exit_layer > cfg.decoder_layers)
    throw ShapeError("forward_train: exit layer must be in [0, decoder_layers]");
  Tensor tokens = train_tokens(window, goal, model, tau, noise_rng);
  if (exit_layer == 0) return predict_head(tokens, model);
  std::vector<Tensor> states = decode_to_layer(tokens, model, exit_layer);
  return predict_head(states.back(), model);
}

TrainResult train(const Dataset& ds, const RunConfig& cfg) {
  if (ds.train.empty()) throw IoError("train: empty training set");
  Model model(cfg, cfg.train_seed);
  Rng base(cfg.train_seed);
  Rng noise_rng = base.fork(100);
  Rng order_rng = base.fork(101);
  Rng exit_rng = base.fork(102);
  Rng split_rng = base.fork(103);

  std::vector<int> idx(ds.train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  split_rng.shuffle(idx);
  int n = static_cast<int>(idx.size());
  int val_n = n >= 2 ? std::clamp(static_cast<int>(std::lround(cfg.val_fraction * n)), 1, n - 1)
                     : 0;
  std::vector<int> val_idx(idx.begin(), idx.begin() + val_n);
  std::vector<int> train_idx(idx.begin() + val_n, idx.end());
  int steps_per_epoch =
      (static_cast<int>(train_idx.size()) + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<int> exits = cfg.train_exits;
  if (exits.empty()) throw ConfigError("train: train_exits must be nonempty");
  for (int e : exits)
    if (e < 0 || e > cfg.decoder_layers)
      throw ConfigError("train: exit layer " + std::to_string(e) + " out of range");

  AdamW opt;
  TrainResult result;
  CostCoefficients coeffs;
  int global_step = 0;
  bool first_batch = true;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double tau = tau_schedule(cfg, epoch);
    order_rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    int batches = 0;
    std::map<int, int> exit_hist;

    for (int b = 0; b < steps_per_epoch; ++b) {
      int lo = b * cfg.batch_size;
      int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(train_idx.size()));
      double lr_now = lr_schedule(cfg, global_step, steps_per_epoch);
      int k = exits[exit_rng.uniform_int(0, static_cast<int>(exits.size()) - 1)];

      Tape tape;
      Tensor total = Tensor::scalar(0.0);
      for (int s = lo; s < hi; ++s) {
        const Sample& sm = ds.train[train_idx[s]];
        const Episode& ep = ds.train_episodes[sm.episode_id];
        std::vector<Image> window = sample_window(ep, sm.t, cfg);
        Image goal = ep.frame_image(sm.t + sm.d);
        Targets tg = sample_targets(ep, sm.t, sm.d, cfg);
        if (cfg.joint_exit_loss) {
          Tensor tokens = train_tokens(window, goal, model, tau, noise_rng);
          int deepest = *std::max_element(exits.begin(), exits.end());
          std::vector<Tensor> states =
              deepest > 0 ? decode_to_layer(tokens, model, deepest) : std::vector<Tensor>{};
          Tensor sample_loss = Tensor::scalar(0.0);
          for (int e : exits) {
            const Tensor& x = e == 0 ? tokens : states[e - 1];
            sample_loss = add(sample_loss, loss(predict_head(x, model), tg, cfg.lambda));
          }
          total = add(total, mul_scalar(sample_loss, 1.0 / static_cast<double>(exits.size())));
        } else {
          total = add(total, loss(forward_train(window, goal, model, tau, k, noise_rng), tg,
                                  cfg.lambda));
        }
      }
      Tensor batch_loss = mul_scalar(total, 1.0 / static_cast<double>(hi - lo));
      double lv = batch_loss.item();
      if (!std::isfinite(lv))
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(b));
      if (first_batch) {
        result.initial_loss = lv;
        first_batch = false;
      }
      tape.backward(batch_loss);
      opt.step(model, lr_now, cfg.weight_decay);
      model.zero_grads();
      epoch_loss += lv;
      ++batches;
      ++global_step;
      exit_hist[k] += hi - lo;
    }
    epoch_loss /= std::max(1, batches);

    // Held-out validation with the deterministic eval-mode forward.
    double val_sim_a = 0.0, val_sim_w = 0.0;
    if (!val_idx.empty()) {
      std::vector<Prediction> preds;
      std::vector<Targets> targets;
      for (int vi : val_idx) {
        const Sample& sm = ds.train[vi];
        const Episode& ep = ds.train_episodes[sm.episode_id];
        ExitTrace tr = run_static(sample_window(ep, sm.t, cfg), ep.frame_image(sm.t + sm.d),
                                  model, coeffs);
        preds.push_back(tr.pred);
        targets.push_back(sample_targets(ep, sm.t, sm.d, cfg));
      }
      Metrics m = cosine_metrics(preds, targets);
      val_sim_a = m.sim_a;
      val_sim_w = m.sim_w;
    }
    if (val_idx.empty() || val_sim_w >= result.best_val_sim_w || result.best_params.empty()) {
      result.best_val_sim_w = val_sim_w;
      result.best_params = clone_params(model.params());
    }

    std::ostringstream os;
    os.precision(10);
    os << "epoch " << epoch << " loss " << epoch_loss << " val_sim_a " << val_sim_a
       << " val_sim_w " << val_sim_w << " tau " << tau << " exits";
    for (int e : exits) os << " " << e << ":" << exit_hist[e];
    result.log_lines.push_back(os.str());
    result.final_loss = epoch_loss;
  }
  return result;
}

EvalReport evaluate_policy(const Model& model, const std::vector<Episode>& episodes,
                           const ExitThresholds& th, const RunConfig& cfg,
                           const CostCoefficients& coeffs, int stride) {
  if (episodes.empty()) throw IoError("evaluate_policy: empty episode set");
  if (stride < 1) throw ShapeError("evaluate_policy: stride must be >= 1");
  EvalReport rep;
  std::vector<Prediction> preds;
  std::vector<Targets> targets;
  std::vector<std::pair<int, int>> keys;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    Image goal = ep.goal_image();
    int n = ep.steps();
    for (int t = cfg.past_frames; t <= n - 2; t += stride) {
      ExitTrace tr = run_dynamic(sample_window(ep, t, cfg), goal, model, th, coeffs);
      preds.push_back(tr.pred);
      targets.push_back(sample_targets(ep, t, n - 1 - t, cfg));
      rep.exit_histogram[tr.exit_layer] += 1;
      rep.traces.push_back(std::move(tr));
      keys.emplace_back(static_cast<int>(e), t);
    }
  }
  rep.metrics = cosine_metrics(preds, targets);
  rep.cost = trajectory_costs(rep.traces);
  rep.records.reserve(rep.traces.size());
  for (std::size_t i = 0; i < rep.traces.size(); ++i)
    rep.records.push_back({keys[i].first, keys[i].second, &rep.traces[i]});
  return rep;
}

double closed_loop_success(const Model& model, const ExitThresholds& th,
                           const std::vector<std::uint64_t>& world_seeds, int max_steps,
                           const RunConfig& cfg, const CostCoefficients& coeffs) {
  std::vector<World> worlds;
  worlds.reserve(world_seeds.size());
  for (std::uint64_t s : world_seeds) worlds.push_back(gen_world(s, cfg));
  Policy policy = [&](const std::vector<Image>& window, const Image& goal, const Pose&) {
    Prediction p = run_dynamic(window, goal, model, th, coeffs).pred;
    return Vec2{p.waypoints[0], p.waypoints[1]};
  };
  return eval_closed_loop(policy, worlds, max_steps, cfg);
}

}  // namespace dynanav
