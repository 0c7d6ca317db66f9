#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "dynanav/bo.hpp"
#include "dynanav/trainer.hpp"

namespace fs = std::filesystem;
using namespace dynanav;

namespace {

constexpr int kOk = 0, kUsage = 2, kData = 3, kNumeric = 4;

int max_threads() {
  const char* env = std::getenv("DYNEXIT_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  if (n < 1) throw ConfigError("DYNEXIT_THREADS must be a positive integer");
  return n;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse_config_file(path);
}

std::string episode_dir_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "ep_%04d", id);
  return buf;
}

struct LoadedData {
  std::vector<Episode> train_episodes, test_episodes;
};

LoadedData load_archive(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "split");
  if (!is) throw IoError("data: cannot open split manifest in " + dir);
  std::string line;
  if (!std::getline(is, line) || line.rfind("split_version 1", 0) != 0)
    throw IoError("data: bad split manifest header in " + dir);
  LoadedData data;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string kind;
    int id;
    if (!(ls >> kind >> id)) continue;
    Episode ep = load_episode((fs::path(dir) / episode_dir_name(id)).string());
    if (kind == "train")
      data.train_episodes.push_back(std::move(ep));
    else if (kind == "test")
      data.test_episodes.push_back(std::move(ep));
    else
      throw IoError("data: unknown split kind '" + kind + "'");
  }
  if (data.train_episodes.empty() || data.test_episodes.empty())
    throw IoError("data: split manifest lists no train or no test episodes");
  return data;
}

// Removes outputs this command created before failing.
struct OutputGuard {
  std::vector<fs::path> paths;
  bool armed = true;

  void track(const fs::path& p) { paths.push_back(p); }
  void disarm() { armed = false; }
  ~OutputGuard() {
    if (!armed) return;
    std::error_code ec;
    for (const fs::path& p : paths) fs::remove_all(p, ec);
  }
};

int cmd_gen_data(int episodes, std::uint64_t seed, const std::string& out, double split,
                 const std::string& config_path, bool force) {
  RunConfig cfg = load_config(config_path);
  if (episodes < 5) throw IoError("gen-data: need at least 5 episodes");
  if (split <= 0.0 || split >= 1.0) throw ConfigError("gen-data: split must lie in (0,1)");
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw IoError("gen-data: output directory " + out + " is not empty (use --force)");
  OutputGuard guard;
  if (!fs::exists(out)) guard.track(out);
  fs::create_directories(out);

  std::vector<std::uint64_t> seeds = episode_seeds(episodes, seed);
  std::vector<Episode> eps(episodes);
  int workers = std::min(max_threads(), episodes);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::string> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < episodes; i = next.fetch_add(1))
          eps[i] = expert_rollout(gen_world(seeds[i], cfg), cfg);
      } catch (const std::exception& e) {
        errors[w] = e.what();
      }
    });
  for (auto& t : pool) t.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw IoError("gen-data: " + e);

  for (int i = 0; i < episodes; ++i) {
    fs::path dir = fs::path(out) / episode_dir_name(i);
    guard.track(dir);
    save_episode(dir.string(), eps[i], cfg);
  }
  auto [train_ids, test_ids] = split_episode_ids(episodes, seed, split);
  std::ostringstream os;
  os << "split_version 1\n";
  for (int id : train_ids) os << "train " << id << "\n";
  for (int id : test_ids) os << "test " << id << "\n";
  atomic_write_file((fs::path(out) / "split").string(), os.str());
  guard.disarm();
  std::cout << "wrote " << episodes << " episodes (" << train_ids.size() << " train, "
            << test_ids.size() << " test) to " << out << "\n";
  return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out, const std::string& log_path) {
  RunConfig cfg = load_config(config_path);
  LoadedData data = load_archive(data_dir);
  Dataset ds;
  ds.train_episodes = std::move(data.train_episodes);
  ds.test_episodes = std::move(data.test_episodes);
  Rng train_rng = Rng(cfg.train_seed).fork(2);
  Rng test_rng = Rng(cfg.train_seed).fork(3);
  ds.train = draw_samples(ds.train_episodes, train_rng, cfg);
  ds.test = draw_samples(ds.test_episodes, test_rng, cfg);

  TrainResult res = train(ds, cfg);
  OutputGuard guard;
  guard.track(out);
  save_checkpoint(out, res.best_params);
  std::ostringstream os;
  for (const std::string& l : res.log_lines) os << l << "\n";
  if (!log_path.empty()) {
    guard.track(log_path);
    atomic_write_file(log_path, os.str());
  }
  guard.disarm();
  std::cout << os.str();
  std::cout << "checkpoint " << out << " best_val_sim_w " << res.best_val_sim_w << "\n";
  return kOk;
}

int cmd_tune(const std::string& ckpt, const std::string& data_dir, int budget,
             std::uint64_t seed, const std::string& out, const std::string& history_path,
             const std::string& config_path, int stride) {
  RunConfig cfg = load_config(config_path);
  SearchSpace space = SearchSpace::from_config(cfg);
  if (budget < space.dim() + 2)
    throw ConfigError("tune: budget must be at least dimension + 2 = " +
                      std::to_string(space.dim() + 2));
  Model model = Model::load(cfg, ckpt);
  LoadedData data = load_archive(data_dir);
  CostCoefficients coeffs;
  int static_tokens = (cfg.window() + 1) * cfg.num_pixels();
  Constraints cons = Constraints::from_config(cfg, static_tokens, coeffs);

  ObjectiveFn objective = [&](const std::vector<double>& x) {
    return evaluate_thresholds(model, data.test_episodes, thresholds_from_point(x, cfg), cons,
                               cfg, coeffs, stride);
  };
  Rng rng(seed);
  std::vector<double> untuned(space.dim(), 0.0);
  BOState state = optimize(space, objective, budget, rng, {untuned}, history_path);

  OutputGuard guard;
  guard.track(out);
  save_thresholds(out, thresholds_from_point(state.best_x, cfg));
  guard.disarm();
  std::cout << "evaluations " << state.history.size() << " best_V " << std::setprecision(10)
            << state.best_v << " thresholds " << out << "\n";
  return kOk;
}

std::string metrics_csv(const EvalReport& rep, double success_rate, int decoder_layers) {
  std::ostringstream os;
  os.precision(17);
  os << "sim_a,sim_w,loss_action,loss_dist,mean_flops,mean_time_units,peak_mem_units,"
        "success_rate";
  for (int i = 0; i <= decoder_layers; ++i) os << ",exit_" << i;
  os << "\n";
  os << rep.metrics.sim_a << "," << rep.metrics.sim_w << "," << rep.metrics.loss_action << ","
     << rep.metrics.loss_dist << "," << rep.cost.mean_flops << "," << rep.cost.mean_time_units
     << "," << rep.cost.peak_mem_units << "," << success_rate;
  for (int i = 0; i <= decoder_layers; ++i) {
    auto it = rep.exit_histogram.find(i);
    os << "," << (it == rep.exit_histogram.end() ? 0 : it->second);
  }
  os << "\n";
  return os.str();
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& thresholds_path, bool static_mode,
             const std::string& config_path, const std::string& csv_path, int closed_loop,
             int max_steps, int stride) {
  RunConfig cfg = load_config(config_path);
  if (static_mode != thresholds_path.empty())
    throw ConfigError("eval: pass exactly one of --thresholds or --static");
  Model model = Model::load(cfg, ckpt);
  LoadedData data = load_archive(data_dir);
  ExitThresholds th =
      static_mode ? ExitThresholds::disabled(cfg) : load_thresholds(thresholds_path);
  CostCoefficients coeffs;
  EvalReport rep = evaluate_policy(model, data.test_episodes, th, cfg, coeffs, stride);

  double success = 0.0;
  if (closed_loop > 0) {
    std::vector<std::uint64_t> seeds;
    for (const Episode& ep : data.test_episodes) {
      seeds.push_back(ep.seed);
      if (static_cast<int>(seeds.size()) >= closed_loop) break;
    }
    success = closed_loop_success(model, th, seeds, max_steps, cfg, coeffs);
  }

  std::cout << std::left << std::setw(18) << "metric" << "value\n";
  auto row = [](const std::string& k, double v) {
    std::cout << std::left << std::setw(18) << k << std::setprecision(10) << v << "\n";
  };
  row("sim_a_pct", rep.metrics.sim_a);
  row("sim_w_pct", rep.metrics.sim_w);
  row("loss_action", rep.metrics.loss_action);
  row("loss_dist", rep.metrics.loss_dist);
  row("mean_flops", rep.cost.mean_flops);
  row("mean_time_units", rep.cost.mean_time_units);
  row("peak_mem_units", rep.cost.peak_mem_units);
  if (closed_loop > 0) row("success_rate", success);
  std::cout << std::left << std::setw(18) << "exit_histogram";
  for (const auto& [layer, count] : rep.exit_histogram)
    std::cout << layer << ":" << count << " ";
  std::cout << "\n";

  std::string csv = metrics_csv(rep, success, cfg.decoder_layers);
  if (!csv_path.empty())
    atomic_write_file(csv_path, csv);
  else
    std::cout << csv;
  return kOk;
}

int cmd_viz(const std::string& ckpt, const std::string& data_dir, const std::string& out,
            int n_samples, const std::string& thresholds_path,
            const std::string& config_path) {
  RunConfig cfg = load_config(config_path);
  Model model = Model::load(cfg, ckpt);
  LoadedData data = load_archive(data_dir);
  ExitThresholds th =
      thresholds_path.empty() ? ExitThresholds::disabled(cfg) : load_thresholds(thresholds_path);
  OutputGuard guard;
  if (!fs::exists(out)) guard.track(out);
  fs::create_directories(out);

  CostCoefficients coeffs;
  Rng dummy(0);
  std::ostringstream csv;
  csv << "traj,t,kept_pixels_obs,kept_pixels_goal,exit_layer\n";
  int emitted = 0;
  int upscale = cfg.image_size;
  for (std::size_t e = 0; e < data.test_episodes.size() && emitted < n_samples; ++e) {
    const Episode& ep = data.test_episodes[e];
    Image goal = ep.goal_image();
    for (int t = cfg.past_frames; t <= ep.steps() - 2 && emitted < n_samples; ++t) {
      std::vector<Image> window = sample_window(ep, t, cfg);
      for (std::size_t f = 0; f < window.size(); ++f) {
        Tensor feat = encode_obs(window[f], model);
        SelectionMask m =
            select(feat, model, "selector.obs", cfg.tau_end, SelectMode::kEval, dummy);
        Image sal = saliency_image(m, upscale, upscale);
        std::vector<double> gray(sal.pixels.size() / 3);
        for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = sal.pixels[3 * i];
        std::ostringstream name;
        name << "saliency_" << e << "_" << t << "_obs" << f << ".pgm";
        fs::path p = fs::path(out) / name.str();
        guard.track(p);
        write_pgm(p.string(), upscale, upscale, gray);
      }
      Tensor gfeat = encode_goal(window.back(), goal, model);
      SelectionMask gm =
          select(gfeat, model, "selector.goal", cfg.tau_end, SelectMode::kEval, dummy);
      Image gsal = saliency_image(gm, upscale, upscale);
      std::vector<double> gray(gsal.pixels.size() / 3);
      for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = gsal.pixels[3 * i];
      std::ostringstream gname;
      gname << "saliency_" << e << "_" << t << "_goal.pgm";
      fs::path gp = fs::path(out) / gname.str();
      guard.track(gp);
      write_pgm(gp.string(), upscale, upscale, gray);

      Tensor ofeat = encode_obs(window.back(), model);
      SelectionMask om =
          select(ofeat, model, "selector.obs", cfg.tau_end, SelectMode::kEval, dummy);
      ExitTrace tr = run_dynamic(window, goal, model, th, coeffs);
      csv << e << "," << t << "," << om.kept_pixels << "," << gm.kept_pixels << ","
          << tr.exit_layer << "\n";
      ++emitted;
    }
  }
  if (emitted == 0) throw IoError("viz: no valid samples in the test episodes");
  fs::path csv_path = fs::path(out) / "selection_exits.csv";
  guard.track(csv_path);
  atomic_write_file(csv_path.string(), csv.str());
  guard.disarm();
  std::cout << "wrote " << emitted << " samples to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic early-exit visual navigation pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate episode archives and a split manifest");
  int episodes = 100;
  std::uint64_t seed = 1;
  std::string out_dir, config_path;
  double split = 0.8;
  bool force = false;
  gen->add_option("--episodes", episodes, "number of episodes");
  gen->add_option("--seed", seed, "world seed");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--split", split, "train fraction");
  gen->add_option("--config", config_path, "config file");
  gen->add_flag("--force", force, "allow writing into a non-empty directory");

  // train
  auto* tr = app.add_subcommand("train", "train a model on an episode archive");
  std::string data_dir, ckpt_out, log_path;
  tr->add_option("--data", data_dir, "episode archive directory")->required();
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--out", ckpt_out, "checkpoint output path")->required();
  tr->add_option("--log", log_path, "training log output path");

  // tune
  auto* tu = app.add_subcommand("tune", "optimize exit thresholds on the held-out split");
  std::string ckpt_in, thresholds_out, history_path;
  int budget = 20, stride = 1;
  tu->add_option("--ckpt", ckpt_in, "model checkpoint")->required();
  tu->add_option("--data", data_dir, "episode archive directory")->required();
  tu->add_option("--budget", budget, "objective evaluations");
  tu->add_option("--seed", seed, "optimizer seed");
  tu->add_option("--out", thresholds_out, "thresholds output path")->required();
  tu->add_option("--history", history_path, "resumable history file");
  tu->add_option("--config", config_path, "config file");
  tu->add_option("--stride", stride, "timestep stride during objective evaluation");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  std::string thresholds_in, csv_path;
  bool static_mode = false;
  int closed_loop = 0, max_steps = 400;
  ev->add_option("--ckpt", ckpt_in, "model checkpoint")->required();
  ev->add_option("--data", data_dir, "episode archive directory")->required();
  ev->add_option("--thresholds", thresholds_in, "thresholds file");
  ev->add_flag("--static", static_mode, "full-depth static inference");
  ev->add_option("--config", config_path, "config file");
  ev->add_option("--csv", csv_path, "write the metrics row to this CSV file");
  ev->add_option("--closed-loop", closed_loop, "number of worlds for closed-loop evaluation");
  ev->add_option("--max-steps", max_steps, "closed-loop step cap per world");
  ev->add_option("--stride", stride, "timestep stride");

  // viz
  auto* vz = app.add_subcommand("viz", "saliency maps and selection/exit statistics");
  int n_samples = 5;
  vz->add_option("--ckpt", ckpt_in, "model checkpoint")->required();
  vz->add_option("--data", data_dir, "episode archive directory")->required();
  vz->add_option("--out", out_dir, "output directory")->required();
  vz->add_option("--samples", n_samples, "number of samples to visualize");
  vz->add_option("--thresholds", thresholds_in, "thresholds file for exit statistics");
  vz->add_option("--config", config_path, "config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(episodes, seed, out_dir, split, config_path, force);
    if (tr->parsed()) return cmd_train(data_dir, config_path, ckpt_out, log_path);
    if (tu->parsed())
      return cmd_tune(ckpt_in, data_dir, budget, seed, thresholds_out, history_path,
                      config_path, stride);
    if (ev->parsed())
      return cmd_eval(ckpt_in, data_dir, thresholds_in, static_mode, config_path, csv_path,
                      closed_loop, max_steps, stride);
    if (vz->parsed())
      return cmd_viz(ckpt_in, data_dir, out_dir, n_samples, thresholds_in, config_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
