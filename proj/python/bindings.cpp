#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dynanav/trainer.hpp"

namespace py = pybind11;
using namespace dynanav;

namespace {

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3)
    throw ShapeError("expected an (H, W, 3) float array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<double> image_to_array(const Image& img) {
  py::array_t<double> a({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
  return a;
}

std::vector<Image> window_from_list(const py::list& frames) {
  std::vector<Image> w;
  for (const auto& f : frames)
    w.push_back(image_from_array(f.cast<py::array_t<double>>()));
  return w;
}

py::dict trace_to_dict(const ExitTrace& t) {
  py::dict d;
  d["actions"] = tensor_to_array(t.pred.actions);
  d["waypoints"] = tensor_to_array(t.pred.waypoints);
  d["distance"] = t.pred.distance.item();
  d["exit_layer"] = t.exit_layer;
  d["flops"] = t.flops;
  d["time_units"] = t.time_units;
  d["mem_units"] = t.mem_units;
  d["tokens"] = t.shape.tokens;
  d["deltas"] = t.deltas;
  return d;
}

py::dict report_to_dict(const EvalReport& rep) {
  py::dict d;
  d["sim_a"] = rep.metrics.sim_a;
  d["sim_w"] = rep.metrics.sim_w;
  d["loss_action"] = rep.metrics.loss_action;
  d["loss_dist"] = rep.metrics.loss_dist;
  d["mean_flops"] = rep.cost.mean_flops;
  d["mean_time_units"] = rep.cost.mean_time_units;
  d["peak_mem_units"] = rep.cost.peak_mem_units;
  d["exit_histogram"] = rep.exit_histogram;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dynanav, m) {
  m.doc() = "dynamic early-exit visual navigation core";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<IoError>(m, "IoError");

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &RunConfig::image_size)
      .def_readwrite("feat_c", &RunConfig::feat_c)
      .def_readwrite("past_frames", &RunConfig::past_frames)
      .def_readwrite("num_waypoints", &RunConfig::num_waypoints)
      .def_readwrite("decoder_layers", &RunConfig::decoder_layers)
      .def_readwrite("selector_enabled", &RunConfig::selector_enabled)
      .def_readwrite("tau_end", &RunConfig::tau_end)
      .def_readwrite("epochs", &RunConfig::epochs)
      .def_readwrite("batch_size", &RunConfig::batch_size)
      .def_readwrite("learning_rate", &RunConfig::learning_rate)
      .def_readwrite("warmup_epochs", &RunConfig::warmup_epochs)
      .def_readwrite("lambda_", &RunConfig::lambda)
      .def_readwrite("train_seed", &RunConfig::train_seed)
      .def_readwrite("samples_per_episode", &RunConfig::samples_per_episode)
      .def_readwrite("bo_budget", &RunConfig::bo_budget)
      .def_readwrite("bo_seed", &RunConfig::bo_seed)
      .def_property_readonly("window", &RunConfig::window)
      .def_property_readonly("num_pixels", &RunConfig::num_pixels);

  m.def("parse_config_file", &parse_config_file, py::arg("path"));
  m.def("default_config_text", &default_config_text);

  py::class_<Model>(m, "Model")
      .def(py::init<const RunConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def_static("load", &Model::load, py::arg("config"), py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def("param", [](const Model& mm, const std::string& name) {
        return tensor_to_array(mm.p(name));
      })
      .def("param_names", [](const Model& mm) {
        std::vector<std::string> names;
        for (const auto& [name, t] : mm.trainable()) names.push_back(name);
        return names;
      });

  py::class_<World>(m, "World")
      .def_readonly("seed", &World::seed)
      .def_readonly("size", &World::size);
  m.def("gen_world", &gen_world, py::arg("seed"), py::arg("config"));

  py::class_<Episode>(m, "Episode")
      .def_property_readonly("steps", &Episode::steps)
      .def_readonly("length", &Episode::length)
      .def("frame", [](const Episode& ep, int t) { return image_to_array(ep.frame_image(t)); })
      .def("goal", [](const Episode& ep) { return image_to_array(ep.goal_image()); });
  m.def("expert_rollout", &expert_rollout, py::arg("world"), py::arg("config"));
  m.def("render", [](const World& w, double x, double y, double theta, int resolution) {
    return image_to_array(render(w, Pose{{x, y}, theta}, resolution));
  });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("train_episodes", &Dataset::train_episodes)
      .def_readonly("test_episodes", &Dataset::test_episodes);
  m.def("make_dataset", &make_dataset, py::arg("n_episodes"), py::arg("seed"),
        py::arg("split_ratio"), py::arg("config"));

  py::class_<ExitThresholds>(m, "ExitThresholds")
      .def_static("disabled", &ExitThresholds::disabled, py::arg("config"))
      .def_readwrite("eta", &ExitThresholds::eta)
      .def_readwrite("pre_decoder_enabled", &ExitThresholds::pre_decoder_enabled)
      .def_readwrite("layer_exit_enabled", &ExitThresholds::layer_exit_enabled)
      .def_property(
          "gate_dist",
          [](const ExitThresholds& th) { return th.pre_gate.feature_dist_threshold; },
          [](ExitThresholds& th, double v) { th.pre_gate.feature_dist_threshold = v; });
  m.def("save_thresholds", &save_thresholds, py::arg("path"), py::arg("thresholds"));
  m.def("load_thresholds", &load_thresholds, py::arg("path"));

  m.def(
      "run_static",
      [](const Model& mm, const py::list& window, const py::array_t<double>& goal) {
        return trace_to_dict(
            run_static(window_from_list(window), image_from_array(goal), mm, {}));
      },
      py::arg("model"), py::arg("window"), py::arg("goal"));
  m.def(
      "run_dynamic",
      [](const Model& mm, const py::list& window, const py::array_t<double>& goal,
         const ExitThresholds& th) {
        return trace_to_dict(
            run_dynamic(window_from_list(window), image_from_array(goal), mm, th, {}));
      },
      py::arg("model"), py::arg("window"), py::arg("goal"), py::arg("thresholds"));

  m.def(
      "sample_window",
      [](const Episode& ep, int t, const RunConfig& cfg) {
        py::list out;
        for (const Image& img : sample_window(ep, t, cfg)) out.append(image_to_array(img));
        return out;
      },
      py::arg("episode"), py::arg("t"), py::arg("config"));

  m.def(
      "train",
      [](const Dataset& ds, const RunConfig& cfg, const std::string& ckpt_path) {
        TrainResult tr = train(ds, cfg);
        save_checkpoint(ckpt_path, tr.best_params);
        py::dict d;
        d["best_val_sim_w"] = tr.best_val_sim_w;
        d["initial_loss"] = tr.initial_loss;
        d["final_loss"] = tr.final_loss;
        d["log_lines"] = tr.log_lines;
        return d;
      },
      py::arg("dataset"), py::arg("config"), py::arg("checkpoint_path"));

  m.def(
      "tune_thresholds",
      [](const Model& mm, const std::vector<Episode>& episodes, const RunConfig& cfg,
         int budget, std::uint64_t seed, int stride) {
        SearchSpace space = SearchSpace::from_config(cfg);
        CostCoefficients coeffs;
        Constraints cons =
            Constraints::from_config(cfg, (cfg.window() + 1) * cfg.num_pixels(), coeffs);
        ObjectiveFn obj = [&](const std::vector<double>& x) {
          return evaluate_thresholds(mm, episodes, thresholds_from_point(x, cfg), cons, cfg,
                                     coeffs, stride);
        };
        Rng rng(seed);
        BOState st = optimize(space, obj, budget, rng,
                              {std::vector<double>(space.dim(), 0.0)});
        return py::make_tuple(thresholds_from_point(st.best_x, cfg), st.best_v);
      },
      py::arg("model"), py::arg("episodes"), py::arg("config"), py::arg("budget"),
      py::arg("seed"), py::arg("stride") = 1);

  m.def(
      "evaluate_policy",
      [](const Model& mm, const std::vector<Episode>& episodes, const ExitThresholds& th,
         const RunConfig& cfg, int stride) {
        return report_to_dict(evaluate_policy(mm, episodes, th, cfg, {}, stride));
      },
      py::arg("model"), py::arg("episodes"), py::arg("thresholds"), py::arg("config"),
      py::arg("stride") = 1);

  m.def(
      "closed_loop_success",
      [](const Model& mm, const ExitThresholds& th, const std::vector<std::uint64_t>& seeds,
         int max_steps, const RunConfig& cfg) {
        return closed_loop_success(mm, th, seeds, max_steps, cfg, {});
      },
      py::arg("model"), py::arg("thresholds"), py::arg("world_seeds"), py::arg("max_steps"),
      py::arg("config"));
}
