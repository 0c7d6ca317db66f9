#include "dynanav/encoder.hpp"

namespace dynanav {

Tensor image_to_tensor(const Image& img) {
  return Tensor({img.height, img.width, 3}, img.pixels);
}

namespace {

void check_resolution(const Image& img, const RunConfig& cfg, const char* what) {
  if (img.height != cfg.image_size || img.width != cfg.image_size)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cfg.image_size) +
                     "x" + std::to_string(cfg.image_size) + " image, got " +
                     std::to_string(img.height) + "x" + std::to_string(img.width));
}

Tensor conv_stack(const Tensor& x, const Model& m, const std::string& prefix) {
  Tensor h = x;
  for (int i = 1; i <= 3; ++i) {
    std::string s = std::to_string(i);
    h = conv2d(h, m.p(prefix + ".conv" + s + ".w"), m.p(prefix + ".conv" + s + ".b"),
               /*stride=*/2, /*pad=*/1);
    h = relu(h);
    h = layer_norm(h, m.p(prefix + ".ln" + s + ".g"), m.p(prefix + ".ln" + s + ".b"));
  }
  const RunConfig& cfg = m.cfg();
  if (h.shape() != Shape{cfg.feat_h, cfg.feat_w, cfg.feat_c})
    throw ShapeError("encoder: conv stack produced " + shape_str(h.shape()) +
                     ", config expects (" + std::to_string(cfg.feat_h) + "," +
                     std::to_string(cfg.feat_w) + "," + std::to_string(cfg.feat_c) + ")");
  return h;
}

}  // namespace

Tensor encode_obs(const Image& img, const Model& model) {
  check_resolution(img, model.cfg(), "encode_obs");
  return conv_stack(image_to_tensor(img), model, "encoder.obs");
}

Tensor encode_goal(const Image& obs_t, const Image& goal, const Model& model) {
  check_resolution(obs_t, model.cfg(), "encode_goal");
  check_resolution(goal, model.cfg(), "encode_goal");
  Tensor fused = concat({image_to_tensor(obs_t), image_to_tensor(goal)}, /*axis=*/2);
  return conv_stack(fused, model, "encoder.goal");
}

}  // namespace dynanav
