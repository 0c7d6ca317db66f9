#pragma once

#include "dynanav/image.hpp"
#include "dynanav/model.hpp"

namespace dynanav {

// Image (H,W,3 in [0,1]) to a (H,W,3) tensor.
Tensor image_to_tensor(const Image& img);

// One observation frame to a (feat_h, feat_w, feat_c) feature map via the
// shared 3-conv stack (stride 2, ReLU, layer norm per stage).
Tensor encode_obs(const Image& img, const Model& model);

// Early-fused current observation and goal: channel-concatenated, then the
// goal encoder instance (same architecture, disjoint parameters).
Tensor encode_goal(const Image& obs_t, const Image& goal, const Model& model);

}  // namespace dynanav
