#pragma once

#include "dynanav/image.hpp"
#include "dynanav/model.hpp"

namespace dynanav {

enum class SelectMode { kTrain, kEval };

// Keep/drop decision over a (H,W,C) feature map. soft holds the keep
// probability per element; hard is its binarization (ties keep). pixel_mask
// is the max over channels of hard.
struct SelectionMask {
  Tensor soft;                  // (H,W,C), in [0,1]
  Tensor hard;                  // (H,W,C), constants in {0,1}
  std::vector<int> pixel_mask;  // H*W entries in {0,1}
  int kept_pixels = 0;
  double temperature = 1.0;

  // Number of dropped (element-level) positions; feeds the pre-decoder gate.
  int masked_elems() const;
};

// Token rows for the pixels surviving the mask, row-major by pixel index.
struct SparseTokenSet {
  std::vector<int> pixels;  // indices into the H*W grid
  Tensor tokens;            // (kept_pixels, C); undefined when empty
  std::string source;
};

// Standard Gumbel(0,1) noise, elementwise -log(-log(u)).
Tensor gumbel_noise(const Shape& shape, Rng& rng);

// Keep/drop mask from the 2-category Gumbel-Softmax over the selector MLP
// logits. which is "selector.obs" or "selector.goal". Train mode adds noise;
// eval mode is noise-free and deterministic.
SelectionMask select(const Tensor& features, const Model& model, const std::string& which,
                     double tau, SelectMode mode, Rng& rng);

// Element product of features with soft (train) or hard (eval), plus the
// sparse token view of the surviving pixels.
std::pair<Tensor, SparseTokenSet> apply_mask(const Tensor& features, const SelectionMask& mask,
                                             SelectMode mode, const std::string& source);

// Nearest-neighbor upsampled keep-probability image (mean of soft over channels).
Image saliency_image(const SelectionMask& mask, int out_h, int out_w);

}  // namespace dynanav
