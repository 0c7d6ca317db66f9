#pragma once

#include "dynanav/model.hpp"
#include "dynanav/selector.hpp"

namespace dynanav {

// Head output at some decoder depth.
struct Prediction {
  Tensor actions;    // (num_waypoints, 2), unit rows
  Tensor waypoints;  // (num_waypoints, 2), agent-frame offsets
  Tensor distance;   // scalar temporal-distance estimate

  // Flattened actions then waypoints; the exit criterion's comparison vector.
  Tensor joint() const;
};

// One masked source entering the decoder: its (H,W,C) masked feature map and
// the pixel indices contributing tokens (all pixels during training).
struct TokenSource {
  Tensor masked;            // (H,W,C)
  std::vector<int> pixels;  // row-major pixel indices
};

// Builds the (T, C) token sequence: per-source kept-pixel feature vectors
// plus learned positional encodings, goal tokens appended last. Throws on an
// empty total token set (degenerate masking).
Tensor tokenize(const std::vector<TokenSource>& frames, const TokenSource& goal,
                const Model& model);

// Runs exactly decoder layers 1..upto and returns every intermediate state.
std::vector<Tensor> decode_to_layer(const Tensor& tokens, const Model& model, int upto);

// One decoder block (MHSA + residual + norm + FFN + residual + norm).
Tensor decode_layer(const Tensor& x, const Model& model, int layer);

Prediction predict_head(const Tensor& x, const Model& model);

// All pixel indices 0..H*W-1; the training-time token selection.
std::vector<int> all_pixels(const RunConfig& cfg);

}  // namespace dynanav
