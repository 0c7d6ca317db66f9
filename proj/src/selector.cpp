#include "dynanav/selector.hpp"

#include <cmath>

namespace dynanav {

int SelectionMask::masked_elems() const {
  int dropped = 0;
  for (double v : hard.vec())
    if (v == 0.0) ++dropped;
  return dropped;
}

Tensor gumbel_noise(const Shape& shape, Rng& rng) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = -std::log(-std::log(rng.uniform_open()));
  return Tensor(shape, std::move(d));
}

SelectionMask select(const Tensor& features, const Model& model, const std::string& which,
                     double tau, SelectMode mode, Rng& rng) {
  if (tau <= 0.0) throw NumericError("select: temperature must be positive");
  const RunConfig& cfg = model.cfg();
  int H = cfg.feat_h, W = cfg.feat_w, C = cfg.feat_c;
  if (features.shape() != Shape{H, W, C})
    throw ShapeError("select: feature map shape mismatch " + shape_str(features.shape()));

  // Per-pixel 2-layer MLP to (C,2) keep/drop logits.
  Tensor flat = reshape(features, {H * W, C});
  Tensor h1 = relu(add_rowvec(matmul(flat, model.p(which + ".fc1.w")), model.p(which + ".fc1.b")));
  Tensor logits = add_rowvec(matmul(h1, model.p(which + ".fc2.w")), model.p(which + ".fc2.b"));
  Tensor z = reshape(logits, {H, W, C, 2});

  if (mode == SelectMode::kTrain) z = add(z, gumbel_noise(z.shape(), rng));
  Tensor scaled = mul_scalar(z, 1.0 / tau);
  Tensor probs = softmax(scaled, /*axis=*/3);

  SelectionMask mask;
  mask.temperature = tau;
  mask.soft = slice(probs, /*axis=*/3, /*start=*/1, /*len=*/1);  // keep category
  mask.soft = reshape(mask.soft, {H, W, C});

  std::vector<double> hard(static_cast<std::size_t>(H) * W * C);
  for (std::size_t i = 0; i < hard.size(); ++i)
    hard[i] = mask.soft[static_cast<long long>(i)] >= 0.5 ? 1.0 : 0.0;  // ties keep
  mask.hard = Tensor({H, W, C}, std::move(hard));

  mask.pixel_mask.assign(static_cast<std::size_t>(H) * W, 0);
  for (int p = 0; p < H * W; ++p)
    for (int c = 0; c < C; ++c)
      if (mask.hard[static_cast<long long>(p) * C + c] == 1.0) {
        mask.pixel_mask[p] = 1;
        break;
      }
  mask.kept_pixels = 0;
  for (int v : mask.pixel_mask) mask.kept_pixels += v;
  return mask;
}

std::pair<Tensor, SparseTokenSet> apply_mask(const Tensor& features, const SelectionMask& mask,
                                             SelectMode mode, const std::string& source) {
  if (features.shape() != mask.soft.shape())
    throw ShapeError("apply_mask: shape mismatch " + shape_str(features.shape()) + " vs " +
                     shape_str(mask.soft.shape()));
  // training multiplies the soft Gumbel-Softmax mask into the features so
  // every element keeps a gradient path; eval hardens the mask. A strict
  // hard-forward straight-through variant was tried and trained measurably
  // worse: elements dropped early receive no gradient and never recover.
  Tensor masked = mul(features, mode == SelectMode::kTrain ? mask.soft : mask.hard);

  SparseTokenSet set;
  set.source = source;
  for (std::size_t p = 0; p < mask.pixel_mask.size(); ++p)
    if (mask.pixel_mask[p]) set.pixels.push_back(static_cast<int>(p));
  int C = features.shape()[2];
  if (!set.pixels.empty()) {
    Tensor flat = reshape(masked, {static_cast<int>(mask.pixel_mask.size()), C});
    set.tokens = gather_rows(flat, set.pixels);
  }
  return {masked, set};
}

Image saliency_image(const SelectionMask& mask, int out_h, int out_w) {
  int H = mask.soft.shape()[0], W = mask.soft.shape()[1], C = mask.soft.shape()[2];
  if (out_h < H || out_w < W)
    throw ShapeError("saliency_image: target resolution below mask resolution");
  Image img(out_h, out_w);
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      int mr = r * H / out_h;
      int mc = c * W / out_w;
      double mean = 0.0;
      for (int ch = 0; ch < C; ++ch)
        mean += mask.soft[(static_cast<long long>(mr) * W + mc) * C + ch];
      mean /= C;
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = mean;
    }
  return img;
}

}  // namespace dynanav
