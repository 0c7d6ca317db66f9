#include "dynanav/decoder.hpp"

#include <cmath>

namespace dynanav {

Tensor Prediction::joint() const {
  int n = actions.shape()[0] * 2;
  return concat({reshape(actions, {n}), reshape(waypoints, {n})}, 0);
}

std::vector<int> all_pixels(const RunConfig& cfg) {
  std::vector<int> idx(cfg.num_pixels());
  for (int i = 0; i < cfg.num_pixels(); ++i) idx[i] = i;
  return idx;
}

Tensor tokenize(const std::vector<TokenSource>& frames, const TokenSource& goal,
                const Model& model) {
  const RunConfig& cfg = model.cfg();
  if (static_cast<int>(frames.size()) != cfg.window())
    throw ShapeError("tokenize: expected " + std::to_string(cfg.window()) +
                     " observation frames, got " + std::to_string(frames.size()));
  int HW = cfg.num_pixels(), C = cfg.token_dim();
  const Tensor& pos = model.p("decoder.pos");

  std::vector<Tensor> parts;
  auto emit = [&](const TokenSource& src, int slot) {
    if (src.pixels.empty()) return;
    Tensor flat = reshape(src.masked, {HW, C});
    Tensor toks = gather_rows(flat, src.pixels);
    std::vector<int> pos_rows;
    pos_rows.reserve(src.pixels.size());
    for (int p : src.pixels) pos_rows.push_back(slot * HW + p);
    parts.push_back(add(toks, gather_rows(pos, pos_rows)));
  };
  for (std::size_t f = 0; f < frames.size(); ++f) emit(frames[f], static_cast<int>(f));
  emit(goal, static_cast<int>(frames.size()));

  if (parts.empty())
    throw NumericError("tokenize: degenerate masking produced an empty token set");
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

namespace {

Tensor linear(const Tensor& x, const Model& m, const std::string& prefix) {
  return add_rowvec(matmul(x, m.p(prefix + ".w")), m.p(prefix + ".b"));
}

Tensor mhsa(const Tensor& x, const Model& m, const std::string& prefix) {
  const RunConfig& cfg = m.cfg();
  int C = cfg.token_dim(), heads = cfg.attn_heads;
  int dk = C / heads;
  Tensor q = linear(x, m, prefix + ".q");
  Tensor k = linear(x, m, prefix + ".k");
  Tensor v = linear(x, m, prefix + ".v");
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * dk, dk);
    Tensor kh = slice(k, 1, h * dk, dk);
    Tensor vh = slice(v, 1, h * dk, dk);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    Tensor attn = softmax(scores, 1);
    ctx.push_back(matmul(attn, vh));
  }
  return linear(heads == 1 ? ctx[0] : concat(ctx, 1), m, prefix + ".o");
}

Tensor decoder_block(const Tensor& x, const Model& m, const std::string& l) {
  Tensor a = layer_norm(add(x, mhsa(x, m, l + ".attn")), m.p(l + ".ln1.g"), m.p(l + ".ln1.b"));
  Tensor f = linear(relu(linear(a, m, l + ".ffn.fc1")), m, l + ".ffn.fc2");
  return layer_norm(add(a, f), m.p(l + ".ln2.g"), m.p(l + ".ln2.b"));
}

}  // namespace

Tensor decode_layer(const Tensor& x, const Model& model, int layer) {
  int l = model.cfg().decoder_layers;
  if (layer < 1 || layer > l)
    throw ShapeError("decode_layer: layer index " + std::to_string(layer) +
                     " out of range [1," + std::to_string(l) + "]");
  return decoder_block(x, model, "decoder.layer" + std::to_string(layer));
}

std::vector<Tensor> decode_to_layer(const Tensor& tokens, const Model& model, int upto) {
  int l = model.cfg().decoder_layers;
  if (upto < 1 || upto > l)
    throw ShapeError("decode_to_layer: layer index " + std::to_string(upto) +
                     " out of range [1," + std::to_string(l) + "]");
  std::vector<Tensor> states;
  Tensor x = tokens;
  for (int i = 1; i <= upto; ++i) {
    x = decode_layer(x, model, i);
    states.push_back(x);
  }
  return states;
}

Prediction predict_head(const Tensor& x, const Model& model) {
  const RunConfig& cfg = model.cfg();
  int C = cfg.token_dim(), nw = cfg.num_waypoints;
  if (x.shape().size() != 2 || x.shape()[0] < 1 || x.shape()[1] != C)
    throw ShapeError("predict_head: want (T," + std::to_string(C) + ") tokens");

  // Mean pool, then one single-query attention refinement over the tokens.
  Tensor pooled = mean_axis0(x);
  Tensor k = matmul(x, model.p("head.attn.k.w"));
  Tensor scores = mul_scalar(matmul(k, reshape(pooled, {C, 1})),
                             1.0 / std::sqrt(static_cast<double>(C)));
  Tensor attn = softmax(scores, 0);
  Tensor v = matmul(x, model.p("head.attn.v.w"));
  Tensor ctx = matmul(transpose(attn), v);  // (1,C)
  Tensor hin = add(reshape(pooled, {1, C}), ctx);

  Tensor hidden = relu(linear(hin, model, "head.fc1"));
  Tensor out = linear(hidden, model, "head.fc2");  // (1, 4*nw+1)
  Tensor flat = reshape(out, {4 * nw + 1});

  Prediction pred;
  pred.actions = row_normalize(reshape(slice(flat, 0, 0, 2 * nw), {nw, 2}), 1e-12);
  pred.waypoints = reshape(slice(flat, 0, 2 * nw, 2 * nw), {nw, 2});
  pred.distance = slice(flat, 0, 4 * nw, 1);
  return pred;
}

}  // namespace dynanav
