#include "dynanav/model.hpp"

#include <cmath>

namespace dynanav {

namespace {

// He-normal for conv/linear weights, zeros for biases, identity for norms.
struct Builder {
  ParamMap& params;
  Rng& rng;

  void weight(const std::string& name, const Shape& shape, long long fan_in) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::randn(shape, rng, std, true);
    params.emplace(name, t);
  }
  void zeros(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::zeros(shape, true));
  }
  void ones(const std::string& name, const Shape& shape) {
    params.emplace(name, Tensor::full(shape, 1.0, true));
  }
  void small(const std::string& name, const Shape& shape, double std) {
    params.emplace(name, Tensor::randn(shape, rng, std, true));
  }

  void conv(const std::string& prefix, int kh, int kw, int cin, int cout) {
    weight(prefix + ".w", {kh, kw, cin, cout}, static_cast<long long>(kh) * kw * cin);
    zeros(prefix + ".b", {cout});
  }
  void linear(const std::string& prefix, int in, int out) {
    weight(prefix + ".w", {in, out}, in);
    zeros(prefix + ".b", {out});
  }
  void norm(const std::string& prefix, int n) {
    ones(prefix + ".g", {n});
    zeros(prefix + ".b", {n});
  }
};

void build_encoder(Builder& b, const std::string& prefix, int cin, const RunConfig& cfg) {
  b.conv(prefix + ".conv1", 3, 3, cin, cfg.enc_c1);
  b.norm(prefix + ".ln1", cfg.enc_c1);
  b.conv(prefix + ".conv2", 3, 3, cfg.enc_c1, cfg.enc_c2);
  b.norm(prefix + ".ln2", cfg.enc_c2);
  b.conv(prefix + ".conv3", 3, 3, cfg.enc_c2, cfg.feat_c);
  b.norm(prefix + ".ln3", cfg.feat_c);
}

void build_selector(Builder& b, const std::string& prefix, const RunConfig& cfg) {
  b.linear(prefix + ".fc1", cfg.feat_c, cfg.selector_hidden);
  b.linear(prefix + ".fc2", cfg.selector_hidden, 2 * cfg.feat_c);
  // dense start: bias the keep logits so selection begins near-identity and
  // training prunes from there
  std::vector<double>& bias = b.params.at(prefix + ".fc2.b").vec();
  for (long long c = 0; c < cfg.feat_c; ++c) bias[2 * c + 1] = 2.0;
}

}  // namespace

Model::Model(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  Builder b{params_, rng};
  int C = cfg.feat_c;

  build_encoder(b, "encoder.obs", 3, cfg);
  build_encoder(b, "encoder.goal", 6, cfg);
  build_selector(b, "selector.obs", cfg);
  build_selector(b, "selector.goal", cfg);

  b.small("decoder.pos", {(cfg.past_frames + 2) * cfg.num_pixels(), C}, 0.02);
  for (int i = 1; i <= cfg.decoder_layers; ++i) {
    std::string l = "decoder.layer" + std::to_string(i);
    b.linear(l + ".attn.q", C, C);
    b.linear(l + ".attn.k", C, C);
    b.linear(l + ".attn.v", C, C);
    b.linear(l + ".attn.o", C, C);
    b.norm(l + ".ln1", C);
    b.linear(l + ".ffn.fc1", C, cfg.ffn_hidden);
    b.linear(l + ".ffn.fc2", cfg.ffn_hidden, C);
    b.norm(l + ".ln2", C);
  }

  b.weight("head.attn.k.w", {C, C}, C);
  b.weight("head.attn.v.w", {C, C}, C);
  b.linear("head.fc1", C, cfg.head_hidden);
  b.linear("head.fc2", cfg.head_hidden, 4 * cfg.num_waypoints + 1);
}

Model::Model(const RunConfig& cfg, ParamMap params) : cfg_(cfg), params_(std::move(params)) {
  for (auto& [name, t] : params_) t.set_requires_grad(true);
}

Tensor& Model::p(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw IoError("model: unknown parameter " + name);
  return it->second;
}

const Tensor& Model::p(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw IoError("model: unknown parameter " + name);
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> Model::trainable() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.emplace_back(name, t);
  return out;
}

void Model::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Model Model::load(const RunConfig& cfg, const std::string& path) {
  return Model(cfg, load_checkpoint(path));
}

}  // namespace dynanav
