#include "dynanav/cost.hpp"

namespace dynanav::cost {

namespace {

long long conv_layer_flops(int s_out, int cin, int cout) {
  long long spatial = static_cast<long long>(s_out) * s_out;
  long long conv = 2LL * 3 * 3 * cin * cout * spatial + spatial * cout;  // + bias adds
  long long act = spatial * cout;        // relu
  long long norm = 8LL * spatial * cout; // layer norm
  return conv + act + norm;
}

long long conv_layer_elems(int s_out, int cout) {
  return 3LL * s_out * s_out * cout;  // conv, relu, norm outputs
}

}  // namespace

long long conv_stack_flops(const RunConfig& cfg, int cin) {
  int s = cfg.image_size;
  return conv_layer_flops(s / 2, cin, cfg.enc_c1) +
         conv_layer_flops(s / 4, cfg.enc_c1, cfg.enc_c2) +
         conv_layer_flops(s / 8, cfg.enc_c2, cfg.feat_c);
}

long long select_flops(const RunConfig& cfg) {
  long long HW = cfg.num_pixels(), C = cfg.feat_c, hid = cfg.selector_hidden;
  long long fc1 = 2 * HW * C * hid + HW * hid;  // matmul + bias
  long long act = HW * hid;
  long long fc2 = 2 * HW * hid * 2 * C + HW * 2 * C;
  long long temp = 2 * HW * C;      // 1/tau scaling over (H,W,C,2)
  long long soft = 3 * 2 * HW * C;  // softmax over the category pairs
  return fc1 + act + fc2 + temp + soft;
}

long long apply_mask_flops(const RunConfig& cfg) { return cfg.mask_elems(); }

long long tokenize_flops(const RunConfig& cfg, int tokens) {
  return static_cast<long long>(tokens) * cfg.feat_c;  // positional adds
}

long long decoder_layer_flops(const RunConfig& cfg, int tokens) {
  long long T = tokens, C = cfg.feat_c, F = cfg.ffn_hidden, heads = cfg.attn_heads;
  long long proj = 4 * (2 * T * C * C + T * C);          // q,k,v,o linears
  long long attn = 4 * T * T * C + 4 * T * T * heads;    // scores, scale, softmax, apply
  long long res1 = T * C + 8 * T * C;                    // residual + norm
  long long ffn = 2 * T * C * F + T * F + T * F + 2 * T * F * C + T * C;
  long long res2 = T * C + 8 * T * C;
  return proj + attn + res1 + ffn + res2;
}

long long head_flops(const RunConfig& cfg, int tokens) {
  long long T = tokens, C = cfg.feat_c, Hh = cfg.head_hidden;
  long long nw = cfg.num_waypoints, out = 4 * nw + 1;
  long long pool = T * C + C;
  long long kscore = 2 * T * C * C + 2 * T * C + T + 3 * T;  // k proj, scores, scale, softmax
  long long vctx = 2 * T * C * C + 2 * T * C;                // v proj, context
  long long mix = C;                                         // pooled + context add
  long long mlp = 2 * C * Hh + Hh + Hh + 2 * Hh * out + out;
  long long norm = 4 * nw * 2;  // action row normalization
  return pool + kscore + vctx + mix + mlp + norm;
}

long long exit_check_flops(const RunConfig& cfg) {
  long long n = 4LL * cfg.num_waypoints;  // joint action+waypoint vector
  return n + 2 * n + 1;                   // difference + L2 norm
}

long long gate_check_flops(const RunConfig& cfg, int tokens_obs_t, int tokens_goal) {
  long long C = cfg.feat_c;
  long long means = (static_cast<long long>(tokens_obs_t) * C + C) +
                    (static_cast<long long>(tokens_goal) * C + C);
  return means + C + 2 * C + 1;  // difference + L2 distance
}

long long frontend_flops(const RunConfig& cfg, int tokens) {
  long long enc = cfg.window() * conv_stack_flops(cfg, 3) + conv_stack_flops(cfg, 6);
  long long sel = 0, msk = 0;
  if (cfg.selector_enabled) {
    sel = (cfg.window() + 1) * select_flops(cfg);
    msk = (cfg.window() + 1) * apply_mask_flops(cfg);
  }
  return enc + sel + msk + tokenize_flops(cfg, tokens);
}

long long static_flops(const RunConfig& cfg, int tokens) {
  return frontend_flops(cfg, tokens) +
         cfg.decoder_layers * decoder_layer_flops(cfg, tokens) + head_flops(cfg, tokens);
}

long long dynamic_flops(const RunConfig& cfg, const PipelineShape& s) {
  long long total = frontend_flops(cfg, s.tokens);
  if (s.gate_checked) total += gate_check_flops(cfg, s.tokens_obs_t, s.tokens_goal);
  if (s.exit_layer == 0) return total + head_flops(cfg, s.tokens);
  total += static_cast<long long>(s.exit_layer) * decoder_layer_flops(cfg, s.tokens);
  if (s.layer_exit_enabled) {
    total += static_cast<long long>(s.exit_layer) * head_flops(cfg, s.tokens);
    total += static_cast<long long>(s.exit_layer - 1) * exit_check_flops(cfg);
  } else {
    total += head_flops(cfg, s.tokens);
  }
  return total;
}

// ---- modeled memory -------------------------------------------------------

namespace {

long long conv_stack_elems(const RunConfig& cfg, int cin) {
  int s = cfg.image_size;
  return static_cast<long long>(s) * s * cin + conv_layer_elems(s / 2, cfg.enc_c1) +
         conv_layer_elems(s / 4, cfg.enc_c2) + conv_layer_elems(s / 8, cfg.feat_c);
}

long long select_elems(const RunConfig& cfg) {
  long long HW = cfg.num_pixels(), C = cfg.feat_c, hid = cfg.selector_hidden;
  return 3 * HW * hid + 2 * HW * 2 * C + 3 * 2 * HW * C + HW * C;  // mlp + softmax + mask
}

long long decoder_layer_elems(const RunConfig& cfg, int tokens) {
  long long T = tokens, C = cfg.feat_c, F = cfg.ffn_hidden, heads = cfg.attn_heads;
  return 4 * T * C + 3 * heads * T * T + 2 * T * C + 3 * T * F + T * C + 2 * T * C;
}

long long head_elems(const RunConfig& cfg, int tokens) {
  long long T = tokens, C = cfg.feat_c;
  return C + T * C + 3 * T + T * C + C + 2 * cfg.head_hidden + 2 * (4 * cfg.num_waypoints + 1);
}

long long frontend_elems(const RunConfig& cfg, int tokens) {
  long long sel =
      cfg.selector_enabled ? (cfg.window() + 1) * (select_elems(cfg) + cfg.mask_elems()) : 0;
  return cfg.window() * conv_stack_elems(cfg, 3) + conv_stack_elems(cfg, 6) + sel +
         2LL * tokens * cfg.feat_c;
}

}  // namespace

long long static_mem_elems(const RunConfig& cfg, int tokens) {
  return frontend_elems(cfg, tokens) +
         cfg.decoder_layers * decoder_layer_elems(cfg, tokens) + head_elems(cfg, tokens);
}

long long dynamic_mem_elems(const RunConfig& cfg, const PipelineShape& s) {
  long long total = frontend_elems(cfg, s.tokens);
  if (s.exit_layer == 0) return total + head_elems(cfg, s.tokens);
  total += static_cast<long long>(s.exit_layer) * decoder_layer_elems(cfg, s.tokens);
  long long heads = s.layer_exit_enabled ? s.exit_layer : 1;
  return total + heads * head_elems(cfg, s.tokens);
}

}  // namespace dynanav::cost
