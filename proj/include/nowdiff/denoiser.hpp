#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/modules.hpp"
#include "nowdiff/tape.hpp"

namespace nowdiff {

struct DenoiserConfig {
  int levels = 5;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 4, 8, 8};
  std::vector<int> attention_levels = {4, 5};  // 1-based level indices
  int input_channels = 4;
  int embed_dim = 64;
  int res_blocks = 1;
  int norm_groups = 4;

  int channels_at(int level0) const { return base_channels * channel_mult[level0]; }

  bool attention_at(int level1) const {
    return std::find(attention_levels.begin(), attention_levels.end(), level1) !=
           attention_levels.end();
  }

  void validate(int h, int w) const {
    if (levels < 2) throw ConfigError("denoiser needs at least 2 levels");
    if (static_cast<int>(channel_mult.size()) != levels)
      throw ConfigError("channel_mult must list one multiplier per level");
    for (int lv : attention_levels)
      if (lv < 1 || lv > levels) throw ConfigError("attention level out of range");
    if (embed_dim < 2 || embed_dim % 2 != 0)
      throw ConfigError("embed_dim must be even and >= 2");
    if (res_blocks < 1) throw ConfigError("res_blocks must be >= 1");
    const int factor = 1 << (levels - 1);
    if (h % factor != 0 || w % factor != 0 || h / factor < 1)
      throw ConfigError("resolution must divide by 2^(levels-1)");
  }
};

/// Sinusoidal position code of a step index: embed_dim/2 sine components
/// followed by the matching cosines, geometric frequencies down to 1/10^4.
template <typename S>
Vector<S> sinusoidal_time_embedding(int t, int embed_dim) {
  if (t < 0) throw ContractError("time step must be >= 0");
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("embed_dim must be even and >= 2");
  const int half = embed_dim / 2;
  Vector<S> out(embed_dim);
  for (int i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * (half > 1 ? double(i) / (half - 1) : 0.0));
    out[i] = S(std::sin(t * freq));
    out[half + i] = S(std::cos(t * freq));
  }
  return out;
}

/// Learned map on top of the sinusoid; shared by every residual block.
template <typename S>
struct TimeEmbed {
  LinearLayer<S> proj;
  int embed_dim = 0;

  void init(const std::string& name, int dim, Rng& rng) {
    embed_dim = dim;
    proj.init(name + ".proj", dim, dim, rng);
  }

  Var<S> forward(Tape<S>& t, int step) {
    Var<S> base = t.input(sinusoidal_time_embedding<S>(step, embed_dim));
    return silu(t, proj.forward(t, base));
  }

  void collect(ParamRefs<S>& out) { proj.collect(out); }
};

/// norm -> silu -> conv -> +temb -> norm -> silu -> conv, plus a shortcut.
/// The closing conv starts at zero so a fresh block is the identity map
/// onto its shortcut.
template <typename S>
struct ResBlock {
  GroupNormLayer<S> norm1, norm2;
  Conv2dLayer<S> conv1, conv2;
  LinearLayer<S> temb_proj;
  Conv2dLayer<S> shortcut;
  bool project_shortcut = false;

  void init(const std::string& name, int cin, int cout, int embed_dim, int groups,
            Rng& rng) {
    norm1.init(name + ".norm1", cin, norm_groups_for(cin, groups));
    conv1.init(name + ".conv1", cin, cout, 3, 1, 1, rng);
    temb_proj.init(name + ".temb", embed_dim, cout, rng);
    norm2.init(name + ".norm2", cout, norm_groups_for(cout, groups));
    conv2.init(name + ".conv2", cout, cout, 3, 1, 1, rng, /*zero_weights=*/true);
    project_shortcut = cin != cout;
    if (project_shortcut) shortcut.init(name + ".shortcut", cin, cout, 1, 1, 0, rng);
  }

  Var<S> forward(Tape<S>& t, Var<S> x, Var<S> temb) {
    Var<S> h = norm1.forward(t, x);
    h = silu(t, h);
    h = conv1.forward(t, h);
    h = add_col_broadcast(t, h, temb_proj.forward(t, temb));
    h = norm2.forward(t, h);
    h = silu(t, h);
    h = conv2.forward(t, h);
    Var<S> sc = project_shortcut ? shortcut.forward(t, x) : x;
    return add(t, h, sc);
  }

  void collect(ParamRefs<S>& out) {
    norm1.collect(out);
    conv1.collect(out);
    temb_proj.collect(out);
    norm2.collect(out);
    conv2.collect(out);
    if (project_shortcut) shortcut.collect(out);
  }
};

/// Single-head scaled dot-product attention over the flattened grid,
/// added residually. Zero-initialized output projection.
template <typename S>
struct SelfAttention2d {
  GroupNormLayer<S> norm;
  Conv2dLayer<S> q, k, v, proj;

  void init(const std::string& name, int channels, int groups, Rng& rng) {
    norm.init(name + ".norm", channels, norm_groups_for(channels, groups));
    q.init(name + ".q", channels, channels, 1, 1, 0, rng);
    k.init(name + ".k", channels, channels, 1, 1, 0, rng);
    v.init(name + ".v", channels, channels, 1, 1, 0, rng);
    proj.init(name + ".proj", channels, channels, 1, 1, 0, rng, /*zero_weights=*/true);
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    const int c = static_cast<int>(t.val(x).rows());
    const int h = t.node(x).h, w = t.node(x).w;
    Var<S> hn = norm.forward(t, x);
    Var<S> qv = q.forward(t, hn);
    Var<S> kv = k.forward(t, hn);
    Var<S> vv = v.forward(t, hn);
    Var<S> scores = matmul(t, qv, kv, /*trans_a=*/true, /*trans_b=*/false);
    scores = scale(t, scores, S(1) / S(std::sqrt(double(c))));
    Var<S> attn = softmax_rows(t, scores);  // rows sum to 1 per query
    Var<S> o = matmul(t, vv, attn, /*trans_a=*/false, /*trans_b=*/true);
    t.node(o).h = h;
    t.node(o).w = w;
    return add(t, x, proj.forward(t, o));
  }

  void collect(ParamRefs<S>& out) {
    norm.collect(out);
    q.collect(out);
    k.collect(out);
    v.collect(out);
    proj.collect(out);
  }
};

/// nearest x2 followed by a 3x3 convolution.
template <typename S>
struct UpsampleConv {
  Conv2dLayer<S> conv;

  void init(const std::string& name, int cin, int cout, Rng& rng) {
    conv.init(name + ".conv", cin, cout, 3, 1, 1, rng);
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    return conv.forward(t, upsample_nearest2(t, x));
  }

  void collect(ParamRefs<S>& out) { conv.collect(out); }
};

/// Noise-prediction UNet over the 4-channel noisy target: 5 encoder levels
/// of residual blocks with pooled downsampling, self-attention at the
/// configured low-resolution levels, an additive condition port per level,
/// and a skip-connected decoder.
template <typename S>
struct DenoiserNet {
  DenoiserConfig cfg;
  TimeEmbed<S> temb;
  Conv2dLayer<S> stem;
  std::vector<std::vector<ResBlock<S>>> enc_blocks;    // [level][block]
  std::vector<std::optional<SelfAttention2d<S>>> enc_attn;
  ResBlock<S> middle;
  std::vector<UpsampleConv<S>> ups;                    // level L-2 .. 0
  std::vector<ResBlock<S>> dec_blocks;
  GroupNormLayer<S> head_norm;
  Conv2dLayer<S> head_conv;

  void init(const DenoiserConfig& config, Rng& rng, const std::string& name = "denoiser") {
    cfg = config;
    temb.init(name + ".temb", cfg.embed_dim, rng);
    stem.init(name + ".stem", cfg.input_channels, cfg.channels_at(0), 3, 1, 1, rng);

    enc_blocks.resize(cfg.levels);
    enc_attn.resize(cfg.levels);
    int prev = cfg.channels_at(0);
    for (int lv = 0; lv < cfg.levels; ++lv) {
      const int ch = cfg.channels_at(lv);
      for (int b = 0; b < cfg.res_blocks; ++b) {
        ResBlock<S> rb;
        rb.init(name + ".enc" + std::to_string(lv) + ".res" + std::to_string(b),
                b == 0 ? prev : ch, ch, cfg.embed_dim, cfg.norm_groups, rng);
        enc_blocks[lv].push_back(std::move(rb));
      }
      if (cfg.attention_at(lv + 1)) {
        enc_attn[lv].emplace();
        enc_attn[lv]->init(name + ".enc" + std::to_string(lv) + ".attn", ch,
                           cfg.norm_groups, rng);
      }
      prev = ch;
    }
    middle.init(name + ".middle", cfg.channels_at(cfg.levels - 1),
                cfg.channels_at(cfg.levels - 1), cfg.embed_dim, cfg.norm_groups, rng);

    for (int lv = cfg.levels - 2; lv >= 0; --lv) {
      UpsampleConv<S> up;
      up.init(name + ".up" + std::to_string(lv), cfg.channels_at(lv + 1),
              cfg.channels_at(lv), rng);
      ups.push_back(std::move(up));
      ResBlock<S> rb;
      rb.init(name + ".dec" + std::to_string(lv), 2 * cfg.channels_at(lv),
              cfg.channels_at(lv), cfg.embed_dim, cfg.norm_groups, rng);
      dec_blocks.push_back(std::move(rb));
    }
    head_norm.init(name + ".head_norm", cfg.channels_at(0),
                   norm_groups_for(cfg.channels_at(0), cfg.norm_groups));
    head_conv.init(name + ".head_conv", cfg.channels_at(0), cfg.input_channels, 3, 1,
                   1, rng, /*zero_weights=*/true);
  }

  /// cond: one feature map per level (empty to run without fusion).
  Var<S> forward(Tape<S>& t, Var<S> x, int step, const std::vector<Var<S>>& cond) {
    if (!cond.empty() && static_cast<int>(cond.size()) != cfg.levels)
      throw ContractError("condition pyramid must have one map per level");
    Var<S> te = temb.forward(t, step);
    Var<S> h = stem.forward(t, x);

    std::vector<Var<S>> skips;
    for (int lv = 0; lv < cfg.levels; ++lv) {
      for (auto& rb : enc_blocks[lv]) h = rb.forward(t, h, te);
      if (enc_attn[lv]) h = enc_attn[lv]->forward(t, h);
      if (!cond.empty()) {
        const auto& cn = t.node(cond[lv]);
        if (cn.h != t.node(h).h || cn.w != t.node(h).w ||
            cn.val.rows() != t.val(h).rows())
          throw ContractError("condition map shape mismatch at level " +
                              std::to_string(lv + 1));
        h = add(t, h, cond[lv]);
      }
      skips.push_back(h);
      if (lv < cfg.levels - 1) h = avg_pool2(t, h);
    }

    h = middle.forward(t, skips.back(), te);
    for (int d = 0; d < cfg.levels - 1; ++d) {
      const int lv = cfg.levels - 2 - d;
      h = ups[d].forward(t, h);
      h = concat_rows(t, h, skips[lv]);
      h = dec_blocks[d].forward(t, h, te);
    }
    h = head_norm.forward(t, h);
    h = silu(t, h);
    return head_conv.forward(t, h);
  }

  /// Evaluation entry point: returns the predicted noise for one state.
  FieldStack<S> predict(const FieldStack<S>& x_t, int step,
                        const std::vector<FieldStack<S>>& cond_maps) {
    Tape<S> t;
    Var<S> x = t.input_stack(x_t);
    std::vector<Var<S>> cond;
    cond.reserve(cond_maps.size());
    for (const auto& m : cond_maps) cond.push_back(t.input_stack(m));
    Var<S> out = forward(t, x, step, cond);
    return t.stack_of(out);
  }

  void collect(ParamRefs<S>& out) {
    temb.collect(out);
    stem.collect(out);
    for (auto& level : enc_blocks)
      for (auto& rb : level) rb.collect(out);
    for (auto& a : enc_attn)
      if (a) a->collect(out);
    middle.collect(out);
    for (auto& up : ups) up.collect(out);
    for (auto& rb : dec_blocks) rb.collect(out);
    head_norm.collect(out);
    head_conv.collect(out);
  }
};

}  // namespace nowdiff
