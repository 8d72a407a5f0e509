#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nowdiff/errors.hpp"
#include "nowdiff/modules.hpp"
#include "nowdiff/tape.hpp"

namespace nowdiff {

/// Per-position channel max and mean of a stack: (C,h,w) -> (2,h,w).
template <typename S>
FieldStack<S> z_pool(const FieldStack<S>& x) {
  FieldStack<S> out(2, x.h, x.w);
  for (long p = 0; p < x.data.cols(); ++p) {
    out.data(0, p) = x.data.col(p).maxCoeff();
    out.data(1, p) = x.data.col(p).mean();
  }
  return out;
}

namespace detail {

struct RotationTables {
  std::shared_ptr<std::vector<int>> fwd;  // rotated index -> original index
  std::shared_ptr<std::vector<int>> bwd;  // original index -> rotated index
};

// (C,h,w) -> (h, C, w): the spatial height axis becomes the channel axis.
inline RotationTables rotation_hcw(int c, int h, int w) {
  RotationTables t;
  t.fwd = std::make_shared<std::vector<int>>(static_cast<std::size_t>(c) * h * w);
  t.bwd = std::make_shared<std::vector<int>>(t.fwd->size());
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y)
      for (int ch = 0; ch < c; ++ch) {
        const int orig = (x * h + y) * c + ch;
        const int rot = (x * c + ch) * h + y;
        (*t.fwd)[rot] = orig;
        (*t.bwd)[orig] = rot;
      }
  return t;
}

// (C,h,w) -> (w, h, C): the spatial width axis becomes the channel axis.
inline RotationTables rotation_whc(int c, int h, int w) {
  RotationTables t;
  t.fwd = std::make_shared<std::vector<int>>(static_cast<std::size_t>(c) * h * w);
  t.bwd = std::make_shared<std::vector<int>>(t.fwd->size());
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y)
      for (int ch = 0; ch < c; ++ch) {
        const int orig = (x * h + y) * c + ch;
        const int rot = (ch * h + y) * w + x;
        (*t.fwd)[rot] = orig;
        (*t.bwd)[orig] = rot;
      }
  return t;
}

}  // namespace detail

/// Three-branch gating: the identity orientation plus two axis rotations,
/// each z-pooled, convolved, sigmoid-gated onto the (rotated) input, and
/// rotated back; the output is the mean of the branches.
template <typename S>
struct TripletAttention {
  Conv2dLayer<S> conv_id, conv_h, conv_w;
  detail::RotationTables rot_h, rot_w;
  int c = 0, h = 0, w = 0;

  void init(const std::string& name, int channels, int height, int width, Rng& rng) {
    c = channels;
    h = height;
    w = width;
    conv_id.init(name + ".conv_id", 2, 1, 7, 1, 3, rng);
    conv_h.init(name + ".conv_h", 2, 1, 7, 1, 3, rng);
    conv_w.init(name + ".conv_w", 2, 1, 7, 1, 3, rng);
    rot_h = detail::rotation_hcw(c, h, w);
    rot_w = detail::rotation_whc(c, h, w);
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    const auto& xn = t.node(x);
    if (static_cast<int>(xn.val.rows()) != c || xn.h != h || xn.w != w)
      throw ContractError("triplet attention: unexpected input shape");

    Var<S> g1 = sigmoid(t, conv_id.forward(t, zpool(t, x)));
    Var<S> y1 = mul_row_broadcast(t, x, g1);

    Var<S> xr_h = gather(t, x, rot_h.fwd, h, c, w);
    Var<S> g2 = sigmoid(t, conv_h.forward(t, zpool(t, xr_h)));
    Var<S> y2r = mul_row_broadcast(t, xr_h, g2);
    Var<S> y2 = gather(t, y2r, rot_h.bwd, c, h, w);

    Var<S> xr_w = gather(t, x, rot_w.fwd, w, h, c);
    Var<S> g3 = sigmoid(t, conv_w.forward(t, zpool(t, xr_w)));
    Var<S> y3r = mul_row_broadcast(t, xr_w, g3);
    Var<S> y3 = gather(t, y3r, rot_w.bwd, c, h, w);

    return scale(t, add(t, add(t, y1, y2), y3), S(1) / S(3));
  }

  void collect(ParamRefs<S>& out) {
    conv_id.collect(out);
    conv_h.collect(out);
    conv_w.collect(out);
  }
};

struct TAUConfig {
  int depth = -1;                     // -1 selects per-block automatic depth
  int attention_size_threshold = 32;  // triplet attention active at <= this size
  bool attention_enabled = true;
  int min_mid_channels = 4;
};

/// Depth for a nested block at the given input size: at most 4 stages and
/// at least a 2x2 bottom map, with exact halving at every stage.
inline int tau_auto_depth(int h, int w) {
  const int m = std::min(h, w);
  int log2_floor = 0;
  while ((1 << (log2_floor + 1)) <= m) ++log2_floor;
  int d = std::max(0, std::min(4, log2_floor - 1));
  while (d > 0 && (h % (1 << d) != 0 || w % (1 << d) != 0)) --d;
  return d;
}

/// One attention+conv+norm+relu unit. The gating law is static: triplet
/// attention exists exactly when enabled and the stage's input height and
/// width are both at or below the threshold.
template <typename S>
struct TauStage {
  std::optional<TripletAttention<S>> attention;
  Conv2dLayer<S> conv;
  GroupNormLayer<S> norm;
  int in_h = 0, in_w = 0;

  bool attention_active() const { return attention.has_value(); }

  void init(const std::string& name, int cin, int cout, int h, int w,
            const TAUConfig& cfg, Rng& rng) {
    in_h = h;
    in_w = w;
    if (cfg.attention_enabled && h <= cfg.attention_size_threshold &&
        w <= cfg.attention_size_threshold) {
      attention.emplace();
      attention->init(name + ".ta", cin, h, w, rng);
    }
    conv.init(name + ".conv", cin, cout, 3, 1, 1, rng);
    norm.init(name + ".norm", cout, norm_groups_for(cout, 4));
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    Var<S> h = x;
    if (attention) h = attention->forward(t, h);
    h = conv.forward(t, h);
    h = norm.forward(t, h);
    return relu(t, h);
  }

  void collect(ParamRefs<S>& out) {
    if (attention) attention->collect(out);
    conv.collect(out);
    norm.collect(out);
  }
};

struct TauStageInfo {
  int h = 0, w = 0;
  bool attention = false;
};

/// Nested-UNet block: an input stage, `depth` halving encoder stages, a
/// bottom stage, a mirrored decoder with skip concatenations, and a
/// residual connection from the input stage to the block output.
template <typename S>
struct TauBlock {
  TauStage<S> stage_in;
  std::vector<TauStage<S>> enc;  // enc[j] at size s / 2^j, j = 0..depth
  TauStage<S> bottom;
  std::vector<TauStage<S>> dec;  // dec[i] at size s / 2^(depth-i), i = 0..depth
  int depth = 0;
  int in_h = 0, in_w = 0;

  void init(const std::string& name, int cin, int cout, int h, int w,
            const TAUConfig& cfg, Rng& rng) {
    in_h = h;
    in_w = w;
    depth = cfg.depth >= 0 ? cfg.depth : tau_auto_depth(h, w);
    if (std::min(h, w) < (1 << depth) || h % (1 << depth) != 0 ||
        w % (1 << depth) != 0)
      throw ConfigError("tau block input too small for configured depth");
    const int mid = std::max(cfg.min_mid_channels, cout / 2);

    stage_in.init(name + ".in", cin, cout, h, w, cfg, rng);
    for (int j = 0; j <= depth; ++j) {
      TauStage<S> s;
      s.init(name + ".enc" + std::to_string(j), j == 0 ? cout : mid, mid,
             h >> j, w >> j, cfg, rng);
      enc.push_back(std::move(s));
    }
    bottom.init(name + ".bottom", mid, mid, h >> depth, w >> depth, cfg, rng);
    for (int i = 0; i <= depth; ++i) {
      TauStage<S> s;
      const int sh = h >> (depth - i), sw = w >> (depth - i);
      s.init(name + ".dec" + std::to_string(i), 2 * mid, i == depth ? cout : mid,
             sh, sw, cfg, rng);
      dec.push_back(std::move(s));
    }
  }

  Var<S> forward(Tape<S>& t, Var<S> x) {
    Var<S> f0 = stage_in.forward(t, x);
    std::vector<Var<S>> es;
    Var<S> h = enc[0].forward(t, f0);
    es.push_back(h);
    for (int j = 1; j <= depth; ++j) {
      h = enc[j].forward(t, avg_pool2(t, h));
      es.push_back(h);
    }
    h = bottom.forward(t, es.back());
    h = dec[0].forward(t, concat_rows(t, h, es[depth]));
    for (int i = 1; i <= depth; ++i) {
      h = upsample_nearest2(t, h);
      h = dec[i].forward(t, concat_rows(t, h, es[depth - i]));
    }
    return add(t, f0, h);
  }

  std::vector<TauStageInfo> stage_plan() const {
    std::vector<TauStageInfo> plan;
    auto push = [&plan](const TauStage<S>& s) {
      plan.push_back({s.in_h, s.in_w, s.attention_active()});
    };
    push(stage_in);
    for (const auto& s : enc) push(s);
    push(bottom);
    for (const auto& s : dec) push(s);
    return plan;
  }

  void collect(ParamRefs<S>& out) {
    stage_in.collect(out);
    for (auto& s : enc) s.collect(out);
    bottom.collect(out);
    for (auto& s : dec) s.collect(out);
  }
};

template <typename S>
struct ConditionPyramid {
  std::vector<FieldStack<S>> maps;
};

struct CondEncoderConfig {
  int input_channels = 4;
  int levels = 5;
  std::vector<int> level_channels = {32, 64, 128, 256, 256};
  TAUConfig tau;

  void validate(int h, int w) const {
    if (levels < 1) throw ConfigError("condition encoder needs >= 1 level");
    if (static_cast<int>(level_channels.size()) != levels)
      throw ConfigError("level_channels must list one width per level");
    const int factor = 1 << (levels - 1);
    if (h % factor != 0 || w % factor != 0)
      throw ConfigError("input size must divide by 2^(levels-1)");
  }
};

/// Five stacked TAU blocks with stride-2 convolutions between them; block k
/// consumes the (k-1)-times-downsampled stream and emits pyramid map k.
template <typename S>
struct ConditionEncoder {
  CondEncoderConfig cfg;
  int in_h = 0, in_w = 0;
  std::vector<TauBlock<S>> blocks;
  std::vector<Conv2dLayer<S>> downs;

  void init(const CondEncoderConfig& config, int h, int w, Rng& rng,
            const std::string& name = "condition") {
    cfg = config;
    cfg.validate(h, w);
    in_h = h;
    in_w = w;
    blocks.clear();
    downs.clear();
    for (int k = 0; k < cfg.levels; ++k) {
      const int ch = cfg.level_channels[k];
      const int bh = h >> k, bw = w >> k;
      if (k > 0) {
        Conv2dLayer<S> down;
        down.init(name + ".down" + std::to_string(k), cfg.level_channels[k - 1], ch,
                  3, 2, 1, rng);
        downs.push_back(std::move(down));
      }
      TauBlock<S> block;
      block.init(name + ".tau" + std::to_string(k), k == 0 ? cfg.input_channels : ch,
                 ch, bh, bw, cfg.tau, rng);
      blocks.push_back(std::move(block));
    }
  }

  std::vector<Var<S>> forward(Tape<S>& t, Var<S> frames) {
    const auto& fn = t.node(frames);
    if (static_cast<int>(fn.val.rows()) != cfg.input_channels || fn.h != in_h ||
        fn.w != in_w)
      throw ContractError("condition encoder: input shape mismatch");
    std::vector<Var<S>> maps;
    Var<S> stream = frames;
    for (int k = 0; k < cfg.levels; ++k) {
      if (k > 0) stream = downs[k - 1].forward(t, stream);
      stream = blocks[k].forward(t, stream);
      maps.push_back(stream);
    }
    return maps;
  }

  ConditionPyramid<S> build_pyramid(const FieldStack<S>& frames) {
    Tape<S> t;
    Var<S> in = t.input_stack(frames);
    std::vector<Var<S>> maps = forward(t, in);
    ConditionPyramid<S> pyr;
    for (Var<S> m : maps) pyr.maps.push_back(t.stack_of(m));
    return pyr;
  }

  void collect(ParamRefs<S>& out) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (k > 0) downs[k - 1].collect(out);
      blocks[k].collect(out);
    }
  }
};

}  // namespace nowdiff
