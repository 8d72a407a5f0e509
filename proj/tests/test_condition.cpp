#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nowdiff/condition.hpp"
#include "nowdiff/rng.hpp"

using namespace nowdiff;

TEST_CASE("z_pool basics") {
  // one channel: max and mean both echo the input
  FieldStack<double> one(1, 2, 2);
  one.data << 1.0, 2.0, 3.0, 4.0;
  const auto p1 = z_pool(one);
  CHECK((p1.data.row(0) - one.data.row(0)).norm() == 0.0);
  CHECK((p1.data.row(1) - one.data.row(0)).norm() == 0.0);

  FieldStack<double> constant(3, 2, 2);
  constant.data.setConstant(0.5);
  const auto p2 = z_pool(constant);
  CHECK((p2.data.array() == 0.5).all());

  FieldStack<double> mixed(2, 1, 1);
  mixed.data << 1.0, 3.0;
  const auto p3 = z_pool(mixed);
  CHECK(p3.data(0, 0) == 3.0);
  CHECK(p3.data(1, 0) == 2.0);
}

TEST_CASE("triplet attention maps zero to zero and preserves shape") {
  Rng rng(61);
  TripletAttention<double> ta;
  ta.init("ta", 8, 4, 6, rng);

  Tape<double> t;
  Var<double> zero = t.input(Matrix<double>::Zero(8, 24), 4, 6);
  Var<double> y0 = ta.forward(t, zero);
  CHECK(t.val(y0).norm() == 0.0);

  const Matrix<double> x = rng.normal_matrix<double>(8, 24);
  Var<double> xv = t.input(x, 4, 6);
  Var<double> y = ta.forward(t, xv);
  CHECK(t.val(y).rows() == 8);
  CHECK(t.node(y).h == 4);
  CHECK(t.node(y).w == 6);

  // each branch gates by a sigmoid in (0,1), so the mean is bounded by |x|
  CHECK((t.val(y).array().abs() <= x.array().abs() + 1e-12).all());
}

TEST_CASE("tau auto depth rules") {
  CHECK(tau_auto_depth(64, 64) == 4);
  CHECK(tau_auto_depth(32, 32) == 4);
  CHECK(tau_auto_depth(16, 16) == 3);
  CHECK(tau_auto_depth(8, 8) == 2);
  CHECK(tau_auto_depth(4, 4) == 1);
  CHECK(tau_auto_depth(2, 2) == 0);
  CHECK(tau_auto_depth(1, 1) == 0);
  CHECK(tau_auto_depth(3, 3) == 0);  // odd sizes cannot halve
  CHECK(tau_auto_depth(48, 48) == 4);
}

TEST_CASE("tau stage attention gating law") {
  Rng rng(62);
  TAUConfig cfg;
  cfg.attention_size_threshold = 32;

  TauStage<double> big;
  big.init("s64", 4, 4, 64, 64, cfg, rng);
  CHECK_FALSE(big.attention_active());

  TauStage<double> edge;
  edge.init("s32", 4, 4, 32, 32, cfg, rng);
  CHECK(edge.attention_active());

  TauStage<double> small;
  small.init("s16", 4, 4, 16, 16, cfg, rng);
  CHECK(small.attention_active());

  // one long side disables it
  TauStage<double> wide;
  wide.init("swide", 4, 4, 16, 64, cfg, rng);
  CHECK_FALSE(wide.attention_active());

  TAUConfig off = cfg;
  off.attention_enabled = false;
  TauStage<double> disabled;
  disabled.init("soff", 4, 4, 16, 16, off, rng);
  CHECK_FALSE(disabled.attention_active());
}

TEST_CASE("tau block stage plan obeys the gating law and halving") {
  Rng rng(63);
  TAUConfig cfg;  // threshold 32
  TauBlock<double> block;
  block.init("tau", 4, 8, 64, 64, cfg, rng);
  CHECK(block.depth == 4);

  for (const TauStageInfo& s : block.stage_plan()) {
    CHECK(s.attention == (s.h <= 32 && s.w <= 32));
    CHECK(s.h >= 1);
  }
  // sizes run 64 down to 4 and back
  const auto plan = block.stage_plan();
  CHECK(plan.front().h == 64);
  CHECK(plan[2].h == 32);
  bool saw4 = false;
  for (const auto& s : plan) saw4 |= (s.h == 4);
  CHECK(saw4);
}

TEST_CASE("disabling attention equals a zero threshold build") {
  // both configurations skip every attention module, so the parameter
  // stream and the outputs coincide exactly
  TAUConfig off;
  off.attention_enabled = false;
  TAUConfig zero_thr;
  zero_thr.attention_size_threshold = 0;

  Rng rng_a(64), rng_b(64);
  TauBlock<double> a, b;
  a.init("tau", 4, 8, 16, 16, off, rng_a);
  b.init("tau", 4, 8, 16, 16, zero_thr, rng_b);

  Rng data(65);
  const FieldStack<double> x = data.normal_stack<double>(4, 16, 16);
  Tape<double> t;
  Var<double> ya = a.forward(t, t.input_stack(x));
  Var<double> yb = b.forward(t, t.input_stack(x));
  CHECK((t.val(ya) - t.val(yb)).norm() == 0.0);
  CHECK(t.node(ya).h == 16);  // block preserves the spatial size
}

TEST_CASE("tau block rejects inputs too small for the requested depth") {
  Rng rng(66);
  TAUConfig cfg;
  cfg.depth = 3;
  TauBlock<double> block;
  CHECK_THROWS_AS(block.init("tau", 4, 8, 4, 4, cfg, rng), ConfigError);
}

TEST_CASE("pyramid shapes, channels, and attention progression at 64") {
  Rng rng(67);
  CondEncoderConfig cfg;
  cfg.levels = 5;
  cfg.level_channels = {8, 16, 32, 64, 64};
  ConditionEncoder<double> enc;
  enc.init(cfg, 64, 64, rng);

  Rng data(68);
  const FieldStack<double> frames = data.normal_stack<double>(4, 64, 64);
  const ConditionPyramid<double> pyr = enc.build_pyramid(frames);

  REQUIRE(pyr.maps.size() == 5);
  const int want_sizes[5] = {64, 32, 16, 8, 4};
  for (int k = 0; k < 5; ++k) {
    CHECK(pyr.maps[k].h == want_sizes[k]);
    CHECK(pyr.maps[k].w == want_sizes[k]);
    CHECK(pyr.maps[k].channels() == cfg.level_channels[k]);
  }

  // attention-active fraction grows (or stays full) with depth
  double prev = -1.0;
  for (const auto& block : enc.blocks) {
    const auto plan = block.stage_plan();
    int active = 0;
    for (const auto& s : plan) active += s.attention ? 1 : 0;
    const double frac = double(active) / double(plan.size());
    CHECK(frac >= prev);
    prev = frac;
  }
  CHECK(prev == 1.0);  // the deepest block is fully attention-active

  CHECK_THROWS_AS(enc.build_pyramid(data.normal_stack<double>(4, 32, 32)),
                  ContractError);

  CondEncoderConfig bad = cfg;
  ConditionEncoder<double> enc2;
  CHECK_THROWS_AS(enc2.init(bad, 60, 60, rng), ConfigError);
}

TEST_CASE("toy 16x16 pyramid sizes") {
  Rng rng(69);
  CondEncoderConfig cfg;
  cfg.levels = 2;
  cfg.level_channels = {4, 8};
  ConditionEncoder<double> enc;
  enc.init(cfg, 16, 16, rng);
  const auto pyr = enc.build_pyramid(rng.normal_stack<double>(4, 16, 16));
  REQUIRE(pyr.maps.size() == 2);
  CHECK(pyr.maps[0].h == 16);
  CHECK(pyr.maps[1].h == 8);
}

TEST_CASE("encoder forward is deterministic") {
  Rng rng(70);
  CondEncoderConfig cfg;
  cfg.levels = 2;
  cfg.level_channels = {4, 8};
  ConditionEncoder<double> enc;
  enc.init(cfg, 16, 16, rng);
  Rng data(71);
  const FieldStack<double> frames = data.normal_stack<double>(4, 16, 16);
  const auto a = enc.build_pyramid(frames);
  const auto b = enc.build_pyramid(frames);
  for (int k = 0; k < 2; ++k) CHECK((a.maps[k].data - b.maps[k].data).norm() == 0.0);
}
