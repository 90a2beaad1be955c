#include <doctest.h>

#include <cmath>

#include "awb/awb.hpp"
#include "test_util.hpp"

using namespace awb;
using awb::test::bit_equal;
using awb::test::randn;
using awb::test::randu;

namespace {

AwbConfig config(AttentionKind kind, Strategy strategy, double r_h = 1.5, double r_w = 0.3) {
  AwbConfig c;
  c.attention = kind;
  c.strategy = strategy;
  c.wave.r_h = r_h;
  c.wave.r_w = r_w;
  return c;
}

}  // namespace

TEST_CASE("no attention and r_h = 1 is the identity") {
  RngStream r(1, 1);
  AttentionModule<float> none;
  const auto f = randn<float>(r, {2, 4, 8, 4});
  CHECK(bit_equal(awb_forward(f, config(AttentionKind::none, Strategy::pre, 1.0), none, r, true), f));
}

TEST_CASE("post non-local with zero h equals the plain wave") {
  RngStream r(2, 2);
  auto att = AttentionModule<float>::init(AttentionKind::nonlocal, 8, r);
  const auto cfg = config(AttentionKind::nonlocal, Strategy::post);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = randn<float>(r, {2, 8, 8, 4});
    const auto d = draw_wave(r, 8, cfg.wave.r_w);
    CHECK(bit_equal(awb_forward(f, cfg, att, d, true), waveblock_apply(f, cfg.wave, d)));
  }
}

TEST_CASE("pre improved CBAM with zero parameters and r_h = 1 gives 1.25 F") {
  RngStream r(3, 3);
  AttentionModule<float> att(CbamParams<float>::zeros(16, 4, 7));
  const auto f = randn<float>(r, {2, 16, 8, 4});
  const auto y = awb_forward(f, config(AttentionKind::icbam, Strategy::pre, 1.0), att, r, true);
  for (std::size_t i = 0; i < f.size(); ++i) REQUIRE(y.at(i) == 1.25f * f.at(i));
}

TEST_CASE("pre and post compose in opposite orders") {
  RngStream r(4, 4);
  auto att = AttentionModule<double>::init(AttentionKind::icbam, 8, r, {4, 3});
  const auto f = randn(r, {2, 8, 8, 3});
  for (auto s : {Strategy::pre, Strategy::post}) {
    const auto cfg = config(AttentionKind::icbam, s);
    const auto d = draw_wave(r, 8, cfg.wave.r_w);
    const auto y = awb_forward(f, cfg, att, d, true);
    const auto expect = s == Strategy::pre ? waveblock_apply(att.forward(f, true), cfg.wave, d)
                                           : att.forward(waveblock_apply(f, cfg.wave, d), true);
    CHECK(bit_equal(y, expect));
  }
  // The two orders genuinely differ once attention is nonlinear.
  const auto d = WaveDraw{2, 8};
  CHECK_FALSE(bit_equal(awb_forward(f, config(AttentionKind::icbam, Strategy::pre), att, d, true),
                        awb_forward(f, config(AttentionKind::icbam, Strategy::post), att, d, true)));
}

TEST_CASE("eval mode consumes no randomness and repeats exactly") {
  RngStream r(5, 5);
  auto att = AttentionModule<float>::init(AttentionKind::nonlocal, 8, r);
  auto cfg = config(AttentionKind::nonlocal, Strategy::post);
  cfg.wave.train = false;
  const auto f = randn<float>(r, {2, 8, 8, 4});
  RngStream waves(6, 6);
  const auto before = waves.counter();
  const auto y1 = awb_forward(f, cfg, att, waves, false);
  const auto y2 = awb_forward(f, cfg, att, waves, false);
  CHECK(waves.counter() == before);
  CHECK(bit_equal(y1, y2));
}

TEST_CASE("attention kind must match the parameters") {
  AttentionModule<float> none;
  RngStream r(7, 7);
  CHECK_THROWS_AS(awb_forward(TensorF(Shape{1, 8, 8, 2}), config(AttentionKind::icbam, Strategy::pre), none, r, true),
                  std::invalid_argument);
}

TEST_CASE("default pairings and names") {
  CHECK(AwbConfig::default_strategy(AttentionKind::icbam) == Strategy::pre);
  CHECK(AwbConfig::default_strategy(AttentionKind::nonlocal) == Strategy::post);
  CHECK(parse_strategy("post") == Strategy::post);
  CHECK_THROWS_AS(parse_strategy("middle"), std::invalid_argument);
}

TEST_CASE("enlargement check edge masks") {
  RngStream r(8, 8);
  const auto x = randn(r, {6, 5}), y = randn(r, {6, 5});
  const auto zero = enlargement_check(x, y, TensorD(Shape{6, 5}, 0.0));
  CHECK(zero.after == zero.before);
  const auto one = enlargement_check(x, y, TensorD(Shape{6, 5}, 1.0));
  CHECK(one.after == 2.0 * one.before);
  CHECK_THROWS_AS(enlargement_check(x, y, TensorD(Shape{6, 5}, 1.5)), std::invalid_argument);
  CHECK_THROWS_AS(enlargement_check(x, y, TensorD(Shape{5, 6}, 0.5)), std::invalid_argument);
}

TEST_CASE("enlargement never shrinks the difference") {
  RngStream r(9, 9);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t h = 1 + r.uniform_int(6), w = 1 + r.uniform_int(6);
    const auto e = enlargement_check(randn(r, {h, w}), randn(r, {h, w}), randu(r, {h, w}, 0.0, 1.0));
    REQUIRE(e.after >= e.before - 1e-12);
  }
}
