#include <doctest.h>

#include <cmath>
#include <vector>

#include "awb/ops.hpp"
#include "awb/waveblock.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace awb;
using awb::test::exact_round;
using awb::test::randn;
using awb::test::wave_oracle;

TEST_CASE("rounding is half away from zero") {
  CHECK(round_rate(22.4) == 22);
  CHECK(round_rate(1.5) == 2);
  CHECK(round_rate(2.5) == 3);
  CHECK(round_rate(0.0) == 0);
  CHECK(wave_max_offset(32, 0.3) == 22);
  CHECK(wave_max_offset(5, 0.3) == 4);  // 3.5 despite binary error in 0.7 * 5
  CHECK_THROWS_AS(round_rate(-1.0), std::invalid_argument);
}

TEST_CASE("draw support") {
  RngStream r(1, 1);
  std::vector<int> seen(3, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto d = draw_wave(r, 4, 0.5);
    REQUIRE(d.x <= 2);
    CHECK(d.height == 4);
    ++seen[d.x];
  }
  for (int s : seen) CHECK(s > 0);
  CHECK_THROWS_AS(draw_wave(r, 1, 0.9), std::invalid_argument);
  RngStream a(7, 2), b(7, 2);
  CHECK(draw_wave(a, 32, 0.3).x == draw_wave(b, 32, 0.3).x);
}

TEST_CASE("draws are uniform over {0..22} for H=32, r_w=0.3") {
  RngStream r(2024, 1);
  const int n = 1000000;
  std::vector<int> count(23, 0);
  for (int i = 0; i < n; ++i) ++count[draw_wave(r, 32, 0.3).x];
  const double p = 1.0 / 23.0, sd = std::sqrt(n * p * (1 - p));
  for (int c : count) CHECK(std::abs(c - n * p) < 3 * sd);
}

TEST_CASE("column example") {
  WaveConfig cfg;
  cfg.r_w = 0.5;
  cfg.r_h = 1.5;
  TensorD f(Shape{1, 1, 4, 1}, {1, 2, 3, 4});
  const auto y = waveblock_apply(f, cfg, WaveDraw{1, 4});
  CHECK(y.at(0) == 1.5);
  CHECK(y.at(1) == 2.0);
  CHECK(y.at(2) == 3.0);
  CHECK(y.at(3) == 6.0);
  CHECK_THROWS_AS(waveblock_apply(f, cfg, WaveDraw{1, 5}), std::invalid_argument);
}

TEST_CASE("identity at r_h = 1 and in eval mode") {
  RngStream r(3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = randn<float>(r, {2, 3, 8, 4});
    WaveConfig cfg;
    cfg.r_w = 0.3;
    cfg.r_h = 1.0;
    const auto d = draw_wave(r, 8, cfg.r_w);
    CHECK(awb::test::bit_equal(waveblock_apply(f, cfg, d), f));
    cfg.r_h = 1.5;
    cfg.train = false;
    CHECK(awb::test::bit_equal(waveblock_apply(f, cfg, d), f));
  }
}

TEST_CASE("matches the elementwise oracle on 1000 random instances") {
  RngStream r(4, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 2 + r.uniform_int(30);
    std::size_t m = 5 + r.uniform_int(91);
    while (exact_round(h, 100 - m) < 1) m = 5 + r.uniform_int(91);
    WaveConfig cfg;
    cfg.r_w = static_cast<double>(m) / 100.0;
    cfg.r_h = 0.1 + 3.0 * r.uniform();
    const auto f = randn(r, {1 + r.uniform_int(3), 1 + r.uniform_int(3), h, 1 + r.uniform_int(4)});
    const auto d = draw_wave(r, h, cfg.r_w);
    REQUIRE(d.x <= exact_round(h, 100 - m));
    REQUIRE(awb::test::bit_equal(waveblock_apply(f, cfg, d), wave_oracle(f, m, cfg.r_h, d.x)));
  }
}

TEST_CASE("linear in the input for a shared draw") {
  RngStream r(5, 5);
  WaveConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = randn(r, {2, 2, 8, 3}), g = randn(r, {2, 2, 8, 3});
    const double a = r.normal(), b = r.normal();
    const auto d = draw_wave(r, 8, cfg.r_w);
    const auto lhs = waveblock_apply(add(scale(f, a), scale(g, b)), cfg, d);
    const auto rhs = add(scale(waveblock_apply(f, cfg, d), a), scale(waveblock_apply(g, cfg, d), b));
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(std::abs(lhs.at(i) - rhs.at(i)) <= 1e-6 * std::max(1.0, std::abs(rhs.at(i))));
    }
  }
}

TEST_CASE("drop mode zeroes the band and keeps the rest") {
  WaveConfig cfg;
  cfg.r_w = 0.5;
  cfg.kind = WaveKind::drop;
  TensorD f(Shape{1, 1, 4, 1}, {1, 2, 3, 4});
  const auto y = waveblock_apply(f, cfg, WaveDraw{2, 4});
  CHECK(y.at(0) == 1.0);
  CHECK(y.at(1) == 2.0);
  CHECK(y.at(2) == 0.0);
  CHECK(y.at(3) == 0.0);
  CHECK(parse_wave_kind(to_string(WaveKind::drop)) == WaveKind::drop);
  CHECK_THROWS_AS(parse_wave_kind("ripple"), std::invalid_argument);
}

TEST_CASE("collision probabilities") {
  const auto one = collision_probability(32, 0.3, 1);
  CHECK(one.offsets == 22);
  CHECK(one.per_formula == Rational(1, 22));
  CHECK(one.per_support == Rational(1, 23));
  CHECK(to_double(one.per_formula) == doctest::Approx(0.045455).epsilon(1e-5));
  const auto four = collision_probability(32, 0.3, 4);
  CHECK(four.per_formula == Rational(1, 234256));
  CHECK(std::abs(to_double(four.per_formula) - 4.27e-6) < 0.005e-6);
  const auto single = collision_probability(2, 0.5, 1);
  CHECK(single.per_formula == Rational(1));
  CHECK_THROWS_AS(collision_probability(32, 0.3, 0), std::invalid_argument);
}

TEST_CASE("Monte Carlo collision rate of independent streams matches the draw law") {
  RngStream a(11, 1), b(11, 2);
  const int n = 1000000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += draw_wave(a, 32, 0.3).x == draw_wave(b, 32, 0.3).x;
  const double p = to_double(collision_probability(32, 0.3, 1).per_support);
  CHECK(std::abs(hits - n * p) < 3 * std::sqrt(n * p * (1 - p)));
}
