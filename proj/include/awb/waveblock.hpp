#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstddef>
#include <string>

#include "awb/rng.hpp"
#include "awb/tensor.hpp"

namespace awb {

// wave: rows outside the kept band are multiplied by r_h.
// drop: the band itself is zeroed and everything else kept (the batch
//       feature-dropping baseline used for ablation).
enum class WaveKind { wave, drop };

std::string to_string(WaveKind kind);
WaveKind parse_wave_kind(const std::string& text);

struct WaveConfig {
  double r_w = 0.3;  // waving width rate: fraction of the height kept unscaled
  double r_h = 1.5;  // waving height rate: multiplier outside the band
  bool train = true;
  WaveKind kind = WaveKind::wave;

  void validate() const;
};

struct WaveDraw {
  std::size_t x = 0;       // first row of the band
  std::size_t height = 0;  // H the draw was made for
};

/// [v] on nonnegative reals, halves rounded up. A 1e-9 slack absorbs binary
/// representation error so H * (1 - r_w) = 3.5 rounds to 4 even when it
/// evaluates to 3.4999999999999996.
std::size_t round_rate(double v);
/// [H * (1 - r_w)], the largest band offset.
std::size_t wave_max_offset(std::size_t height, double r_w);
/// [H * r_w], the number of rows in the band.
std::size_t wave_band_rows(std::size_t height, double r_w);

/// X uniform over {0, ..., [H (1 - r_w)]}.
WaveDraw draw_wave(RngStream& rng, std::size_t height, double r_w);

template <typename T>
Tensor<T> waveblock_apply(const Tensor<T>& features, const WaveConfig& config, const WaveDraw& draw);

using Rational = boost::multiprecision::cpp_rational;

struct CollisionProbability {
  std::size_t offsets = 0;  // [H (1 - r_w)]
  Rational per_formula;     // (1 / offsets)^n, the closed form quoted for the method
  Rational per_support;     // (1 / (offsets + 1))^n, counting both endpoints of the support
};

/// Probability that n independent draws on two networks all coincide.
CollisionProbability collision_probability(std::size_t height, double r_w, std::size_t n_draws);

double to_double(const Rational& r);

}  // namespace awb
