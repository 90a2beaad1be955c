#include "awb/waveblock.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "autograd.hpp"

namespace awb {

using detail::grad_of;
using detail::invalid;
using detail::make_result;
using detail::needs_grad;

std::string to_string(WaveKind kind) { return kind == WaveKind::wave ? "wave" : "drop"; }

WaveKind parse_wave_kind(const std::string& text) {
  if (text == "wave") return WaveKind::wave;
  if (text == "drop") return WaveKind::drop;
  throw std::invalid_argument("unknown wave kind '" + text + "' (expected wave or drop)");
}

void WaveConfig::validate() const {
  if (!(r_w > 0.0 && r_w < 1.0)) invalid("wave: r_w must lie in (0, 1), got " + std::to_string(r_w));
  if (!(r_h > 0.0)) invalid("wave: r_h must be positive, got " + std::to_string(r_h));
}

std::size_t round_rate(double v) {
  if (!(v >= 0.0)) invalid("round_rate: negative or NaN argument");
  return static_cast<std::size_t>(std::floor(v + 0.5 + 1e-9));
}

std::size_t wave_max_offset(std::size_t height, double r_w) {
  return round_rate(static_cast<double>(height) * (1.0 - r_w));
}

std::size_t wave_band_rows(std::size_t height, double r_w) {
  return round_rate(static_cast<double>(height) * r_w);
}

WaveDraw draw_wave(RngStream& rng, std::size_t height, double r_w) {
  const std::size_t top = wave_max_offset(height, r_w);
  if (top < 1) {
    invalid("draw_wave: [H(1-r_w)] = 0 for H=" + std::to_string(height) + ", r_w=" + std::to_string(r_w));
  }
  return {static_cast<std::size_t>(rng.uniform_int(top + 1)), height};
}

template <typename T>
Tensor<T> waveblock_apply(const Tensor<T>& features, const WaveConfig& config, const WaveDraw& draw) {
  config.validate();
  if (features.rank() != 4) invalid("waveblock: expected [N,C,H,W], got " + to_string(features.shape()));
  const std::size_t h = features.dim(2);
  if (draw.height != h) {
    invalid("waveblock: draw made for H=" + std::to_string(draw.height) + " applied to H=" + std::to_string(h));
  }
  if (!config.train) return features;

  const std::size_t band = wave_band_rows(h, config.r_w);
  const T inside = config.kind == WaveKind::wave ? T{1} : T{0};
  const T outside = config.kind == WaveKind::wave ? static_cast<T>(config.r_h) : T{1};
  std::vector<T> row_factor(h);
  for (std::size_t j = 0; j < h; ++j) row_factor[j] = (j >= draw.x && j < draw.x + band) ? inside : outside;

  const std::size_t planes = features.dim(0) * features.dim(1), w = features.dim(3);
  const auto x = features.data();
  std::vector<T> out(x.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t k = 0; k < w; ++k) {
        const std::size_t i = (p * h + j) * w + k;
        out[i] = row_factor[j] * x[i];
      }
  if (!needs_grad({&features})) return make_result<T>("waveblock", features.shape(), std::move(out), {}, nullptr);
  return make_result<T>("waveblock", features.shape(), std::move(out), {features},
                        [features, row_factor, planes, h, w](const std::vector<T>& g) {
                          T* gf = grad_of(features);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t j = 0; j < h; ++j)
                              for (std::size_t k = 0; k < w; ++k) {
                                const std::size_t i = (p * h + j) * w + k;
                                gf[i] += row_factor[j] * g[i];
                              }
                        });
}

template Tensor<float> waveblock_apply(const Tensor<float>&, const WaveConfig&, const WaveDraw&);
template Tensor<double> waveblock_apply(const Tensor<double>&, const WaveConfig&, const WaveDraw&);

CollisionProbability collision_probability(std::size_t height, double r_w, std::size_t n_draws) {
  if (n_draws < 1) invalid("collision_probability: n_draws must be at least 1");
  if (!(r_w > 0.0 && r_w < 1.0)) invalid("collision_probability: r_w must lie in (0, 1)");
  CollisionProbability p;
  p.offsets = wave_max_offset(height, r_w);
  if (p.offsets < 1) invalid("collision_probability: [H(1-r_w)] = 0, the closed form is undefined");
  using boost::multiprecision::cpp_int;
  cpp_int den_formula = 1, den_support = 1;
  for (std::size_t i = 0; i < n_draws; ++i) {
    den_formula *= p.offsets;
    den_support *= p.offsets + 1;
  }
  p.per_formula = Rational(cpp_int(1), den_formula);
  p.per_support = Rational(cpp_int(1), den_support);
  return p;
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

}  // namespace awb
