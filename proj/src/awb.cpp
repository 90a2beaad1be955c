#include "awb/awb.hpp"

#include <cmath>

#include "autograd.hpp"

namespace awb {

using detail::invalid;

std::string to_string(Strategy s) { return s == Strategy::pre ? "pre" : "post"; }

Strategy parse_strategy(const std::string& text) {
  if (text == "pre") return Strategy::pre;
  if (text == "post") return Strategy::post;
  invalid("unknown strategy '" + text + "' (expected pre or post)");
}

Strategy AwbConfig::default_strategy(AttentionKind kind) {
  return kind == AttentionKind::nonlocal ? Strategy::post : Strategy::pre;
}

template <typename T>
Tensor<T> awb_forward(const Tensor<T>& features, const AwbConfig& config, AttentionModule<T>& attention,
                      const WaveDraw& draw, bool attention_train) {
  if (attention.kind() != config.attention) {
    invalid("awb: attention parameters of kind " + to_string(attention.kind()) + " but config expects " +
            to_string(config.attention));
  }
  auto wave = [&](const Tensor<T>& f) { return waveblock_apply(f, config.wave, draw); };
  if (config.attention == AttentionKind::none) return wave(features);
  if (config.strategy == Strategy::pre) return wave(attention.forward(features, attention_train));
  return attention.forward(wave(features), attention_train);
}

template <typename T>
Tensor<T> awb_forward(const Tensor<T>& features, const AwbConfig& config, AttentionModule<T>& attention,
                      RngStream& rng, bool attention_train) {
  if (features.rank() != 4) invalid("awb: expected [N,C,H,W], got " + to_string(features.shape()));
  WaveDraw draw{0, features.dim(2)};
  if (config.wave.train) draw = draw_wave(rng, features.dim(2), config.wave.r_w);
  return awb_forward(features, config, attention, draw, attention_train);
}

template Tensor<float> awb_forward(const Tensor<float>&, const AwbConfig&, AttentionModule<float>&, const WaveDraw&, bool);
template Tensor<double> awb_forward(const Tensor<double>&, const AwbConfig&, AttentionModule<double>&, const WaveDraw&,
                                    bool);
template Tensor<float> awb_forward(const Tensor<float>&, const AwbConfig&, AttentionModule<float>&, RngStream&, bool);
template Tensor<double> awb_forward(const Tensor<double>&, const AwbConfig&, AttentionModule<double>&, RngStream&, bool);

Enlargement enlargement_check(const TensorD& x, const TensorD& y, const TensorD& alpha) {
  if (x.shape() != y.shape() || x.shape() != alpha.shape()) {
    invalid("enlargement_check: shapes " + to_string(x.shape()) + ", " + to_string(y.shape()) + ", " +
            to_string(alpha.shape()) + " differ");
  }
  const auto a = alpha.data();
  for (double v : a) {
    if (!(v >= 0.0 && v <= 1.0)) invalid("enlargement_check: mask value outside [0, 1]");
  }
  const auto xv = x.data();
  const auto yv = y.data();
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - yv[i];
    const double e = (1.0 + a[i]) * d;
    before += d * d;
    after += e * e;
  }
  return {std::sqrt(before), std::sqrt(after)};
}

}  // namespace awb
