#pragma once

#include <string>

#include "awb/attention.hpp"
#include "awb/tensor.hpp"
#include "awb/waveblock.hpp"

namespace awb {

// pre:  F* = WaveBlock(Attention(F))
// post: F* = Attention(WaveBlock(F))
enum class Strategy { pre, post };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct AwbConfig {
  AttentionKind attention = AttentionKind::none;
  Strategy strategy = Strategy::pre;  // ignored when attention is none
  WaveConfig wave;

  /// icbam pairs with pre, nonlocal with post.
  static Strategy default_strategy(AttentionKind kind);
};

/// One attentive WaveBlock with a caller-fixed draw. The wave is applied only
/// when config.wave.train is set; `attention_train` selects batch statistics
/// inside the attention unit.
template <typename T>
Tensor<T> awb_forward(const Tensor<T>& features, const AwbConfig& config, AttentionModule<T>& attention,
                      const WaveDraw& draw, bool attention_train);

/// Same, drawing X from `rng` (one draw per call, shared across the batch).
/// Eval-mode calls consume no randomness.
template <typename T>
Tensor<T> awb_forward(const Tensor<T>& features, const AwbConfig& config, AttentionModule<T>& attention,
                      RngStream& rng, bool attention_train);

struct Enlargement {
  double before = 0.0;  // ||X - Y||_F
  double after = 0.0;   // ||(1 + alpha) * (X - Y)||_F
};

/// Difference between two maps before and after a shared residual attention
/// mask alpha (X~ = alpha * X + X). Throws if any alpha lies outside [0, 1].
Enlargement enlargement_check(const TensorD& x, const TensorD& y, const TensorD& alpha);

}  // namespace awb
