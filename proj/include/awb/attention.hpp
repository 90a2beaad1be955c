#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "awb/ops.hpp"
#include "awb/rng.hpp"
#include "awb/tensor.hpp"

namespace awb {

enum class AttentionKind { none, icbam, nonlocal };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& text);

// Improved CBAM placed between stages: channel attention from a shared
// two-layer MLP over average- and max-pooled descriptors, spatial attention from
// a k x k convolution over the channelwise mean/max maps, then a residual add.
template <typename T>
struct CbamParams {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  std::size_t kernel = 7;
  Tensor<T> fc1_weight;  // [C/r, C]
  Tensor<T> fc1_bias;    // [C/r]
  Tensor<T> fc2_weight;  // [C, C/r]
  Tensor<T> fc2_bias;    // [C]
  Tensor<T> spatial_weight;  // [1, 2, k, k]
  Tensor<T> spatial_bias;    // [1]

  static CbamParams zeros(std::size_t channels, std::size_t reduction = 16, std::size_t kernel = 7);
  std::vector<NamedTensor<T>> named();
};

// Simplified non-local block: affinity J = theta'^T phi' scaled by 1/(HW), no
// softmax; g is a 1x1 conv followed by batch norm; h restores C channels.
template <typename T>
struct NonLocalParams {
  std::size_t channels = 0;
  Tensor<T> theta_weight, theta_bias;  // [C/2, C, 1, 1], [C/2]
  Tensor<T> phi_weight, phi_bias;
  Tensor<T> g_weight, g_bias;
  Tensor<T> g_gamma, g_beta;           // [C/2]
  BatchNormStats<T> g_stats;
  Tensor<T> h_weight, h_bias;          // [C, C/2, 1, 1], [C]

  static NonLocalParams zeros(std::size_t channels);
  std::vector<NamedTensor<T>> named();
  std::vector<NamedTensor<T>> buffers();
};

/// Channel attention map M_c(F) in (0,1), shape [N, C, 1, 1].
template <typename T>
Tensor<T> cbam_channel_map(const Tensor<T>& features, const CbamParams<T>& p);
/// Spatial attention map M_s(K) in (0,1), shape [N, 1, H, W].
template <typename T>
Tensor<T> cbam_spatial_map(const Tensor<T>& features, const CbamParams<T>& p);

template <typename T>
Tensor<T> icbam_forward(const Tensor<T>& features, const CbamParams<T>& p);

/// `train` selects batch statistics for the batch norm after g.
template <typename T>
Tensor<T> nonlocal_forward(const Tensor<T>& features, NonLocalParams<T>& p, bool train);

struct AttentionOptions {
  std::size_t reduction = 16;
  std::size_t kernel = 7;
};

// Owns one attention unit of either kind (or none).
template <typename T>
class AttentionModule {
 public:
  AttentionModule() = default;

  /// Fan-in scaled normal init for convs and the MLP, zero biases, and a zero
  /// h projection so a fresh non-local block is the identity.
  static AttentionModule init(AttentionKind kind, std::size_t channels, RngStream& rng,
                              const AttentionOptions& options = {});

  explicit AttentionModule(CbamParams<T> p) : params_(std::move(p)) {}
  explicit AttentionModule(NonLocalParams<T> p) : params_(std::move(p)) {}

  AttentionKind kind() const;
  std::size_t channels() const;
  Tensor<T> forward(const Tensor<T>& features, bool train);

  std::vector<NamedTensor<T>> parameters();
  std::vector<NamedTensor<T>> buffers();
  std::size_t parameter_count();

  using Visitor = std::function<void(const std::string& name, Tensor<T>& tensor, bool is_buffer)>;
  /// Hands out the owned tensors by reference so callers can replace handles.
  void visit(const Visitor& fn);

  CbamParams<T>* cbam() { return std::get_if<CbamParams<T>>(&params_); }
  NonLocalParams<T>* nonlocal() { return std::get_if<NonLocalParams<T>>(&params_); }

 private:
  std::variant<std::monostate, CbamParams<T>, NonLocalParams<T>> params_;
};

/// Learnable scalar count of an improved-CBAM unit (MLP weights and biases plus
/// the spatial conv weight and bias).
std::size_t icbam_parameter_count(std::size_t channels, std::size_t reduction, std::size_t kernel);
std::size_t nonlocal_parameter_count(std::size_t channels);

}  // namespace awb
