#pragma once

// Differentiable tensor operations. Every op accepts inputs of equal rank;
// elementwise binaries broadcast only along axes where one operand has extent 1.
// Feature maps are N x C x H x W throughout.

#include <cstddef>
#include <type_traits>
#include <vector>

#include "awb/tensor.hpp"

namespace awb {

// -- elementwise ------------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
/// sqrt(max(a, floor)); the gradient is zero where a <= floor.
template <typename T> Tensor<T> safe_sqrt(const Tensor<T>& a, T floor);

// -- reductions -------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& a);   // -> [1]
template <typename T> Tensor<T> mean(const Tensor<T>& a);  // -> [1]
/// Row-wise log-softmax of an [N, K] matrix.
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a);

// -- shape ------------------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& dims);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Gathers elements by flat index into a 1-D tensor; gradients scatter back.
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& flat_indices);

// -- linear algebra ---------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched product: [B, M, K] x [B, K, N] -> [B, M, N].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);
/// y = x w^T + b with x [N, in], w [out, in], b [out] (optional).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias = nullptr);
/// Squared Euclidean distances between the rows of an [N, D] matrix.
template <typename T> Tensor<T> pairwise_sqdist(const Tensor<T>& x);

// -- convolution ------------------------------------------------------------

enum class ConvAlgo { lowered, direct };

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  ConvAlgo algo = ConvAlgo::lowered;
};

/// Cross-correlation of [N, C, H, W] with weight [K, C, kh, kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias,
                 Conv2dOptions options = {});

// -- normalization ----------------------------------------------------------

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  static BatchNormStats fresh(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{1})};
  }
};

struct BatchNormOptions {
  bool train = true;
  double momentum = 0.1;
  double eps = 1e-5;
  bool update_stats = true;  // train mode only
};

/// Per-channel normalization over N x H x W. Train mode uses batch statistics and
/// (optionally) folds them into `stats`; eval mode uses `stats`.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, BatchNormOptions options = {});

// -- pooling ----------------------------------------------------------------

template <typename T> Tensor<T> max_pool2d(const Tensor<T>& a, std::size_t kernel, std::size_t stride);
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& a, std::size_t kernel, std::size_t stride);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& a);  // -> [N, C, 1, 1]
template <typename T> Tensor<T> global_max_pool(const Tensor<T>& a);  // -> [N, C, 1, 1]
template <typename T> Tensor<T> channelwise_mean(const Tensor<T>& a);  // -> [N, 1, H, W]
template <typename T> Tensor<T> channelwise_max(const Tensor<T>& a);   // -> [N, 1, H, W]

}  // namespace awb
