#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "awb/dataset.hpp"
#include "awb/network.hpp"
#include "awb/tensor.hpp"

namespace awb {

/// Maps an activation batch at some tap to logits [N, K].
template <typename T>
using HeadFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Grad-CAM over a batch of activations A [N, C, h, w]. For sample i the
/// target is targets[i], or the argmax of its logits when targets is empty.
/// Channel weights are the spatial mean of d logit / dA; the map is
/// relu(sum_c w_c A_c) rescaled to span [0, 1], and a map that is zero
/// everywhere stays zero. Returns one [h, w] map per sample. Samples must be
/// independent through `head` (eval-mode batch norm).
template <typename T>
std::vector<TensorD> grad_cam(const Tensor<T>& activations, const HeadFn<T>& head,
                              const std::vector<std::size_t>& targets = {});

/// Grad-CAM of `net` in eval mode at `tap`, each sample's own prediction as target.
template <typename T>
std::vector<TensorD> grad_cam(Backbone<T>& net, const Tensor<T>& images, Tap tap,
                              const std::vector<std::size_t>& targets = {});

/// sqrt(sum (a - b)^2); throws std::invalid_argument on shape mismatch.
double frobenius_diff(const TensorD& a, const TensorD& b);

/// Mean over images of frobenius_diff between the two networks' Grad-CAM maps.
double average_pair_difference(Backbone<float>& a, Backbone<float>& b, const Dataset& data,
                               const std::vector<std::size_t>& indices, Tap tap, std::size_t batch = 32);

/// Plain-text graymap (P2) with values in [0, 1] scaled to 0..255.
void write_pgm(const std::string& path, const TensorD& map);

}  // namespace awb
