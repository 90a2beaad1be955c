#pragma once

#include <cstddef>
#include <vector>

#include "awb/tensor.hpp"

namespace awb {

struct LossWeights {
  double hard_ce = 0.5;
  double soft_ce = 0.5;
  double hard_tri = 0.5;
  double soft_tri = 0.5;
  double temperature = 1.0;  // applied to the teacher logits before the softmax

  /// All weights nonnegative, at least one positive, temperature positive.
  void validate() const;
};

/// Mean over rows of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

/// Mean over rows of -sum_k p_k log softmax(logits)_k; `target` carries no gradient.
template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target);

/// Row-wise softmax(logits / temperature) as a constant.
template <typename T>
Tensor<T> softmax_constant(const Tensor<T>& logits, double temperature);

// For every anchor with at least one positive and one negative in the batch:
// the farthest same-label sample and the closest other-label sample (lowest
// index on ties).
struct TripletIndices {
  std::vector<std::size_t> anchor, positive, negative;
};

TripletIndices hardest_triplets(const std::vector<double>& distances, std::size_t n,
                                const std::vector<std::size_t>& labels);

/// Batch-hard triplet with a soft margin: mean of -log softmax([d_ap, d_an])[1],
/// that is softplus(d_ap - d_an). Zero when no anchor has both a positive and
/// a negative.
template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels);

/// The same pairs scored against the teacher: cross-entropy between
/// softmax of the teacher's [d_ap, d_an] and log softmax of the student's.
template <typename T>
Tensor<T> soft_triplet(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels,
                       const Tensor<T>& teacher_embeddings);

template <typename T>
struct LossTerms {
  Tensor<T> total;  // weighted sum, differentiable w.r.t. the student only
  double hard_ce = 0.0;
  double soft_ce = 0.0;
  double hard_tri = 0.0;
  double soft_tri = 0.0;
};

/// Hard and soft supervision of one student by the other network's teacher.
/// Teacher tensors are detached before use. Terms with zero weight are not
/// evaluated and report 0.
template <typename T>
LossTerms<T> mutual_losses(const Tensor<T>& logits, const Tensor<T>& teacher_logits, const Tensor<T>& embeddings,
                           const Tensor<T>& teacher_embeddings, const std::vector<std::size_t>& hard_labels,
                           const LossWeights& weights);

}  // namespace awb
