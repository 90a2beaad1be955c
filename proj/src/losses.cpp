#include "awb/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "awb/ops.hpp"

namespace awb {

void LossWeights::validate() const {
  for (double w : {hard_ce, soft_ce, hard_tri, soft_tri}) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (hard_ce + soft_ce + hard_tri + soft_tri <= 0.0) throw std::invalid_argument("at least one loss weight must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(k) + ")");
    }
    idx[i] = i * k + labels[i];
  }
  return scale(sum(index_select(log_softmax(logits), idx)), T{-1} / static_cast<T>(n));
}

template <typename T>
Tensor<T> softmax_constant(const Tensor<T>& logits, double temperature) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: expected [N, K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto x = logits.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(x[r * k + c]) / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(static_cast<double>(x[r * k + c]) / temperature - mx);
    for (std::size_t c = 0; c < k; ++c) {
      out[r * k + c] = static_cast<T>(std::exp(static_cast<double>(x[r * k + c]) / temperature - mx) / s);
    }
  }
  return Tensor<T>(logits.shape(), std::move(out));
}

template <typename T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target) {
  if (logits.shape() != target.shape() || logits.rank() != 2) {
    throw std::invalid_argument("soft_cross_entropy: shapes " + to_string(logits.shape()) + " and " +
                                to_string(target.shape()));
  }
  return scale(sum(mul(log_softmax(logits), target.detach())), T{-1} / static_cast<T>(logits.dim(0)));
}

TripletIndices hardest_triplets(const std::vector<double>& dist, std::size_t n, const std::vector<std::size_t>& labels) {
  if (labels.size() != n || dist.size() != n * n) throw std::invalid_argument("triplet: label count mismatch");
  TripletIndices out;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double d = dist[a * n + j];
      if (labels[j] == labels[a]) {
        if (pos == n || d > dist[a * n + pos]) pos = j;
      } else if (neg == n || d < dist[a * n + neg]) {
        neg = j;
      }
    }
    if (pos == n || neg == n) continue;
    out.anchor.push_back(a);
    out.positive.push_back(pos);
    out.negative.push_back(neg);
  }
  return out;
}

namespace {

// [A, 2] matrix of (d_ap, d_an) for the given triplets, differentiable.
template <typename T>
Tensor<T> pair_distances(const Tensor<T>& dist, std::size_t n, const TripletIndices& t) {
  const std::size_t a = t.anchor.size();
  std::vector<std::size_t> ap(a), an(a);
  for (std::size_t i = 0; i < a; ++i) {
    ap[i] = t.anchor[i] * n + t.positive[i];
    an[i] = t.anchor[i] * n + t.negative[i];
  }
  return concat<T>({reshape(index_select(dist, ap), Shape{a, 1}), reshape(index_select(dist, an), Shape{a, 1})}, 1);
}

template <typename T>
Tensor<T> distances(const Tensor<T>& e) {
  return safe_sqrt(pairwise_sqdist(e), static_cast<T>(1e-12));
}

template <typename T>
TripletIndices mine(const Tensor<T>& dist, std::size_t n, const std::vector<std::size_t>& labels) {
  std::vector<double> d(dist.data().begin(), dist.data().end());
  return hardest_triplets(d, n, labels);
}

}  // namespace

template <typename T>
Tensor<T> batch_hard_triplet(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels) {
  const std::size_t n = embeddings.dim(0);
  auto dist = distances(embeddings);
  const auto t = mine(dist, n, labels);
  if (t.anchor.empty()) return Tensor<T>(Shape{1});
  const std::size_t a = t.anchor.size();
  std::vector<std::size_t> col1(a);
  for (std::size_t i = 0; i < a; ++i) col1[i] = 2 * i + 1;
  auto ls = log_softmax(pair_distances(dist, n, t));
  return scale(sum(index_select(ls, col1)), T{-1} / static_cast<T>(a));
}

template <typename T>
Tensor<T> soft_triplet(const Tensor<T>& embeddings, const std::vector<std::size_t>& labels,
                       const Tensor<T>& teacher_embeddings) {
  if (embeddings.shape() != teacher_embeddings.shape()) throw std::invalid_argument("soft_triplet: shape mismatch");
  const std::size_t n = embeddings.dim(0);
  auto dist = distances(embeddings);
  const auto t = mine(dist, n, labels);
  if (t.anchor.empty()) return Tensor<T>(Shape{1});
  Tensor<T> target;
  {
    NoGradGuard guard;
    target = softmax_constant(pair_distances(distances(teacher_embeddings.detach()), n, t), 1.0);
  }
  return soft_cross_entropy(pair_distances(dist, n, t), target);
}

template <typename T>
LossTerms<T> mutual_losses(const Tensor<T>& logits, const Tensor<T>& teacher_logits, const Tensor<T>& embeddings,
                           const Tensor<T>& teacher_embeddings, const std::vector<std::size_t>& hard_labels,
                           const LossWeights& w) {
  w.validate();
  LossTerms<T> out;
  std::vector<Tensor<T>> parts;
  auto add_term = [&](double weight, Tensor<T> term, double& slot) {
    slot = static_cast<double>(term.item());
    parts.push_back(scale(term, static_cast<T>(weight)));
  };
  if (w.hard_ce > 0.0) add_term(w.hard_ce, cross_entropy(logits, hard_labels), out.hard_ce);
  if (w.soft_ce > 0.0) {
    if (teacher_logits.shape() != logits.shape()) throw std::invalid_argument("mutual_losses: teacher logits shape");
    add_term(w.soft_ce, soft_cross_entropy(logits, softmax_constant(teacher_logits.detach(), w.temperature)),
             out.soft_ce);
  }
  if (w.hard_tri > 0.0) add_term(w.hard_tri, batch_hard_triplet(embeddings, hard_labels), out.hard_tri);
  if (w.soft_tri > 0.0) add_term(w.soft_tri, soft_triplet(embeddings, hard_labels, teacher_embeddings), out.soft_tri);
  out.total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out.total = add(out.total, parts[i]);
  return out;
}

#define AWB_INSTANTIATE(T)                                                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> soft_cross_entropy(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> softmax_constant(const Tensor<T>&, double);                                             \
  template Tensor<T> batch_hard_triplet(const Tensor<T>&, const std::vector<std::size_t>&);                  \
  template Tensor<T> soft_triplet(const Tensor<T>&, const std::vector<std::size_t>&, const Tensor<T>&);      \
  template LossTerms<T> mutual_losses(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      const std::vector<std::size_t>&, const LossWeights&);

AWB_INSTANTIATE(float)
AWB_INSTANTIATE(double)
#undef AWB_INSTANTIATE

}  // namespace awb
