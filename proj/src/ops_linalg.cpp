#include <Eigen/Core>

#include "autograd.hpp"
#include "awb/ops.hpp"
#include "gemm.hpp"

namespace awb {

using detail::grad_of;
using detail::invalid;
using detail::make_result;
using detail::needs_grad;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    invalid("matmul: expected 2-D operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    invalid("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<T> out(m * n);
  gemm::rm<T>(out.data(), m, n).noalias() = gemm::crm<T>(a.data().data(), m, k) * gemm::crm<T>(b.data().data(), k, n);
  if (!needs_grad({&a, &b})) return make_result<T>("matmul", Shape{m, n}, std::move(out), {}, nullptr);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b}, [a, b, m, k, n](const std::vector<T>& g) {
    auto G = gemm::crm<T>(g.data(), m, n);
    if (T* ga = grad_of(a)) gemm::rm<T>(ga, m, k).noalias() += G * gemm::crm<T>(b.data().data(), k, n).transpose();
    if (T* gb = grad_of(b)) gemm::rm<T>(gb, k, n).noalias() += gemm::crm<T>(a.data().data(), m, k).transpose() * G;
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3) {
    invalid("bmm: expected 3-D operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    invalid("bmm: incompatible " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<T> out(batch * m * n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm::rm<T>(out.data() + i * m * n, m, n).noalias() =
        gemm::crm<T>(pa + i * m * k, m, k) * gemm::crm<T>(pb + i * k * n, k, n);
  }
  Shape shape{batch, m, n};
  if (!needs_grad({&a, &b})) return make_result<T>("bmm", shape, std::move(out), {}, nullptr);
  return make_result<T>("bmm", shape, std::move(out), {a, b}, [a, b, batch, m, k, n](const std::vector<T>& g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
      auto G = gemm::crm<T>(g.data() + i * m * n, m, n);
      if (ga) gemm::rm<T>(ga + i * m * k, m, k).noalias() += G * gemm::crm<T>(pb + i * k * n, k, n).transpose();
      if (gb) gemm::rm<T>(gb + i * k * n, k, n).noalias() += gemm::crm<T>(pa + i * m * k, m, k).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1)) {
    invalid("linear: incompatible input " + to_string(x.shape()) + " and weight " + to_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outf)) {
    invalid("linear: bias shape " + to_string(bias->shape()) + " does not match " + std::to_string(outf));
  }
  std::vector<T> out(n * outf);
  auto Y = gemm::rm<T>(out.data(), n, outf);
  Y.noalias() = gemm::crm<T>(x.data().data(), n, in) * gemm::crm<T>(weight.data().data(), outf, in).transpose();
  if (bias) {
    const auto bv = bias->data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < outf; ++c) out[r * outf + c] += bv[c];
  }
  Shape shape{n, outf};
  const bool grad = needs_grad({&x, &weight, bias});
  if (!grad) return make_result<T>("linear", shape, std::move(out), {}, nullptr);
  std::vector<Tensor<T>> inputs{x, weight};
  Tensor<T> b = bias ? *bias : Tensor<T>();
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result<T>("linear", shape, std::move(out), inputs,
                        [x, weight, b, has_bias, n, in, outf](const std::vector<T>& g) {
                          auto G = gemm::crm<T>(g.data(), n, outf);
                          if (T* gx = grad_of(x))
                            gemm::rm<T>(gx, n, in).noalias() += G * gemm::crm<T>(weight.data().data(), outf, in);
                          if (T* gw = grad_of(weight))
                            gemm::rm<T>(gw, outf, in).noalias() += G.transpose() * gemm::crm<T>(x.data().data(), n, in);
                          if (has_bias) {
                            if (T* gb = grad_of(b)) {
                              for (std::size_t r = 0; r < n; ++r)
                                for (std::size_t c = 0; c < outf; ++c) gb[c] += g[r * outf + c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> pairwise_sqdist(const Tensor<T>& x) {
  if (x.rank() != 2) invalid("pairwise_sqdist: expected [N, D], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto v = x.data();
  std::vector<T> out(n * n, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(v[i * d + k]) - static_cast<double>(v[j * d + k]);
        s += diff * diff;
      }
      out[i * n + j] = out[j * n + i] = static_cast<T>(s);
    }
  }
  Shape shape{n, n};
  if (!needs_grad({&x})) return make_result<T>("pairwise_sqdist", shape, std::move(out), {}, nullptr);
  return make_result<T>("pairwise_sqdist", shape, std::move(out), {x}, [x, n, d](const std::vector<T>& g) {
    T* gx = grad_of(x);
    const auto v = x.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const T w = T{2} * (g[i * n + j] + g[j * n + i]);
        if (w == T{0}) continue;
        for (std::size_t k = 0; k < d; ++k) gx[i * d + k] += w * (v[i * d + k] - v[j * d + k]);
      }
    }
  });
}

#define AWB_INSTANTIATE(T)                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);     \
  template Tensor<T> pairwise_sqdist(const Tensor<T>&);

AWB_INSTANTIATE(float)
AWB_INSTANTIATE(double)
#undef AWB_INSTANTIATE

}  // namespace awb
