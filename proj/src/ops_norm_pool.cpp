#include <cmath>

#include "autograd.hpp"
#include "awb/ops.hpp"

namespace awb {

using detail::grad_of;
using detail::invalid;
using detail::make_result;
using detail::needs_grad;

namespace {

template <typename T>
void require_nchw(const char* op, const Tensor<T>& a) {
  if (a.rank() != 4) invalid(std::string(op) + ": expected [N,C,H,W], got " + to_string(a.shape()));
}

// Shared tail of the ops that pick one input element per output element.
template <typename T>
Tensor<T> routed(const char* op, const Tensor<T>& a, Shape shape, std::vector<T> out,
                 std::vector<std::size_t> source) {
  if (!needs_grad({&a})) return make_result<T>(op, std::move(shape), std::move(out), {}, nullptr);
  return make_result<T>(op, std::move(shape), std::move(out), {a},
                        [a, source = std::move(source)](const std::vector<T>& g) {
                          T* ga = grad_of(a);
                          for (std::size_t o = 0; o < g.size(); ++o) ga[source[o]] += g[o];
                        });
}

}  // namespace

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, BatchNormOptions options) {
  require_nchw("batchnorm2d", input);
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  for (const Tensor<T>* p : {&gamma, &beta, static_cast<const Tensor<T>*>(&stats.running_mean),
                             static_cast<const Tensor<T>*>(&stats.running_var)}) {
    if (p->rank() != 1 || p->dim(0) != c) {
      invalid("batchnorm2d: per-channel parameter " + to_string(p->shape()) + " does not match C=" + std::to_string(c));
    }
  }
  const std::size_t m = n * hw;
  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(c);
  std::vector<T> out(x.size());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (options.train) {
      // Two passes in double; constant channels give x - mu == 0 exactly.
      const double shift = x[ch * hw];
      double s = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i) {
        const T* p = x.data() + (s_i * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]) - shift;
      }
      mu = shift + s / static_cast<double>(m);
      double q = 0.0;
      for (std::size_t s_i = 0; s_i < n; ++s_i) {
        const T* p = x.data() + (s_i * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          q += d * d;
        }
      }
      var = q / static_cast<double>(m);
      if (options.update_stats) {
        const double unbiased = m > 1 ? q / static_cast<double>(m - 1) : var;
        auto rm = stats.running_mean.data_mut();
        auto rv = stats.running_var.data_mut();
        rm[ch] = static_cast<T>((1.0 - options.momentum) * rm[ch] + options.momentum * mu);
        rv[ch] = static_cast<T>((1.0 - options.momentum) * rv[ch] + options.momentum * unbiased);
      }
    } else {
      mu = stats.running_mean.data()[ch];
      var = stats.running_var.data()[ch];
    }
    const T mu_t = static_cast<T>(mu);
    const T istd = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    inv_std[ch] = istd;
    for (std::size_t s_i = 0; s_i < n; ++s_i) {
      const std::size_t base = (s_i * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (x[base + i] - mu_t) * istd;
        xhat[base + i] = xh;
        out[base + i] = gm[ch] * xh + bt[ch];
      }
    }
  }

  if (!needs_grad({&input, &gamma, &beta})) {
    return make_result<T>("batchnorm2d", input.shape(), std::move(out), {}, nullptr);
  }
  const bool train = options.train;
  return make_result<T>(
      "batchnorm2d", input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, m,
       train](const std::vector<T>& g) {
        T* gx = grad_of(input);
        T* gg = grad_of(gamma);
        T* gb = grad_of(beta);
        const auto gm = gamma.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t s_i = 0; s_i < n; ++s_i) {
            const std::size_t base = (s_i * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[base + i];
              sum_gx += static_cast<double>(g[base + i]) * xhat[base + i];
            }
          }
          if (gg) gg[ch] += static_cast<T>(sum_gx);
          if (gb) gb[ch] += static_cast<T>(sum_g);
          if (!gx) continue;
          const double scale = static_cast<double>(gm[ch]) * inv_std[ch];
          for (std::size_t s_i = 0; s_i < n; ++s_i) {
            const std::size_t base = (s_i * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                const double md = static_cast<double>(m);
                gx[base + i] += static_cast<T>(scale / md *
                                               (md * g[base + i] - sum_g - xhat[base + i] * sum_gx));
              } else {
                gx[base + i] += static_cast<T>(scale * g[base + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& a, std::size_t kernel, std::size_t stride) {
  require_nchw("max_pool2d", a);
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
    invalid("max_pool2d: kernel " + std::to_string(kernel) + " does not fit " + to_string(a.shape()));
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const auto x = a.data();
  std::vector<T> out(n * c * ho * wo);
  std::vector<std::size_t> src(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        out[o] = x[best];
        src[o] = best;
      }
  }
  return routed<T>("max_pool2d", a, Shape{n, c, ho, wo}, std::move(out), std::move(src));
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& a, std::size_t kernel, std::size_t stride) {
  require_nchw("avg_pool2d", a);
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) {
    invalid("avg_pool2d: kernel " + std::to_string(kernel) + " does not fit " + to_string(a.shape()));
  }
  const std::size_t ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  const auto x = a.data();
  std::vector<T> out(n * c * ho * wo);
  for (std::size_t p = 0, o = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        T acc = T{0};
        for (std::size_t i = 0; i < kernel; ++i)
          for (std::size_t j = 0; j < kernel; ++j) acc += x[p * h * w + (oy * stride + i) * w + ox * stride + j];
        out[o] = acc * inv;
      }
  Shape shape{n, c, ho, wo};
  if (!needs_grad({&a})) return make_result<T>("avg_pool2d", shape, std::move(out), {}, nullptr);
  return make_result<T>("avg_pool2d", shape, std::move(out), {a},
                        [a, n, c, h, w, ho, wo, kernel, stride, inv](const std::vector<T>& g) {
                          T* ga = grad_of(a);
                          for (std::size_t p = 0, o = 0; p < n * c; ++p)
                            for (std::size_t oy = 0; oy < ho; ++oy)
                              for (std::size_t ox = 0; ox < wo; ++ox, ++o)
                                for (std::size_t i = 0; i < kernel; ++i)
                                  for (std::size_t j = 0; j < kernel; ++j)
                                    ga[p * h * w + (oy * stride + i) * w + ox * stride + j] += g[o] * inv;
                        });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
  require_nchw("global_avg_pool", a);
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const auto x = a.data();
  std::vector<T> out(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  Shape shape{n, c, 1, 1};
  if (!needs_grad({&a})) return make_result<T>("global_avg_pool", shape, std::move(out), {}, nullptr);
  return make_result<T>("global_avg_pool", shape, std::move(out), {a}, [a, n, c, hw](const std::vector<T>& g) {
    T* ga = grad_of(a);
    for (std::size_t p = 0; p < n * c; ++p) {
      const T share = g[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) ga[p * hw + i] += share;
    }
  });
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& a) {
  require_nchw("global_max_pool", a);
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const auto x = a.data();
  std::vector<T> out(n * c);
  std::vector<std::size_t> src(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    std::size_t best = p * hw;
    for (std::size_t i = 1; i < hw; ++i)
      if (x[p * hw + i] > x[best]) best = p * hw + i;
    out[p] = x[best];
    src[p] = best;
  }
  return routed<T>("global_max_pool", a, Shape{n, c, 1, 1}, std::move(out), std::move(src));
}

template <typename T>
Tensor<T> channelwise_mean(const Tensor<T>& a) {
  require_nchw("channelwise_mean", a);
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const auto x = a.data();
  std::vector<T> out(n * hw);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < hw; ++i) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += x[(s * c + ch) * hw + i];
      out[s * hw + i] = static_cast<T>(acc / static_cast<double>(c));
    }
  Shape shape{n, 1, a.dim(2), a.dim(3)};
  if (!needs_grad({&a})) return make_result<T>("channelwise_mean", shape, std::move(out), {}, nullptr);
  return make_result<T>("channelwise_mean", shape, std::move(out), {a}, [a, n, c, hw](const std::vector<T>& g) {
    T* ga = grad_of(a);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < hw; ++i) {
        const T share = g[s * hw + i] / static_cast<T>(c);
        for (std::size_t ch = 0; ch < c; ++ch) ga[(s * c + ch) * hw + i] += share;
      }
  });
}

template <typename T>
Tensor<T> channelwise_max(const Tensor<T>& a) {
  require_nchw("channelwise_max", a);
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const auto x = a.data();
  std::vector<T> out(n * hw);
  std::vector<std::size_t> src(n * hw);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = s * c * hw + i;
      for (std::size_t ch = 1; ch < c; ++ch) {
        const std::size_t idx = (s * c + ch) * hw + i;
        if (x[idx] > x[best]) best = idx;
      }
      out[s * hw + i] = x[best];
      src[s * hw + i] = best;
    }
  return routed<T>("channelwise_max", a, Shape{n, 1, a.dim(2), a.dim(3)}, std::move(out), std::move(src));
}

#define AWB_INSTANTIATE(T)                                                                             \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, \
                                 BatchNormOptions);                                                    \
  template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                \
  template Tensor<T> global_max_pool(const Tensor<T>&);                                                \
  template Tensor<T> channelwise_mean(const Tensor<T>&);                                               \
  template Tensor<T> channelwise_max(const Tensor<T>&);

AWB_INSTANTIATE(float)
AWB_INSTANTIATE(double)
#undef AWB_INSTANTIATE

}  // namespace awb
