#include "autograd.hpp"
#include "awb/ops.hpp"
#include "gemm.hpp"

namespace awb {

using detail::grad_of;
using detail::invalid;
using detail::make_result;
using detail::needs_grad;

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t k, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
ConvGeometry plan(const Tensor<T>& x, const Tensor<T>& wt, const std::type_identity_t<Tensor<T>>* bias, const Conv2dOptions& o) {
  if (x.rank() != 4) invalid("conv2d: input must be [N,C,H,W], got " + to_string(x.shape()));
  if (wt.rank() != 4) invalid("conv2d: weight must be [K,C,kh,kw], got " + to_string(wt.shape()));
  if (wt.dim(1) != x.dim(1)) {
    invalid("conv2d: weight " + to_string(wt.shape()) + " does not match input channels of " + to_string(x.shape()));
  }
  if (o.stride == 0) invalid("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), wt.dim(0), wt.dim(2), wt.dim(3), o.stride, o.padding, 0, 0};
  if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad) {
    invalid("conv2d: kernel " + to_string(wt.shape()) + " larger than padded input " + to_string(x.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.k)) {
    invalid("conv2d: bias shape " + to_string(bias->shape()) + " does not match " + std::to_string(g.k) + " filters");
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + oy * g.wo;
          if (y < 0 || y >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long xx = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            dst[ox] = (xx < 0 || xx >= static_cast<long>(g.w)) ? T{0} : src[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* img) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long xx = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (xx >= 0 && xx < static_cast<long>(g.w)) dst[xx] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_lowered(const Tensor<T>& x, const Tensor<T>& wt, const std::type_identity_t<Tensor<T>>* bias, const ConvGeometry g) {
  const std::size_t plane = g.out_plane(), patch = g.patch();
  const std::size_t in_size = g.c * g.h * g.w, out_size = g.k * plane;
  std::vector<T> out(g.n * out_size);
  const bool grad = needs_grad({&x, &wt, bias});
  const bool keep_cols = grad && wt.requires_grad() && !g.pointwise();
  std::vector<T> all_cols;
  if (keep_cols) all_cols.resize(g.n * patch * plane);
  std::vector<T> scratch(g.pointwise() || keep_cols ? 0 : patch * plane);

  const T* px = x.data().data();
  auto W = gemm::crm<T>(wt.data().data(), g.k, patch);
  for (std::size_t s = 0; s < g.n; ++s) {
    const T* cols = px + s * in_size;
    if (!g.pointwise()) {
      T* buf = keep_cols ? all_cols.data() + s * patch * plane : scratch.data();
      im2col(g, px + s * in_size, buf);
      cols = buf;
    }
    gemm::rm<T>(out.data() + s * out_size, g.k, plane).noalias() = W * gemm::crm<T>(cols, patch, plane);
    if (bias) {
      const auto bv = bias->data();
      for (std::size_t k = 0; k < g.k; ++k) {
        T* o = out.data() + s * out_size + k * plane;
        for (std::size_t p = 0; p < plane; ++p) o[p] += bv[k];
      }
    }
  }
  Shape shape{g.n, g.k, g.ho, g.wo};
  if (!grad) return make_result<T>("conv2d", shape, std::move(out), {}, nullptr);

  std::vector<Tensor<T>> inputs{x, wt};
  Tensor<T> b = bias ? *bias : Tensor<T>();
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result<T>(
      "conv2d", shape, std::move(out), inputs,
      [x, wt, b, has_bias, g, all_cols = std::move(all_cols)](const std::vector<T>& grad_out) {
        const std::size_t plane = g.out_plane(), patch = g.patch();
        const std::size_t in_size = g.c * g.h * g.w, out_size = g.k * plane;
        T* gx = grad_of(x);
        T* gw = grad_of(wt);
        T* gb = has_bias ? grad_of(b) : nullptr;
        auto W = gemm::crm<T>(wt.data().data(), g.k, patch);
        std::vector<T> dcols(gx && !g.pointwise() ? patch * plane : 0);
        for (std::size_t s = 0; s < g.n; ++s) {
          auto G = gemm::crm<T>(grad_out.data() + s * out_size, g.k, plane);
          if (gw) {
            const T* cols = g.pointwise() ? x.data().data() + s * in_size : all_cols.data() + s * patch * plane;
            gemm::rm<T>(gw, g.k, patch).noalias() += G * gemm::crm<T>(cols, patch, plane).transpose();
          }
          if (gx) {
            if (g.pointwise()) {
              gemm::rm<T>(gx + s * in_size, patch, plane).noalias() += W.transpose() * G;
            } else {
              gemm::rm<T>(dcols.data(), patch, plane).noalias() = W.transpose() * G;
              col2im_add(g, dcols.data(), gx + s * in_size);
            }
          }
          if (gb) {
            for (std::size_t k = 0; k < g.k; ++k) {
              const T* row = grad_out.data() + s * out_size + k * plane;
              T acc = T{0};
              for (std::size_t p = 0; p < plane; ++p) acc += row[p];
              gb[k] += acc;
            }
          }
        }
      });
}

// Straight nested loops; the reference route the lowered path is checked against.
template <typename T>
Tensor<T> conv_direct(const Tensor<T>& x, const Tensor<T>& wt, const std::type_identity_t<Tensor<T>>* bias, const ConvGeometry g) {
  const auto X = x.data();
  const auto Wv = wt.data();
  std::vector<T> out(g.n * g.k * g.ho * g.wo, T{0});
  auto in_at = [g](std::size_t s, std::size_t c, long y, long xx) -> std::size_t {
    return ((s * g.c + c) * g.h + static_cast<std::size_t>(y)) * g.w + static_cast<std::size_t>(xx);
  };
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t k = 0; k < g.k; ++k)
      for (std::size_t oy = 0; oy < g.ho; ++oy)
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          T acc = bias ? bias->data()[k] : T{0};
          for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t i = 0; i < g.kh; ++i)
              for (std::size_t j = 0; j < g.kw; ++j) {
                const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                const long xx = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(g.h) || xx >= static_cast<long>(g.w)) continue;
                acc += X[in_at(s, c, y, xx)] * Wv[((k * g.c + c) * g.kh + i) * g.kw + j];
              }
          out[((s * g.k + k) * g.ho + oy) * g.wo + ox] = acc;
        }
  Shape shape{g.n, g.k, g.ho, g.wo};
  if (!needs_grad({&x, &wt, bias})) return make_result<T>("conv2d_direct", shape, std::move(out), {}, nullptr);
  std::vector<Tensor<T>> inputs{x, wt};
  Tensor<T> b = bias ? *bias : Tensor<T>();
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return make_result<T>("conv2d_direct", shape, std::move(out), inputs,
                        [x, wt, b, has_bias, g, in_at](const std::vector<T>& G) {
                          T* gx = grad_of(x);
                          T* gw = grad_of(wt);
                          T* gb = has_bias ? grad_of(b) : nullptr;
                          const auto X = x.data();
                          const auto Wv = wt.data();
                          for (std::size_t s = 0; s < g.n; ++s)
                            for (std::size_t k = 0; k < g.k; ++k)
                              for (std::size_t oy = 0; oy < g.ho; ++oy)
                                for (std::size_t ox = 0; ox < g.wo; ++ox) {
                                  const T go = G[((s * g.k + k) * g.ho + oy) * g.wo + ox];
                                  if (gb) gb[k] += go;
                                  for (std::size_t c = 0; c < g.c; ++c)
                                    for (std::size_t i = 0; i < g.kh; ++i)
                                      for (std::size_t j = 0; j < g.kw; ++j) {
                                        const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                                        const long xx = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                                        if (y < 0 || xx < 0 || y >= static_cast<long>(g.h) || xx >= static_cast<long>(g.w))
                                          continue;
                                        const std::size_t wi = ((k * g.c + c) * g.kh + i) * g.kw + j;
                                        const std::size_t xi = in_at(s, c, y, xx);
                                        if (gx) gx[xi] += go * Wv[wi];
                                        if (gw) gw[wi] += go * X[xi];
                                      }
                                }
                        });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, Conv2dOptions options) {
  const ConvGeometry g = plan(input, weight, bias, options);
  return options.algo == ConvAlgo::direct ? conv_direct(input, weight, bias, g) : conv_lowered(input, weight, bias, g);
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>*, Conv2dOptions);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>*, Conv2dOptions);

}  // namespace awb
