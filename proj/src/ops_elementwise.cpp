#include <algorithm>
#include <cmath>
#include <limits>

#include "autograd.hpp"
#include "awb/ops.hpp"

namespace awb {

using detail::grad_of;
using detail::invalid;
using detail::make_result;
using detail::needs_grad;

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> a_stride;  // 0 on broadcast axes
  std::vector<std::size_t> b_stride;
  bool trivial = false;               // identical shapes
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    invalid(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  Broadcast bc;
  bc.trivial = a == b;
  bc.out.resize(a.size());
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  bc.a_stride.resize(a.size());
  bc.b_stride.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      bc.out[i] = a[i];
      bc.a_stride[i] = sa[i];
      bc.b_stride[i] = sb[i];
    } else if (a[i] == 1) {
      bc.out[i] = b[i];
      bc.a_stride[i] = 0;
      bc.b_stride[i] = sb[i];
    } else if (b[i] == 1) {
      bc.out[i] = a[i];
      bc.a_stride[i] = sa[i];
      bc.b_stride[i] = 0;
    } else {
      invalid(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t total = numel(bc.out);
  if (bc.trivial) {
    for (std::size_t o = 0; o < total; ++o) f(o, o, o);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += bc.a_stride[ax];
      ib += bc.b_stride[ax];
      if (idx[ax] < bc.out[ax]) break;
      ia -= bc.a_stride[ax] * bc.out[ax];
      ib -= bc.b_stride[ax] * bc.out[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T, typename Fwd>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd,
                std::function<void(const std::vector<T>&, const std::vector<T>&, T*)> bwd) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  if (!needs_grad({&a})) return make_result<T>(op, a.shape(), std::move(out), {}, nullptr);
  auto result = make_result<T>(op, a.shape(), std::move(out), {a}, nullptr);
  // The backward closure needs the output values for some ops; capture the
  // node weakly to avoid a self-reference cycle.
  std::weak_ptr<detail::Node<T>> self = result.node();
  result.node()->requires_grad = true;
  result.node()->leaf = false;
  result.node()->inputs.push_back(a.node());
  result.node()->backward = [a, self, bwd](const std::vector<T>& g) {
    auto node = self.lock();
    bwd(g, node->data, grad_of(a));
  };
  return result;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast("add", a.shape(), b.shape());
  std::vector<T> out(numel(bc.out));
  const auto x = a.data();
  const auto y = b.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] + y[j]; });
  if (!needs_grad({&a, &b})) return make_result<T>("add", bc.out, std::move(out), {}, nullptr);
  return make_result<T>("add", bc.out, std::move(out), {a, b}, [a, b, bc](const std::vector<T>& g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += g[o];
      if (gb) gb[j] += g[o];
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast("sub", a.shape(), b.shape());
  std::vector<T> out(numel(bc.out));
  const auto x = a.data();
  const auto y = b.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] - y[j]; });
  if (!needs_grad({&a, &b})) return make_result<T>("sub", bc.out, std::move(out), {}, nullptr);
  return make_result<T>("sub", bc.out, std::move(out), {a, b}, [a, b, bc](const std::vector<T>& g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += g[o];
      if (gb) gb[j] -= g[o];
    });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto bc = plan_broadcast("mul", a.shape(), b.shape());
  std::vector<T> out(numel(bc.out));
  const auto x = a.data();
  const auto y = b.data();
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = x[i] * y[j]; });
  if (!needs_grad({&a, &b})) return make_result<T>("mul", bc.out, std::move(out), {}, nullptr);
  return make_result<T>("mul", bc.out, std::move(out), {a, b}, [a, b, bc](const std::vector<T>& g) {
    T* ga = grad_of(a);
    T* gb = grad_of(b);
    const auto x = a.data();
    const auto y = b.data();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += g[o] * y[j];
      if (gb) gb[j] += g[o] * x[i];
    });
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T v) { return v * factor; },
      [factor](const std::vector<T>& g, const std::vector<T>&, T* ga) {
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>(
      "add_scalar", a, [value](T v) { return v + value; },
      [](const std::vector<T>& g, const std::vector<T>&, T* ga) {
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T v) { return v > T{0} ? v : T{0}; },
      [](const std::vector<T>& g, const std::vector<T>& y, T* ga) {
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (y[i] > T{0}) ga[i] += g[i];
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      "sigmoid", a, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
      [](const std::vector<T>& g, const std::vector<T>& y, T* ga) {
        if (!ga) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T{1} - y[i]);
      });
}

template <typename T>
Tensor<T> safe_sqrt(const Tensor<T>& a, T floor) {
  return unary<T>(
      "safe_sqrt", a, [floor](T v) { return std::sqrt(std::max(v, floor)); },
      [a, floor](const std::vector<T>& g, const std::vector<T>& y, T* ga) {
        if (!ga) return;
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > floor) ga[i] += g[i] * T{0.5} / y[i];
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  std::vector<T> out{static_cast<T>(acc)};
  if (!needs_grad({&a})) return make_result<T>("sum", Shape{1}, std::move(out), {}, nullptr);
  return make_result<T>("sum", Shape{1}, std::move(out), {a}, [a](const std::vector<T>& g) {
    T* ga = grad_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) invalid("mean: empty tensor");
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  const double n = static_cast<double>(a.size());
  std::vector<T> out{static_cast<T>(acc / n)};
  if (!needs_grad({&a})) return make_result<T>("mean", Shape{1}, std::move(out), {}, nullptr);
  return make_result<T>("mean", Shape{1}, std::move(out), {a}, [a, n](const std::vector<T>& g) {
    T* ga = grad_of(a);
    const T share = static_cast<T>(g[0] / n);
    for (std::size_t i = 0; i < a.size(); ++i) ga[i] += share;
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  if (a.rank() != 2) invalid("log_softmax: expected [N, K], got " + to_string(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * cols;
    T mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(row[c] - mx));
    const T lse = mx + static_cast<T>(std::log(s));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  if (!needs_grad({&a})) return make_result<T>("log_softmax", a.shape(), std::move(out), {}, nullptr);
  auto y = out;
  return make_result<T>("log_softmax", a.shape(), std::move(out), {a},
                        [a, y = std::move(y), rows, cols](const std::vector<T>& g) {
                          T* ga = grad_of(a);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double gs = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                            for (std::size_t c = 0; c < cols; ++c) {
                              const std::size_t i = r * cols + c;
                              ga[i] += g[i] - std::exp(y[i]) * static_cast<T>(gs);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    invalid("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  if (!needs_grad({&a})) return make_result<T>("reshape", std::move(shape), std::move(out), {}, nullptr);
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [a](const std::vector<T>& g) {
    T* ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& dims) {
  const Shape& in = a.shape();
  if (dims.size() != in.size()) invalid("permute: expected " + std::to_string(in.size()) + " axes");
  std::vector<bool> seen(dims.size(), false);
  for (auto d : dims) {
    if (d >= dims.size() || seen[d]) invalid("permute: axes are not a permutation");
    seen[d] = true;
  }
  Shape out_shape(in.size());
  auto in_stride = contiguous_strides(in);
  std::vector<std::size_t> src_stride(in.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out_shape[i] = in[dims[i]];
    src_stride[i] = in_stride[dims[i]];
  }
  // Source offset for every output element, in output order.
  const std::size_t total = a.size();
  std::vector<std::size_t> src(total);
  {
    std::vector<std::size_t> idx(in.size(), 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < total; ++o) {
      src[o] = off;
      for (std::size_t ax = in.size(); ax-- > 0;) {
        ++idx[ax];
        off += src_stride[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= src_stride[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  const auto x = a.data();
  std::vector<T> out(total);
  for (std::size_t o = 0; o < total; ++o) out[o] = x[src[o]];
  if (!needs_grad({&a})) return make_result<T>("permute", out_shape, std::move(out), {}, nullptr);
  return make_result<T>("permute", out_shape, std::move(out), {a},
                        [a, src = std::move(src)](const std::vector<T>& g) {
                          T* ga = grad_of(a);
                          for (std::size_t o = 0; o < g.size(); ++o) ga[src[o]] += g[o];
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) invalid("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) invalid("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) invalid("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        invalid("concat: shape mismatch " + to_string(s) + " vs " + to_string(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<T> out(numel(out_shape));
  const std::size_t out_block = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.data() + o * block, block, out.data() + o * out_block + offset);
    }
    offset += block;
  }
  bool grad = false;
  for (const auto& p : parts) grad = grad || needs_grad({&p});
  if (!grad) return make_result<T>("concat", out_shape, std::move(out), {}, nullptr);
  return make_result<T>("concat", out_shape, std::move(out), parts,
                        [parts, outer, inner, out_block, axis](const std::vector<T>& g) {
                          std::size_t offset = 0;
                          for (const auto& p : parts) {
                            const std::size_t block = p.dim(axis) * inner;
                            if (T* gp = grad_of(p)) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* src = g.data() + o * out_block + offset;
                                for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += src[i];
                              }
                            }
                            offset += block;
                          }
                        });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, const std::vector<std::size_t>& flat_indices) {
  const auto x = a.data();
  std::vector<T> out(flat_indices.size());
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= x.size()) invalid("index_select: index out of range");
    out[i] = x[flat_indices[i]];
  }
  Shape shape{flat_indices.size()};
  if (!needs_grad({&a})) return make_result<T>("index_select", shape, std::move(out), {}, nullptr);
  return make_result<T>("index_select", shape, std::move(out), {a},
                        [a, flat_indices](const std::vector<T>& g) {
                          T* ga = grad_of(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[flat_indices[i]] += g[i];
                        });
}

#define AWB_INSTANTIATE(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                        \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                         \
  template Tensor<T> safe_sqrt(const Tensor<T>&, T);                                    \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                            \
  template Tensor<T> log_softmax(const Tensor<T>&);                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                  \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                \
  template Tensor<T> index_select(const Tensor<T>&, const std::vector<std::size_t>&);

AWB_INSTANTIATE(float)
AWB_INSTANTIATE(double)
#undef AWB_INSTANTIATE

}  // namespace awb
