#include "awb/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "awb/errors.hpp"
#include "awb/ops.hpp"

namespace awb {

template <typename T>
std::vector<TensorD> grad_cam(const Tensor<T>& activations, const HeadFn<T>& head,
                              const std::vector<std::size_t>& targets) {
  if (activations.rank() != 4) throw std::invalid_argument("grad_cam: activations must be [N, C, h, w]");
  const std::size_t n = activations.dim(0), c = activations.dim(1), hw = activations.dim(2) * activations.dim(3);
  if (!targets.empty() && targets.size() != n) throw std::invalid_argument("grad_cam: one target per sample required");

  Tensor<T> a = activations.detach();
  a.set_requires_grad(true);
  Tensor<T> logits = head(a);
  if (logits.rank() != 2 || logits.dim(0) != n) throw std::invalid_argument("grad_cam: head must return [N, K]");
  const std::size_t k = logits.dim(1);
  std::vector<std::size_t> pick(n);
  const auto lv = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t t = 0;
    if (!targets.empty()) {
      t = targets[i];
      if (t >= k) throw std::invalid_argument("grad_cam: class " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    } else {
      for (std::size_t j = 1; j < k; ++j) {
        if (lv[i * k + j] > lv[i * k + t]) t = j;
      }
    }
    pick[i] = i * k + t;
  }
  std::vector<T> grad(a.size(), T{0});
  if (logits.requires_grad()) {
    sum(index_select(logits, pick)).backward();
    if (a.has_grad()) std::copy(a.grad().begin(), a.grad().end(), grad.begin());
  }

  const auto av = a.data();
  std::vector<TensorD> maps;
  maps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> m(hw, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      double w = 0.0;
      for (std::size_t p = 0; p < hw; ++p) w += grad[base + p];
      w /= static_cast<double>(hw);
      if (w == 0.0) continue;
      for (std::size_t p = 0; p < hw; ++p) m[p] += w * static_cast<double>(av[base + p]);
    }
    double lo = 0.0, hi = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      m[p] = std::max(m[p], 0.0);
      lo = p == 0 ? m[p] : std::min(lo, m[p]);
      hi = std::max(hi, m[p]);
    }
    if (hi > 0.0) {
      const double span = hi - lo;
      for (double& v : m) v = span > 0.0 ? (v - lo) / span : 1.0;
    }
    maps.emplace_back(Shape{activations.dim(2), activations.dim(3)}, std::move(m));
  }
  return maps;
}

template <typename T>
std::vector<TensorD> grad_cam(Backbone<T>& net, const Tensor<T>& images, Tap tap, const std::vector<std::size_t>& targets) {
  if (net.num_classes() == 0) throw std::invalid_argument("grad_cam: network has no classifier");
  Tensor<T> act;
  {
    NoGradGuard guard;
    act = net.forward(images, ForwardMode::eval()).taps.at(tap);
  }
  return grad_cam<T>(
      act, [&](const Tensor<T>& x) { return net.forward_from(tap, x, ForwardMode::eval()).logits; }, targets);
}

double frobenius_diff(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("frobenius_diff: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.at(i) - b.at(i);
    s += d * d;
  }
  return std::sqrt(s);
}

double average_pair_difference(Backbone<float>& a, Backbone<float>& b, const Dataset& data,
                               const std::vector<std::size_t>& indices, Tap tap, std::size_t batch) {
  if (indices.empty()) throw std::invalid_argument("average_pair_difference: no images");
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::size_t end = std::min(indices.size(), start + batch);
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    const TensorF images = image_batch(data, chunk);
    const auto ma = grad_cam(a, images, tap);
    const auto mb = grad_cam(b, images, tap);
    for (std::size_t i = 0; i < ma.size(); ++i) total += frobenius_diff(ma[i], mb[i]);
  }
  return total / static_cast<double>(indices.size());
}

void write_pgm(const std::string& path, const TensorD& map) {
  if (map.rank() != 2) throw std::invalid_argument("write_pgm: expected an [h, w] map");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const std::size_t h = map.dim(0), w = map.dim(1);
  out << "P2\n" << w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(map.at(y * w + x), 0.0, 1.0);
      out << (x ? " " : "") << std::lround(v * 255.0);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

template std::vector<TensorD> grad_cam(const Tensor<float>&, const HeadFn<float>&, const std::vector<std::size_t>&);
template std::vector<TensorD> grad_cam(const Tensor<double>&, const HeadFn<double>&, const std::vector<std::size_t>&);
template std::vector<TensorD> grad_cam(Backbone<float>&, const Tensor<float>&, Tap, const std::vector<std::size_t>&);
template std::vector<TensorD> grad_cam(Backbone<double>&, const Tensor<double>&, Tap, const std::vector<std::size_t>&);

}  // namespace awb
