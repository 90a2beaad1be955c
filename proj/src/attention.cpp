#include "awb/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "autograd.hpp"

namespace awb {

using detail::invalid;

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::icbam: return "icbam";
    case AttentionKind::nonlocal: return "nonlocal";
  }
  return "none";
}

AttentionKind parse_attention_kind(const std::string& text) {
  if (text == "none") return AttentionKind::none;
  if (text == "icbam") return AttentionKind::icbam;
  if (text == "nonlocal") return AttentionKind::nonlocal;
  invalid("unknown attention kind '" + text + "' (expected none, icbam or nonlocal)");
}

std::size_t icbam_parameter_count(std::size_t channels, std::size_t reduction, std::size_t kernel) {
  const std::size_t hidden = channels / reduction;
  return 2 * channels * hidden + hidden + channels + 2 * kernel * kernel + 1;
}

std::size_t nonlocal_parameter_count(std::size_t channels) {
  const std::size_t half = channels / 2;
  return 3 * (half * channels + half) + 2 * half + (channels * half + channels);
}

template <typename T>
CbamParams<T> CbamParams<T>::zeros(std::size_t channels, std::size_t reduction, std::size_t kernel) {
  if (reduction == 0 || channels % reduction != 0 || channels / reduction == 0) {
    invalid("icbam: reduction ratio " + std::to_string(reduction) + " must divide C=" + std::to_string(channels));
  }
  if (kernel % 2 == 0) invalid("icbam: spatial kernel must be odd, got " + std::to_string(kernel));
  const std::size_t hidden = channels / reduction;
  CbamParams p;
  p.channels = channels;
  p.reduction = reduction;
  p.kernel = kernel;
  p.fc1_weight = Tensor<T>(Shape{hidden, channels});
  p.fc1_bias = Tensor<T>(Shape{hidden});
  p.fc2_weight = Tensor<T>(Shape{channels, hidden});
  p.fc2_bias = Tensor<T>(Shape{channels});
  p.spatial_weight = Tensor<T>(Shape{1, 2, kernel, kernel});
  p.spatial_bias = Tensor<T>(Shape{1});
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> CbamParams<T>::named() {
  return {{"fc1.weight", fc1_weight}, {"fc1.bias", fc1_bias},
          {"fc2.weight", fc2_weight}, {"fc2.bias", fc2_bias},
          {"spatial.weight", spatial_weight}, {"spatial.bias", spatial_bias}};
}

template <typename T>
NonLocalParams<T> NonLocalParams<T>::zeros(std::size_t channels) {
  if (channels == 0 || channels % 2 != 0) {
    invalid("nonlocal: channel count must be even, got " + std::to_string(channels));
  }
  const std::size_t half = channels / 2;
  NonLocalParams p;
  p.channels = channels;
  p.theta_weight = Tensor<T>(Shape{half, channels, 1, 1});
  p.theta_bias = Tensor<T>(Shape{half});
  p.phi_weight = Tensor<T>(Shape{half, channels, 1, 1});
  p.phi_bias = Tensor<T>(Shape{half});
  p.g_weight = Tensor<T>(Shape{half, channels, 1, 1});
  p.g_bias = Tensor<T>(Shape{half});
  p.g_gamma = Tensor<T>(Shape{half}, T{1});
  p.g_beta = Tensor<T>(Shape{half});
  p.g_stats = BatchNormStats<T>::fresh(half);
  p.h_weight = Tensor<T>(Shape{channels, half, 1, 1});
  p.h_bias = Tensor<T>(Shape{channels});
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> NonLocalParams<T>::named() {
  return {{"theta.weight", theta_weight}, {"theta.bias", theta_bias}, {"phi.weight", phi_weight},
          {"phi.bias", phi_bias},         {"g.weight", g_weight},     {"g.bias", g_bias},
          {"g.bn.gamma", g_gamma},        {"g.bn.beta", g_beta},      {"h.weight", h_weight},
          {"h.bias", h_bias}};
}

template <typename T>
std::vector<NamedTensor<T>> NonLocalParams<T>::buffers() {
  return {{"g.bn.running_mean", g_stats.running_mean}, {"g.bn.running_var", g_stats.running_var}};
}

namespace {

template <typename T>
void require_channels(const char* op, const Tensor<T>& f, std::size_t channels) {
  if (f.rank() != 4 || f.dim(1) != channels) {
    invalid(std::string(op) + ": expected [N," + std::to_string(channels) + ",H,W], got " + to_string(f.shape()));
  }
}

template <typename T>
Tensor<T> channel_mlp(const Tensor<T>& descriptor, const CbamParams<T>& p) {
  auto hidden = relu(linear(descriptor, p.fc1_weight, &p.fc1_bias));
  return linear(hidden, p.fc2_weight, &p.fc2_bias);
}

}  // namespace

template <typename T>
Tensor<T> cbam_channel_map(const Tensor<T>& features, const CbamParams<T>& p) {
  require_channels("icbam", features, p.channels);
  const std::size_t n = features.dim(0), c = features.dim(1);
  auto avg = reshape(global_avg_pool(features), Shape{n, c});
  auto mx = reshape(global_max_pool(features), Shape{n, c});
  auto logits = add(channel_mlp(avg, p), channel_mlp(mx, p));
  return reshape(sigmoid(logits), Shape{n, c, 1, 1});
}

template <typename T>
Tensor<T> cbam_spatial_map(const Tensor<T>& features, const CbamParams<T>& p) {
  auto pooled = concat<T>({channelwise_mean(features), channelwise_max(features)}, 1);
  Conv2dOptions opt;
  opt.padding = p.kernel / 2;
  return sigmoid(conv2d(pooled, p.spatial_weight, &p.spatial_bias, opt));
}

template <typename T>
Tensor<T> icbam_forward(const Tensor<T>& features, const CbamParams<T>& p) {
  auto k1 = mul(cbam_channel_map(features, p), features);
  auto k2 = mul(cbam_spatial_map(k1, p), k1);
  return add(k2, features);
}

template <typename T>
Tensor<T> nonlocal_forward(const Tensor<T>& features, NonLocalParams<T>& p, bool train) {
  require_channels("nonlocal", features, p.channels);
  const std::size_t n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const std::size_t half = c / 2, hw = h * w;

  auto theta = reshape(conv2d(features, p.theta_weight, &p.theta_bias), Shape{n, half, hw});
  auto phi = reshape(conv2d(features, p.phi_weight, &p.phi_bias), Shape{n, half, hw});
  BatchNormOptions bn;
  bn.train = train;
  auto g = batchnorm2d(conv2d(features, p.g_weight, &p.g_bias), p.g_gamma, p.g_beta, p.g_stats, bn);

  // J = theta'^T phi' / (HW), [N, HW, HW]
  auto affinity = scale(bmm(permute(theta, {0, 2, 1}), phi), T{1} / static_cast<T>(hw));
  // g' = transpose of the collapsed g(F), [N, HW, C/2]
  auto g_prime = permute(reshape(g, Shape{n, half, hw}), {0, 2, 1});
  auto combined = permute(bmm(affinity, g_prime), {0, 2, 1});  // [N, C/2, HW]
  auto restored = conv2d(reshape(combined, Shape{n, half, h, w}), p.h_weight, &p.h_bias);
  return add(restored, features);
}

template <typename T>
AttentionModule<T> AttentionModule<T>::init(AttentionKind kind, std::size_t channels, RngStream& rng,
                                            const AttentionOptions& options) {
  auto fill = [&rng](Tensor<T>& t, std::size_t fan_in) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data_mut()) v = static_cast<T>(rng.normal() * stddev);
  };
  switch (kind) {
    case AttentionKind::none:
      return AttentionModule();
    case AttentionKind::icbam: {
      auto p = CbamParams<T>::zeros(channels, options.reduction, options.kernel);
      fill(p.fc1_weight, channels);
      fill(p.fc2_weight, channels / options.reduction);
      fill(p.spatial_weight, 2 * options.kernel * options.kernel);
      return AttentionModule(std::move(p));
    }
    case AttentionKind::nonlocal: {
      auto p = NonLocalParams<T>::zeros(channels);
      fill(p.theta_weight, channels);
      fill(p.phi_weight, channels);
      fill(p.g_weight, channels);
      return AttentionModule(std::move(p));
    }
  }
  return AttentionModule();
}

template <typename T>
AttentionKind AttentionModule<T>::kind() const {
  if (std::holds_alternative<CbamParams<T>>(params_)) return AttentionKind::icbam;
  if (std::holds_alternative<NonLocalParams<T>>(params_)) return AttentionKind::nonlocal;
  return AttentionKind::none;
}

template <typename T>
std::size_t AttentionModule<T>::channels() const {
  if (auto* p = std::get_if<CbamParams<T>>(&params_)) return p->channels;
  if (auto* p = std::get_if<NonLocalParams<T>>(&params_)) return p->channels;
  return 0;
}

template <typename T>
Tensor<T> AttentionModule<T>::forward(const Tensor<T>& features, bool train) {
  if (auto* p = std::get_if<CbamParams<T>>(&params_)) return icbam_forward(features, *p);
  if (auto* p = std::get_if<NonLocalParams<T>>(&params_)) return nonlocal_forward(features, *p, train);
  return features;
}

template <typename T>
std::vector<NamedTensor<T>> AttentionModule<T>::parameters() {
  if (auto* p = std::get_if<CbamParams<T>>(&params_)) return p->named();
  if (auto* p = std::get_if<NonLocalParams<T>>(&params_)) return p->named();
  return {};
}

template <typename T>
std::vector<NamedTensor<T>> AttentionModule<T>::buffers() {
  if (auto* p = std::get_if<NonLocalParams<T>>(&params_)) return p->buffers();
  return {};
}

template <typename T>
std::size_t AttentionModule<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.size();
  return n;
}

template <typename T>
void AttentionModule<T>::visit(const Visitor& fn) {
  if (auto* p = std::get_if<CbamParams<T>>(&params_)) {
    fn("fc1.weight", p->fc1_weight, false);
    fn("fc1.bias", p->fc1_bias, false);
    fn("fc2.weight", p->fc2_weight, false);
    fn("fc2.bias", p->fc2_bias, false);
    fn("spatial.weight", p->spatial_weight, false);
    fn("spatial.bias", p->spatial_bias, false);
  } else if (auto* p = std::get_if<NonLocalParams<T>>(&params_)) {
    fn("theta.weight", p->theta_weight, false);
    fn("theta.bias", p->theta_bias, false);
    fn("phi.weight", p->phi_weight, false);
    fn("phi.bias", p->phi_bias, false);
    fn("g.weight", p->g_weight, false);
    fn("g.bias", p->g_bias, false);
    fn("g.bn.gamma", p->g_gamma, false);
    fn("g.bn.beta", p->g_beta, false);
    fn("g.bn.running_mean", p->g_stats.running_mean, true);
    fn("g.bn.running_var", p->g_stats.running_var, true);
    fn("h.weight", p->h_weight, false);
    fn("h.bias", p->h_bias, false);
  }
}

#define AWB_INSTANTIATE(T)                                                                 \
  template struct CbamParams<T>;                                                           \
  template struct NonLocalParams<T>;                                                       \
  template class AttentionModule<T>;                                                       \
  template Tensor<T> cbam_channel_map(const Tensor<T>&, const CbamParams<T>&);             \
  template Tensor<T> cbam_spatial_map(const Tensor<T>&, const CbamParams<T>&);             \
  template Tensor<T> icbam_forward(const Tensor<T>&, const CbamParams<T>&);                \
  template Tensor<T> nonlocal_forward(const Tensor<T>&, NonLocalParams<T>&, bool);

AWB_INSTANTIATE(float)
AWB_INSTANTIATE(double)
#undef AWB_INSTANTIATE

}  // namespace awb
