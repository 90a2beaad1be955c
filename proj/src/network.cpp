#include "awb/network.hpp"

#include <cmath>
#include <stdexcept>

#include "autograd.hpp"

namespace awb {

using detail::invalid;

namespace {

constexpr std::size_t kStages = 4;

// Forward steps in order; a tap names the output of one step.
enum Step : std::size_t { s_stage1, s_stage2, s_awb2, s_stage3, s_awb3, s_stage4, s_head };

std::size_t step_after(Tap tap) {
  switch (tap) {
    case Tap::input: return s_stage1;
    case Tap::stage1: return s_stage2;
    case Tap::stage2: return s_awb2;
    case Tap::awb2: return s_stage3;
    case Tap::stage3: return s_awb3;
    case Tap::awb3: return s_stage4;
    case Tap::stage4: return s_head;
  }
  return s_stage1;
}

template <typename T>
void fill_normal(Tensor<T>& t, RngStream& rng, double stddev) {
  for (auto& v : t.data_mut()) v = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

std::string to_string(Tap tap) {
  switch (tap) {
    case Tap::input: return "input";
    case Tap::stage1: return "stage1";
    case Tap::stage2: return "stage2";
    case Tap::awb2: return "awb2";
    case Tap::stage3: return "stage3";
    case Tap::awb3: return "awb3";
    case Tap::stage4: return "stage4";
  }
  return "input";
}

Tap parse_tap(const std::string& text) {
  for (Tap t : {Tap::input, Tap::stage1, Tap::stage2, Tap::awb2, Tap::stage3, Tap::awb3, Tap::stage4}) {
    if (to_string(t) == text) return t;
  }
  invalid("unknown tap '" + text + "' (expected input, stage1, stage2, awb2, stage3, awb3 or stage4)");
}

std::size_t BackboneSpec::height_after(std::size_t stage) const {
  return height >> std::min<std::size_t>(stage, kStages - 1);
}

std::size_t BackboneSpec::width_after(std::size_t stage) const {
  return width >> std::min<std::size_t>(stage, kStages - 1);
}

void BackboneSpec::validate(const WaveConfig& wave) const {
  if (channels.size() != kStages) invalid("backbone: expected 4 stage widths");
  for (std::size_t c : channels) {
    if (c == 0) invalid("backbone: stage width must be positive");
  }
  if (in_channels == 0 || embedding == 0) invalid("backbone: input channels and embedding must be positive");
  if (height % 8 != 0 || width % 8 != 0 || height == 0 || width == 0) {
    invalid("backbone: input " + std::to_string(height) + "x" + std::to_string(width) +
            " must be a positive multiple of 8 in both extents");
  }
  wave.validate();
  for (std::size_t stage : {2, 3}) {
    if (wave_max_offset(height_after(stage), wave.r_w) < 1) {
      invalid("backbone: empty wave support at height " + std::to_string(height_after(stage)) +
              " with r_w=" + std::to_string(wave.r_w));
    }
  }
}

template <typename T>
Backbone<T> Backbone<T>::create(const BackboneSpec& spec, const RngStream& init_rng, const RngStream& wave_rng,
                                std::size_t num_classes) {
  spec.validate(WaveConfig{});
  Backbone net;
  net.spec_ = spec;
  net.wave_rng_ = wave_rng;
  RngStream rng = init_rng.split(0);
  std::size_t in = spec.in_channels;
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t out = spec.channels[s];
    StageParams<T> st;
    st.conv_weight = Tensor<T>(Shape{out, in, 3, 3});
    fill_normal(st.conv_weight, rng, std::sqrt(2.0 / static_cast<double>(in * 9)));
    st.bn_gamma = Tensor<T>(Shape{out}, T{1});
    st.bn_beta = Tensor<T>(Shape{out});
    st.bn_stats = BatchNormStats<T>::fresh(out);
    net.stages_.push_back(std::move(st));
    in = out;
  }
  net.embed_weight_ = Tensor<T>(Shape{spec.embedding, in});
  fill_normal(net.embed_weight_, rng, std::sqrt(1.0 / static_cast<double>(in)));
  net.embed_bias_ = Tensor<T>(Shape{spec.embedding});
  if (num_classes > 0) net.init_classifier(num_classes, init_rng.split(2));
  net.set_trainable(ParamGroup::backbone, true);
  return net;
}

template <typename T>
void Backbone<T>::attach_awb(const AwbConfig& config, RngStream rng, const AttentionOptions& options) {
  spec_.validate(config.wave);
  awb_ = config;
  attention_options_ = options;
  RngStream r2 = rng.split(0), r3 = rng.split(1);
  att2_ = AttentionModule<T>::init(config.attention, spec_.channels[1], r2, options);
  att3_ = AttentionModule<T>::init(config.attention, spec_.channels[2], r3, options);
  set_trainable(ParamGroup::attention, true);
}

template <typename T>
void Backbone<T>::set_wave(const WaveConfig& wave) {
  spec_.validate(wave);
  awb_.wave = wave;
}

template <typename T>
void Backbone<T>::set_classifier(const Tensor<T>& weight) {
  if (weight.rank() != 2 || weight.dim(1) != spec_.embedding) {
    invalid("classifier: expected [K, " + std::to_string(spec_.embedding) + "], got " + to_string(weight.shape()));
  }
  if (classifier_.defined() && classifier_.shape() == weight.shape()) {
    auto dst = classifier_.data_mut();
    std::copy(weight.data().begin(), weight.data().end(), dst.begin());
    return;
  }
  const bool trainable = classifier_.defined() ? classifier_.requires_grad() : true;
  classifier_ = Tensor<T>(weight.shape(), std::vector<T>(weight.data().begin(), weight.data().end()));
  classifier_.set_requires_grad(trainable);
}

template <typename T>
void Backbone<T>::init_classifier(std::size_t num_classes, RngStream rng) {
  Tensor<T> w(Shape{num_classes, spec_.embedding});
  fill_normal(w, rng, std::sqrt(1.0 / static_cast<double>(spec_.embedding)));
  set_classifier(w);
}

template <typename T>
Tensor<T> Backbone<T>::run_stage(std::size_t s, const Tensor<T>& x, const ForwardMode& mode) {
  auto& st = stages_[s];
  Conv2dOptions conv;
  conv.padding = 1;
  BatchNormOptions bn;
  bn.train = mode.backbone_train;
  auto y = relu(batchnorm2d(conv2d(x, st.conv_weight, nullptr, conv), st.bn_gamma, st.bn_beta, st.bn_stats, bn));
  if (s + 1 < kStages) y = max_pool2d(y, 2, 2);
  return y;
}

template <typename T>
Tensor<T> Backbone<T>::run_awb(std::size_t slot, const Tensor<T>& x, const ForwardMode& mode) {
  if (awb_.attention == AttentionKind::none && !mode.waves) return x;
  AwbConfig cfg = awb_;
  cfg.wave.train = mode.waves;
  return awb_forward(x, cfg, attention(slot), wave_rng_, mode.attention_train);
}

template <typename T>
ForwardResult<T> Backbone<T>::run(std::size_t first_step, const Tensor<T>& input, const ForwardMode& mode) {
  ForwardResult<T> out;
  Tensor<T> x = input;
  for (std::size_t step = first_step; step < s_head; ++step) {
    switch (step) {
      case s_stage1: x = run_stage(0, x, mode); out.taps[Tap::stage1] = x; break;
      case s_stage2: x = run_stage(1, x, mode); out.taps[Tap::stage2] = x; break;
      case s_awb2: x = run_awb(0, x, mode); out.taps[Tap::awb2] = x; break;
      case s_stage3: x = run_stage(2, x, mode); out.taps[Tap::stage3] = x; break;
      case s_awb3: x = run_awb(1, x, mode); out.taps[Tap::awb3] = x; break;
      case s_stage4: x = run_stage(3, x, mode); out.taps[Tap::stage4] = x; break;
      default: break;
    }
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  out.embedding = linear(reshape(global_avg_pool(x), Shape{n, c}), embed_weight_, &embed_bias_);
  if (classifier_.defined()) out.logits = linear(out.embedding, classifier_);
  return out;
}

template <typename T>
ForwardResult<T> Backbone<T>::forward(const Tensor<T>& images, const ForwardMode& mode) {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels || images.dim(2) != spec_.height ||
      images.dim(3) != spec_.width) {
    invalid("backbone: expected [N," + std::to_string(spec_.in_channels) + "," + std::to_string(spec_.height) + "," +
            std::to_string(spec_.width) + "], got " + to_string(images.shape()));
  }
  auto out = run(s_stage1, images, mode);
  out.taps[Tap::input] = images;
  return out;
}

template <typename T>
ForwardResult<T> Backbone<T>::forward_from(Tap tap, const Tensor<T>& activation, const ForwardMode& mode) {
  return run(step_after(tap), activation, mode);
}

template <typename T>
void Backbone<T>::visit(const Visitor& fn) {
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string p = "stage" + std::to_string(s + 1) + ".";
    fn(p + "conv.weight", stages_[s].conv_weight, false);
    fn(p + "bn.gamma", stages_[s].bn_gamma, false);
    fn(p + "bn.beta", stages_[s].bn_beta, false);
    fn(p + "bn.running_mean", stages_[s].bn_stats.running_mean, true);
    fn(p + "bn.running_var", stages_[s].bn_stats.running_var, true);
  }
  att2_.visit([&](const std::string& n, Tensor<T>& t, bool b) { fn("awb2." + n, t, b); });
  att3_.visit([&](const std::string& n, Tensor<T>& t, bool b) { fn("awb3." + n, t, b); });
  fn("embed.weight", embed_weight_, false);
  fn("embed.bias", embed_bias_, false);
  if (classifier_.defined()) fn("classifier.weight", classifier_, false);
}

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& n, Tensor<T>& t, bool b) {
    if (!b) out.push_back({n, t});
  });
  return out;
}

namespace {

ParamGroup group_of(const std::string& name) {
  if (name.rfind("awb", 0) == 0) return ParamGroup::attention;
  if (name.rfind("classifier", 0) == 0) return ParamGroup::classifier;
  return ParamGroup::backbone;
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::parameters(ParamGroup group) {
  std::vector<NamedTensor<T>> out;
  for (auto& p : parameters()) {
    if (group_of(p.name) == group) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Backbone<T>::buffers() {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& n, Tensor<T>& t, bool b) {
    if (b) out.push_back({n, t});
  });
  return out;
}

template <typename T>
std::size_t Backbone<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.size();
  return n;
}

template <typename T>
void Backbone<T>::set_trainable(ParamGroup group, bool on) {
  for (auto& p : parameters(group)) p.tensor.set_requires_grad(on);
}

template <typename T>
Backbone<T> Backbone<T>::clone() {
  Backbone copy = *this;
  copy.visit([](const std::string&, Tensor<T>& t, bool) { t = t.clone(); });
  return copy;
}

template <typename T>
void DualNetworks<T>::reset_teachers() {
  teacher_a = net_a.clone();
  teacher_b = net_b.clone();
  for (auto* t : {&teacher_a, &teacher_b}) {
    for (auto g : {ParamGroup::backbone, ParamGroup::attention, ParamGroup::classifier}) t->set_trainable(g, false);
  }
}

template <typename T>
void ema_update(Backbone<T>& teacher, Backbone<T>& student, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) invalid("ema_update: momentum must lie in [0, 1)");
  struct Entry {
    std::string name;
    Tensor<T>* tensor;
    bool buffer;
  };
  auto collect = [](Backbone<T>& net) {
    std::vector<Entry> out;
    net.visit([&](const std::string& n, Tensor<T>& t, bool b) { out.push_back({n, &t, b}); });
    return out;
  };
  auto te = collect(teacher);
  auto st = collect(student);
  if (te.size() != st.size()) invalid("ema_update: networks have different tensor counts");
  for (std::size_t i = 0; i < te.size(); ++i) {
    if (te[i].name != st[i].name || te[i].tensor->shape() != st[i].tensor->shape()) {
      invalid("ema_update: structure mismatch at " + te[i].name + " vs " + st[i].name);
    }
  }
  for (std::size_t i = 0; i < te.size(); ++i) {
    auto dst = te[i].tensor->data_mut();
    const auto src = st[i].tensor->data();
    if (te[i].buffer) {
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = static_cast<T>(momentum * static_cast<double>(dst[j]) + (1.0 - momentum) * static_cast<double>(src[j]));
    }
  }
}

template class Backbone<float>;
template class Backbone<double>;
template struct DualNetworks<float>;
template struct DualNetworks<double>;
template void ema_update(Backbone<float>&, Backbone<float>&, double);
template void ema_update(Backbone<double>&, Backbone<double>&, double);

}  // namespace awb
