#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "awb/attention.hpp"
#include "awb/awb.hpp"
#include "awb/ops.hpp"
#include "awb/rng.hpp"
#include "awb/tensor.hpp"

namespace awb {

struct BackboneSpec {
  std::size_t in_channels = 3;
  std::size_t height = 64;
  std::size_t width = 32;
  std::vector<std::size_t> channels{32, 64, 128, 256};
  std::size_t embedding = 128;

  /// Throws std::invalid_argument on a spec the backbone cannot realize,
  /// including wave supports that would be empty at either AWB slot.
  void validate(const WaveConfig& wave) const;
  /// Feature height/width at the output of stage 1..4 (pooling halves them
  /// after stages 1 to 3).
  std::size_t height_after(std::size_t stage) const;
  std::size_t width_after(std::size_t stage) const;
};

// What a forward call is allowed to change or randomize.
struct ForwardMode {
  bool backbone_train = false;   // batch statistics in the stage batch norms
  bool attention_train = false;  // batch statistics inside attention units
  bool waves = false;            // WaveBlocks active (one draw per slot per call)

  static ForwardMode eval() { return {}; }
  static ForwardMode train() { return {true, true, true}; }
};

// Named points along the forward pass. awb2/awb3 follow the AWB units placed
// after stages 2 and 3; with no attention and waves off they equal stage2/stage3.
enum class Tap { input, stage1, stage2, awb2, stage3, awb3, stage4 };

std::string to_string(Tap tap);
Tap parse_tap(const std::string& text);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;     // [N, K]; undefined while the network has no classifier
  Tensor<T> embedding;  // [N, D], before any normalization
  std::map<Tap, Tensor<T>> taps;
};

template <typename T>
struct StageParams {
  Tensor<T> conv_weight;  // [C_out, C_in, 3, 3]
  Tensor<T> bn_gamma, bn_beta;
  BatchNormStats<T> bn_stats;
};

enum class ParamGroup { backbone, attention, classifier };

template <typename T>
class Backbone {
 public:
  Backbone() = default;

  /// Stage convs use fan-in scaled normal init, batch norms start at (1, 0),
  /// and no attention is attached. Draws come from split streams of
  /// `init_rng` so the backbone is unaffected by later attention choices.
  static Backbone create(const BackboneSpec& spec, const RngStream& init_rng, const RngStream& wave_rng,
                         std::size_t num_classes);

  const BackboneSpec& spec() const { return spec_; }
  const AwbConfig& awb() const { return awb_; }
  const AttentionOptions& attention_options() const { return attention_options_; }
  std::size_t num_classes() const { return classifier_.defined() ? classifier_.dim(0) : 0; }

  /// Installs fresh attention units at both slots (drawn from `rng`) and the
  /// wave settings. Attention kind none just sets the wave.
  void attach_awb(const AwbConfig& config, RngStream rng, const AttentionOptions& options = {});
  /// Changes only the wave settings; attention stays as it is.
  void set_wave(const WaveConfig& wave);

  /// Loads `weight` ([K, D]) into the classifier, in place when the shape is
  /// unchanged so optimizers keep tracking the same tensor.
  void set_classifier(const Tensor<T>& weight);
  void init_classifier(std::size_t num_classes, RngStream rng);

  ForwardResult<T> forward(const Tensor<T>& images, const ForwardMode& mode);
  /// Continues a forward pass from an activation at `tap` (same mode
  /// semantics). Used to differentiate logits with respect to a tap.
  ForwardResult<T> forward_from(Tap tap, const Tensor<T>& activation, const ForwardMode& mode);

  std::vector<NamedTensor<T>> parameters();
  std::vector<NamedTensor<T>> parameters(ParamGroup group);
  std::vector<NamedTensor<T>> buffers();
  std::size_t parameter_count();
  void set_trainable(ParamGroup group, bool on);

  using Visitor = std::function<void(const std::string& name, Tensor<T>& tensor, bool is_buffer)>;
  /// Every owned parameter and buffer in a fixed order, by reference.
  void visit(const Visitor& fn);

  /// Independent deep copy (fresh storage, same values and RNG state).
  Backbone clone();

  RngStream& wave_rng() { return wave_rng_; }
  void set_wave_rng(const RngStream& rng) { wave_rng_ = rng; }

  AttentionModule<T>& attention(std::size_t slot) { return slot == 0 ? att2_ : att3_; }

 private:
  Tensor<T> run_stage(std::size_t s, const Tensor<T>& x, const ForwardMode& mode);
  Tensor<T> run_awb(std::size_t slot, const Tensor<T>& x, const ForwardMode& mode);
  ForwardResult<T> run(std::size_t first_step, const Tensor<T>& x, const ForwardMode& mode);

  BackboneSpec spec_;
  AwbConfig awb_;
  AttentionOptions attention_options_;
  std::vector<StageParams<T>> stages_;
  AttentionModule<T> att2_, att3_;
  Tensor<T> embed_weight_, embed_bias_;
  Tensor<T> classifier_;
  RngStream wave_rng_;
};

/// Two students with their temporally averaged teachers.
template <typename T>
struct DualNetworks {
  Backbone<T> net_a, net_b;
  Backbone<T> teacher_a, teacher_b;
  double ema_momentum = 0.999;
  std::size_t pretrain_epochs = 0;
  std::size_t adapt_epochs = 0;

  /// Teachers become deep copies of the students.
  void reset_teachers();
};

/// teacher <- m * teacher + (1 - m) * student for every parameter (computed in
/// double), batch-norm running statistics copied. Throws std::invalid_argument
/// when the two networks differ in structure.
template <typename T>
void ema_update(Backbone<T>& teacher, Backbone<T>& student, double momentum);

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace awb
