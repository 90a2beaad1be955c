#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "awb/awb.hpp"
#include "awb/dataset.hpp"
#include "awb/losses.hpp"
#include "awb/network.hpp"
#include "awb/optim.hpp"

namespace awb {

struct DomainSettings {
  std::array<double, 3> color_shift{0.0, 0.0, 0.0};
  double contrast = 1.0;
  std::size_t blur = 0;
  std::uint64_t background_seed = 0;
};

// Every knob of a run. The text form is `key = value`, one per line, with
// dotted section prefixes; `#` starts a comment. Unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string output_dir = "runs/default";

  struct Data {
    std::string dir = "data";
    std::uint64_t seed = 7;
    std::size_t identities = 50;
    std::size_t views = 20;
    std::size_t height = 64;
    std::size_t width = 32;
    DomainSettings source{{0.0, 0.0, 0.0}, 1.0, 0, 11};
    DomainSettings target{{0.12, -0.04, -0.10}, 0.8, 1, 23};
    double query_fraction = 0.1;
    double gallery_fraction = 0.4;
  } data;

  struct Model {
    std::vector<std::size_t> channels{32, 64, 128, 256};
    std::size_t embedding = 128;
    AttentionKind attention = AttentionKind::nonlocal;
    std::string strategy = "auto";  // pre, post, or the default pairing
    std::size_t reduction = 16;
    std::size_t kernel = 7;
    double rw = 0.3;
    double rh = 1.5;
    WaveKind wave_kind = WaveKind::wave;
  } model;

  struct Pretrain {
    std::size_t epochs = 12;
    std::size_t iters_per_epoch = 0;  // 0: one pass over the source images
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double ce_weight = 1.0;
    double tri_weight = 1.0;
    std::size_t identities_per_batch = 8;
    std::size_t views_per_identity = 4;
  } pretrain;

  struct Adapt {
    std::size_t k = 50;
    std::size_t warmup_epochs = 2;
    std::size_t epochs = 10;
    std::size_t iters_per_epoch = 0;  // 0: one pass over the target train split
    double ema_momentum = 0.999;
    double lr = 3.5e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double weight_decay = 5e-4;
    LossWeights weights;
    std::size_t identities_per_batch = 8;
    std::size_t views_per_identity = 4;
    std::size_t kmeans_iters = 100;
    double kmeans_tol = 1e-6;
  } adapt;

  struct Eval {
    Tap tap = Tap::stage3;  // Grad-CAM tap for pair differences; awb3 is the alternative
    std::size_t batch = 64;
    std::size_t every = 1;  // evaluate every n-th epoch; the last epoch always
  } eval;

  struct Metrics {
    bool wall_time = false;  // when off, wall_seconds is written as 0 for byte-stable output
  } metrics;

  /// Throws ConfigError on any out-of-range value.
  void validate() const;

  std::vector<SyntheticDomainSpec> domain_specs() const;
  BackboneSpec backbone_spec() const;
  AwbConfig awb_config() const;
  AttentionOptions attention_options() const;
  AdamConfig pretrain_optimizer() const;
  AdamConfig adapt_optimizer() const;
};

/// Applies `key = value` lines on top of `base`. Throws ConfigError naming the
/// line on unknown keys or unparsable values.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
/// One `key=value` override.
void apply_override(ExperimentConfig& config, const std::string& assignment);
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Every key in a fixed order with canonical values; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& config);
std::vector<std::string> config_keys();
/// Writes <dir>/resolved_config.txt, creating dir if needed.
void write_resolved_config(const ExperimentConfig& config, const std::string& dir);

}  // namespace awb
