#include "awb/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <utility>

#include "awb/attention.hpp"
#include "awb/awb.hpp"
#include "awb/losses.hpp"
#include "awb/network.hpp"
#include "awb/ops.hpp"
#include "awb/rng.hpp"
#include "awb/waveblock.hpp"

namespace awb {

namespace {

TensorD normal(RngStream& rng, Shape shape, double sd = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data_mut()) v = sd * rng.normal();
  return t;
}

TensorD uniform(RngStream& rng, Shape shape, double lo, double hi) {
  TensorD t(std::move(shape));
  for (auto& v : t.data_mut()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

std::vector<std::size_t> random_labels(RngStream& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i < classes ? i : rng.uniform_int(classes);
  return y;
}

// One instance: the inputs and the map under test. The projection is drawn
// after the first evaluation so its shape always matches the output.
struct Instance {
  std::vector<TensorD> inputs;
  std::function<TensorD(const std::vector<TensorD>&)> fn;
};

using Builder = std::function<Instance(RngStream&)>;

struct Case {
  std::string name;
  Builder build;
};

CbamParams<double> cbam_from(const std::vector<TensorD>& in, std::size_t first, std::size_t channels,
                             std::size_t reduction, std::size_t kernel) {
  CbamParams<double> p;
  p.channels = channels;
  p.reduction = reduction;
  p.kernel = kernel;
  p.fc1_weight = in[first];
  p.fc1_bias = in[first + 1];
  p.fc2_weight = in[first + 2];
  p.fc2_bias = in[first + 3];
  p.spatial_weight = in[first + 4];
  p.spatial_bias = in[first + 5];
  return p;
}

void push_cbam(std::vector<TensorD>& in, RngStream& rng, std::size_t c, std::size_t r, std::size_t k) {
  const std::size_t h = c / r;
  in.push_back(normal(rng, {h, c}, 0.5));
  in.push_back(normal(rng, {h}, 0.1));
  in.push_back(normal(rng, {c, h}, 0.5));
  in.push_back(normal(rng, {c}, 0.1));
  in.push_back(normal(rng, {1, 2, k, k}, 0.3));
  in.push_back(normal(rng, {1}, 0.1));
}

NonLocalParams<double> nonlocal_from(const std::vector<TensorD>& in, std::size_t first, std::size_t channels,
                                     const BatchNormStats<double>& stats) {
  NonLocalParams<double> p;
  p.channels = channels;
  p.theta_weight = in[first];
  p.theta_bias = in[first + 1];
  p.phi_weight = in[first + 2];
  p.phi_bias = in[first + 3];
  p.g_weight = in[first + 4];
  p.g_bias = in[first + 5];
  p.g_gamma = in[first + 6];
  p.g_beta = in[first + 7];
  p.h_weight = in[first + 8];
  p.h_bias = in[first + 9];
  p.g_stats = {stats.running_mean.clone(), stats.running_var.clone()};
  return p;
}

void push_nonlocal(std::vector<TensorD>& in, RngStream& rng, std::size_t c) {
  const std::size_t h = c / 2;
  for (int i = 0; i < 3; ++i) {
    in.push_back(normal(rng, {h, c, 1, 1}, 0.5));
    in.push_back(normal(rng, {h}, 0.1));
  }
  in.push_back(uniform(rng, {h}, 0.5, 1.5));
  in.push_back(normal(rng, {h}, 0.1));
  in.push_back(normal(rng, {c, h, 1, 1}, 0.5));
  in.push_back(normal(rng, {c}, 0.1));
}

BatchNormStats<double> random_stats(RngStream& rng, std::size_t c) {
  return {normal(rng, {c}, 0.2), uniform(rng, {c}, 0.5, 1.5)};
}

Instance unary(TensorD x, std::function<TensorD(const TensorD&)> f) {
  return {{std::move(x)}, [f](const std::vector<TensorD>& in) { return f(in[0]); }};
}

Instance binary(TensorD a, TensorD b, std::function<TensorD(const TensorD&, const TensorD&)> f) {
  return {{std::move(a), std::move(b)}, [f](const std::vector<TensorD>& in) { return f(in[0], in[1]); }};
}

Instance awb_instance(RngStream& rng, AttentionKind kind, Strategy strategy) {
  const std::size_t n = 2, c = 8, h = 6, w = 3;
  AwbConfig cfg;
  cfg.attention = kind;
  cfg.strategy = strategy;
  cfg.wave.r_w = 0.5;
  cfg.wave.r_h = 1.5;
  cfg.wave.train = true;
  const WaveDraw draw = draw_wave(rng, h, cfg.wave.r_w);
  std::vector<TensorD> in{normal(rng, {n, c, h, w})};
  if (kind == AttentionKind::icbam) {
    push_cbam(in, rng, c, 4, 3);
    return {in, [cfg, draw, c](const std::vector<TensorD>& x) {
              AttentionModule<double> att(cbam_from(x, 1, c, 4, 3));
              return awb_forward(x[0], cfg, att, draw, true);
            }};
  }
  push_nonlocal(in, rng, c);
  const auto stats = random_stats(rng, c / 2);
  return {in, [cfg, draw, c, stats](const std::vector<TensorD>& x) {
            AttentionModule<double> att(nonlocal_from(x, 1, c, stats));
            return awb_forward(x[0], cfg, att, draw, true);
          }};
}

Instance small_network(RngStream& rng) {
  BackboneSpec spec;
  spec.height = 16;
  spec.width = 8;
  spec.channels = {3, 4, 4, 5};
  spec.embedding = 6;
  const std::size_t classes = 3, n = 6;
  auto net = std::make_shared<Backbone<double>>(
      Backbone<double>::create(spec, rng.split(1), rng.split(2), classes));
  AwbConfig cfg;
  cfg.attention = AttentionKind::nonlocal;
  cfg.strategy = Strategy::post;
  cfg.wave.r_w = 0.5;
  cfg.wave.r_h = 1.5;
  net->attach_awb(cfg, rng.split(3));
  // Random h so the non-local unit is not the identity.
  net->visit([&](const std::string& name, TensorD& t, bool buffer) {
    if (!buffer && name.find(".h_") != std::string::npos) t = normal(rng, t.shape(), 0.3);
  });
  std::vector<TensorD> in{normal(rng, {n, 3, spec.height, spec.width})};
  net->visit([&](const std::string&, TensorD& t, bool buffer) {
    if (!buffer) in.push_back(t.detach().clone());
  });
  const auto labels = std::vector<std::size_t>{0, 0, 1, 1, 2, 2};
  const RngStream wave = rng.split(4);
  return {in, [net, labels, wave](const std::vector<TensorD>& x) {
            std::size_t next = 1;
            net->visit([&](const std::string&, TensorD& t, bool buffer) {
              if (!buffer) t = x[next++];
            });
            net->set_wave_rng(wave);
            const auto out = net->forward(x[0], ForwardMode::train());
            return add(cross_entropy(out.logits, labels), batch_hard_triplet(out.embedding, labels));
          }};
}

std::vector<Case> make_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, Builder b) { cases.push_back({std::move(name), std::move(b)}); };

  add_case("add", [](RngStream& r) { return binary(normal(r, {3, 4}), normal(r, {3, 4}), [](auto& a, auto& b) { return add(a, b); }); });
  add_case("add_broadcast", [](RngStream& r) {
    return binary(normal(r, {2, 3, 4, 2}), normal(r, {1, 3, 1, 1}), [](auto& a, auto& b) { return add(a, b); });
  });
  add_case("sub", [](RngStream& r) { return binary(normal(r, {3, 4}), normal(r, {3, 4}), [](auto& a, auto& b) { return sub(a, b); }); });
  add_case("mul", [](RngStream& r) { return binary(normal(r, {3, 4}), normal(r, {3, 4}), [](auto& a, auto& b) { return mul(a, b); }); });
  add_case("mul_broadcast", [](RngStream& r) {
    return binary(normal(r, {2, 3, 4, 2}), normal(r, {2, 1, 4, 2}), [](auto& a, auto& b) { return mul(a, b); });
  });
  add_case("scale", [](RngStream& r) { return unary(normal(r, {3, 4}), [](auto& a) { return scale(a, 1.7); }); });
  add_case("add_scalar", [](RngStream& r) { return unary(normal(r, {3, 4}), [](auto& a) { return add_scalar(a, -0.3); }); });
  add_case("relu", [](RngStream& r) { return unary(normal(r, {4, 5}), [](auto& a) { return relu(a); }); });
  add_case("sigmoid", [](RngStream& r) { return unary(normal(r, {4, 5}, 2.0), [](auto& a) { return sigmoid(a); }); });
  add_case("safe_sqrt", [](RngStream& r) {
    return unary(uniform(r, {4, 5}, 0.1, 2.0), [](auto& a) { return safe_sqrt(a, 1e-12); });
  });
  add_case("sum", [](RngStream& r) { return unary(normal(r, {3, 4}), [](auto& a) { return sum(a); }); });
  add_case("mean", [](RngStream& r) { return unary(normal(r, {3, 4}), [](auto& a) { return mean(a); }); });
  add_case("log_softmax", [](RngStream& r) { return unary(normal(r, {4, 6}, 2.0), [](auto& a) { return log_softmax(a); }); });
  add_case("reshape", [](RngStream& r) { return unary(normal(r, {3, 4}), [](auto& a) { return reshape(a, Shape{2, 6}); }); });
  add_case("permute", [](RngStream& r) {
    return unary(normal(r, {2, 3, 4}), [](auto& a) { return permute(a, {2, 0, 1}); });
  });
  add_case("concat", [](RngStream& r) {
    return binary(normal(r, {2, 3, 2}), normal(r, {2, 1, 2}), [](auto& a, auto& b) { return concat<double>({a, b}, 1); });
  });
  add_case("index_select", [](RngStream& r) {
    return unary(normal(r, {3, 4}), [](auto& a) { return index_select(a, {0, 5, 5, 11, 3}); });
  });
  add_case("matmul", [](RngStream& r) { return binary(normal(r, {3, 4}), normal(r, {4, 5}), [](auto& a, auto& b) { return matmul(a, b); }); });
  add_case("bmm", [](RngStream& r) {
    return binary(normal(r, {2, 3, 4}), normal(r, {2, 4, 2}), [](auto& a, auto& b) { return bmm(a, b); });
  });
  add_case("linear", [](RngStream& r) {
    return Instance{{normal(r, {4, 5}), normal(r, {3, 5}), normal(r, {3})},
                    [](const std::vector<TensorD>& x) { return linear(x[0], x[1], &x[2]); }};
  });
  add_case("pairwise_sqdist", [](RngStream& r) { return unary(normal(r, {5, 3}), [](auto& a) { return pairwise_sqdist(a); }); });
  for (const auto algo : {ConvAlgo::lowered, ConvAlgo::direct}) {
    const std::string tag = algo == ConvAlgo::lowered ? "lowered" : "direct";
    add_case("conv2d_" + tag, [algo](RngStream& r) {
      return Instance{{normal(r, {2, 3, 5, 4}), normal(r, {4, 3, 3, 3}, 0.5), normal(r, {4})},
                      [algo](const std::vector<TensorD>& x) {
                        return conv2d(x[0], x[1], &x[2], Conv2dOptions{1, 1, algo});
                      }};
    });
    add_case("conv2d_strided_" + tag, [algo](RngStream& r) {
      return Instance{{normal(r, {2, 2, 6, 5}), normal(r, {3, 2, 3, 3}, 0.5)},
                      [algo](const std::vector<TensorD>& x) {
                        return conv2d(x[0], x[1], nullptr, Conv2dOptions{2, 1, algo});
                      }};
    });
  }
  add_case("batchnorm_train", [](RngStream& r) {
    return Instance{{normal(r, {3, 2, 3, 2}, 1.5), uniform(r, {2}, 0.5, 1.5), normal(r, {2})},
                    [](const std::vector<TensorD>& x) {
                      auto stats = BatchNormStats<double>::fresh(2);
                      return batchnorm2d(x[0], x[1], x[2], stats, BatchNormOptions{true});
                    }};
  });
  add_case("batchnorm_eval", [](RngStream& r) {
    const auto stats = random_stats(r, 2);
    return Instance{{normal(r, {3, 2, 3, 2}), uniform(r, {2}, 0.5, 1.5), normal(r, {2})},
                    [stats](const std::vector<TensorD>& x) {
                      auto s = stats;
                      return batchnorm2d(x[0], x[1], x[2], s, BatchNormOptions{false});
                    }};
  });
  add_case("max_pool2d", [](RngStream& r) { return unary(normal(r, {2, 2, 4, 6}), [](auto& a) { return max_pool2d(a, 2, 2); }); });
  add_case("avg_pool2d", [](RngStream& r) { return unary(normal(r, {2, 2, 4, 6}), [](auto& a) { return avg_pool2d(a, 2, 2); }); });
  add_case("global_avg_pool", [](RngStream& r) { return unary(normal(r, {2, 3, 3, 2}), [](auto& a) { return global_avg_pool(a); }); });
  add_case("global_max_pool", [](RngStream& r) { return unary(normal(r, {2, 3, 3, 2}), [](auto& a) { return global_max_pool(a); }); });
  add_case("channelwise_mean", [](RngStream& r) { return unary(normal(r, {2, 3, 3, 2}), [](auto& a) { return channelwise_mean(a); }); });
  add_case("channelwise_max", [](RngStream& r) { return unary(normal(r, {2, 3, 3, 2}), [](auto& a) { return channelwise_max(a); }); });
  add_case("waveblock", [](RngStream& r) {
    WaveConfig cfg;
    cfg.r_w = 0.3;
    cfg.r_h = 1.5;
    const WaveDraw draw = draw_wave(r, 8, cfg.r_w);
    return unary(normal(r, {2, 3, 8, 3}), [cfg, draw](auto& a) { return waveblock_apply(a, cfg, draw); });
  });
  add_case("cbam_channel_map", [](RngStream& r) {
    std::vector<TensorD> in{normal(r, {2, 8, 4, 3})};
    push_cbam(in, r, 8, 4, 3);
    return Instance{in, [](const std::vector<TensorD>& x) { return cbam_channel_map(x[0], cbam_from(x, 1, 8, 4, 3)); }};
  });
  add_case("cbam_spatial_map", [](RngStream& r) {
    std::vector<TensorD> in{normal(r, {2, 8, 4, 3})};
    push_cbam(in, r, 8, 4, 3);
    return Instance{in, [](const std::vector<TensorD>& x) { return cbam_spatial_map(x[0], cbam_from(x, 1, 8, 4, 3)); }};
  });
  add_case("icbam", [](RngStream& r) {
    std::vector<TensorD> in{normal(r, {2, 8, 4, 3})};
    push_cbam(in, r, 8, 4, 3);
    return Instance{in, [](const std::vector<TensorD>& x) { return icbam_forward(x[0], cbam_from(x, 1, 8, 4, 3)); }};
  });
  for (const bool train : {true, false}) {
    add_case(train ? "nonlocal_train" : "nonlocal_eval", [train](RngStream& r) {
      std::vector<TensorD> in{normal(r, {2, 4, 3, 3})};
      push_nonlocal(in, r, 4);
      const auto stats = random_stats(r, 2);
      return Instance{in, [train, stats](const std::vector<TensorD>& x) {
                        auto p = nonlocal_from(x, 1, 4, stats);
                        return nonlocal_forward(x[0], p, train);
                      }};
    });
  }
  add_case("awb_pre_icbam", [](RngStream& r) { return awb_instance(r, AttentionKind::icbam, Strategy::pre); });
  add_case("awb_post_icbam", [](RngStream& r) { return awb_instance(r, AttentionKind::icbam, Strategy::post); });
  add_case("awb_pre_nonlocal", [](RngStream& r) { return awb_instance(r, AttentionKind::nonlocal, Strategy::pre); });
  add_case("awb_post_nonlocal", [](RngStream& r) { return awb_instance(r, AttentionKind::nonlocal, Strategy::post); });
  add_case("cross_entropy", [](RngStream& r) {
    const auto y = random_labels(r, 5, 4);
    return unary(normal(r, {5, 4}, 2.0), [y](auto& a) { return cross_entropy(a, y); });
  });
  add_case("soft_cross_entropy", [](RngStream& r) {
    const auto target = softmax_constant(normal(r, {5, 4}, 2.0), 1.0);
    return unary(normal(r, {5, 4}, 2.0), [target](auto& a) { return soft_cross_entropy(a, target); });
  });
  add_case("batch_hard_triplet", [](RngStream& r) {
    const auto y = random_labels(r, 8, 3);
    return unary(normal(r, {8, 4}), [y](auto& a) { return batch_hard_triplet(a, y); });
  });
  add_case("soft_triplet", [](RngStream& r) {
    const auto y = random_labels(r, 8, 3);
    const auto teacher = normal(r, {8, 4});
    return unary(normal(r, {8, 4}), [y, teacher](auto& a) { return soft_triplet(a, y, teacher); });
  });
  add_case("mutual_losses", [](RngStream& r) {
    const auto y = random_labels(r, 8, 3);
    const auto t_logits = normal(r, {8, 3}, 2.0);
    const auto t_emb = normal(r, {8, 4});
    LossWeights w;
    w.temperature = 1.5;
    return Instance{{normal(r, {8, 3}, 2.0), normal(r, {8, 4})},
                    [=](const std::vector<TensorD>& x) { return mutual_losses(x[0], t_logits, x[1], t_emb, y, w).total; }};
  });
  add_case("small_network", [](RngStream& r) { return small_network(r); });
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& c : make_cases()) names.push_back(c.name);
  return names;
}

std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options) {
  std::vector<GradSuiteEntry> out;
  const auto cases = make_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    if (!options.filter.empty() && c.name.find(options.filter) == std::string::npos) continue;
    GradSuiteEntry entry;
    entry.name = c.name;
    RngStream rng(options.seed, ci);
    for (std::size_t i = 0; i < options.instances; ++i) {
      RngStream inst = rng.split(i);
      Instance instance = c.build(inst);
      TensorD projection;
      const auto fn = instance.fn;
      const ScalarFn objective = [&](const std::vector<TensorD>& x) {
        const TensorD y = fn(x);
        if (!projection.defined() || projection.shape() != y.shape()) projection = normal(inst, y.shape());
        return sum(mul(y, projection));
      };
      const auto result = grad_check(objective, instance.inputs, options.step);
      entry.worst_error = std::max(entry.worst_error, result.max_relative_error);
      entry.coordinates += result.coordinates;
      ++entry.instances;
    }
    entry.passed = entry.instances > 0 && entry.worst_error < options.tolerance;
    out.push_back(entry);
  }
  return out;
}

}  // namespace awb
