#include "awb/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "awb/checkpoint.hpp"
#include "awb/diagnostics.hpp"
#include "awb/errors.hpp"
#include "awb/losses.hpp"
#include "awb/optim.hpp"
#include "awb/parallel.hpp"

namespace awb {

namespace fs = std::filesystem;

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.8g", *v);
  return buf;
}

std::string fmt(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

std::size_t epoch_iterations(std::size_t configured, std::size_t pool, std::size_t batch) {
  if (configured > 0) return configured;
  return std::max<std::size_t>(1, (pool + batch - 1) / batch);
}

bool evaluate_now(std::size_t epoch, std::size_t total, std::size_t every) {
  return (epoch + 1) % every == 0 || epoch + 1 == total;
}

class Stopwatch {
 public:
  explicit Stopwatch(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    if (!on_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point start_;
};

void evaluate_into(MetricsRow& row, DualNetworks<float>& nets, const Dataset& data, const ExperimentConfig& config) {
  const auto m = evaluate_target(nets, data, config.eval.batch);
  row.mAP = m.mAP;
  row.cmc1 = m.cmc1;
  row.cmc5 = m.cmc5;
  row.cmc10 = m.cmc10;
  row.pair_diff = target_pair_difference(nets, data, config.eval.tap, config.eval.batch);
}

TensorF centroid_classifier(const FeatureMatrix& centroids) {
  const FeatureMatrix unit = l2_normalized(centroids);
  std::vector<float> w(unit.values.begin(), unit.values.end());
  return TensorF(Shape{unit.rows, unit.dim}, std::move(w));
}

DualNetworks<float> deep_copy(DualNetworks<float>& n) {
  DualNetworks<float> out;
  out.net_a = n.net_a.clone();
  out.net_b = n.net_b.clone();
  out.teacher_a = n.teacher_a.clone();
  out.teacher_b = n.teacher_b.clone();
  out.ema_momentum = n.ema_momentum;
  out.pretrain_epochs = n.pretrain_epochs;
  out.adapt_epochs = n.adapt_epochs;
  return out;
}

void write_run(const std::string& dir, const ExperimentConfig& config, DualNetworks<float>& nets, const MetricsLog& log,
               const std::string& checkpoint) {
  write_resolved_config(config, dir);
  log.write_csv((fs::path(dir) / "metrics.csv").string());
  save_dual((fs::path(dir) / checkpoint).string(), nets);
}

}  // namespace

std::string MetricsLog::csv() const {
  std::string out = std::string(header) + "\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.epoch) + "," + r.phase + "," + fmt(r.loss_total) + "," + fmt(r.loss_hard_ce) + "," +
           fmt(r.loss_soft_ce) + "," + fmt(r.loss_tri) + "," + fmt(r.k) + "," + fmt(r.inertia) + "," + fmt(r.mAP) +
           "," + fmt(r.cmc1) + "," + fmt(r.cmc5) + "," + fmt(r.cmc10) + "," + fmt(r.pair_diff) + "," +
           fmt(std::optional<double>(r.wall_seconds)) + "\n";
  }
  return out;
}

void MetricsLog::write_csv(const std::string& path) const {
  std::error_code ec;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  std::ofstream out(path, std::ios::trunc);
  out << csv();
  if (!out) throw IoError("cannot write " + path);
}

std::vector<std::size_t> pk_batch(const std::vector<std::size_t>& labels, std::size_t p, std::size_t k, RngStream& rng) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> pool;
  for (const auto& [label, members] : groups) pool.push_back(&members);
  if (pool.empty()) throw std::invalid_argument("pk_batch: no labels");
  const std::size_t take = std::min(p, pool.size());
  // Partial Fisher-Yates over the label list, then over each member list.
  for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.uniform_int(pool.size() - i)]);
  std::vector<std::size_t> out;
  out.reserve(take * k);
  for (std::size_t i = 0; i < take; ++i) {
    std::vector<std::size_t> members = *pool[i];
    if (members.size() >= k) {
      for (std::size_t j = 0; j < k; ++j) {
        std::swap(members[j], members[j + rng.uniform_int(members.size() - j)]);
        out.push_back(members[j]);
      }
    } else {
      for (std::size_t j = 0; j < k; ++j) out.push_back(members[rng.uniform_int(members.size())]);
    }
  }
  return out;
}

FeatureMatrix extract_embeddings(Backbone<float>& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                 std::size_t batch) {
  FeatureMatrix out(indices.size(), net.spec().embedding);
  NoGradGuard guard;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::size_t end = std::min(indices.size(), start + batch);
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    const TensorF e = net.forward(image_batch(data, chunk), ForwardMode::eval()).embedding;
    std::copy(e.data().begin(), e.data().end(), out.row(start));
  }
  return out;
}

FeatureMatrix mean_normalized_embeddings(Backbone<float>& a, Backbone<float>& b, const Dataset& data,
                                         const std::vector<std::size_t>& indices, std::size_t batch) {
  const FeatureMatrix ea = l2_normalized(extract_embeddings(a, data, indices, batch));
  const FeatureMatrix eb = l2_normalized(extract_embeddings(b, data, indices, batch));
  FeatureMatrix out(ea.rows, ea.dim);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = 0.5 * (ea.values[i] + eb.values[i]);
  return out;
}

RetrievalMetrics evaluate_target(DualNetworks<float>& nets, const Dataset& data, std::size_t batch) {
  const auto q = data.select("target", Split::query);
  const auto g = data.select("target", Split::gallery);
  if (q.empty() || g.empty()) throw DataError("target domain has no query or gallery images");
  std::vector<std::size_t> qid, gid;
  for (auto i : q) qid.push_back(data.images[i].identity);
  for (auto i : g) gid.push_back(data.images[i].identity);
  return evaluate_retrieval(mean_normalized_embeddings(nets.teacher_a, nets.teacher_b, data, q, batch), qid,
                            mean_normalized_embeddings(nets.teacher_a, nets.teacher_b, data, g, batch), gid);
}

double target_pair_difference(DualNetworks<float>& nets, const Dataset& data, Tap tap, std::size_t batch) {
  const auto q = data.select("target", Split::query);
  if (q.empty()) throw DataError("target domain has no query images");
  return average_pair_difference(nets.teacher_a, nets.teacher_b, data, q, tap, batch);
}

DualNetworks<float> make_networks(const ExperimentConfig& config, std::size_t num_classes) {
  const RunStreams s(config.seed);
  const BackboneSpec spec = config.backbone_spec();
  DualNetworks<float> nets;
  nets.net_a = Backbone<float>::create(spec, s.init(0), s.wave(0), num_classes);
  nets.net_b = Backbone<float>::create(spec, s.init(1), s.wave(1), num_classes);
  nets.ema_momentum = config.adapt.ema_momentum;
  nets.reset_teachers();
  return nets;
}

void source_pretrain(DualNetworks<float>& nets, const Dataset& data, const ExperimentConfig& config, MetricsLog& log) {
  const auto pool = data.select("source", Split::train);
  if (pool.empty()) throw DataError("source domain has no training images");
  std::vector<std::size_t> labels;
  for (auto i : pool) labels.push_back(data.images[i].identity);
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (nets.net_a.num_classes() != classes || nets.net_b.num_classes() != classes) {
    throw std::invalid_argument("source_pretrain: classifier size does not match the source identities");
  }
  const RunStreams s(config.seed);
  RngStream samplers[2] = {s.pretrain_sampler(0), s.pretrain_sampler(1)};
  Backbone<float>* students[2] = {&nets.net_a, &nets.net_b};
  Adam<float> opt_a(nets.net_a.parameters(), config.pretrain_optimizer());
  Adam<float> opt_b(nets.net_b.parameters(), config.pretrain_optimizer());
  Adam<float>* opts[2] = {&opt_a, &opt_b};
  const std::size_t p = config.pretrain.identities_per_batch, k = config.pretrain.views_per_identity;
  const std::size_t iters = epoch_iterations(config.pretrain.iters_per_epoch, pool.size(), p * k);
  const ForwardMode mode{true, true, false};

  for (std::size_t epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    const Stopwatch clock(config.metrics.wall_time);
    double total = 0.0, ce_sum = 0.0, tri_sum = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      for (int n = 0; n < 2; ++n) {
        const auto picks = pk_batch(labels, p, k, samplers[n]);
        std::vector<std::size_t> idx, y;
        for (auto j : picks) {
          idx.push_back(pool[j]);
          y.push_back(labels[j]);
        }
        const auto out = students[n]->forward(image_batch(data, idx), mode);
        const auto ce = cross_entropy(out.logits, y);
        const auto tri = batch_hard_triplet(out.embedding, y);
        const auto loss = add(scale(ce, static_cast<float>(config.pretrain.ce_weight)),
                              scale(tri, static_cast<float>(config.pretrain.tri_weight)));
        opts[n]->zero_grad();
        loss.backward();
        opts[n]->step();
        total += loss.item();
        ce_sum += ce.item();
        tri_sum += tri.item();
      }
    }
    nets.pretrain_epochs = epoch + 1;
    nets.reset_teachers();
    MetricsRow row;
    row.epoch = epoch;
    row.phase = "pretrain";
    const double denom = 2.0 * static_cast<double>(iters);
    row.loss_total = total / denom;
    row.loss_hard_ce = ce_sum / denom;
    row.loss_tri = tri_sum / denom;
    if (evaluate_now(epoch, config.pretrain.epochs, config.eval.every)) evaluate_into(row, nets, data, config);
    row.wall_seconds = clock.seconds();
    log.add(row);
  }
  nets.reset_teachers();
}

void prepare_adaptation(DualNetworks<float>& nets, const ExperimentConfig& config) {
  const RunStreams s(config.seed);
  nets.net_a.attach_awb(config.awb_config(), s.attention(0), config.attention_options());
  nets.net_b.attach_awb(config.awb_config(), s.attention(1), config.attention_options());
  nets.ema_momentum = config.adapt.ema_momentum;
  nets.reset_teachers();
}

namespace {

void dump_failure(DualNetworks<float>& nets, const ExperimentConfig& config, std::size_t epoch, std::size_t iteration,
                  const std::string& what) {
  try {
    fs::create_directories(config.output_dir);
    save_dual((fs::path(config.output_dir) / "failure.ckpt").string(), nets);
    std::ofstream out(fs::path(config.output_dir) / "failure.txt");
    out << "epoch = " << epoch << "\niteration = " << iteration << "\nerror = " << what << "\n\n" << to_text(config);
  } catch (...) {
    // The original error matters more than a failed dump.
  }
}

}  // namespace

void adapt(DualNetworks<float>& nets, const Dataset& data, const ExperimentConfig& config, MetricsLog& log) {
  const auto pool = data.select("target", Split::train);
  if (pool.size() < config.adapt.k) {
    throw DataError("target train split holds " + std::to_string(pool.size()) + " images, fewer than k=" +
                    std::to_string(config.adapt.k));
  }
  const RunStreams s(config.seed);
  RngStream sampler = s.adapt_sampler();
  const std::size_t warmup = nets.net_a.awb().attention == AttentionKind::none ? 0 : config.adapt.warmup_epochs;
  const std::size_t total_epochs = warmup + config.adapt.epochs;
  const std::size_t p = config.adapt.identities_per_batch, kv = config.adapt.views_per_identity;
  const std::size_t iters = epoch_iterations(config.adapt.iters_per_epoch, pool.size(), p * kv);
  const double m = config.adapt.ema_momentum;
  nets.ema_momentum = m;
  KMeansOptions kopt;
  kopt.max_iters = config.adapt.kmeans_iters;
  kopt.tol = config.adapt.kmeans_tol;

  std::unique_ptr<Adam<float>> opt_a, opt_b;
  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const bool warm = epoch < warmup;
    const Stopwatch clock(config.metrics.wall_time);
    if (epoch == 0 || epoch == warmup) {
      for (auto* net : {&nets.net_a, &nets.net_b}) {
        net->set_trainable(ParamGroup::backbone, !warm);
        net->set_trainable(ParamGroup::classifier, !warm);
        net->set_trainable(ParamGroup::attention, true);
      }
      auto params = [&](Backbone<float>& n) { return warm ? n.parameters(ParamGroup::attention) : n.parameters(); };
      opt_a = std::make_unique<Adam<float>>(params(nets.net_a), config.adapt_optimizer());
      opt_b = std::make_unique<Adam<float>>(params(nets.net_b), config.adapt_optimizer());
    }

    const FeatureMatrix features =
        mean_normalized_embeddings(nets.teacher_a, nets.teacher_b, data, pool, config.eval.batch);
    RngStream crng = s.clustering().split(epoch);
    const PseudoLabels labels = kmeans(features, config.adapt.k, crng, kopt);
    const TensorF classifier = centroid_classifier(labels.centroids);
    for (auto* net : {&nets.net_a, &nets.net_b, &nets.teacher_a, &nets.teacher_b}) net->set_classifier(classifier);
    opt_a->reset(nets.net_a.parameters(ParamGroup::classifier).front().tensor);
    opt_b->reset(nets.net_b.parameters(ParamGroup::classifier).front().tensor);

    const ForwardMode mode = warm ? ForwardMode{false, true, false} : ForwardMode::train();
    double sum_total = 0.0, sum_hce = 0.0, sum_sce = 0.0, sum_tri = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      try {
        const auto picks = pk_batch(labels.assignment, p, kv, sampler);
        std::vector<std::size_t> idx, y;
        for (auto j : picks) {
          idx.push_back(pool[j]);
          y.push_back(labels.assignment[j]);
        }
        const TensorF x = image_batch(data, idx);
        const auto oa = nets.net_a.forward(x, mode);
        const auto ob = nets.net_b.forward(x, mode);
        ForwardResult<float> ta, tb;
        {
          NoGradGuard guard;
          ta = nets.teacher_a.forward(x, ForwardMode::eval());
          tb = nets.teacher_b.forward(x, ForwardMode::eval());
        }
        const auto la = mutual_losses(oa.logits, tb.logits, oa.embedding, tb.embedding, y, config.adapt.weights);
        const auto lb = mutual_losses(ob.logits, ta.logits, ob.embedding, ta.embedding, y, config.adapt.weights);
        const auto loss = add(la.total, lb.total);
        opt_a->zero_grad();
        opt_b->zero_grad();
        loss.backward();
        opt_a->step();
        opt_b->step();
        ema_update(nets.teacher_a, nets.net_a, m);
        ema_update(nets.teacher_b, nets.net_b, m);
        sum_total += loss.item();
        sum_hce += la.hard_ce + lb.hard_ce;
        sum_sce += la.soft_ce + lb.soft_ce;
        sum_tri += la.hard_tri + la.soft_tri + lb.hard_tri + lb.soft_tri;
      } catch (const NumericError& e) {
        dump_failure(nets, config, epoch, it, e.what());
        throw;
      }
    }
    nets.adapt_epochs += 1;

    MetricsRow row;
    row.epoch = epoch;
    row.phase = warm ? "warmup" : "awb";
    const double denom = 2.0 * static_cast<double>(iters);
    row.loss_total = sum_total / denom;
    row.loss_hard_ce = sum_hce / denom;
    row.loss_soft_ce = sum_sce / denom;
    row.loss_tri = sum_tri / denom;
    row.k = labels.k;
    row.inertia = labels.inertia;
    if (evaluate_now(epoch, total_epochs, config.eval.every)) evaluate_into(row, nets, data, config);
    row.wall_seconds = clock.seconds();
    log.add(row);
  }
}

DeskResult run_desk_experiment(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  set_workers(config.workers);
  DeskResult result;
  const fs::path root(config.output_dir);

  const auto source = data.select("source", Split::train);
  std::size_t classes = 0;
  for (auto i : source) classes = std::max(classes, data.images[i].identity + 1);
  DualNetworks<float> pre = make_networks(config, classes);
  MetricsLog pre_log;
  source_pretrain(pre, data, config, pre_log);
  result.direct = evaluate_target(pre, data, config.eval.batch);
  result.direct_pair_diff = target_pair_difference(pre, data, config.eval.tap, config.eval.batch);
  write_run((root / "pretrain").string(), config, pre, pre_log, "pretrain.ckpt");
  result.pretrain_csv = (root / "pretrain" / "metrics.csv").string();

  auto run = [&](ExperimentConfig cfg, const std::string& name, RetrievalMetrics& metrics, double& diff,
                 std::string& csv) {
    cfg.output_dir = (root / name).string();
    DualNetworks<float> nets = deep_copy(pre);
    prepare_adaptation(nets, cfg);
    MetricsLog log;
    adapt(nets, data, cfg, log);
    metrics = evaluate_target(nets, data, cfg.eval.batch);
    diff = target_pair_difference(nets, data, cfg.eval.tap, cfg.eval.batch);
    write_run(cfg.output_dir, cfg, nets, log, "adapted.ckpt");
    csv = (fs::path(cfg.output_dir) / "metrics.csv").string();
  };
  run(config, "awb", result.awb, result.awb_pair_diff, result.awb_csv);
  ExperimentConfig plain = config;
  plain.model.attention = AttentionKind::none;
  plain.model.rh = 1.0;
  run(plain, "plain", result.plain, result.plain_pair_diff, result.plain_csv);
  return result;
}

}  // namespace awb
