// Batch runner: dataset generation, pre-training, adaptation, evaluation,
// Grad-CAM differences, gradient checks and collision probabilities.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "awb/checkpoint.hpp"
#include "awb/config.hpp"
#include "awb/dataset.hpp"
#include "awb/diagnostics.hpp"
#include "awb/errors.hpp"
#include "awb/gradcheck_suite.hpp"
#include "awb/parallel.hpp"
#include "awb/pipeline.hpp"
#include "awb/retrieval.hpp"
#include "awb/waveblock.hpp"

namespace fs = std::filesystem;
using namespace awb;

namespace {

enum Exit { ok = 0, config_error = 2, data_error = 3, numeric_error = 4, io_error = 5 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string rw, rh, k, workers, seed, out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value config file");
    app->add_option("--set", overrides, "override, key=value (repeatable)");
    app->add_option("--rw", rw, "waving width rate (model.rw)");
    app->add_option("--rh", rh, "waving height rate (model.rh)");
    app->add_option("--k", k, "number of clusters (adapt.k)");
    app->add_option("--workers", workers, "worker threads");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--out", out, "output directory");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(c, o);
    const std::pair<const std::string*, const char*> flags[] = {
        {&rw, "model.rw"}, {&rh, "model.rh"}, {&k, "adapt.k"}, {&workers, "workers"}, {&seed, "seed"}, {&out, "output_dir"}};
    for (const auto& [value, key] : flags) {
      if (!value->empty()) set_config_value(c, key, *value);
    }
    c.validate();
    set_workers(c.workers);
    return c;
  }
};

std::size_t source_classes(const Dataset& data) {
  std::size_t classes = 0;
  for (auto i : data.select("source", Split::train)) classes = std::max(classes, data.images[i].identity + 1);
  if (classes == 0) throw DataError("dataset has no source training images");
  return classes;
}

void print_metrics(const RetrievalMetrics& m) {
  std::printf("mAP %.6f\ncmc1 %.6f\ncmc5 %.6f\ncmc10 %.6f\nqueries %zu (skipped %zu)\n", m.mAP, m.cmc1, m.cmc5, m.cmc10,
              m.evaluated, m.skipped);
}

// Every image of a dataset directory as a retrieval set.
struct Side {
  Dataset data;
  std::vector<std::size_t> indices, ids;
};

Side load_side(const std::string& dir, const Dataset* fallback, Split split) {
  Side s;
  if (dir.empty()) {
    s.data = *fallback;
    s.indices = s.data.select("target", split);
  } else {
    s.data = read_dataset(dir);
    for (std::size_t i = 0; i < s.data.images.size(); ++i) s.indices.push_back(i);
  }
  for (auto i : s.indices) s.ids.push_back(s.data.images[i].identity);
  if (s.indices.empty()) throw DataError("empty " + to_string(split) + " set");
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Attentive WaveBlock domain adaptation toolkit"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-data", "render the synthetic two-domain dataset");
  auto* pre = app.add_subcommand("pretrain", "source pre-training of both networks");
  auto* ada = app.add_subcommand("adapt", "mutual mean-teacher adaptation on the target");
  auto* eva = app.add_subcommand("eval", "mAP/CMC of a checkpoint");
  auto* dif = app.add_subcommand("diff", "average Grad-CAM difference of a checkpoint's two teachers");
  auto* desk = app.add_subcommand("desk", "pre-train once, then adapt with AWB and without");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  auto* prob = app.add_subcommand("prob", "exact wave collision probabilities");
  for (auto* sub : {gen, pre, ada, eva, dif, desk}) common.attach(sub);

  std::string checkpoint, query_dir, gallery_dir, tap_name, pgm_dir;
  std::size_t pgm_count = 8;
  for (auto* sub : {ada, eva, dif}) sub->add_option("--checkpoint", checkpoint, "input checkpoint");
  for (auto* sub : {eva, dif}) {
    sub->add_option("--query", query_dir, "dataset directory used as queries (default: target query split)");
  }
  eva->add_option("--gallery", gallery_dir, "dataset directory used as gallery (default: target gallery split)");
  dif->add_option("--tap", tap_name, "feature tap (default eval.tap)");
  dif->add_option("--pgm-dir", pgm_dir, "write Grad-CAM maps of the first queries as PGM");
  dif->add_option("--pgm-count", pgm_count, "number of queries to render");

  GradSuiteOptions gopt;
  gc->add_option("--instances", gopt.instances, "random instances per case");
  gc->add_option("--filter", gopt.filter, "run cases whose name contains this");
  gc->add_option("--seed", gopt.seed, "suite seed");
  bool list_cases = false;
  gc->add_flag("--list", list_cases, "print case names and exit");

  std::size_t height = 32, draws = 1;
  double rate = 0.3;
  std::size_t mc_trials = 0;
  prob->add_option("--height", height, "feature height H");
  prob->add_option("--rw", rate, "waving width rate");
  prob->add_option("--draws", draws, "number of independent draws n");
  prob->add_option("--monte-carlo", mc_trials, "paired single draws to simulate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  if (prob->parsed()) {
    const auto p = collision_probability(height, rate, draws);
    std::printf("offsets %zu\n", p.offsets);
    std::printf("formula %s = %.6g\n", p.per_formula.str().c_str(), to_double(p.per_formula));
    std::printf("support %s = %.6g\n", p.per_support.str().c_str(), to_double(p.per_support));
    if (mc_trials > 0) {
      RngStream a(1, 1), b(1, 2);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < mc_trials; ++i) hits += draw_wave(a, height, rate).x == draw_wave(b, height, rate).x;
      std::printf("monte_carlo %zu/%zu = %.6g (single draw)\n", hits, mc_trials,
                  static_cast<double>(hits) / static_cast<double>(mc_trials));
    }
    return ok;
  }

  if (gc->parsed()) {
    if (list_cases) {
      for (const auto& n : gradcheck_case_names()) std::printf("%s\n", n.c_str());
      return ok;
    }
    bool all = true;
    for (const auto& e : run_gradcheck_suite(gopt)) {
      std::printf("%-24s %s  worst %.3e over %zu instances (%zu coordinates)\n", e.name.c_str(),
                  e.passed ? "PASS" : "FAIL", e.worst_error, e.instances, e.coordinates);
      all = all && e.passed;
    }
    if (!all) {
      std::fprintf(stderr, "gradient check failed\n");
      return numeric_error;
    }
    return ok;
  }

  const ExperimentConfig cfg = common.resolve();

  if (gen->parsed()) {
    const Dataset data = generate_dataset(cfg.domain_specs(), cfg.data.seed);
    write_dataset(data, cfg.data.dir);
    std::printf("wrote %zu images to %s\n", data.images.size(), cfg.data.dir.c_str());
    return ok;
  }

  const fs::path root(cfg.output_dir);
  const bool own_sets = !query_dir.empty() && (dif->parsed() || !gallery_dir.empty());
  const Dataset data = own_sets ? Dataset{} : read_dataset(cfg.data.dir);

  if (pre->parsed()) {
    auto nets = make_networks(cfg, source_classes(data));
    MetricsLog log;
    source_pretrain(nets, data, cfg, log);
    const std::string dir = (root / "pretrain").string();
    write_resolved_config(cfg, dir);
    log.write_csv((fs::path(dir) / "metrics.csv").string());
    save_dual((fs::path(dir) / "pretrain.ckpt").string(), nets);
    std::printf("wrote %s\n", dir.c_str());
    return ok;
  }

  if (ada->parsed()) {
    const std::string from = checkpoint.empty() ? (root / "pretrain" / "pretrain.ckpt").string() : checkpoint;
    auto nets = load_dual(from);
    const std::string dir = (root / "adapt").string();
    ExperimentConfig run_cfg = cfg;
    run_cfg.output_dir = dir;
    prepare_adaptation(nets, run_cfg);
    MetricsLog log;
    adapt(nets, data, run_cfg, log);
    write_resolved_config(run_cfg, dir);
    log.write_csv((fs::path(dir) / "metrics.csv").string());
    save_dual((fs::path(dir) / "adapted.ckpt").string(), nets);
    std::printf("wrote %s\n", dir.c_str());
    return ok;
  }

  if (desk->parsed()) {
    const DeskResult r = run_desk_experiment(cfg, data);
    std::printf("direct mAP %.6f pair_diff %.6f\n", r.direct.mAP, r.direct_pair_diff);
    std::printf("awb    mAP %.6f pair_diff %.6f\n", r.awb.mAP, r.awb_pair_diff);
    std::printf("plain  mAP %.6f pair_diff %.6f\n", r.plain.mAP, r.plain_pair_diff);
    return ok;
  }

  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  auto nets = load_dual(checkpoint);

  if (eva->parsed()) {
    const Side q = load_side(query_dir, &data, Split::query);
    const Side g = load_side(gallery_dir, &data, Split::gallery);
    const auto m = evaluate_retrieval(
        mean_normalized_embeddings(nets.teacher_a, nets.teacher_b, q.data, q.indices, cfg.eval.batch), q.ids,
        mean_normalized_embeddings(nets.teacher_a, nets.teacher_b, g.data, g.indices, cfg.eval.batch), g.ids);
    print_metrics(m);
    return ok;
  }

  if (dif->parsed()) {
    const Tap tap = tap_name.empty() ? cfg.eval.tap : parse_tap(tap_name);
    const Side q = load_side(query_dir, &data, Split::query);
    const double d = average_pair_difference(nets.teacher_a, nets.teacher_b, q.data, q.indices, tap, cfg.eval.batch);
    std::printf("pair_diff %.6f (tap %s, %zu images)\n", d, to_string(tap).c_str(), q.indices.size());
    if (!pgm_dir.empty()) {
      fs::create_directories(pgm_dir);
      const std::size_t n = std::min(pgm_count, q.indices.size());
      const std::vector<std::size_t> first(q.indices.begin(), q.indices.begin() + static_cast<std::ptrdiff_t>(n));
      const TensorF images = image_batch(q.data, first);
      const auto ma = grad_cam(nets.teacher_a, images, tap);
      const auto mb = grad_cam(nets.teacher_b, images, tap);
      for (std::size_t i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%04zu_a.pgm", i);
        write_pgm((fs::path(pgm_dir) / name).string(), ma[i]);
        std::snprintf(name, sizeof name, "%04zu_b.pgm", i);
        write_pgm((fs::path(pgm_dir) / name).string(), mb[i]);
      }
    }
    return ok;
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return data_error;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return numeric_error;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return io_error;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
