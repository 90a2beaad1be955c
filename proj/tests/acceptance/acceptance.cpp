// One PASS/FAIL line per acceptance criterion. Usage:
//   acceptance [--criteria 1-8,10] [--work DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "awb/attention.hpp"
#include "awb/awb.hpp"
#include "awb/checkpoint.hpp"
#include "awb/config.hpp"
#include "awb/gradcheck_suite.hpp"
#include "awb/kmeans.hpp"
#include "awb/network.hpp"
#include "awb/pipeline.hpp"
#include "awb/retrieval.hpp"
#include "awb/waveblock.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace awb;
using awb::test::bit_equal;
using awb::test::randn;
using awb::test::randu;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

Outcome collision() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto one = collision_probability(32, 0.3, 1);
  const auto four = collision_probability(32, 0.3, 4);
  o.require(one.per_formula == Rational(1, 22), "1 draw is " + one.per_formula.str());
  o.require(std::abs(to_double(one.per_formula) - 0.045455) < 5e-7, "1 draw decimal");
  const double p4 = to_double(four.per_formula);
  o.require(std::abs(p4 - 4.27e-6) < 0.005e-6, fmt("4 draws %.4g", p4));

  // Paired single draws from two independent streams; the law of X has
  // [H (1 - r_w)] + 1 equally likely offsets.
  RngStream a(2024, 1), b(2024, 2);
  const std::size_t n = 1000000;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += draw_wave(a, 32, 0.3).x == draw_wave(b, 32, 0.3).x;
  const double p = to_double(one.per_support);
  const double sigma = std::sqrt(double(n) * p * (1.0 - p));
  const double z = (double(hits) - double(n) * p) / sigma;
  const double z_formula = (double(hits) - double(n) * to_double(one.per_formula)) / sigma;
  o.require(std::abs(z) <= 3.0, fmt("Monte Carlo %.1f sigma from the draw law", z));
  const double secs = seconds_since(t0);
  o.require(secs < 10.0, fmt("took %.1f s", secs));
  o.detail += (o.detail.empty() ? "" : "; ") +
              fmt("1/22 exact, 4 draws %.4g, MC rate %.6f (%+.2f sigma vs 1/23", p4, double(hits) / double(n), z) +
              fmt(", %+.1f sigma vs 1/22), ", z_formula) + fmt("%.2f s", secs);
  return o;
}

Outcome waveblock_contracts() {
  Outcome o;
  const auto t0 = Clock::now();
  RngStream r(2024, 3);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 2 + r.uniform_int(30);
    std::size_t m = 5 + r.uniform_int(91);
    while (awb::test::exact_round(h, 100 - m) < 1) m = 5 + r.uniform_int(91);
    WaveConfig cfg;
    cfg.r_w = double(m) / 100.0;
    cfg.r_h = 0.1 + 3.0 * r.uniform();
    const auto f = randn(r, {1 + r.uniform_int(3), 1 + r.uniform_int(3), h, 1 + r.uniform_int(4)});
    const auto d = draw_wave(r, h, cfg.r_w);
    mismatches += !bit_equal(waveblock_apply(f, cfg, d), awb::test::wave_oracle(f, m, cfg.r_h, d.x));

    WaveConfig unit = cfg;
    unit.r_h = 1.0;
    mismatches += !bit_equal(waveblock_apply(f, unit, d), f);
    WaveConfig eval = cfg;
    eval.train = false;
    mismatches += !bit_equal(waveblock_apply(f, eval, d), f);
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatching tensors");
  const double secs = seconds_since(t0);
  o.require(secs < 30.0, fmt("took %.1f s", secs));
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("1000 oracle instances plus identities, %.2f s", secs);
  return o;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  GradSuiteOptions opts;
  opts.instances = 20;
  opts.tolerance = 1e-4;
  opts.step = 1e-5;
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto& e : run_gradcheck_suite(opts)) {
    ++cases;
    worst = std::max(worst, e.worst_error);
    o.require(e.passed && e.instances == 20, e.name + fmt(" worst %.2e", e.worst_error));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 300.0, fmt("took %.1f s", secs));
  o.detail += (o.detail.empty() ? "" : "; ") + std::to_string(cases) + " cases" + fmt(", worst relative error %.2e, %.1f s", worst, secs);
  return o;
}

Outcome enlargement() {
  Outcome o;
  RngStream r(2024, 4);
  std::size_t bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t h = 1 + r.uniform_int(8), w = 1 + r.uniform_int(8);
    const auto e = enlargement_check(randn(r, {h, w}), randn(r, {h, w}), randu(r, {h, w}, 0.0, 1.0));
    bad += e.after < e.before - 1e-12;
  }
  o.require(bad == 0, std::to_string(bad) + " triples shrank");
  const auto x = randn(r, {6, 5}), y = randn(r, {6, 5});
  const auto zero = enlargement_check(x, y, TensorD(Shape{6, 5}, 0.0));
  const auto one = enlargement_check(x, y, TensorD(Shape{6, 5}, 1.0));
  o.require(zero.after == zero.before, "alpha 0 changed the difference");
  o.require(one.after == 2.0 * one.before, "alpha 1 did not double");
  if (o.pass) o.detail = "10^4 triples, alpha 0 equal, alpha 1 doubles";
  return o;
}

Outcome zero_init() {
  Outcome o;
  RngStream r(2024, 5);
  std::size_t bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 * (1 + r.uniform_int(8));
    auto nl = NonLocalParams<float>::zeros(c);
    for (auto& p : nl.named()) {
      for (auto& v : p.tensor.data_mut()) v = static_cast<float>(r.normal());
    }
    for (auto& v : nl.h_weight.data_mut()) v = 0.0f;
    for (auto& v : nl.h_bias.data_mut()) v = 0.0f;
    const auto f = randn<float>(r, {1 + r.uniform_int(3), c, 1 + r.uniform_int(8), 1 + r.uniform_int(8)});
    bad += !bit_equal(nonlocal_forward(f, nl, trial % 2 == 0), f);

    const std::size_t cc = 4 * (1 + r.uniform_int(8));
    const auto cb = CbamParams<float>::zeros(cc, 4, 2 * r.uniform_int(4) + 1);
    const auto g = randn<float>(r, {1 + r.uniform_int(3), cc, 1 + r.uniform_int(8), 1 + r.uniform_int(8)});
    const auto y = icbam_forward(g, cb);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y.at(i) != 1.25f * g.at(i)) {
        ++bad;
        break;
      }
    }
  }
  o.require(bad == 0, std::to_string(bad) + " instances off");
  if (o.pass) o.detail = "non-local with h = 0 is the identity, zero I-CBAM gives 1.25 F (50 instances each)";
  return o;
}

Outcome retrieval() {
  Outcome o;
  RngStream r(2024, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nq = 1 + r.uniform_int(20), ng = 1 + r.uniform_int(50), d = 1 + r.uniform_int(6),
                      ids = 1 + r.uniform_int(8);
    FeatureMatrix q(nq, d), g(ng, d);
    for (auto& v : q.values) v = r.normal();
    for (auto& v : g.values) v = r.normal();
    std::vector<std::size_t> qid(nq), gid(ng);
    for (auto& v : qid) v = r.uniform_int(ids);
    for (auto& v : gid) v = r.uniform_int(ids);
    const auto got = evaluate_retrieval(q, qid, g, gid);
    const auto want = awb::test::brute_force_retrieval(q, qid, g, gid);
    o.require(got.evaluated == want.evaluated && got.skipped == want.skipped, "query counts differ");
    for (auto [a, b] : {std::pair{got.mAP, want.mAP}, {got.cmc1, want.cmc1}, {got.cmc5, want.cmc5}, {got.cmc10, want.cmc10}}) {
      worst = std::max(worst, std::abs(a - b));
    }
  }
  o.require(worst <= 1e-10, fmt("worst deviation %.2e", worst));
  FeatureMatrix q(1, 2), g(4, 2);
  q.values = {1.0, 0.0};
  g.values = {1.0, 0.0, 0.9, 0.1, 0.5, 0.5, 0.0, 1.0};
  const double ap = evaluate_retrieval(q, {1}, g, {1, 2, 1, 3}).mAP;
  o.require(ap == (1.0 + 2.0 / 3.0) / 2.0, fmt("hand AP %.17g", ap));
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("200 instances, worst %.2e; hand AP %.16f", worst, ap);
  return o;
}

Outcome clustering() {
  Outcome o;
  RngStream r(2024, 7);
  std::size_t increases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 5 + r.uniform_int(60), d = 1 + r.uniform_int(5), k = 1 + r.uniform_int(std::min<std::size_t>(m, 12));
    FeatureMatrix x(m, d);
    for (auto& v : x.values) v = r.normal();
    auto rng = r.split(trial);
    const auto p = kmeans(x, k, rng);
    for (std::size_t i = 1; i < p.inertia_history.size(); ++i) increases += p.inertia_history[i] > p.inertia_history[i - 1];
  }
  o.require(increases == 0, std::to_string(increases) + " inertia increases");

  // Brute force over every 2-partition of {0, 1, 10, 11}.
  const std::vector<double> pts{0.0, 1.0, 10.0, 11.0};
  double best = 1e300;
  unsigned best_mask = 0;
  for (unsigned mask = 1; mask < 15; ++mask) {
    double s[2] = {0, 0}, n[2] = {0, 0}, cost = 0.0;
    for (unsigned i = 0; i < 4; ++i) {
      s[(mask >> i) & 1] += pts[i];
      n[(mask >> i) & 1] += 1;
    }
    for (unsigned i = 0; i < 4; ++i) {
      const unsigned c = (mask >> i) & 1;
      cost += std::pow(pts[i] - s[c] / n[c], 2);
    }
    if (cost < best) {
      best = cost;
      best_mask = mask;
    }
  }
  FeatureMatrix x(4, 1);
  x.values = pts;
  RngStream rng(2024, 8);
  const auto p = kmeans(x, 2, rng);
  bool same = true;
  for (unsigned i = 0; i < 4; ++i) {
    for (unsigned j = 0; j < 4; ++j) {
      same &= (p.assignment[i] == p.assignment[j]) == (((best_mask >> i) & 1) == ((best_mask >> j) & 1));
    }
  }
  o.require(same && std::abs(p.inertia - best) < 1e-12, fmt("four-point inertia %.6g vs optimum %.6g", p.inertia, best));
  if (o.pass) o.detail = fmt("100 instances monotone; four-point partition optimal (inertia %.3g)", best);
  return o;
}

BackboneSpec small_spec() {
  BackboneSpec s;
  s.height = 16;
  s.width = 8;
  s.channels = {4, 8, 8, 8};
  s.embedding = 8;
  return s;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome ema_and_checkpoint(const fs::path& work) {
  Outcome o;
  RngStream r(2024, 9);
  auto teacher = Backbone<double>::create(small_spec(), RngStream(1, 1), RngStream(1, 2), 5);
  auto student = Backbone<double>::create(small_spec(), RngStream(2, 1), RngStream(2, 2), 5);
  // t_n = m t_{n-1} + (1 - m) s_n with a fresh student every step, tracked in closed form
  // t_n = m^n t_0 + (1 - m) sum_i m^(n-i) s_i.
  const double m = 0.8;
  std::vector<std::vector<double>> t0, acc;
  teacher.visit([&](const std::string&, TensorD& t, bool b) {
    if (!b) t0.emplace_back(t.data().begin(), t.data().end());
  });
  acc.resize(t0.size());
  for (std::size_t k = 0; k < t0.size(); ++k) acc[k].assign(t0[k].size(), 0.0);
  double worst = 0.0;
  for (int step = 1; step <= 20; ++step) {
    std::size_t k = 0;
    student.visit([&](const std::string&, TensorD& t, bool b) {
      if (b) return;
      for (std::size_t i = 0; i < t.size(); ++i) {
        t.data_mut()[i] = r.normal();
        acc[k][i] = m * acc[k][i] + (1.0 - m) * t.at(i);
      }
      ++k;
    });
    ema_update(teacher, student, m);
    k = 0;
    teacher.visit([&](const std::string&, TensorD& t, bool b) {
      if (b) return;
      for (std::size_t i = 0; i < t.size(); ++i) {
        worst = std::max(worst, std::abs(t.at(i) - (std::pow(m, step) * t0[k][i] + acc[k][i])));
      }
      ++k;
    });
  }
  o.require(worst < 1e-12, fmt("EMA deviation %.2e", worst));

  DualNetworks<float> d;
  d.net_a = Backbone<float>::create(small_spec(), RngStream(3, 1), RngStream(3, 2), 5);
  d.net_b = Backbone<float>::create(small_spec(), RngStream(4, 1), RngStream(4, 2), 5);
  AwbConfig awb;
  awb.attention = AttentionKind::nonlocal;
  awb.strategy = Strategy::post;
  d.net_a.attach_awb(awb, RngStream(3, 7));
  d.net_b.attach_awb(awb, RngStream(4, 7));
  d.ema_momentum = 0.999;
  d.reset_teachers();
  fs::create_directories(work);
  const auto p1 = (work / "first.ckpt").string(), p2 = (work / "second.ckpt").string();
  save_dual(p1, d);
  auto loaded = load_dual(p1);
  save_dual(p2, loaded);
  const auto bytes = slurp(p1);
  o.require(bytes == slurp(p2), "save-load-save changed bytes");

  std::size_t missed = 0, tried = 0;
  std::set<std::size_t> positions{0, 7, 8, bytes.size() / 2, bytes.size() - 1};
  while (positions.size() < 300) positions.insert(r.uniform_int(bytes.size()));
  for (auto pos : positions) {
    auto damaged = bytes;
    damaged[pos] ^= static_cast<std::uint8_t>(1u << r.uniform_int(8));
    ++tried;
    try {
      decode_checkpoint(damaged);
      ++missed;
    } catch (const IoError&) {
    } catch (const std::exception&) {
      ++missed;
    }
  }
  o.require(missed == 0, std::to_string(missed) + " corruptions undetected");
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("EMA deviation %.2e, ", worst) + std::to_string(bytes.size()) +
              "-byte checkpoint stable, " + std::to_string(tried) + " single-byte corruptions detected";
  return o;
}

struct DeskRuns {
  std::vector<DeskResult> results;
  double seconds = 0.0;
};

DeskRuns desk_runs(const fs::path& dir) {
  DeskRuns runs;
  const auto t0 = Clock::now();
  ExperimentConfig base;
  const Dataset data = generate_dataset(base.domain_specs(), base.data.seed);
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    cfg.output_dir = (dir / ("seed" + std::to_string(seed))).string();
    const auto s0 = Clock::now();
    runs.results.push_back(run_desk_experiment(cfg, data));
    const auto& r = runs.results.back();
    std::printf("  seed %llu: direct mAP %.4f, AWB mAP %.4f (pair diff %.4f), plain mAP %.4f (pair diff %.4f), %.0f s\n",
                static_cast<unsigned long long>(seed), r.direct.mAP, r.awb.mAP, r.awb_pair_diff, r.plain.mAP,
                r.plain_pair_diff, seconds_since(s0));
    std::fflush(stdout);
  }
  runs.seconds = seconds_since(t0);
  return runs;
}

Outcome desk_experiment(const DeskRuns& runs) {
  Outcome o;
  double awb_diff = 0.0, plain_diff = 0.0;
  for (std::size_t i = 0; i < runs.results.size(); ++i) {
    const auto& r = runs.results[i];
    o.require(r.awb.mAP >= r.direct.mAP, fmt("seed %.0f: adapted mAP %.4f below direct %.4f", double(i + 1), r.awb.mAP, r.direct.mAP));
    awb_diff += r.awb_pair_diff / double(runs.results.size());
    plain_diff += r.plain_pair_diff / double(runs.results.size());
  }
  o.require(awb_diff > plain_diff, fmt("mean pair diff AWB %.4f not above plain %.4f", awb_diff, plain_diff));
  o.require(runs.seconds < 1800.0, fmt("took %.0f s", runs.seconds));
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("mean pair diff AWB %.4f vs plain %.4f, %.0f s", awb_diff, plain_diff, runs.seconds);
  return o;
}

Outcome determinism(const DeskRuns& first, const DeskRuns& second) {
  Outcome o;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < first.results.size(); ++i) {
    const auto& a = first.results[i];
    const auto& b = second.results[i];
    for (auto [x, y, name] : {std::tuple{&a.pretrain_csv, &b.pretrain_csv, "pretrain"},
                              {&a.awb_csv, &b.awb_csv, "awb"},
                              {&a.plain_csv, &b.plain_csv, "plain"}}) {
      ++compared;
      const auto bx = slurp(*x), by = slurp(*y);
      o.require(!bx.empty() && bx == by, fmt("seed %.0f ", double(i + 1)) + name + " CSV differs");
    }
  }
  if (o.pass) o.detail = std::to_string(compared) + " metrics CSV files byte-identical across repeats";
  return o;
}

std::set<int> parse_criteria(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    const int lo = std::stoi(part.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(part.substr(dash + 1));
    for (int c = lo; c <= hi; ++c) out.insert(c);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string criteria = "1-10";
  std::string work = (fs::temp_directory_path() / "awb_acceptance").string();
  app.add_option("--criteria", criteria, "comma-separated criteria or ranges");
  app.add_option("--work", work, "scratch directory for checkpoints and runs");
  CLI11_PARSE(app, argc, argv);

  const auto selected = parse_criteria(criteria);
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!selected.count(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "collision probability", collision);
  report(2, "WaveBlock contracts", waveblock_contracts);
  report(3, "gradient suite", gradients);
  report(4, "difference enlargement", enlargement);
  report(5, "zero-init contracts", zero_init);
  report(6, "retrieval oracle", retrieval);
  report(7, "k-means", clustering);
  report(8, "EMA and persistence", [&] { return ema_and_checkpoint(fs::path(work) / "persistence"); });

  DeskRuns first;
  bool have_first = false;
  auto first_runs = [&]() -> const DeskRuns& {
    if (!have_first) {
      first = desk_runs(fs::path(work) / "desk");
      have_first = true;
    }
    return first;
  };
  report(9, "end-to-end desk experiment", [&] { return desk_experiment(first_runs()); });
  report(10, "determinism", [&] {
    const auto& a = first_runs();
    const auto b = desk_runs(fs::path(work) / "desk_repeat");
    return determinism(a, b);
  });
  return failures == 0 ? 0 : 1;
}
