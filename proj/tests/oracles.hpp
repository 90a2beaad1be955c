#pragma once

// Independent reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "awb/kmeans.hpp"
#include "awb/retrieval.hpp"
#include "awb/tensor.hpp"

namespace awb::test {

// [H * m / 100] in integers, halves rounded up.
inline std::size_t exact_round(std::size_t h, std::size_t m) { return (2 * h * m + 100) / 200; }

// Elementwise evaluation of the wave: rows X <= j < X + [H r_w] pass, the rest scale by r_h.
inline TensorD wave_oracle(const TensorD& f, std::size_t m, double r_h, std::size_t x) {
  const std::size_t h = f.dim(2), w = f.dim(3);
  const std::size_t band = exact_round(h, m);
  TensorD out(f.shape());
  auto o = out.data_mut();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const std::size_t j = (i / w) % h;
    o[i] = (j >= x && j < x + band) ? f.at(i) : r_h * f.at(i);
  }
  return out;
}

// AP and first-hit rank without sorting: the rank of gallery item j counts the
// items strictly closer plus the equally close ones with a lower index.
inline RetrievalMetrics brute_force_retrieval(const FeatureMatrix& q, const std::vector<std::size_t>& qid, const FeatureMatrix& g,
                             const std::vector<std::size_t>& gid) {
  auto unit = [](const double* x, std::size_t d) {
    double n = 0.0;
    for (std::size_t t = 0; t < d; ++t) n += x[t] * x[t];
    n = std::sqrt(n);
    std::vector<double> out(x, x + d);
    if (n > 0.0) {
      for (auto& v : out) v /= n;
    }
    return out;
  };
  RetrievalMetrics m;
  for (std::size_t i = 0; i < q.rows; ++i) {
    const auto qi = unit(q.row(i), q.dim);
    std::vector<double> dist(g.rows);
    for (std::size_t j = 0; j < g.rows; ++j) {
      const auto gj = unit(g.row(j), g.dim);
      double s = 0.0;
      for (std::size_t t = 0; t < g.dim; ++t) s += (qi[t] - gj[t]) * (qi[t] - gj[t]);
      dist[j] = s;
    }
    auto rank_of = [&](std::size_t j) {
      std::size_t r = 1;
      for (std::size_t o = 0; o < g.rows; ++o) r += dist[o] < dist[j] || (dist[o] == dist[j] && o < j);
      return r;
    };
    std::vector<std::size_t> ranks;
    for (std::size_t j = 0; j < g.rows; ++j) {
      if (gid[j] == qid[i]) ranks.push_back(rank_of(j));
    }
    if (ranks.empty()) {
      ++m.skipped;
      continue;
    }
    double ap = 0.0;
    std::size_t best = g.rows + 1;
    for (auto rj : ranks) {
      std::size_t above = 0;
      for (auto ro : ranks) above += ro <= rj;
      ap += double(above) / double(rj);
      best = std::min(best, rj);
    }
    ++m.evaluated;
    m.mAP += ap / double(ranks.size());
    m.cmc1 += best <= 1;
    m.cmc5 += best <= 5;
    m.cmc10 += best <= 10;
  }
  if (m.evaluated) {
    m.mAP /= double(m.evaluated);
    m.cmc1 /= double(m.evaluated);
    m.cmc5 /= double(m.evaluated);
    m.cmc10 /= double(m.evaluated);
  }
  return m;
}

}  // namespace awb::test
