#include "awb/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "awb/parallel.hpp"

namespace awb {

std::vector<std::size_t> rank_gallery(const double* q, const FeatureMatrix& g) {
  std::vector<double> dist(g.rows);
  for (std::size_t j = 0; j < g.rows; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < g.dim; ++t) {
      const double d = q[t] - g.row(j)[t];
      s += d * d;
    }
    dist[j] = s;
  }
  std::vector<std::size_t> order(g.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

RetrievalMetrics evaluate_retrieval(const FeatureMatrix& query, const std::vector<std::size_t>& query_ids,
                                    const FeatureMatrix& gallery, const std::vector<std::size_t>& gallery_ids) {
  if (query.rows != query_ids.size() || gallery.rows != gallery_ids.size() || query.dim != gallery.dim) {
    throw std::invalid_argument("evaluate_retrieval: embedding and id counts disagree");
  }
  const FeatureMatrix q = l2_normalized(query);
  const FeatureMatrix g = l2_normalized(gallery);

  struct PerQuery {
    bool relevant = false;
    double ap = 0.0;
    std::size_t first_hit = 0;  // 1-based rank of the first relevant item
  };
  std::vector<PerQuery> per(q.rows);
  parallel_for(q.rows, [&](std::size_t i) {
    const auto order = rank_gallery(q.row(i), g);
    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[order[r]] != query_ids[i]) continue;
      ++hits;
      if (hits == 1) per[i].first_hit = r + 1;
      precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) return;
    per[i].relevant = true;
    per[i].ap = precision_sum / static_cast<double>(hits);
  });

  RetrievalMetrics m;
  for (const auto& p : per) {
    if (!p.relevant) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    m.mAP += p.ap;
    m.cmc1 += p.first_hit <= 1 ? 1.0 : 0.0;
    m.cmc5 += p.first_hit <= 5 ? 1.0 : 0.0;
    m.cmc10 += p.first_hit <= 10 ? 1.0 : 0.0;
  }
  if (m.evaluated > 0) {
    const double n = static_cast<double>(m.evaluated);
    m.mAP /= n;
    m.cmc1 /= n;
    m.cmc5 /= n;
    m.cmc10 /= n;
  }
  return m;
}

}  // namespace awb
