#pragma once

#include <cstddef>
#include <vector>

#include "awb/kmeans.hpp"

namespace awb {

struct RetrievalMetrics {
  double mAP = 0.0;
  double cmc1 = 0.0, cmc5 = 0.0, cmc10 = 0.0;
  std::size_t evaluated = 0;  // queries with at least one relevant gallery item
  std::size_t skipped = 0;    // queries without one; excluded from every average
};

/// Gallery indices sorted by Euclidean distance to `query` after both sides
/// are L2-normalized; equal distances keep gallery order.
std::vector<std::size_t> rank_gallery(const double* query, const FeatureMatrix& gallery_normalized);

/// Single-query protocol: AP = mean over relevant positions r of
/// (relevant items in the top r) / r; CMC@k = share of queries whose first
/// relevant item is within rank k. Throws std::invalid_argument on size mismatch.
RetrievalMetrics evaluate_retrieval(const FeatureMatrix& query, const std::vector<std::size_t>& query_ids,
                                    const FeatureMatrix& gallery, const std::vector<std::size_t>& gallery_ids);

}  // namespace awb
