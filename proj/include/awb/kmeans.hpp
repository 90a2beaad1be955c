#pragma once

#include <cstddef>
#include <vector>

#include "awb/rng.hpp"

namespace awb {

// Row-major real matrix used for embeddings outside the autodiff graph.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t d) : rows(r), dim(d), values(r * d, 0.0) {}
  double* row(std::size_t i) { return values.data() + i * dim; }
  const double* row(std::size_t i) const { return values.data() + i * dim; }
};

/// Rows scaled to unit Euclidean norm; all-zero rows stay zero.
FeatureMatrix l2_normalized(const FeatureMatrix& x);

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;  // stop once no centroid moves farther than this
};

struct PseudoLabels {
  std::vector<std::size_t> assignment;  // one cluster id in [0, k) per row
  std::size_t k = 0;
  FeatureMatrix centroids;              // k x D
  double inertia = 0.0;                 // of the final assignment to the final centroids
  std::vector<double> inertia_history;  // after every assignment step, then the final value
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t reseeded = 0;             // empty clusters moved to the farthest point
};

/// k-means++ seeding followed by Lloyd iterations, all in double. Distance
/// ties go to the lowest cluster index. Throws std::invalid_argument when
/// k == 0 or k exceeds the number of rows.
PseudoLabels kmeans(const FeatureMatrix& points, std::size_t k, RngStream& rng, const KMeansOptions& options = {});

}  // namespace awb
