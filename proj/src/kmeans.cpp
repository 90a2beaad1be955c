#include "awb/kmeans.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "awb/parallel.hpp"

namespace awb {

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

// Nearest centroid per row (lowest index on ties) and the squared distance.
void assign(const FeatureMatrix& x, const FeatureMatrix& c, std::vector<std::size_t>& label,
            std::vector<double>& dist) {
  parallel_for(x.rows, [&](std::size_t i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.rows; ++j) {
      const double d = sqdist(x.row(i), c.row(j), x.dim);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    label[i] = best;
    dist[i] = best_d;
  });
}

double total(const std::vector<double>& v) {
  double s = 0.0;
  for (double d : v) s += d;
  return s;
}

}  // namespace

FeatureMatrix l2_normalized(const FeatureMatrix& x) {
  FeatureMatrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < x.dim; ++j) n += x.row(i)[j] * x.row(i)[j];
    if (n == 0.0) continue;
    n = std::sqrt(n);
    for (std::size_t j = 0; j < x.dim; ++j) out.row(i)[j] = x.row(i)[j] / n;
  }
  return out;
}

PseudoLabels kmeans(const FeatureMatrix& x, std::size_t k, RngStream& rng, const KMeansOptions& options) {
  if (k == 0 || k > x.rows) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(x.rows) + "]");
  }
  const std::size_t m = x.rows, d = x.dim;
  PseudoLabels out;
  out.k = k;
  FeatureMatrix c(k, d);

  // k-means++ seeding.
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_int(m);
  for (std::size_t j = 0; j < k; ++j) {
    if (j > 0) {
      const double sum = total(nearest);
      if (sum > 0.0) {
        const double u = rng.uniform() * sum;
        double acc = 0.0;
        pick = m;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < m; ++i) {
          if (nearest[i] <= 0.0) continue;
          last_positive = i;
          acc += nearest[i];
          if (acc > u) {
            pick = i;
            break;
          }
        }
        if (pick == m) pick = last_positive;
      } else {
        pick = rng.uniform_int(m);
      }
    }
    std::copy(x.row(pick), x.row(pick) + d, c.row(j));
    for (std::size_t i = 0; i < m; ++i) nearest[i] = std::min(nearest[i], sqdist(x.row(i), c.row(j), d));
  }

  std::vector<std::size_t> label(m);
  std::vector<double> dist(m);
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    assign(x, c, label, dist);
    out.inertia_history.push_back(total(dist));

    FeatureMatrix next(k, d);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      ++count[label[i]];
      double* row = next.row(label[i]);
      for (std::size_t t = 0; t < d; ++t) row[t] += x.row(i)[t];
    }
    std::vector<bool> taken(m, false);
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] > 0) {
        for (std::size_t t = 0; t < d; ++t) next.row(j)[t] /= static_cast<double>(count[j]);
        continue;
      }
      // Empty cluster: restart it at the point worst served by its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = true;
      std::copy(x.row(far), x.row(far) + d, next.row(j));
      ++out.reseeded;
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) shift = std::max(shift, std::sqrt(sqdist(c.row(j), next.row(j), d)));
    c = std::move(next);
    ++out.iterations;
    if (shift <= options.tol) {
      out.converged = true;
      break;
    }
  }
  assign(x, c, label, dist);
  out.inertia = total(dist);
  out.inertia_history.push_back(out.inertia);
  out.assignment = std::move(label);
  out.centroids = std::move(c);
  return out;
}

}  // namespace awb
