#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "awb/config.hpp"
#include "awb/dataset.hpp"
#include "awb/kmeans.hpp"
#include "awb/network.hpp"
#include "awb/retrieval.hpp"

namespace awb {

// One CSV row per epoch. Fields that were not measured in that epoch are
// written empty.
struct MetricsRow {
  std::size_t epoch = 0;
  std::string phase;  // pretrain, warmup or awb
  std::optional<double> loss_total, loss_hard_ce, loss_soft_ce, loss_tri;
  std::optional<std::size_t> k;
  std::optional<double> inertia;
  std::optional<double> mAP, cmc1, cmc5, cmc10;
  std::optional<double> pair_diff;
  double wall_seconds = 0.0;
};

class MetricsLog {
 public:
  static constexpr const char* header =
      "epoch,phase,loss_total,loss_hard_ce,loss_soft_ce,loss_tri,k,inertia,mAP,cmc1,cmc5,cmc10,pair_diff,wall_seconds";

  void add(const MetricsRow& row) { rows_.push_back(row); }
  const std::vector<MetricsRow>& rows() const { return rows_; }
  std::string csv() const;
  void write_csv(const std::string& path) const;

 private:
  std::vector<MetricsRow> rows_;
};

/// Fixed mapping from the run seed to the streams a run consumes.
struct RunStreams {
  explicit RunStreams(std::uint64_t seed) : seed(seed) {}
  std::uint64_t seed;
  RngStream init(std::size_t net) const { return RngStream(seed, 1 + net); }
  RngStream wave(std::size_t net) const { return RngStream(seed, 3 + net); }
  RngStream pretrain_sampler(std::size_t net) const { return RngStream(seed, 5 + net); }
  RngStream attention(std::size_t net) const { return RngStream(seed, 7 + net); }
  RngStream adapt_sampler() const { return RngStream(seed, 9); }
  RngStream clustering() const { return RngStream(seed, 10); }
};

/// P identities x K views per batch (all identities when fewer than P exist);
/// identities with fewer than K members are sampled with replacement.
std::vector<std::size_t> pk_batch(const std::vector<std::size_t>& labels, std::size_t p, std::size_t k, RngStream& rng);

/// Embeddings of `indices` in eval mode, no graph, as double rows.
FeatureMatrix extract_embeddings(Backbone<float>& net, const Dataset& data, const std::vector<std::size_t>& indices,
                                 std::size_t batch);
/// Mean of the two networks' L2-normalized embeddings.
FeatureMatrix mean_normalized_embeddings(Backbone<float>& a, Backbone<float>& b, const Dataset& data,
                                         const std::vector<std::size_t>& indices, std::size_t batch);

/// Target query/gallery retrieval with the teachers' mean normalized embedding.
RetrievalMetrics evaluate_target(DualNetworks<float>& nets, const Dataset& data, std::size_t batch);
/// Average Grad-CAM pair difference of the two teachers over the target queries.
double target_pair_difference(DualNetworks<float>& nets, const Dataset& data, Tap tap, std::size_t batch);

/// Fresh students for source pre-training (no attention, waves off) with a
/// classifier over the source identities.
DualNetworks<float> make_networks(const ExperimentConfig& config, std::size_t num_classes);

/// Trains both students independently on labeled source images with
/// cross-entropy plus batch-hard triplet, then copies them into the teachers.
/// The last row carries the direct-transfer target metrics.
void source_pretrain(DualNetworks<float>& nets, const Dataset& data, const ExperimentConfig& config, MetricsLog& log);

/// Installs the configured AWB units (fresh attention per network) and
/// resets the teachers to the students.
void prepare_adaptation(DualNetworks<float>& nets, const ExperimentConfig& config);

/// Warm-up epochs (attention only, backbone frozen, waves off) followed by
/// full mutual training with waves on. Each epoch clusters the teachers'
/// target embeddings, reloads the classifiers from the centroids and runs
/// mutual hard/soft supervision with an EMA update after every step. On a
/// numeric failure the state is dumped to <output_dir>/failure.* and the
/// error is rethrown.
void adapt(DualNetworks<float>& nets, const Dataset& data, const ExperimentConfig& config, MetricsLog& log);

// Source pre-training shared by an AWB run and an attention-free, wave-free
// run, both adapted on the target.
struct DeskResult {
  RetrievalMetrics direct;
  RetrievalMetrics awb;
  RetrievalMetrics plain;
  double direct_pair_diff = 0.0;
  double awb_pair_diff = 0.0;
  double plain_pair_diff = 0.0;
  std::string pretrain_csv, awb_csv, plain_csv;  // paths of the written metrics files
};

/// Writes pretrain/, awb/ and plain/ under config.output_dir, each with its
/// metrics.csv, checkpoint and resolved config.
DeskResult run_desk_experiment(const ExperimentConfig& config, const Dataset& data);

}  // namespace awb
