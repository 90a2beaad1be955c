#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "awb/tensor.hpp"

namespace awb {

enum class Split { train, query, gallery };

std::string to_string(Split split);
Split parse_split(const std::string& text);

// Applied to every image of a domain after rendering: contrast about mid-grey,
// an additive colour shift, then a box blur. The background texture family
// is drawn from background_seed.
struct DomainTransform {
  std::array<double, 3> color_shift{0.0, 0.0, 0.0};
  double contrast = 1.0;
  std::size_t blur_radius = 0;
  std::uint64_t background_seed = 0;
};

struct SyntheticDomainSpec {
  std::string name = "source";
  std::size_t n_identities = 50;
  std::size_t views_per_identity = 20;
  std::size_t height = 64;
  std::size_t width = 32;
  DomainTransform transform;
  // Per-identity split of the views; query and gallery take rounded shares
  // and the train split takes what is left.
  double query_fraction = 0.0;
  double gallery_fraction = 0.0;
  // Selects the identity population; domains with different values share no people.
  std::uint64_t identity_stream = 0;

  void validate() const;
};

struct ImageRecord {
  std::size_t image_id = 0;
  std::size_t identity = 0;
  std::string domain;
  Split split = Split::train;
  std::string path;                  // relative to the dataset directory
  std::vector<std::uint8_t> pixels;  // planar RGB, 3 x H x W
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ImageRecord> images;

  /// Indices of the images of one domain and split, in image order.
  std::vector<std::size_t> select(const std::string& domain, Split split) const;
};

/// Renders every domain in order; image ids run consecutively across domains.
/// Each image depends only on (seed, identity_stream, identity, view, transform).
Dataset generate_dataset(const std::vector<SyntheticDomainSpec>& domains, std::uint64_t seed);

/// Writes manifest.tsv, dataset.info and one raw .rgb file per image.
void write_dataset(const Dataset& data, const std::string& dir);
/// Throws DataError on a malformed manifest or image, IoError when unreadable.
Dataset read_dataset(const std::string& dir);

/// Float batch [N, 3, H, W] normalized as (p / 255 - 0.5) / 0.25.
TensorF image_batch(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace awb
