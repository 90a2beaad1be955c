#pragma once

#include <array>
#include <cstdint>

namespace awb {

/// Philox4x32-10 block for one 128-bit counter under a 64-bit key.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

// Counter-based stream: draw i of stream (seed, stream_id) is a pure function
// of those three numbers, so streams can be saved, restored and split freely.
class RngStream {
 public:
  static constexpr const char* algorithm = "philox4x32-10";

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream_id), counter_(counter) {}

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  std::uint64_t uniform_int(std::uint64_t bound);  // [0, bound), unbiased
  double normal();                         // standard normal (Box-Muller)

  /// Independent child stream; does not advance this one.
  RngStream split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace awb
