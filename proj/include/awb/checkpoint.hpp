#pragma once

// Checkpoint file layout:
//   "AWBCKPT1"                      8 bytes
//   manifest length                 u64 little-endian
//   manifest                        text, one record per line:
//                                     tensor <name> <rank> <d0> .. <dr-1> <byte offset>
//                                     meta <key> <value>
//   payload                         f32 little-endian, tensors back to back
//   checksum                        u64 little-endian FNV-1a of everything from the
//                                   manifest length through the payload

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "awb/errors.hpp"
#include "awb/network.hpp"
#include "awb/tensor.hpp"

namespace awb {

enum class CheckpointErrorKind { bad_magic, version_mismatch, truncated, digest_mismatch, malformed };

std::string to_string(CheckpointErrorKind kind);

class CheckpointError : public IoError {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : IoError("checkpoint " + to_string(kind) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct CheckpointData {
  std::vector<NamedTensor<float>> tensors;  // payload order
  std::map<std::string, std::string> meta;
};

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t n);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Throws IoError when the file cannot be written or read, CheckpointError
/// when its contents are damaged.
void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

/// Students, teachers, wave RNG states, EMA momentum and epoch counters.
CheckpointData pack_dual(DualNetworks<float>& nets);
DualNetworks<float> unpack_dual(const CheckpointData& data);

void save_dual(const std::string& path, DualNetworks<float>& nets);
DualNetworks<float> load_dual(const std::string& path);

/// Shortest text that parses back to exactly `v`.
std::string exact_double(double v);
double parse_exact_double(const std::string& text);

}  // namespace awb
