#pragma once

#include <cstdint>
#include <stdexcept>
#include <filesystem>
#include <string>
#include <vector>

#include "ssal/tensor.hpp"

namespace ssal {

// Checkpoint layout, all integers little-endian:
//   "SSALCKPT" | u32 version | u32 record_count
//   per record: u32 name_length | name bytes | u32 rank | u64 extents[rank]
//               | f32 values[product(extents)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ssal
