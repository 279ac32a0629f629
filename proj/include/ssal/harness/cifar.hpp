#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssal/dataset.hpp"

namespace ssal::harness {

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// CIFAR binary layout: each record is label_bytes label bytes followed by
// channels * height * width pixel bytes, channel-planar and row-major.
// CIFAR-10 uses one label byte; CIFAR-100 uses two (coarse, fine).
struct CifarSpec {
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::size_t class_count = 10;
  std::size_t label_bytes = 1;
  std::size_t label_index = 0;  // which label byte is the class
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t limit = 0;  // max records per split; 0 reads everything

  std::size_t record_size() const { return label_bytes + channels * height * width; }
  void validate() const;
};

// Parses an in-memory file. Pixels are scaled to [0, 1]. `origin` names the
// source in diagnostics.
Dataset decode_cifar(std::span<const std::uint8_t> bytes, const CifarSpec& spec, const std::string& origin);

Dataset load_cifar_binary(const std::vector<std::string>& files, const CifarSpec& spec);

}  // namespace ssal::harness
