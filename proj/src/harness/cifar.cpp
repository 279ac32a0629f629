#include "ssal/harness/cifar.hpp"

#include <fstream>
#include <iterator>

namespace ssal::harness {

void CifarSpec::validate() const {
  if (class_count < 2 || class_count > 256) throw std::invalid_argument("cifar: class_count must lie in [2, 256]");
  if (label_bytes < 1 || label_index >= label_bytes) throw std::invalid_argument("cifar: label_index outside the label bytes");
  if (channels == 0 || height == 0 || width == 0) throw std::invalid_argument("cifar: empty image geometry");
}

Dataset decode_cifar(std::span<const std::uint8_t> bytes, const CifarSpec& spec, const std::string& origin) {
  spec.validate();
  const std::size_t record = spec.record_size(), pixels = record - spec.label_bytes;
  if (bytes.size() % record != 0) {
    const std::size_t offset = bytes.size() / record * record;
    throw DatasetFormatError(origin + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                             std::to_string(bytes.size() - offset) + " of " + std::to_string(record) + " bytes)");
  }
  std::size_t n = bytes.size() / record;
  if (spec.limit > 0) n = std::min(n, spec.limit);
  Dataset d{{spec.channels, spec.height, spec.width}, spec.class_count, {}, {}};
  d.features.reserve(n * pixels);
  d.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t offset = r * record;
    const std::size_t label = bytes[offset + spec.label_index];
    if (label >= spec.class_count) {
      throw DatasetFormatError(origin + ": record " + std::to_string(r) + " at byte offset " + std::to_string(offset) +
                               " has label " + std::to_string(label) + " >= class_count " +
                               std::to_string(spec.class_count));
    }
    d.labels.push_back(static_cast<int>(label));
    for (std::size_t p = 0; p < pixels; ++p) d.features.push_back(bytes[offset + spec.label_bytes + p] / 255.0);
  }
  return d;
}

Dataset load_cifar_binary(const std::vector<std::string>& files, const CifarSpec& spec) {
  if (files.empty()) throw std::invalid_argument("cifar: no files given");
  Dataset all;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetFormatError("cannot open " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CifarSpec per_file = spec;
    if (spec.limit > 0) per_file.limit = spec.limit - all.size();
    Dataset part = decode_cifar(bytes, per_file, path);
    if (all.sample_shape.empty()) {
      all = std::move(part);
    } else {
      all.features.insert(all.features.end(), part.features.begin(), part.features.end());
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    if (spec.limit > 0 && all.size() >= spec.limit) break;
  }
  return all;
}

}  // namespace ssal::harness
