#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssal/tensor.hpp"

namespace ssal {

// Labelled samples stored row-major: sample i occupies
// features[i * sample_size(), (i + 1) * sample_size()).
struct Dataset {
  Shape sample_shape;
  std::size_t class_count = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t sample_size() const { return shape_numel(sample_shape); }

  // Throws std::invalid_argument on inconsistent sizes or labels outside
  // [0, class_count).
  void validate() const;

  Tensor batch(std::span<const std::size_t> indices) const;
  Tensor all() const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Split {
  Dataset fit;
  Dataset holdout;
};

// Stratified split: round(fraction * n_c) samples of each class c go to the
// holdout, chosen by a generator seeded with `seed`. Order within each part
// follows the source order.
Split holdout_split(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace ssal
