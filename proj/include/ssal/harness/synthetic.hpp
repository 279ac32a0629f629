#pragma once

#include <cstdint>

#include "ssal/dataset.hpp"
#include "ssal/grouping.hpp"

namespace ssal::harness {

// Gaussian hierarchy: supercluster centers ~ N(0, supercluster_spread^2 I),
// class centers ~ N(supercluster center, class_spread^2 I), samples
// ~ N(class center, sample_spread^2 I). Classes are assigned to superclusters
// through a seeded permutation.
struct SyntheticSpec {
  std::size_t class_count = 16;
  std::size_t supercluster_count = 4;
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  std::size_t input_dim = 64;
  double supercluster_spread = 0.7;
  double class_spread = 0.25;
  double sample_spread = 1.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  Dataset train;
  Dataset test;
  grouping::GroupMapping planted;  // class -> supercluster
};

// Labels cycle through the classes, so each split is balanced up to one
// sample per class. Warns (and proceeds) when a level's noise reaches half
// the typical distance between its centers.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace ssal::harness
