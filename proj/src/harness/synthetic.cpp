#include "ssal/harness/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "ssal/log.hpp"

namespace ssal::harness {

void SyntheticSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("synthetic: class_count must be >= 2");
  if (supercluster_count < 1 || class_count % supercluster_count != 0) {
    throw std::invalid_argument("synthetic: supercluster_count " + std::to_string(supercluster_count) +
                                " must divide class_count " + std::to_string(class_count));
  }
  if (input_dim < 1) throw std::invalid_argument("synthetic: input_dim must be >= 1");
  if (train_size < class_count || test_size < 1) throw std::invalid_argument("synthetic: too few samples");
  if (!(supercluster_spread > 0.0 && class_spread > 0.0 && sample_spread > 0.0)) {
    throw std::invalid_argument("synthetic: spreads must be > 0");
  }
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  // Center-to-center distances grow like spread * sqrt(2 d) while noise along
  // the separating direction stays at the per-axis spread, so a level is
  // degenerate once its noise reaches half the typical center distance.
  const double half_gap = std::sqrt(static_cast<double>(spec.input_dim) / 2.0);
  if (spec.sample_spread >= spec.class_spread * half_gap ||
      spec.class_spread >= spec.supercluster_spread * half_gap) {
    warn("synthetic: degenerate spreads (supercluster " + std::to_string(spec.supercluster_spread) + ", class " +
         std::to_string(spec.class_spread) + ", sample " + std::to_string(spec.sample_spread) + ", dim " +
         std::to_string(spec.input_dim) + "); classes or superclusters overlap heavily");
  }
  const std::size_t c = spec.class_count, k = spec.supercluster_count, d = spec.input_dim;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> super(k * d);
  for (double& v : super) v = spec.supercluster_spread * normal(rng);

  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  grouping::GroupMapping planted;
  planted.k = k;
  planted.gamma.assign(c, 0);
  for (std::size_t i = 0; i < c; ++i) planted.gamma[perm[i]] = static_cast<int>(i / (c / k));

  std::vector<double> centers(c * d);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centers[i * d + j] = super[static_cast<std::size_t>(planted.gamma[i]) * d + j] + spec.class_spread * normal(rng);

  auto draw = [&](std::size_t n) {
    Dataset out{{d}, c, std::vector<double>(n * d), std::vector<int>(n)};
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t label = s % c;
      out.labels[s] = static_cast<int>(label);
      for (std::size_t j = 0; j < d; ++j) out.features[s * d + j] = centers[label * d + j] + spec.sample_spread * normal(rng);
    }
    return out;
  };
  SyntheticData data;
  data.train = draw(spec.train_size);
  data.test = draw(spec.test_size);
  data.planted = std::move(planted);
  return data;
}

}  // namespace ssal::harness
