#include "ssal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace ssal {

void Dataset::validate() const {
  if (sample_shape.empty() || sample_size() == 0) throw std::invalid_argument("dataset: empty sample shape");
  if (features.size() != labels.size() * sample_size()) {
    throw std::invalid_argument("dataset: " + std::to_string(features.size()) + " feature values for " +
                                std::to_string(labels.size()) + " samples of shape " + shape_string(sample_shape));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw std::invalid_argument("dataset: sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = sample_size();
  std::vector<double> values(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = features.begin() + static_cast<std::ptrdiff_t>(indices[r] * d);
    std::copy(src, src + static_cast<std::ptrdiff_t>(d), values.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(values));
}

Tensor Dataset::all() const {
  Shape shape{size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), features);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{sample_shape, class_count, {}, labels_of(indices)};
  const std::size_t d = sample_size();
  out.features.reserve(indices.size() * d);
  for (auto i : indices) {
    const auto src = features.begin() + static_cast<std::ptrdiff_t>(i * d);
    out.features.insert(out.features.end(), src, src + static_cast<std::ptrdiff_t>(d));
  }
  return out;
}

Split holdout_split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<char> held(data.size(), 0);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    for (std::size_t j = 0; j < n; ++j) held[members[j]] = 1;
  }
  std::vector<std::size_t> fit, holdout;
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? holdout : fit).push_back(i);
  return {data.subset(fit), data.subset(holdout)};
}

}  // namespace ssal
