#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

// Label grouping from a classifier's confusion matrix: build a symmetric
// class distance, then partition the classes into k balanced groups with a
// capacity-constrained greedy clustering.
namespace ssal::grouping {

enum class Criterion {
  join_similar,   // frequently confused classes share a group
  split_similar,  // frequently confused classes go to different groups
};

enum class Linkage { mean, minimum };

std::string to_string(Criterion criterion);
Criterion criterion_from_string(const std::string& text);

class GroupingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfusionMatrix {
 public:
  // values are row-major c x c. Entry (i, j): samples of true class i
  // predicted as j (or the row-normalized rate when `normalized`).
  ConfusionMatrix(std::size_t class_count, std::vector<double> values, bool normalized);

  std::size_t class_count() const { return class_count_; }
  bool is_normalized() const { return normalized_; }
  double at(std::size_t truth, std::size_t predicted) const { return values_[truth * class_count_ + predicted]; }
  std::span<const double> values() const { return values_; }

  // Each row divided by its total (all-zero rows stay zero), diagonal zeroed.
  ConfusionMatrix normalized() const;

  // SHA-256 over the CSV rendering.
  std::string digest() const;

 private:
  std::size_t class_count_;
  std::vector<double> values_;
  bool normalized_;
};

ConfusionMatrix confusion_from_predictions(std::span<const int> predicted, std::span<const int> truth,
                                           std::size_t class_count);

std::string confusion_to_csv(const ConfusionMatrix& m);
ConfusionMatrix confusion_from_csv(const std::string& text, bool normalized);

struct DistanceMatrix {
  std::size_t class_count = 0;
  std::vector<double> values;  // row-major, symmetric, zero diagonal
  std::optional<Criterion> criterion;
  std::string source_digest;

  double at(std::size_t i, std::size_t j) const { return values[i * class_count + j]; }
};

// join_similar: D = ((1 - F) + (1 - F)^T) / 2; split_similar: D = (F + F^T) / 2.
// F must be normalized; its diagonal is ignored and the result's diagonal is 0.
DistanceMatrix distance_matrix(const ConfusionMatrix& f, Criterion criterion);

struct GroupingConfig {
  std::size_t k = 2;
  Criterion criterion = Criterion::join_similar;
  std::uint64_t tie_break_seed = 0;
  Linkage linkage = Linkage::mean;
};

struct GroupMapping {
  std::vector<int> gamma;  // class -> group
  std::size_t k = 0;
  Criterion criterion = Criterion::join_similar;
  std::uint64_t seed = 0;
  std::string source_digest;

  std::size_t class_count() const { return gamma.size(); }
  int group_of(int label) const;
  std::vector<std::size_t> group_sizes() const;
  // Throws GroupingError unless total, surjective and balanced.
  void validate() const;
  // Same partition up to a renaming of group labels.
  bool same_partition(const GroupMapping& other) const;
};

// k seeds by farthest-first, then labels join clusters one at a time in
// order of regret (gap between nearest and second-nearest open cluster),
// each to its nearest open cluster. Sizes stay within floor/ceil(C/k).
GroupMapping balanced_greedy_cluster(const DistanceMatrix& d, const GroupingConfig& config);

struct Triplet {
  std::size_t sample_index;
  int label;
  int group;
  bool operator==(const Triplet&) const = default;
};

std::vector<Triplet> compose_triplets(std::span<const int> labels, const GroupMapping& mapping);
std::vector<int> group_labels(std::span<const int> labels, const GroupMapping& mapping);

// Text form: a header (format tag, classes, groups, criterion, seed, digest)
// then one "class_id group_id" line per class.
std::string mapping_to_text(const GroupMapping& m);
GroupMapping mapping_from_text(const std::string& text);
void write_mapping(const std::filesystem::path& path, const GroupMapping& m);
GroupMapping read_mapping(const std::filesystem::path& path);

}  // namespace ssal::grouping
