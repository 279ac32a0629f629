#include "ssal/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "ssal/digest.hpp"

namespace ssal::grouping {

namespace {

constexpr double kTieTolerance = 1e-12;

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Criterion criterion) {
  return criterion == Criterion::join_similar ? "join_similar" : "split_similar";
}

Criterion criterion_from_string(const std::string& text) {
  if (text == "join_similar") return Criterion::join_similar;
  if (text == "split_similar") return Criterion::split_similar;
  throw GroupingError("unknown grouping criterion '" + text + "'");
}

ConfusionMatrix::ConfusionMatrix(std::size_t class_count, std::vector<double> values, bool normalized)
    : class_count_(class_count), values_(std::move(values)), normalized_(normalized) {
  if (class_count_ == 0) throw GroupingError("confusion matrix needs at least one class");
  if (values_.size() != class_count_ * class_count_) {
    throw GroupingError("confusion matrix is not square: " + std::to_string(values_.size()) + " entries for " +
                        std::to_string(class_count_) + " classes");
  }
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw GroupingError("confusion matrix entries must be finite and >= 0");
  }
}

ConfusionMatrix ConfusionMatrix::normalized() const {
  const std::size_t c = class_count_;
  std::vector<double> out(values_.size(), 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += at(i, j);
    if (total <= 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = i == j ? 0.0 : at(i, j) / total;
  }
  return ConfusionMatrix(c, std::move(out), true);
}

std::string ConfusionMatrix::digest() const { return sha256_hex(confusion_to_csv(*this)); }

ConfusionMatrix confusion_from_predictions(std::span<const int> predicted, std::span<const int> truth,
                                           std::size_t class_count) {
  if (predicted.empty() || truth.empty()) throw GroupingError("confusion matrix from empty predictions");
  if (predicted.size() != truth.size()) {
    throw GroupingError("predicted and true label vectors differ in length (" + std::to_string(predicted.size()) +
                        " vs " + std::to_string(truth.size()) + ")");
  }
  std::vector<double> counts(class_count * class_count, 0.0);
  const int c = static_cast<int>(class_count);
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (truth[s] < 0 || truth[s] >= c || predicted[s] < 0 || predicted[s] >= c) {
      throw GroupingError("label out of range at sample " + std::to_string(s));
    }
    counts[static_cast<std::size_t>(truth[s]) * class_count + static_cast<std::size_t>(predicted[s])] += 1.0;
  }
  return ConfusionMatrix(class_count, std::move(counts), false);
}

std::string confusion_to_csv(const ConfusionMatrix& m) {
  std::string out;
  const std::size_t c = m.class_count();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (j) out += ',';
      out += format_number(m.at(i, j));
    }
    out += '\n';
  }
  return out;
}

ConfusionMatrix confusion_from_csv(const std::string& text, bool normalized) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::size_t count = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw GroupingError("confusion CSV: bad number '" + cell + "' on row " + std::to_string(rows + 1));
      }
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw GroupingError("confusion CSV: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows != cols) {
    throw GroupingError("confusion CSV is not square: " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return ConfusionMatrix(rows, std::move(values), normalized);
}

DistanceMatrix distance_matrix(const ConfusionMatrix& f, Criterion criterion) {
  if (!f.is_normalized()) throw GroupingError("distance_matrix needs a normalized confusion matrix");
  const std::size_t c = f.class_count();
  for (std::size_t i = 0; i < c; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      if (f.at(i, j) > 1.0) throw GroupingError("normalized confusion entry above 1 at row " + std::to_string(i));
      off += f.at(i, j);
    }
    if (off > 1.0 + 1e-9) throw GroupingError("normalized confusion row " + std::to_string(i) + " sums above 1");
  }
  DistanceMatrix d;
  d.class_count = c;
  d.values.assign(c * c, 0.0);
  d.criterion = criterion;
  d.source_digest = f.digest();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      // Built from the same two operands in the same order for (i,j) and
      // (j,i), so the result is exactly symmetric.
      const double a = std::min(i, j) == i ? f.at(i, j) : f.at(j, i);
      const double b = std::min(i, j) == i ? f.at(j, i) : f.at(i, j);
      d.values[i * c + j] = criterion == Criterion::join_similar ? 0.5 * ((1.0 - a) + (1.0 - b)) : 0.5 * (a + b);
    }
  }
  return d;
}

int GroupMapping::group_of(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= gamma.size()) {
    throw GroupingError("label " + std::to_string(label) + " outside mapping domain [0, " + std::to_string(gamma.size()) + ")");
  }
  return gamma[static_cast<std::size_t>(label)];
}

std::vector<std::size_t> GroupMapping::group_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (int g : gamma) {
    if (g >= 0 && static_cast<std::size_t>(g) < k) ++sizes[static_cast<std::size_t>(g)];
  }
  return sizes;
}

void GroupMapping::validate() const {
  const std::size_t c = gamma.size();
  if (k < 1 || c == 0) throw GroupingError("mapping needs at least one class and one group");
  for (std::size_t i = 0; i < c; ++i) {
    if (gamma[i] < 0 || static_cast<std::size_t>(gamma[i]) >= k) {
      throw GroupingError("class " + std::to_string(i) + " mapped outside [0, " + std::to_string(k) + ")");
    }
  }
  const std::size_t lo = c / k, hi = (c + k - 1) / k;
  auto sizes = group_sizes();
  for (std::size_t g = 0; g < k; ++g) {
    if (sizes[g] == 0) throw GroupingError("group " + std::to_string(g) + " is empty");
    if (sizes[g] < lo || sizes[g] > hi) {
      throw GroupingError("group " + std::to_string(g) + " has " + std::to_string(sizes[g]) + " classes, outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }
}

bool GroupMapping::same_partition(const GroupMapping& other) const {
  if (gamma.size() != other.gamma.size() || k != other.k) return false;
  std::map<int, int> forward, backward;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    auto [f, fnew] = forward.emplace(gamma[i], other.gamma[i]);
    auto [b, bnew] = backward.emplace(other.gamma[i], gamma[i]);
    if (f->second != other.gamma[i] || b->second != gamma[i]) return false;
  }
  return true;
}

namespace {

// Indices whose score is within tolerance of the best; `better` orders scores.
template <typename Better>
std::size_t pick(const std::vector<double>& scores, const std::vector<bool>& eligible, Better better,
                 std::mt19937_64& rng, const std::vector<double>* secondary = nullptr) {
  std::size_t best = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (eligible[i] && (best == scores.size() || better(scores[i], scores[best]))) best = i;
  }
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (eligible[i] && std::abs(scores[i] - scores[best]) <= kTieTolerance) tied.push_back(i);
  }
  if (secondary && tied.size() > 1) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i : tied) top = std::max(top, (*secondary)[i]);
    std::erase_if(tied, [&](std::size_t i) { return (*secondary)[i] < top - kTieTolerance; });
  }
  if (tied.size() == 1) return tied.front();
  std::uniform_int_distribution<std::size_t> dist(0, tied.size() - 1);
  return tied[dist(rng)];
}

}  // namespace

GroupMapping balanced_greedy_cluster(const DistanceMatrix& d, const GroupingConfig& config) {
  const std::size_t c = d.class_count;
  const std::size_t k = config.k;
  if (d.values.size() != c * c) throw GroupingError("distance matrix is not square");
  if (k < 2 || k > c / 2) {
    throw GroupingError("group count k=" + std::to_string(k) + " outside [2, " + std::to_string(c / 2) + "] for " +
                        std::to_string(c) + " classes");
  }
  if (d.criterion && *d.criterion != config.criterion) {
    throw GroupingError("distance matrix built for " + to_string(*d.criterion) + " but config asks for " +
                        to_string(config.criterion));
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (!std::isfinite(d.at(i, j))) throw GroupingError("distance matrix has non-finite entries");
      if (d.at(i, j) != d.at(j, i)) throw GroupingError("distance matrix is not symmetric");
    }

  std::mt19937_64 rng(config.tie_break_seed);
  const std::size_t capacity = (c + k - 1) / k;
  const std::size_t minimum = c / k;

  std::vector<double> mean_to_all(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j)
      if (i != j) mean_to_all[i] += d.at(i, j);
    mean_to_all[i] /= static_cast<double>(c - 1);
  }

  // Seeds: the label farthest on average from all labels, then repeatedly the
  // unseeded label with the largest mean distance to the seeds chosen so far
  // (ties: larger mean distance to all labels, then seeded random).
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<bool> free(c, true);
  std::vector<double> to_seeds(c, 0.0);
  auto greater = [](double a, double b) { return a > b + kTieTolerance; };
  for (std::size_t s = 0; s < k; ++s) {
    std::size_t chosen = s == 0 ? pick(mean_to_all, free, greater, rng)
                                : pick(to_seeds, free, greater, rng, &mean_to_all);
    free[chosen] = false;
    clusters.push_back({chosen});
    for (std::size_t i = 0; i < c; ++i) {
      to_seeds[i] = (to_seeds[i] * static_cast<double>(s) + d.at(i, chosen)) / static_cast<double>(s + 1);
    }
  }

  // link[i * k + g]: label-to-cluster distance under the configured linkage.
  std::vector<double> sums(c * k, 0.0), mins(c * k, std::numeric_limits<double>::infinity());
  auto absorb = [&](std::size_t g, std::size_t member) {
    for (std::size_t i = 0; i < c; ++i) {
      sums[i * k + g] += d.at(i, member);
      mins[i * k + g] = std::min(mins[i * k + g], d.at(i, member));
    }
  };
  for (std::size_t g = 0; g < k; ++g) absorb(g, clusters[g][0]);

  std::size_t remaining = c - k;
  while (remaining > 0) {
    std::size_t deficit = 0;
    for (const auto& cl : clusters) deficit += cl.size() < minimum ? minimum - cl.size() : 0;
    std::vector<bool> open(k);
    for (std::size_t g = 0; g < k; ++g) {
      const std::size_t size = clusters[g].size();
      // A cluster already at the minimum may only grow while the leftover
      // labels can still fill every cluster below the minimum.
      open[g] = size < capacity && (size < minimum || remaining > deficit);
    }
    // The label with the most to lose goes first: largest gap between its
    // nearest and second-nearest open cluster (a single open cluster counts
    // as an infinite gap). Ties prefer the smaller nearest link.
    auto link = [&](std::size_t i, std::size_t g) {
      return config.linkage == Linkage::mean ? sums[i * k + g] / static_cast<double>(clusters[g].size())
                                             : mins[i * k + g];
    };
    std::vector<double> regret(c, 0.0), closeness(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
      if (!free[i]) continue;
      double first = std::numeric_limits<double>::infinity(), second = first;
      for (std::size_t g = 0; g < k; ++g) {
        if (!open[g]) continue;
        const double l = link(i, g);
        if (l < first) {
          second = first;
          first = l;
        } else if (l < second) {
          second = l;
        }
      }
      regret[i] = std::isinf(second) ? std::numeric_limits<double>::max() : second - first;
      closeness[i] = -first;
    }
    if (std::none_of(open.begin(), open.end(), [](bool o) { return o; })) {
      throw GroupingError("no cluster can accept the remaining labels");
    }
    const std::size_t label = pick(regret, free, greater, rng, &closeness);
    std::vector<double> links(k);
    for (std::size_t g = 0; g < k; ++g) links[g] = link(label, g);
    const std::size_t g = pick(links, open, [](double a, double b) { return a < b - kTieTolerance; }, rng);
    clusters[g].push_back(label);
    free[label] = false;
    absorb(g, label);
    --remaining;
  }

  GroupMapping m;
  m.gamma.assign(c, -1);
  for (std::size_t g = 0; g < k; ++g)
    for (std::size_t label : clusters[g]) m.gamma[label] = static_cast<int>(g);
  m.k = k;
  m.criterion = config.criterion;
  m.seed = config.tie_break_seed;
  m.source_digest = d.source_digest;
  m.validate();
  return m;
}

std::vector<Triplet> compose_triplets(std::span<const int> labels, const GroupMapping& mapping) {
  std::vector<Triplet> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({i, labels[i], mapping.group_of(labels[i])});
  return out;
}

std::vector<int> group_labels(std::span<const int> labels, const GroupMapping& mapping) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) out.push_back(mapping.group_of(y));
  return out;
}

std::string mapping_to_text(const GroupMapping& m) {
  std::ostringstream os;
  os << "ssal-group-mapping 1\n";
  os << "classes " << m.class_count() << '\n';
  os << "groups " << m.k << '\n';
  os << "criterion " << to_string(m.criterion) << '\n';
  os << "seed " << m.seed << '\n';
  os << "digest " << (m.source_digest.empty() ? "-" : m.source_digest) << '\n';
  for (std::size_t i = 0; i < m.gamma.size(); ++i) os << i << ' ' << m.gamma[i] << '\n';
  return os.str();
}

GroupMapping mapping_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag, key;
  int version = 0;
  if (!(in >> tag >> version) || tag != "ssal-group-mapping" || version != 1) {
    throw GroupingError("not a group mapping file (expected 'ssal-group-mapping 1' header)");
  }
  GroupMapping m;
  std::size_t classes = 0;
  std::string criterion, digest;
  auto expect = [&](const char* name) {
    if (!(in >> key) || key != name) throw GroupingError(std::string("group mapping: expected '") + name + "' line");
  };
  expect("classes");
  in >> classes;
  expect("groups");
  in >> m.k;
  expect("criterion");
  in >> criterion;
  m.criterion = criterion_from_string(criterion);
  expect("seed");
  in >> m.seed;
  expect("digest");
  in >> digest;
  m.source_digest = digest == "-" ? "" : digest;
  if (!in) throw GroupingError("group mapping: malformed header");
  m.gamma.assign(classes, -1);
  std::size_t cls;
  int group;
  std::size_t seen = 0;
  while (in >> cls >> group) {
    if (cls >= classes) throw GroupingError("group mapping: class id " + std::to_string(cls) + " out of range");
    if (m.gamma[cls] != -1) throw GroupingError("group mapping: class id " + std::to_string(cls) + " listed twice");
    m.gamma[cls] = group;
    ++seen;
  }
  if (!in.eof()) throw GroupingError("group mapping: malformed class line");
  if (seen != classes) throw GroupingError("group mapping: " + std::to_string(seen) + " of " + std::to_string(classes) + " classes listed");
  m.validate();
  return m;
}

void write_mapping(const std::filesystem::path& path, const GroupMapping& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << mapping_to_text(m);
}

GroupMapping read_mapping(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return mapping_from_text(ss.str());
}

}  // namespace ssal::grouping
