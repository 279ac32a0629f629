#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssal/dataset.hpp"
#include "ssal/grouping.hpp"
#include "ssal/model.hpp"
#include "ssal/optim.hpp"

namespace ssal::prediction {

enum class CombinerMode { main_only, joint_probability, linear_combination };
enum class Renormalization { sum_normalize, softmax };

std::string to_string(CombinerMode mode);
CombinerMode combiner_mode_from_string(const std::string& text);
std::string to_string(Renormalization r);
Renormalization renormalization_from_string(const std::string& text);

struct CombinerConfig {
  CombinerMode mode = CombinerMode::joint_probability;
  double eta = 1.0;
  Renormalization renormalization = Renormalization::sum_normalize;
  // Linear-combiner fitting.
  int lc_epochs = 5;
  std::size_t lc_batch_size = 64;
  TriangularSchedule lc_schedule{0.01, 0.1, 2, 5};
  double lc_momentum = 0.9;
  std::uint64_t lc_seed = 0;

  void validate() const;
};

// score_i = f_i * prod_b g_b[gamma_b(i)]^eta, unnormalized.
std::vector<double> joint_scores(std::span<const double> f, const std::vector<std::span<const double>>& branches,
                                 const std::vector<grouping::GroupMapping>& gammas, double eta);

// Sum-normalization divides by the total; softmax exponentiates the scores.
// Both preserve the order of the scores.
std::vector<double> renormalize(std::span<const double> scores, Renormalization rule);

// f and every branch output are probability vectors.
std::vector<double> joint_probability(std::span<const double> f, const std::vector<std::span<const double>>& branches,
                                      const std::vector<grouping::GroupMapping>& gammas, double eta,
                                      Renormalization rule = Renormalization::sum_normalize);

// Same quantity from log-probabilities; immune to underflow of the product.
std::vector<double> joint_probability_from_log(std::span<const double> log_f,
                                               const std::vector<std::span<const double>>& log_branches,
                                               const std::vector<grouping::GroupMapping>& gammas, double eta,
                                               Renormalization rule = Renormalization::sum_normalize);

std::size_t argmax(std::span<const double> values);

// Linear map from the concatenated head log-probabilities
// [log f (C), log g_1 (k_1), ...] to C class logits. Starts as the identity on
// the main block, so an unfitted combiner reproduces the main head.
class LinearCombiner {
 public:
  LinearCombiner() = default;
  LinearCombiner(std::size_t input_width, std::size_t class_count);

  std::size_t input_width() const { return input_width_; }
  std::size_t class_count() const { return class_count_; }
  bool fitted() const { return fitted_; }
  void mark_fitted() { fitted_ = true; }

  Tensor weight() const { return weight_; }
  Tensor bias() const { return bias_; }
  Tensor logits(const Tensor& inputs) const;

 private:
  std::size_t input_width_ = 0;
  std::size_t class_count_ = 0;
  Tensor weight_;
  Tensor bias_;
  bool fitted_ = false;
};

// Combiner inputs for a batch, computed in eval mode without recording.
Tensor combiner_inputs(model::SsalNetwork& net, const Tensor& batch);

// Trains the combiner by cross-entropy on `split` with the network frozen.
LinearCombiner fit_linear_combiner(model::SsalNetwork& net, const Dataset& split, const CombinerConfig& config);

struct Prediction {
  std::size_t class_count = 0;
  std::vector<int> main_label;
  std::vector<int> joint_label;
  std::vector<int> lc_label;                  // empty without a fitted combiner
  std::vector<std::vector<int>> group_label;  // per branch
  std::vector<double> main_probs;             // [N, C]
  std::vector<double> joint_probs;            // [N, C]
  std::vector<double> lc_probs;               // [N, C] or empty
  std::vector<std::vector<double>> branch_probs;

  // Labels for the configured mode.
  const std::vector<int>& labels(CombinerMode mode) const;
  std::span<const double> probs(CombinerMode mode, std::size_t sample) const;
};

// All modes from one eval-mode forward pass. Throws std::invalid_argument
// when mode is linear_combination and `combiner` is null or unfitted.
Prediction predict(model::SsalNetwork& net, const Tensor& batch, const CombinerConfig& config,
                   const LinearCombiner* combiner = nullptr);
Prediction predict(model::SsalNetwork& net, const Dataset& data, const CombinerConfig& config,
                   const LinearCombiner* combiner = nullptr, std::size_t batch_size = 256);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

// sample_id,true_label,main_pred,joint_pred,lc_pred,group_pred_<b>...,group_true_<b>...
std::string prediction_dump_csv(const Prediction& p, std::span<const int> truth,
                                const std::vector<grouping::GroupMapping>& gammas);

}  // namespace ssal::prediction
