#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssal/dataset.hpp"
#include "ssal/grouping.hpp"
#include "ssal/model.hpp"
#include "ssal/optim.hpp"
#include "ssal/prediction.hpp"

namespace ssal::training {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double main = 1.0;
  std::vector<double> branches;

  // Per branch: its declared loss_weight, else 1 / branch count.
  static LossWeights defaults(const model::SsalNetwork& net);
  void validate(std::size_t branch_count) const;
};

struct TrainConfig {
  std::string run_id = "run";
  int epochs = 20;
  std::size_t batch_size = 64;
  TriangularSchedule schedule{};
  double momentum = 0.9;
  std::uint64_t seed = 0;  // master seed; the shuffle stream derives from it
  std::optional<LossWeights> loss_weights;
  int eval_cadence = 1;  // evaluate every n epochs (and always the last)
  double eta = 1.0;
  prediction::Renormalization renormalization = prediction::Renormalization::sum_normalize;

  void validate() const;
};

struct JointLoss {
  Tensor total;
  Tensor main;
  std::vector<Tensor> branches;
};

// lambda_main * CE(main) + sum_b lambda_b * CE(branch_b). Zero-weight terms are
// left out of the total. Throws std::invalid_argument when a group label
// differs from gamma_b(y).
JointLoss joint_loss(const Tensor& main_logits, const std::vector<Tensor>& branch_logits, std::span<const int> labels,
                     const std::vector<std::vector<int>>& group_labels,
                     const std::vector<grouping::GroupMapping>& gammas, const LossWeights& weights);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_main = 0.0;
  std::vector<double> loss_branches;
  double acc_main = 0.0;
  std::vector<double> acc_branches;     // branch argmax vs gamma(y)
  double acc_joint = 0.0;
  std::vector<double> acc_mapped_main;  // gamma(argmax f) vs gamma(y)
  std::vector<double> acc_best_group;   // max(branch, mapped main)
};

struct TrainLog {
  std::string run_id;
  std::size_t branch_count = 0;
  std::vector<EpochMetrics> rows;

  static std::string csv_header(std::size_t branch_count);
  std::string csv_rows() const;
  std::string to_csv() const { return csv_header(branch_count) + csv_rows(); }
  const EpochMetrics& final() const { return rows.back(); }
};

// One SGD step per mini-batch on the joint loss. Row 0 is measured before any
// update; losses are means over the epoch's training batches (row 0: over the
// training set in eval mode), accuracies are measured on `eval_set`.
TrainLog train(model::SsalNetwork& net, const Dataset& train_set, const Dataset& eval_set, const TrainConfig& config);

EpochMetrics evaluate(model::SsalNetwork& net, const Dataset& data, double eta,
                      prediction::Renormalization renormalization);

// Branch template for the second phase; the final fully_connected(k) is
// appended once k is known.
struct BranchPlan {
  std::string attachment_point;
  grouping::GroupingConfig grouping;  // tie_break_seed is derived per run
  std::optional<std::vector<LayerSpec>> hidden;  // unset: default_branch
  std::size_t width = 0;                          // default_branch width
  std::optional<double> loss_weight;
};

struct PipelineData {
  Dataset fit;      // trains both phases
  Dataset holdout;  // confusion estimation
  Dataset test;     // reported metrics
};

struct PipelineResult {
  std::vector<grouping::GroupMapping> gammas;
  std::optional<grouping::ConfusionMatrix> confusion;
  model::SsalNetwork baseline;
  TrainLog baseline_log;
  std::optional<model::SsalNetwork> ssal;
  std::optional<TrainLog> ssal_log;
  std::string baseline_digest;
  std::string report;  // JSON provenance
};

// Phase 1 trains the branch-free `baseline` spec and estimates its confusion
// on the holdout; phase 2 derives one mapping per plan and trains the SSAL
// network. An empty plan list stops after phase 1.
PipelineResult two_phase_pipeline(const model::NetworkSpec& baseline, const std::vector<BranchPlan>& plans,
                                  const PipelineData& data, const TrainConfig& config);

// Attaches branches built from `plans` and `gammas` to a branch-free spec.
model::NetworkSpec with_branches(model::NetworkSpec spec, const std::vector<BranchPlan>& plans,
                                 const std::vector<grouping::GroupMapping>& gammas);

// One mapping per plan from the baseline's confusion; plan i breaks ties with
// derive_seed(seed, tie_break, i).
std::vector<grouping::GroupMapping> derive_mappings(const grouping::ConfusionMatrix& confusion,
                                                   const std::vector<BranchPlan>& plans, std::uint64_t seed);

// Confusion of `net`'s main head on `data`.
grouping::ConfusionMatrix confusion_of(model::SsalNetwork& net, const Dataset& data);

}  // namespace ssal::training
