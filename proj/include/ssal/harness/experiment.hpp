#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssal/harness/config.hpp"

namespace ssal::harness {

// Everything one seeded run trains and evaluates on.
struct PreparedData {
  Dataset train;  // full training split
  Dataset fit;    // train minus holdout
  Dataset holdout;
  Dataset test;
  std::optional<grouping::GroupMapping> planted;  // synthetic only
};

// Synthetic data draws from derive_seed(seed, data); the holdout split from
// derive_seed(seed, holdout). "dir" reads the files gen-data writes.
PreparedData prepare_data(const DataConfig& config, std::uint64_t seed);

// gen-data layout: train.csv and test.csv (a "# ssal-dataset" header line
// with shape and class count, then label,x0,x1,... per sample, %.17g) plus
// planted_mapping.txt when the data is synthetic.
void write_dataset_dir(const std::string& dir, const PreparedData& data);
PreparedData read_dataset_dir(const std::string& dir, double holdout_fraction, std::uint64_t seed);

model::NetworkSpec baseline_spec(const ModelConfig& model, const Dataset& sample);
std::vector<training::BranchPlan> branch_plans(const std::vector<BranchConfig>& branches, std::size_t branch_width);
training::TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed, const std::string& run_id);

// A full two-phase run at one seed.
struct RunResult {
  PreparedData data;
  training::PipelineResult pipeline;
};
RunResult run_pipeline(const ExperimentConfig& config, std::uint64_t seed);

// Sweep rows. Columns are fixed for every axis:
// axis,value,seed,status,branch_count,parameters,acc_main,acc_joint,acc_groups,error
// acc_groups joins per-branch accuracies with ';'. Mean and std rows follow
// the per-seed rows of each value (seed column "mean" / "std").
struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  bool ok = false;
  std::size_t branch_count = 0;
  std::size_t parameters = 0;
  double acc_main = 0.0;
  double acc_joint = 0.0;
  std::vector<double> acc_groups;
  std::string error;
};

struct SweepResult {
  SweepAxis axis;
  std::vector<SweepRow> rows;  // value-major, seeds in config order
  std::string to_csv() const;
};

// Runs are scheduled on at most sweep.max_parallel threads; rows are
// collected by index so the table does not depend on completion order. A
// failed run is recorded and skipped; a value with no successful run throws.
SweepResult run_sweep(const ExperimentConfig& config);

// Applies one sweep value to a copy of the base config.
ExperimentConfig sweep_point(const ExperimentConfig& base, SweepAxis axis, const nlohmann::json& value);

struct VariantRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  std::size_t parameters = 0;
  std::optional<training::TrainLog> log;
  std::optional<bool> gamma_matches_planted;
};

struct VariantSummary {
  std::string name;
  std::vector<VariantRun> runs;  // one per seed, in config order

  std::size_t successes() const;
  double mean() const;
  double stddev() const;  // sample std; 0 with fewer than two runs
  std::size_t parameters() const;  // from the first successful run
};

struct SuiteResult {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantSummary> variants;

  const VariantSummary* find(const std::string& name) const;
  // variant,runs,mean_acc,std_acc,parameters,diff_vs_baseline,wins_vs_baseline,gamma_planted
  std::string to_csv() const;
  // variant,seed,status,accuracy,parameters,gamma_planted,error
  std::string runs_csv() const;
};

// Every variant shares the seed's data, schedule and init stream. Variants:
// baseline, wide, deep, deepwide (capacity controls), gap_concat and
// concat_fc (SSAL x1 layout without the auxiliary loss), linear_comb (LC over
// the SSAL x1 heads), ssal_x1, ssal_x3. Both SSAL variants take their
// mappings from the same baseline.
SuiteResult run_baseline_suite(const ExperimentConfig& config);

struct ConvergenceRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<int> epoch;  // nullopt: never
  double final_accuracy = 0.0;
};

struct ConvergenceReport {
  double threshold = 0.0;
  std::vector<ConvergenceRow> rows;
  std::size_t ssal_wins = 0;  // seeds where SSAL reached the threshold strictly earlier
  std::size_t seeds = 0;

  // variant,seed,epochs_to_threshold,final_accuracy; "never" when unreached.
  std::string to_csv() const;
};

// First evaluated epoch whose accuracy reaches `threshold`.
std::optional<int> epochs_to_threshold(const training::TrainLog& log, double threshold, bool joint);

// Baseline rows use acc_main, SSAL rows acc_joint. Without a threshold the
// baseline's mean final accuracy is used.
ConvergenceReport convergence_report(const VariantSummary& baseline, const VariantSummary& ssal,
                                     std::optional<double> threshold);

}  // namespace ssal::harness
