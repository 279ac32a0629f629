#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssal/grouping.hpp"
#include "ssal/harness/cifar.hpp"
#include "ssal/harness/synthetic.hpp"
#include "ssal/prediction.hpp"
#include "ssal/training.hpp"

namespace ssal::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar | dir
  SyntheticSpec synthetic;           // seed is derived from the run seed
  CifarSpec cifar;
  std::string dir;                   // gen-data output directory
  double holdout_fraction = 0.2;
};

struct ModelConfig {
  std::string trunk = "mlp";  // mlp | cnn
  std::size_t width = 64;     // mlp block width
  std::size_t depth = 3;      // mlp blocks
  std::vector<std::size_t> channels{8, 16, 16, 32};  // cnn stages
  std::size_t branch_width = 0;                      // 0: follow the attachment
};

struct BranchConfig {
  std::string attach = "b1";
  std::size_t k = 4;
  grouping::Criterion criterion = grouping::Criterion::join_similar;
  grouping::Linkage linkage = grouping::Linkage::mean;
  std::optional<double> loss_weight;
};

enum class SweepAxis { group_count, criterion, attachment_position, branch_count, eta };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& text);

struct SweepConfig {
  SweepAxis axis = SweepAxis::group_count;
  std::vector<nlohmann::json> values;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t max_parallel = 1;
};

struct SuiteConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> variants;
  std::size_t concat_fc_hidden = 2048;
  std::size_t wide_factor = 2;
  std::size_t extra_depth = 2;
  std::vector<BranchConfig> x3_branches;
  double x3_eta = 0.3;  // joint-prediction damping when three branches vote
  std::size_t max_parallel = 1;
};

struct ExperimentConfig {
  std::string run_id = "run";
  std::uint64_t seed = 1;
  DataConfig data;
  ModelConfig model;
  std::vector<BranchConfig> branches;
  training::TrainConfig train;  // seed and run_id are filled per run
  prediction::CombinerConfig predict;
  SweepConfig sweep;
  SuiteConfig suite;
  std::optional<double> convergence_threshold;  // unset: baseline mean final accuracy

  nlohmann::json resolved;  // defaults + file + overrides, as parsed
};

// Every key the harness understands, with its default value.
nlohmann::json default_config();

// "a.b.c=value": value is parsed as JSON when possible, else taken as a
// string. Unknown paths are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Merges `user` over the defaults and validates. Unknown keys and bad values
// raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& user);

// Loads a config file or a run manifest (which embeds its resolved config),
// then applies overrides in order.
nlohmann::json load_config_json(const std::optional<std::filesystem::path>& path,
                                const std::vector<std::string>& overrides);

}  // namespace ssal::harness
