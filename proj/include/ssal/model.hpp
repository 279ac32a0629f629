#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssal/checkpoint.hpp"
#include "ssal/grouping.hpp"
#include "ssal/layers.hpp"

namespace ssal::model {

struct TrunkBlock {
  std::string name;
  std::vector<LayerSpec> layers;
};

// Attachment points are "input" followed by the name of every block, each
// naming the activation after that block.
struct TrunkSpec {
  std::vector<TrunkBlock> blocks;

  std::vector<std::string> attachment_points() const;
};

struct AuxBranchSpec {
  std::string attachment_point;
  std::vector<LayerSpec> layers;  // last layer: fully_connected(k)
  grouping::GroupMapping mapping;
  std::optional<double> loss_weight;  // unset: 1 / branch count
};

enum class Fusion {
  none,
  gap_concat,  // [main features, branch logits...] -> linear(C)
  concat_fc,   // [main logits, branch logits...] -> fc(hidden) -> relu -> linear(C)
};

std::string to_string(Fusion fusion);
Fusion fusion_from_string(const std::string& text);

struct NetworkSpec {
  Shape input_shape;  // per sample
  std::size_t class_count = 0;
  TrunkSpec trunk;
  std::vector<LayerSpec> main_head;  // last layer: fully_connected(class_count)
  std::vector<AuxBranchSpec> branches;
  Fusion fusion = Fusion::none;
  std::size_t fusion_hidden = 2048;
};

struct ParameterCounts {
  std::size_t trunk = 0;
  std::size_t main = 0;
  std::vector<std::size_t> branches;
  std::size_t fusion = 0;

  std::size_t total() const;
};

struct ForwardResult {
  Tensor main_logits;
  // One per trained branch; empty for fused variants, whose branches only
  // feed the main prediction.
  std::vector<Tensor> branch_logits;
  std::vector<Tensor> attachments;    // per attachment point, in declaration order
  std::vector<Tensor> branch_inputs;  // the activation each branch consumed
  Tensor main_features;               // input of the main head's final linear layer
};

class SsalNetwork {
 public:
  SsalNetwork(NetworkSpec spec, std::uint64_t init_seed);
  SsalNetwork(SsalNetwork&&) = default;
  SsalNetwork& operator=(SsalNetwork&&) = default;
  SsalNetwork(const SsalNetwork&) = delete;
  SsalNetwork& operator=(const SsalNetwork&) = delete;

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t init_seed() const { return init_seed_; }
  std::size_t class_count() const { return spec_.class_count; }
  bool fused() const { return spec_.fusion != Fusion::none; }

  // Branches that produce an output and carry a loss (0 for fused variants).
  std::size_t output_branch_count() const;
  const grouping::GroupMapping& branch_mapping(std::size_t branch) const;
  // [C, k_1, ..., k_n] over the outputs forward() returns.
  std::vector<std::size_t> output_widths() const;

  const std::vector<std::string>& attachment_names() const { return attachment_names_; }
  const std::vector<Shape>& attachment_shapes() const { return attachment_shapes_; }
  std::size_t attachment_index(const std::string& name) const;

  ParameterCounts parameter_counts() const;
  // Names are qualified: trunk.<block>.<i>.<param>, main.<i>.<param>,
  // branch<b>.<i>.<param>, fusion.<i>.<param>. Creation order.
  std::vector<NamedTensor> parameters() const;
  std::vector<Tensor> parameter_tensors() const;
  std::vector<NamedTensor> branch_parameters(std::size_t branch) const;
  std::vector<NamedBuffer> buffers();

  ForwardResult forward(const Tensor& batch, Mode mode);

  // Parameters and batch-norm statistics by qualified name.
  std::vector<CheckpointRecord> state() const;
  void load_state(const std::vector<CheckpointRecord>& records);
  // SHA-256 of the encoded state.
  std::string digest() const;

 private:
  NetworkSpec spec_;
  std::uint64_t init_seed_;
  std::vector<std::string> attachment_names_;
  std::vector<Shape> attachment_shapes_;
  std::vector<std::vector<Layer>> trunk_;
  std::vector<Layer> main_;
  std::vector<std::vector<Layer>> branches_;
  std::vector<std::size_t> branch_attachment_;
  std::vector<Layer> fusion_;
};

// Validates the spec and initializes parameters from init_seed in a fixed
// order: trunk, main head, branches as declared, fusion.
SsalNetwork build_network(NetworkSpec spec, std::uint64_t init_seed);

// Same layout with branch outputs routed into the main prediction and no
// auxiliary loss. Reuses the source network's init seed.
SsalNetwork variant_no_ssal(const SsalNetwork& net, Fusion fusion, std::size_t hidden = 2048);

// Desk-scale zoo.

// depth blocks b1..b<depth>, each fully_connected(width) + relu.
TrunkSpec mlp_trunk(std::size_t width, std::size_t depth);
std::vector<LayerSpec> mlp_main_head(std::size_t class_count);

// Four conv-BN-ReLU-pool stages split into half blocks: b<i>a holds
// conv-BN-ReLU and b<i> the pooling, giving nine attachment points.
TrunkSpec cnn_trunk(const std::vector<std::size_t>& channels);
std::vector<LayerSpec> cnn_main_head(std::size_t class_count);

// Rank-3 attachments: two conv-BN-ReLU, an inception layer, GAP, fc(k).
// Rank-1 attachments: fc(width) + relu, fc(k). width 0 follows the
// attachment's channel (or feature) count.
std::vector<LayerSpec> default_branch(const Shape& attachment_shape, std::size_t k, std::size_t width = 0);

}  // namespace ssal::model
