#include "ssal/model.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>

#include "ssal/digest.hpp"
#include "ssal/ops.hpp"

namespace ssal::model {

namespace {

struct LayerGroup {
  std::string prefix;
  std::vector<Layer>* layers;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

bool ends_with_fc(const std::vector<LayerSpec>& layers, std::size_t width) {
  return !layers.empty() && layers.back().kind == LayerKind::fully_connected && layers.back().out_features == width;
}

std::size_t count_parameters(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

}  // namespace

std::vector<std::string> TrunkSpec::attachment_points() const {
  std::vector<std::string> names{"input"};
  for (const auto& b : blocks) names.push_back(b.name);
  return names;
}

std::string to_string(Fusion fusion) {
  switch (fusion) {
    case Fusion::none: return "none";
    case Fusion::gap_concat: return "gap_concat";
    case Fusion::concat_fc: return "concat_fc";
  }
  return "none";
}

Fusion fusion_from_string(const std::string& text) {
  if (text == "none") return Fusion::none;
  if (text == "gap_concat") return Fusion::gap_concat;
  if (text == "concat_fc") return Fusion::concat_fc;
  throw std::invalid_argument("unknown fusion '" + text + "'");
}

std::size_t ParameterCounts::total() const {
  std::size_t n = trunk + main + fusion;
  for (auto b : branches) n += b;
  return n;
}

SsalNetwork::SsalNetwork(NetworkSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)), init_seed_(init_seed) {
  const auto& s = spec_;
  require(!s.input_shape.empty() && shape_numel(s.input_shape) > 0, "network input shape must be non-empty");
  require(s.class_count >= 2, "network needs at least 2 classes");
  require(ends_with_fc(s.main_head, s.class_count),
          "main head must end with fully_connected(" + std::to_string(s.class_count) + ")");

  attachment_names_ = s.trunk.attachment_points();
  std::set<std::string> unique(attachment_names_.begin(), attachment_names_.end());
  require(unique.size() == attachment_names_.size(), "trunk block names must be unique and differ from 'input'");
  for (const auto& b : s.trunk.blocks) require(!b.name.empty(), "trunk block names must be non-empty");

  std::vector<std::size_t> attach;
  for (std::size_t i = 0; i < s.branches.size(); ++i) {
    const auto& br = s.branches[i];
    const auto it = std::find(attachment_names_.begin(), attachment_names_.end(), br.attachment_point);
    require(it != attachment_names_.end(),
            "branch " + std::to_string(i) + ": unknown attachment point '" + br.attachment_point + "'");
    br.mapping.validate();
    require(br.mapping.class_count() == s.class_count,
            "branch " + std::to_string(i) + ": mapping covers " + std::to_string(br.mapping.class_count()) +
                " classes, network has " + std::to_string(s.class_count));
    require(ends_with_fc(br.layers, br.mapping.k),
            "branch " + std::to_string(i) + ": output width does not match its mapping's k=" +
                std::to_string(br.mapping.k));
    require(!br.loss_weight || *br.loss_weight >= 0.0, "branch " + std::to_string(i) + ": negative loss weight");
    attach.push_back(static_cast<std::size_t>(it - attachment_names_.begin()));
  }
  branch_attachment_ = attach;
  if (s.fusion != Fusion::none) require(!s.branches.empty(), "fusion " + to_string(s.fusion) + " needs at least one branch");

  std::mt19937_64 rng(init_seed_);
  Shape shape = s.input_shape;
  attachment_shapes_.push_back(shape);
  for (const auto& b : s.trunk.blocks) {
    trunk_.push_back(make_layers(b.layers, shape, rng));
    if (!trunk_.back().empty()) shape = trunk_.back().back().output_shape();
    attachment_shapes_.push_back(shape);
  }

  std::vector<LayerSpec> head = s.main_head;
  if (s.fusion == Fusion::gap_concat) head.pop_back();
  main_ = make_layers(head, shape, rng);
  const Shape features = main_.empty() ? shape : main_.back().output_shape();
  if (s.fusion == Fusion::gap_concat) {
    require(features.size() == 1, "gap_concat needs rank-1 main features, got " + shape_string(features));
  }

  std::size_t branch_width = 0;
  for (std::size_t i = 0; i < s.branches.size(); ++i) {
    branches_.push_back(make_layers(s.branches[i].layers, attachment_shapes_[attach[i]], rng));
    branch_width += s.branches[i].mapping.k;
  }

  if (s.fusion == Fusion::gap_concat) {
    fusion_ = make_layers({LayerSpec::fc(s.class_count)}, {features[0] + branch_width}, rng);
  } else if (s.fusion == Fusion::concat_fc) {
    require(s.fusion_hidden > 0, "concat_fc hidden width must be positive");
    fusion_ = make_layers({LayerSpec::fc(s.fusion_hidden), LayerSpec::relu_layer(), LayerSpec::fc(s.class_count)},
                          {s.class_count + branch_width}, rng);
  }
}

std::size_t SsalNetwork::output_branch_count() const { return fused() ? 0 : spec_.branches.size(); }

const grouping::GroupMapping& SsalNetwork::branch_mapping(std::size_t branch) const {
  return spec_.branches.at(branch).mapping;
}

std::vector<std::size_t> SsalNetwork::output_widths() const {
  std::vector<std::size_t> w{spec_.class_count};
  for (std::size_t i = 0; i < output_branch_count(); ++i) w.push_back(spec_.branches[i].mapping.k);
  return w;
}

std::size_t SsalNetwork::attachment_index(const std::string& name) const {
  const auto it = std::find(attachment_names_.begin(), attachment_names_.end(), name);
  if (it == attachment_names_.end()) throw std::invalid_argument("unknown attachment point '" + name + "'");
  return static_cast<std::size_t>(it - attachment_names_.begin());
}

ParameterCounts SsalNetwork::parameter_counts() const {
  ParameterCounts c;
  for (const auto& b : trunk_) c.trunk += count_parameters(b);
  c.main = count_parameters(main_);
  for (const auto& b : branches_) c.branches.push_back(count_parameters(b));
  c.fusion = count_parameters(fusion_);
  return c;
}

namespace {

std::vector<LayerGroup> layer_groups(const SsalNetwork& net, std::vector<std::vector<Layer>>& trunk,
                                     std::vector<Layer>& main, std::vector<std::vector<Layer>>& branches,
                                     std::vector<Layer>& fusion) {
  std::vector<LayerGroup> groups;
  for (std::size_t b = 0; b < trunk.size(); ++b)
    groups.push_back({"trunk." + net.spec().trunk.blocks[b].name + ".", &trunk[b]});
  groups.push_back({"main.", &main});
  for (std::size_t b = 0; b < branches.size(); ++b) groups.push_back({"branch" + std::to_string(b) + ".", &branches[b]});
  groups.push_back({"fusion.", &fusion});
  return groups;
}

}  // namespace

std::vector<NamedTensor> SsalNetwork::parameters() const {
  auto& self = const_cast<SsalNetwork&>(*this);
  std::vector<NamedTensor> out;
  for (const auto& g : layer_groups(*this, self.trunk_, self.main_, self.branches_, self.fusion_)) {
    for (std::size_t i = 0; i < g.layers->size(); ++i)
      for (auto& p : (*g.layers)[i].parameters()) out.push_back({g.prefix + std::to_string(i) + "." + p.name, p.tensor});
  }
  return out;
}

std::vector<Tensor> SsalNetwork::parameter_tensors() const {
  std::vector<Tensor> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

std::vector<NamedTensor> SsalNetwork::branch_parameters(std::size_t branch) const {
  std::vector<NamedTensor> out;
  const auto& layers = branches_.at(branch);
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i].parameters())
      out.push_back({"branch" + std::to_string(branch) + "." + std::to_string(i) + "." + p.name, p.tensor});
  return out;
}

std::vector<NamedBuffer> SsalNetwork::buffers() {
  std::vector<NamedBuffer> out;
  for (const auto& g : layer_groups(*this, trunk_, main_, branches_, fusion_)) {
    for (std::size_t i = 0; i < g.layers->size(); ++i)
      for (auto& b : (*g.layers)[i].buffers()) out.push_back({g.prefix + std::to_string(i) + "." + b.name, b.values});
  }
  return out;
}

ForwardResult SsalNetwork::forward(const Tensor& batch, Mode mode) {
  const Shape& s = batch.shape();
  if (s.size() != spec_.input_shape.size() + 1 || !std::equal(s.begin() + 1, s.end(), spec_.input_shape.begin())) {
    throw ShapeError("network: got batch " + shape_string(s) + ", expects [N]" + shape_string(spec_.input_shape));
  }
  ForwardResult r;
  Tensor x = batch;
  r.attachments.push_back(x);
  for (auto& block : trunk_) {
    x = apply_layers(block, x, mode);
    r.attachments.push_back(x);
  }

  const std::size_t keep = spec_.fusion == Fusion::gap_concat ? main_.size() : main_.size() - 1;
  for (std::size_t i = 0; i < main_.size(); ++i) {
    if (i == keep) r.main_features = x;
    x = apply_layer(main_[i], x, mode);
  }
  if (keep == main_.size()) r.main_features = x;
  r.main_logits = x;

  std::vector<Tensor> outputs;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Tensor& in = r.attachments[branch_attachment_[b]];
    r.branch_inputs.push_back(in);
    outputs.push_back(apply_layers(branches_[b], in, mode));
  }

  if (spec_.fusion == Fusion::none) {
    r.branch_logits = std::move(outputs);
    return r;
  }
  std::vector<Tensor> parts{spec_.fusion == Fusion::gap_concat ? r.main_features : r.main_logits};
  parts.insert(parts.end(), outputs.begin(), outputs.end());
  r.main_logits = apply_layers(fusion_, ops::concat(parts, 1), mode);
  return r;
}

std::vector<CheckpointRecord> SsalNetwork::state() const {
  std::vector<CheckpointRecord> records;
  for (const auto& p : parameters()) {
    auto d = p.tensor.data();
    records.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  for (const auto& b : const_cast<SsalNetwork&>(*this).buffers())
    records.push_back({b.name, {b.values->size()}, std::vector<float>(b.values->begin(), b.values->end())});
  return records;
}

void SsalNetwork::load_state(const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw CheckpointError("duplicate checkpoint record '" + r.name + "'");
  }
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks '" + name + "'");
    if (it->second->shape != shape) {
      throw CheckpointError("checkpoint record '" + name + "' has shape " + shape_string(it->second->shape) +
                            ", network expects " + shape_string(shape));
    }
    const CheckpointRecord& r = *it->second;
    by_name.erase(it);
    return r;
  };
  std::vector<std::pair<std::span<double>, const CheckpointRecord*>> writes;
  for (const auto& p : parameters()) {
    Tensor t = p.tensor;
    writes.emplace_back(t.mutable_data(), &take(p.name, t.shape()));
  }
  for (const auto& b : buffers()) writes.emplace_back(std::span<double>(*b.values), &take(b.name, {b.values->size()}));
  if (!by_name.empty()) throw CheckpointError("checkpoint has unknown record '" + by_name.begin()->first + "'");
  for (auto& [dst, rec] : writes) std::copy(rec->values.begin(), rec->values.end(), dst.begin());
  for (const auto& g : layer_groups(*this, trunk_, main_, branches_, fusion_))
    for (auto& l : *g.layers) l.mark_statistics_loaded();
}

std::string SsalNetwork::digest() const { return sha256_hex(encode_checkpoint(state())); }

SsalNetwork build_network(NetworkSpec spec, std::uint64_t init_seed) { return SsalNetwork(std::move(spec), init_seed); }

SsalNetwork variant_no_ssal(const SsalNetwork& net, Fusion fusion, std::size_t hidden) {
  if (fusion == Fusion::none) throw std::invalid_argument("variant_no_ssal needs gap_concat or concat_fc");
  if (net.spec().branches.empty()) throw std::invalid_argument("variant_no_ssal needs a network with branches");
  NetworkSpec spec = net.spec();
  spec.fusion = fusion;
  spec.fusion_hidden = hidden;
  return SsalNetwork(std::move(spec), net.init_seed());
}

TrunkSpec mlp_trunk(std::size_t width, std::size_t depth) {
  TrunkSpec t;
  for (std::size_t i = 1; i <= depth; ++i)
    t.blocks.push_back({"b" + std::to_string(i), {LayerSpec::fc(width), LayerSpec::relu_layer()}});
  return t;
}

std::vector<LayerSpec> mlp_main_head(std::size_t class_count) { return {LayerSpec::fc(class_count)}; }

TrunkSpec cnn_trunk(const std::vector<std::size_t>& channels) {
  TrunkSpec t;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string name = "b" + std::to_string(i + 1);
    t.blocks.push_back({name + "a", {LayerSpec::conv(channels[i], 3, 1, 1), LayerSpec::batch_norm(), LayerSpec::relu_layer()}});
    t.blocks.push_back({name, {LayerSpec::max_pool(2, 2)}});
  }
  return t;
}

std::vector<LayerSpec> cnn_main_head(std::size_t class_count) { return {LayerSpec::gap(), LayerSpec::fc(class_count)}; }

std::vector<LayerSpec> default_branch(const Shape& attachment_shape, std::size_t k, std::size_t width) {
  if (attachment_shape.empty()) throw std::invalid_argument("default_branch: empty attachment shape");
  const std::size_t w = width > 0 ? width : attachment_shape[0];
  if (attachment_shape.size() == 3) {
    const std::size_t per_path = std::max<std::size_t>(1, w / 2);
    return {LayerSpec::conv(w, 3, 1, 1), LayerSpec::batch_norm(), LayerSpec::relu_layer(),
            LayerSpec::conv(w, 3, 1, 1), LayerSpec::batch_norm(), LayerSpec::relu_layer(),
            LayerSpec::inception(per_path, {1, 3}), LayerSpec::gap(), LayerSpec::fc(k)};
  }
  if (attachment_shape.size() == 1) return {LayerSpec::fc(w), LayerSpec::relu_layer(), LayerSpec::fc(k)};
  throw std::invalid_argument("default_branch: unsupported attachment shape " + shape_string(attachment_shape));
}

}  // namespace ssal::model
