#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "ssal/layers.hpp"
#include "ssal/log.hpp"
#include "ssal/model.hpp"

using namespace ssal;
using namespace ssal::model;
using ssal::testing::random_tensor;

namespace {

grouping::GroupMapping round_robin(std::size_t classes, std::size_t k) {
  grouping::GroupMapping m;
  m.k = k;
  for (std::size_t i = 0; i < classes; ++i) m.gamma.push_back(static_cast<int>(i % k));
  return m;
}

AuxBranchSpec mlp_branch(const std::string& at, std::size_t classes, std::size_t k, std::size_t width = 8) {
  return {at, {LayerSpec::fc(width), LayerSpec::relu_layer(), LayerSpec::fc(k)}, round_robin(classes, k), {}};
}

NetworkSpec mlp_spec(std::size_t classes, std::vector<AuxBranchSpec> branches = {}) {
  NetworkSpec s;
  s.input_shape = {6};
  s.class_count = classes;
  s.trunk = mlp_trunk(10, 3);
  s.main_head = mlp_main_head(classes);
  s.branches = std::move(branches);
  return s;
}

NetworkSpec cnn_spec(std::size_t classes, std::vector<AuxBranchSpec> branches = {}) {
  NetworkSpec s;
  s.input_shape = {3, 16, 16};
  s.class_count = classes;
  s.trunk = cnn_trunk({4, 4, 6, 6});
  s.main_head = cnn_main_head(classes);
  s.branches = std::move(branches);
  return s;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(BuildNetwork, NoBranchesIsPlainClassifier) {
  auto net = build_network(mlp_spec(5), 1);
  auto out = net.forward(random_tensor({4, 6}, 2), Mode::eval);
  EXPECT_TRUE(out.branch_logits.empty());
  EXPECT_EQ(out.main_logits.shape(), (Shape{4, 5}));
  EXPECT_EQ(net.output_widths(), (std::vector<std::size_t>{5}));
}

TEST(BuildNetwork, TwoBranchesYieldDeclaredWidths) {
  auto net = build_network(mlp_spec(100, {mlp_branch("b1", 100, 20), mlp_branch("b2", 100, 50)}), 3);
  auto out = net.forward(random_tensor({3, 6}, 4), Mode::eval);
  ASSERT_EQ(out.branch_logits.size(), 2u);
  EXPECT_EQ(out.main_logits.dim(1), 100u);
  EXPECT_EQ(out.branch_logits[0].dim(1), 20u);
  EXPECT_EQ(out.branch_logits[1].dim(1), 50u);
  EXPECT_EQ(net.output_widths(), (std::vector<std::size_t>{100, 20, 50}));
}

TEST(BuildNetwork, BranchParameterCountIsTheDifference) {
  auto plain = build_network(mlp_spec(8), 1);
  auto with = build_network(mlp_spec(8, {mlp_branch("b2", 8, 4)}), 1);
  const auto a = plain.parameter_counts(), b = with.parameter_counts();
  ASSERT_EQ(b.branches.size(), 1u);
  EXPECT_EQ(b.total() - a.total(), b.branches[0]);
  // fc(8) on 10 features, fc(4) on 8.
  EXPECT_EQ(b.branches[0], 10u * 8 + 8 + 8u * 4 + 4);
  std::size_t named = 0;
  for (const auto& p : with.branch_parameters(0)) named += p.tensor.numel();
  EXPECT_EQ(named, b.branches[0]);
}

TEST(BuildNetwork, CreationOrderSharesTrunkAndMainInit) {
  auto plain = build_network(mlp_spec(8), 9);
  auto with = build_network(mlp_spec(8, {mlp_branch("b1", 8, 2)}), 9);
  const auto p = plain.parameters(), w = with.parameters();
  ASSERT_LT(p.size(), w.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p[i].name, w[i].name);
    EXPECT_EQ(values(p[i].tensor), values(w[i].tensor));
  }
}

TEST(BuildNetwork, RejectsUnknownAttachmentPoint) {
  EXPECT_THROW(build_network(mlp_spec(8, {mlp_branch("b9", 8, 2)}), 1), std::invalid_argument);
}

TEST(BuildNetwork, RejectsWidthMismatch) {
  auto branch = mlp_branch("b1", 8, 2);
  branch.mapping = round_robin(8, 4);
  EXPECT_THROW(build_network(mlp_spec(8, {branch}), 1), std::invalid_argument);
}

TEST(BuildNetwork, RejectsMappingOverOtherClassCount) {
  auto branch = mlp_branch("b1", 8, 2);
  branch.mapping = round_robin(6, 2);
  EXPECT_THROW(build_network(mlp_spec(8, {branch}), 1), std::invalid_argument);
}

TEST(BuildNetwork, RejectsDuplicateBlockNames) {
  auto s = mlp_spec(4);
  s.trunk.blocks[1].name = "b1";
  EXPECT_THROW(build_network(s, 1), std::invalid_argument);
}

TEST(Forward, IdenticalInputsGiveIdenticalRows) {
  auto net = build_network(cnn_spec(5, {AuxBranchSpec{"b2", default_branch({4, 8, 8}, 3), round_robin(5, 3), {}}}), 1);
  auto row = random_tensor({1, 3, 16, 16}, 7);
  std::vector<double> twice(row.data().begin(), row.data().end());
  twice.insert(twice.end(), row.data().begin(), row.data().end());
  set_warning_sink([](const std::string&) {});
  auto out = net.forward(Tensor({2, 3, 16, 16}, twice), Mode::eval);
  set_warning_sink(nullptr);
  for (const Tensor& t : {out.main_logits, out.branch_logits[0]}) {
    const std::size_t w = t.dim(1);
    for (std::size_t j = 0; j < w; ++j) EXPECT_EQ(t.at(j), t.at(w + j));
  }
}

TEST(Forward, ZeroingABranchChangesOnlyThatBranch) {
  auto net = build_network(mlp_spec(6, {mlp_branch("b1", 6, 2), mlp_branch("b3", 6, 3)}), 5);
  auto x = random_tensor({4, 6}, 11);
  auto before = net.forward(x, Mode::eval);
  for (auto& p : net.branch_parameters(1)) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = 0.0;
  }
  auto after = net.forward(x, Mode::eval);
  EXPECT_EQ(values(before.main_logits), values(after.main_logits));
  EXPECT_EQ(values(before.branch_logits[0]), values(after.branch_logits[0]));
  EXPECT_NE(values(before.branch_logits[1]), values(after.branch_logits[1]));
  for (double v : after.branch_logits[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, BranchReadsItsAttachmentActivation) {
  auto net = build_network(mlp_spec(6, {mlp_branch("b2", 6, 2), mlp_branch("input", 6, 3)}), 5);
  auto out = net.forward(random_tensor({3, 6}, 1), Mode::train);
  ASSERT_EQ(out.attachments.size(), 4u);
  EXPECT_EQ(out.branch_inputs[0].node_ptr(), out.attachments[net.attachment_index("b2")].node_ptr());
  EXPECT_EQ(out.branch_inputs[1].node_ptr(), out.attachments[0].node_ptr());
  EXPECT_EQ(values(out.branch_inputs[0]), values(out.attachments[2]));
}

TEST(Forward, ShapesMatchStaticInferenceAtEveryAttachmentPoint) {
  auto base = cnn_spec(4);
  ASSERT_GE(base.trunk.attachment_points().size(), 7u);
  // Static shapes straight from infer_shape, independent of the network.
  std::vector<Shape> expected{base.input_shape};
  for (const auto& block : base.trunk.blocks) {
    Shape s = expected.back();
    for (const auto& l : block.layers) s = infer_shape(l, s);
    expected.push_back(s);
  }
  auto spec = base;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    spec.branches.push_back({base.trunk.attachment_points()[i], default_branch(expected[i], 2), round_robin(4, 2), {}});
  }
  auto net = build_network(spec, 2);
  auto out = net.forward(random_tensor({2, 3, 16, 16}, 3), Mode::train);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    Shape got(out.attachments[i].shape().begin() + 1, out.attachments[i].shape().end());
    EXPECT_EQ(got, expected[i]) << base.trunk.attachment_points()[i];
    EXPECT_EQ(net.attachment_shapes()[i], expected[i]);
    EXPECT_EQ(out.branch_logits[i].shape(), (Shape{2, 2}));
  }
}

TEST(Forward, RejectsWrongBatchShape) {
  auto net = build_network(mlp_spec(4), 1);
  EXPECT_THROW(net.forward(random_tensor({2, 5}, 1), Mode::eval), ShapeError);
}

TEST(Forward, EvalBeforeTrainingWarns) {
  auto net = build_network(cnn_spec(4), 1);
  int warnings = 0;
  set_warning_sink([&](const std::string&) { ++warnings; });
  net.forward(random_tensor({1, 3, 16, 16}, 1), Mode::eval);
  set_warning_sink(nullptr);
  EXPECT_GT(warnings, 0);
}

TEST(Variant, GapConcatWidthIsFeaturesPlusGroups) {
  auto net = build_network(cnn_spec(5, {AuxBranchSpec{"b1", default_branch({4, 8, 8}, 2), round_robin(5, 2), {}},
                                        AuxBranchSpec{"b3", default_branch({6, 2, 2}, 3), round_robin(5, 3), {}}}),
                           4);
  auto v = variant_no_ssal(net, Fusion::gap_concat);
  EXPECT_EQ(v.output_widths(), (std::vector<std::size_t>{5}));
  const auto params = v.parameters();
  const auto it = std::find_if(params.begin(), params.end(), [](const auto& p) { return p.name == "fusion.0.weight"; });
  ASSERT_NE(it, params.end());
  // GAP width is the last trunk channel count.
  EXPECT_EQ(it->tensor.shape(), (Shape{5, 6 + 2 + 3}));
  set_warning_sink([](const std::string&) {});
  auto out = v.forward(random_tensor({2, 3, 16, 16}, 1), Mode::eval);
  set_warning_sink(nullptr);
  EXPECT_TRUE(out.branch_logits.empty());
  EXPECT_EQ(out.main_logits.shape(), (Shape{2, 5}));
}

TEST(Variant, ConcatFcHiddenWidthDefaultsTo2048) {
  auto net = build_network(mlp_spec(6, {mlp_branch("b1", 6, 2)}), 1);
  auto v = variant_no_ssal(net, Fusion::concat_fc);
  EXPECT_EQ(v.spec().fusion_hidden, 2048u);
  EXPECT_EQ(v.parameter_counts().fusion, (6u + 2) * 2048 + 2048 + 2048u * 6 + 6);
  auto small = variant_no_ssal(net, Fusion::concat_fc, 16);
  EXPECT_EQ(small.parameter_counts().fusion, (6u + 2) * 16 + 16 + 16u * 6 + 6);
  EXPECT_EQ(small.forward(random_tensor({3, 6}, 2), Mode::train).main_logits.shape(), (Shape{3, 6}));
}

TEST(Variant, RejectsBranchFreeAndIncompatibleHeads) {
  auto plain = build_network(mlp_spec(6), 1);
  EXPECT_THROW(variant_no_ssal(plain, Fusion::gap_concat), std::invalid_argument);
  auto spec = cnn_spec(4, {AuxBranchSpec{"b1", default_branch({4, 8, 8}, 2), round_robin(4, 2), {}}});
  spec.main_head = {LayerSpec::fc(4)};  // features are the rank-3 trunk output
  auto net = build_network(spec, 1);
  EXPECT_THROW(variant_no_ssal(net, Fusion::gap_concat), std::invalid_argument);
  EXPECT_NO_THROW(variant_no_ssal(net, Fusion::concat_fc, 8));
}

TEST(Variant, BranchesStillReceiveGradientThroughFusion) {
  auto net = variant_no_ssal(build_network(mlp_spec(4, {mlp_branch("b1", 4, 2)}), 1), Fusion::gap_concat);
  auto out = net.forward(random_tensor({3, 6}, 2), Mode::train);
  backward(ops::sum(out.main_logits));
  for (const auto& p : net.branch_parameters(0)) EXPECT_TRUE(p.tensor.has_grad()) << p.name;
}

TEST(State, RoundTripRestoresOutputsAndStatistics) {
  auto spec = cnn_spec(3, {AuxBranchSpec{"b2", default_branch({4, 8, 8}, 2), round_robin(3, 2), {}}});
  auto a = build_network(spec, 1);
  auto x = random_tensor({4, 3, 16, 16}, 5);
  a.forward(x, Mode::train);  // moves running statistics off their defaults
  // Values stored as f32; round the source once so both sides agree exactly.
  a.load_state(a.state());
  auto b = build_network(spec, 2);
  EXPECT_NE(a.digest(), b.digest());
  b.load_state(decode_checkpoint(encode_checkpoint(a.state())));
  EXPECT_EQ(a.digest(), b.digest());
  int warnings = 0;
  set_warning_sink([&](const std::string&) { ++warnings; });
  auto ya = a.forward(x, Mode::eval), yb = b.forward(x, Mode::eval);
  set_warning_sink(nullptr);
  EXPECT_EQ(warnings, 0);
  EXPECT_EQ(values(ya.main_logits), values(yb.main_logits));
  EXPECT_EQ(values(ya.branch_logits[0]), values(yb.branch_logits[0]));
}

TEST(State, RejectsMissingUnknownAndMisshapenRecords) {
  auto net = build_network(mlp_spec(4), 1);
  auto records = net.state();
  auto missing = records;
  missing.pop_back();
  EXPECT_THROW(net.load_state(missing), CheckpointError);
  auto extra = records;
  extra.push_back({"main.9.weight", {1}, {0.0f}});
  EXPECT_THROW(net.load_state(extra), CheckpointError);
  auto bad = records;
  bad[0].shape = {1, bad[0].values.size()};
  EXPECT_THROW(net.load_state(bad), CheckpointError);
}

TEST(Zoo, DefaultBranchFollowsAttachmentChannels) {
  auto conv = default_branch({12, 4, 4}, 5);
  EXPECT_EQ(conv.front().out_channels, 12u);
  EXPECT_EQ(conv.back().out_features, 5u);
  EXPECT_EQ(std::count_if(conv.begin(), conv.end(), [](const auto& l) { return l.kind == LayerKind::concat; }), 1);
  auto mlp = default_branch({20}, 3, 7);
  EXPECT_EQ(mlp.front().out_features, 7u);
  EXPECT_EQ(mlp.back().out_features, 3u);
  EXPECT_THROW(default_branch({2, 2}, 3), std::invalid_argument);
}
