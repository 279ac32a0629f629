#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ssal/checkpoint.hpp"
#include "ssal/kernels.hpp"
#include "ssal/layers.hpp"
#include "ssal/log.hpp"
#include "ssal/ops.hpp"
#include "ssal/optim.hpp"

using namespace ssal;
using ssal::testing::grad_check;
using ssal::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(ApplyLayer, ReluClampsNegatives) {
  std::mt19937_64 rng(1);
  Layer relu(LayerSpec::relu_layer(), {3}, rng);
  Tensor x({1, 3}, {-1, 0, 2});
  EXPECT_EQ(values(apply_layer(relu, x, Mode::eval)), (std::vector<double>{0, 0, 2}));
}

TEST(ApplyLayer, GlobalAvgPoolMeansTheMap) {
  std::mt19937_64 rng(1);
  Layer gap(LayerSpec::gap(), {1, 2, 2}, rng);
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 5});
  Tensor y = apply_layer(gap, x, Mode::eval);
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 2.75);
}

TEST(ApplyLayer, FullyConnectedIdentity) {
  std::mt19937_64 rng(1);
  Layer fc(LayerSpec::fc(2), {2}, rng);
  auto params = fc.parameters();
  auto w = params[0].tensor.mutable_data();
  std::copy_n(std::vector<double>{1, 0, 0, 1}.begin(), 4, w.begin());
  Tensor y = apply_layer(fc, Tensor({1, 2}, {3, 4}), Mode::eval);
  EXPECT_EQ(values(y), (std::vector<double>{3, 4}));
}

TEST(ApplyLayer, ShapeMismatchNamesKindAndShapes) {
  std::mt19937_64 rng(1);
  Layer conv(LayerSpec::conv(4, 3, 1, 1), {2, 5, 5}, rng);
  try {
    apply_layer(conv, Tensor::zeros({1, 3, 5, 5}), Mode::train);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("convolution2d"), std::string::npos);
    EXPECT_NE(msg.find("[1x3x5x5]"), std::string::npos);
    EXPECT_NE(msg.find("[2x5x5]"), std::string::npos);
  }
  EXPECT_THROW(infer_shape(LayerSpec::gap(), {4}), ShapeError);
}

TEST(ApplyLayer, NonFiniteInputRejected) {
  std::mt19937_64 rng(1);
  Layer relu(LayerSpec::relu_layer(), {2}, rng);
  EXPECT_THROW(apply_layer(relu, Tensor({1, 2}, {1.0, std::nan("")}), Mode::eval), NumericError);
  EXPECT_THROW(apply_layer(relu, Tensor({1, 2}, {1.0, INFINITY}), Mode::eval), NumericError);
}

TEST(ApplyLayer, BatchNormWarnsWhenEvaluatedUntrained) {
  std::mt19937_64 rng(1);
  Layer bn(LayerSpec::batch_norm(), {2, 2, 2}, rng);
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  Tensor x = random_tensor({3, 2, 2, 2}, rng, false);
  Tensor y = apply_layer(bn, x, Mode::eval);
  apply_layer(bn, x, Mode::eval);
  set_warning_sink(previous);
  ASSERT_EQ(warnings.size(), 1u);
  // Initial running statistics (mean 0, var 1) leave the input nearly unchanged.
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-5);
}

TEST(ApplyLayer, BatchNormEvalUsesRunningStatistics) {
  std::mt19937_64 rng(2);
  LayerSpec spec = LayerSpec::batch_norm(1.0);  // momentum 1: running stats = last batch
  Layer bn(spec, {1, 2, 2}, rng);
  Tensor x({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor train_out = apply_layer(bn, x, Mode::train);
  Tensor eval_out = apply_layer(bn, x, Mode::eval);
  // Eval divides by the unbiased variance, train by the biased one.
  const double biased = 5.25, unbiased = 6.0;
  EXPECT_NEAR(train_out.at(0), (1 - 4.5) / std::sqrt(biased + 1e-5), 1e-12);
  EXPECT_NEAR(eval_out.at(0), (1 - 4.5) / std::sqrt(unbiased + 1e-5), 1e-12);
}

TEST(Softmax, Examples) {
  auto uniform = ops::softmax(Tensor({1, 3}, {0, 0, 0}), 1);
  for (double v : uniform.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  auto big = ops::softmax(Tensor({1, 2}, {1000, 1000}), 1);
  EXPECT_DOUBLE_EQ(big.at(0), 0.5);
  EXPECT_DOUBLE_EQ(big.at(1), 0.5);

  auto logs = ops::softmax(Tensor({1, 3}, {std::log(1.0), std::log(2.0), std::log(7.0)}), 1);
  EXPECT_NEAR(logs.at(0), 0.1, 1e-15);
  EXPECT_NEAR(logs.at(1), 0.2, 1e-15);
  EXPECT_NEAR(logs.at(2), 0.7, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x(Shape{4, 9}, ssal::testing::random_values(36, rng, -30, 30));
    auto y = ops::softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) {
        EXPECT_GE(y.at(r * 9 + c), 0.0);
        s += y.at(r * 9 + c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  // Non-last axis.
  Tensor z(Shape{2, 3, 2}, ssal::testing::random_values(12, rng));
  auto y = ops::softmax(z, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += y.at(o * 6 + j * 2 + i);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  EXPECT_THROW(ops::softmax(z, 3), ShapeError);
}

TEST(CrossEntropy, Examples) {
  std::vector<int> t0{0};
  EXPECT_NEAR(ops::cross_entropy(Tensor({1, 2}, {0, 0}), t0).item(), std::log(2.0), 1e-15);

  // Independent evaluation in extended precision: -ln(e^10 / (e^10 + e^-10)) = ln(1 + e^-20).
  const long double oracle = std::log1p(std::exp(-20.0L));
  const double loss = ops::cross_entropy(Tensor({1, 2}, {10, -10}), t0).item();
  EXPECT_LT(loss, 1e-6);
  EXPECT_NEAR(loss, static_cast<double>(oracle), 1e-15);

  std::vector<int> t00{1, 1};
  const double single = ops::cross_entropy(Tensor({1, 3}, {0.3, -1.2, 2.0}), std::vector<int>{1}).item();
  const double twice = ops::cross_entropy(Tensor({2, 3}, {0.3, -1.2, 2.0, 0.3, -1.2, 2.0}), t00).item();
  EXPECT_DOUBLE_EQ(single, twice);
}

TEST(CrossEntropy, TargetOutOfRangeRejected) {
  std::vector<int> bad{2};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 2}, {0, 0}), bad), std::out_of_range);
  std::vector<int> neg{-1};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 2}, {0, 0}), neg), std::out_of_range);
  std::vector<int> wrong_count{0, 1};
  EXPECT_THROW(ops::cross_entropy(Tensor({1, 2}, {0, 0}), wrong_count), ShapeError);
}

TEST(Backward, QuadraticGradient) {
  Tensor w({2}, {1, 2}, true);
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(11);
  Tensor logits = random_tensor({3, 4}, rng);
  std::vector<int> targets{2, 0, 3};
  backward(ops::cross_entropy(logits, targets));
  auto p = ops::softmax(logits.detach(), 1);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      double expected = (p.at(n * 4 + c) - (static_cast<int>(c) == targets[n] ? 1.0 : 0.0)) / 3.0;
      EXPECT_NEAR(logits.grad()[n * 4 + c], expected, 1e-15);
    }
  auto check = grad_check([&] { return ops::cross_entropy(logits, targets); }, {logits}, 3);
  EXPECT_LT(check.worst(), 1e-4);
}

TEST(Backward, DisconnectedParameterGetsZero) {
  Tensor a({2}, {1, 2}, true);
  Tensor b({2}, {3, 4}, true);
  Tensor unused = ops::sum(b);  // recorded but not part of the loss
  (void)unused;
  b.mutable_data();
  Tensor loss = ops::sum(ops::mul(a, a));
  backward(loss);
  EXPECT_TRUE(b.grad().empty() || (b.grad()[0] == 0.0 && b.grad()[1] == 0.0));
}

TEST(Backward, AccumulatesUntilZeroed) {
  Tensor w({2}, {1, 2}, true);
  backward(ops::sum(ops::mul(w, w)));
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_EQ(w.grad()[1], 8.0);
  w.zero_grad();
  EXPECT_EQ(w.grad()[1], 0.0);
  // Re-running backward over the same record does not double-count intermediates.
  Tensor loss = ops::sum(ops::mul(ops::scale(w, 2.0), w));
  backward(loss);
  backward(loss);
  EXPECT_EQ(w.grad()[0], 8.0);
}

TEST(Backward, RejectsNonScalarAndCycles) {
  Tensor w({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(w, 2.0)), GraphError);

  Tensor a = ops::scale(w, 2.0);
  Tensor b = ops::sum(a);
  // Forge a cycle a -> b -> a; cannot arise from the public ops.
  a.node().parents.push_back(b.node_ptr());
  EXPECT_THROW(backward(b), GraphError);
  a.node().parents.pop_back();
}

TEST(Sgd, Examples) {
  Tensor p({1}, {1.0}, true);
  backward(ops::scale(p, 0.5));
  Sgd plain({p}, 0.0);
  plain.step(0.1);
  EXPECT_DOUBLE_EQ(p.item(), 0.95);
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.5);  // gradient untouched by the step

  // Momentum 0.9, constant gradient g: v1 = g, v2 = 1.9 g.
  Tensor q({1}, {0.0}, true);
  backward(ops::scale(q, 1.0));
  Sgd heavy({q}, 0.9);
  heavy.step(1.0);
  EXPECT_DOUBLE_EQ(q.item(), -1.0);
  heavy.step(1.0);
  EXPECT_DOUBLE_EQ(q.item(), -1.0 - 1.9);

  Tensor r({2}, {3.0, -4.0}, true);
  backward(ops::scale(ops::sum(r), 0.0));
  Sgd still({r}, 0.9);
  still.step(0.5);
  EXPECT_EQ(values(r), (std::vector<double>{3.0, -4.0}));

  EXPECT_THROW(still.step(0.0), std::invalid_argument);
  EXPECT_THROW(still.step(-1.0), std::invalid_argument);
  EXPECT_THROW(Sgd({r}, 1.0), std::invalid_argument);
}

TEST(TriangularSchedule, Examples) {
  TriangularSchedule s{0.01, 0.1, 8, 20};
  EXPECT_DOUBLE_EQ(lr_at(s, 8), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.01);
  EXPECT_NEAR(lr_at(s, 4), 0.055, 1e-15);
  EXPECT_NEAR(lr_at(s, 20), 0.01, 1e-15);
  EXPECT_NEAR(lr_at(s, 14), 0.055, 1e-15);
  EXPECT_THROW(lr_at(s, 21), std::out_of_range);
  EXPECT_THROW(lr_at(s, -1), std::out_of_range);
  EXPECT_THROW(lr_at(TriangularSchedule{0.0, 0.1, 8, 20}, 1), std::invalid_argument);
  EXPECT_THROW(lr_at(TriangularSchedule{0.1, 0.1, 8, 4}, 1), std::invalid_argument);
}

TEST(TriangularSchedule, PiecewiseLinearAndContinuous) {
  TriangularSchedule s{0.02, 0.3, 5, 12};
  for (int e = 1; e < 12; ++e) {
    if (e == s.peak_epoch) continue;
    double mid = 0.5 * (lr_at(s, e - 1) + lr_at(s, e + 1));
    EXPECT_NEAR(lr_at(s, e), mid, 1e-15) << "epoch " << e;
  }
}

// Every layer kind against central finite differences, 5 seeds each.
class LayerGradients : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradients, MatchFiniteDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  std::mt19937_64 rng(seed);
  struct Case {
    LayerSpec spec;
    Shape sample;
    Mode mode;
  };
  std::vector<Case> cases{
      {LayerSpec::conv(3, 3, 1, 1), {2, 5, 4}, Mode::train},
      {LayerSpec::conv(2, 2, 2, 0), {3, 6, 6}, Mode::train},
      {LayerSpec::batch_norm(), {3, 3, 2}, Mode::train},
      {LayerSpec::batch_norm(), {2, 2, 2}, Mode::eval},
      {LayerSpec::relu_layer(), {7}, Mode::train},
      {LayerSpec::max_pool(2, 2), {2, 4, 4}, Mode::train},
      {LayerSpec::gap(), {3, 3, 3}, Mode::train},
      {LayerSpec::fc(4), {2, 3}, Mode::train},
      {LayerSpec::softmax_layer(1), {5}, Mode::train},
      {LayerSpec::inception(2, {1, 3}), {2, 4, 4}, Mode::train},
  };
  for (auto& c : cases) {
    Layer layer(c.spec, c.sample, rng);
    for (auto& p : layer.parameters()) {
      auto d = p.tensor.mutable_data();
      auto r = ssal::testing::random_values(d.size(), rng);
      std::copy(r.begin(), r.end(), d.begin());
    }
    Shape batch_shape{3};
    batch_shape.insert(batch_shape.end(), c.sample.begin(), c.sample.end());
    Tensor x = random_tensor(batch_shape, rng);
    std::vector<Tensor> inputs{x};
    for (auto& p : layer.parameters()) inputs.push_back(p.tensor);
    auto result = grad_check([&] { return apply_layer(layer, x, c.mode); }, inputs, seed);
    EXPECT_LT(result.worst(), 1e-4) << kind_name(c.spec.kind) << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, LayerGradients, ::testing::Values(1, 2, 3, 4, 5));

TEST(ShapeInference, MatchesExecutedShapes) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> extent(3, 7), chans(1, 4);
  for (int trial = 0; trial < 40; ++trial) {
    Shape image{chans(rng), extent(rng), extent(rng)};
    std::vector<LayerSpec> specs{
        LayerSpec::conv(chans(rng), 1 + 2 * (trial % 2), 1 + trial % 2, trial % 2),
        LayerSpec::batch_norm(),
        LayerSpec::relu_layer(),
        LayerSpec::max_pool(2, 1 + trial % 2),
        LayerSpec::inception(chans(rng), {1, 3}),
        LayerSpec::gap(),
        LayerSpec::fc(chans(rng)),
        LayerSpec::softmax_layer(1),
    };
    for (const auto& spec : specs) {
      Shape predicted = infer_shape(spec, image);
      Layer layer(spec, image, rng);
      Shape batch{2};
      batch.insert(batch.end(), image.begin(), image.end());
      Tensor y = apply_layer(layer, random_tensor(batch, rng, false), Mode::train);
      Shape executed(y.shape().begin() + 1, y.shape().end());
      EXPECT_EQ(predicted, executed) << kind_name(spec.kind);
      image = predicted;
    }
  }
}

TEST(Concat, JoinsAlongAxis) {
  Tensor a({2, 1}, {1, 2});
  Tensor b({2, 2}, {3, 4, 5, 6});
  auto c = ops::concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(values(c), (std::vector<double>{1, 3, 4, 2, 5, 6}));
  EXPECT_THROW(ops::concat({a, Tensor::zeros({3, 1})}, 1), ShapeError);
}

TEST(Kernels, ParallelMatchesReferenceBitwise) {
  std::mt19937_64 rng(5);
  for (int workers : {1, 2, 3}) {
    kernels::set_worker_count(workers);
    const std::size_t m = 37, n = 29, k = 41;
    auto a = ssal::testing::random_values(m * k, rng);
    auto b = ssal::testing::random_values(n * k, rng);
    auto bt = ssal::testing::random_values(k * n, rng);
    auto at = ssal::testing::random_values(k * m, rng);
    std::vector<double> c1(m * n), c2(m * n);
    kernels::reference::gemm_nt(a, b, c1, m, n, k);
    kernels::parallel::gemm_nt(a, b, c2, m, n, k);
    EXPECT_EQ(c1, c2);
    kernels::reference::gemm_nn(a, bt, c1, m, n, k);
    kernels::parallel::gemm_nn(a, bt, c2, m, n, k);
    EXPECT_EQ(c1, c2);
    kernels::reference::gemm_tn(at, bt, c1, m, n, k);
    kernels::parallel::gemm_tn(at, bt, c2, m, n, k);
    EXPECT_EQ(c1, c2);

    kernels::ConvGeometry g{3, 4, 9, 8, 5, 3, 3, 2, 1};
    auto x = ssal::testing::random_values(g.batch * g.in_channels * g.in_h * g.in_w, rng);
    auto w = ssal::testing::random_values(g.out_channels * g.in_channels * 9, rng);
    auto bias = ssal::testing::random_values(g.out_channels, rng);
    const std::size_t out_n = g.batch * g.out_channels * g.out_h() * g.out_w();
    std::vector<double> y1(out_n), y2(out_n);
    kernels::reference::conv2d_forward(g, x, w, bias, y1);
    kernels::parallel::conv2d_forward(g, x, w, bias, y2);
    EXPECT_EQ(y1, y2);
    auto go = ssal::testing::random_values(out_n, rng);
    std::vector<double> gi1(x.size()), gi2(x.size()), gw1(w.size()), gw2(w.size()), gb1(5), gb2(5);
    kernels::reference::conv2d_backward_input(g, go, w, gi1);
    kernels::parallel::conv2d_backward_input(g, go, w, gi2);
    EXPECT_EQ(gi1, gi2);
    kernels::reference::conv2d_backward_weight(g, go, x, gw1, gb1);
    kernels::parallel::conv2d_backward_weight(g, go, x, gw2, gb2);
    EXPECT_EQ(gw1, gw2);
    EXPECT_EQ(gb1, gb2);
  }
  kernels::set_worker_count(1);
}

TEST(Checkpoint, RoundTripsAndRejectsTruncation) {
  std::mt19937_64 rng(3);
  std::vector<CheckpointRecord> records;
  for (int i = 0; i < 6; ++i) {
    CheckpointRecord r{"layer" + std::to_string(i) + ".weight", {static_cast<std::size_t>(1 + i), 3}, {}};
    for (std::size_t j = 0; j < shape_numel(r.shape); ++j) r.values.push_back(static_cast<float>(rng() % 1000) / 7.0f);
    records.push_back(r);
  }
  auto bytes = encode_checkpoint(records);
  auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].name, records[i].name);
    EXPECT_EQ(back[i].shape, records[i].shape);
    EXPECT_EQ(back[i].values, records[i].values);
  }
  // Little-endian version header right after the magic.
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}
