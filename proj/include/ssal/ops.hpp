#pragma once

#include <span>
#include <vector>

#include "ssal/tensor.hpp"

// Differentiable operations. Every op validates shapes, rejects non-finite
// input, and records a backward closure when any operand requires a gradient.
namespace ssal::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor relu(const Tensor& x);

// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// Mean negative log-likelihood of `targets` under softmax(logits); logits
// are [batch, classes]. Returns a one-element tensor.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// x is [batch, ...] and is flattened to [batch, in]; weight is [out, in];
// bias is [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x [N,C,H,W], weight [O,C,kh,kw], bias [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

struct BatchNormState {
  std::vector<double>& running_mean;
  std::vector<double>& running_var;
  double momentum;
  double epsilon;
};

// Normalizes over (N,H,W) per channel. Train mode uses batch statistics and
// updates the running statistics; eval mode uses the running statistics.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState state,
                    Mode mode);

// Concatenates along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

}  // namespace ssal::ops
