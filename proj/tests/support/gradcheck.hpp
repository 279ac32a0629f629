#pragma once

// Central finite-difference oracle for the autograd engine. Independent of
// the backward closures: it only calls forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ssal/ops.hpp"
#include "ssal/tensor.hpp"

namespace ssal::testing {

struct GradCheckResult {
  // Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, floor),
  // one entry per checked input.
  std::vector<double> relative_errors;
  double worst() const {
    return relative_errors.empty() ? 0.0 : *std::max_element(relative_errors.begin(), relative_errors.end());
  }
};

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  auto v = random_values(shape_numel(shape), rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  return random_tensor(std::move(shape), rng, requires_grad);
}

// `fn` maps the checked tensors to an output tensor. The scalar objective is
// sum(output * projection) for a fixed random projection, unless the output is
// already a scalar.
inline GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, std::uint64_t seed,
                                  double step = 1e-5) {
  std::mt19937_64 rng(seed);
  Tensor probe = [&] {
    NoGradGuard guard;
    return fn();
  }();
  std::vector<double> projection =
      probe.numel() == 1 ? std::vector<double>{1.0} : random_values(probe.numel(), rng);

  auto objective = [&](const Tensor& out) {
    double acc = 0.0;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * projection[i];
    return acc;
  };

  for (auto& t : inputs) t.zero_grad();
  Tensor out = fn();
  Tensor weights(out.shape(), projection, false);
  backward(out.numel() == 1 ? ops::scale(out, projection[0]) : ops::sum(ops::mul(out, weights)));

  GradCheckResult result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      NoGradGuard guard;
      data[i] = saved + step;
      const double up = objective(fn());
      data[i] = saved - step;
      const double down = objective(fn());
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    result.relative_errors.push_back(std::sqrt(diff) / denom);
  }
  return result;
}

}  // namespace ssal::testing
