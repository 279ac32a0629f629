#pragma once

#include <vector>

#include "ssal/tensor.hpp"

namespace ssal {

// Linear ramp base -> peak over [0, peak_epoch], then peak -> base over
// [peak_epoch, total_epochs].
struct TriangularSchedule {
  double base_rate = 0.01;
  double peak_rate = 0.1;
  int peak_epoch = 8;
  int total_epochs = 20;

  void validate() const;
  double rate_at(int epoch) const;
};

double lr_at(const TriangularSchedule& schedule, int epoch);

// Mini-batch SGD with heavy-ball momentum: v <- momentum * v + g, p <- p - rate * v.
// Velocities are kept per parameter in registration order.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum);

  void step(double rate);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }
  double momentum() const { return momentum_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

// One momentum-free update, p <- p - rate * grad.
void sgd_step(std::vector<Tensor>& params, double rate);

}  // namespace ssal
