#include "ssal/optim.hpp"

#include <stdexcept>
#include <string>

namespace ssal {

void TriangularSchedule::validate() const {
  if (!(base_rate > 0.0)) throw std::invalid_argument("schedule: base_rate must be > 0");
  if (!(peak_rate >= base_rate)) throw std::invalid_argument("schedule: peak_rate must be >= base_rate");
  if (peak_epoch < 1) throw std::invalid_argument("schedule: peak_epoch must be positive");
  if (total_epochs < peak_epoch) throw std::invalid_argument("schedule: total_epochs must be >= peak_epoch");
}

double TriangularSchedule::rate_at(int epoch) const {
  validate();
  if (epoch < 0 || epoch > total_epochs) {
    throw std::out_of_range("schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
  }
  if (epoch <= peak_epoch) {
    return base_rate + (peak_rate - base_rate) * static_cast<double>(epoch) / peak_epoch;
  }
  const int descent = total_epochs - peak_epoch;
  return peak_rate + (base_rate - peak_rate) * static_cast<double>(epoch - peak_epoch) / descent;
}

double lr_at(const TriangularSchedule& schedule, int epoch) { return schedule.rate_at(epoch); }

Sgd::Sgd(std::vector<Tensor> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0, 1)");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("sgd: rate must be > 0, got " + std::to_string(rate));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto v = p.mutable_data();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < vel.size(); ++j) {
      vel[j] = momentum_ * vel[j] + g[j];
      v[j] -= rate * vel[j];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void sgd_step(std::vector<Tensor>& params, double rate) {
  Sgd opt(params, 0.0);
  opt.step(rate);
}

}  // namespace ssal
