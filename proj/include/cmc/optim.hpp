// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

/// SGD with heavy-ball momentum and coupled L2 weight decay:
///   g <- grad + wd * w;  v <- mu * v + g;  w <- w - lr * v
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("sgd momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be non-negative");
    for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_data();
      auto g = params_[k].grad();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = (g.empty() ? 0.0 : g[i]) + weight_decay_ * w[i];
        v[i] = momentum_ * v[i] + gi;
        w[i] -= lr * v[i];
      }
      detail::require_finite(w, "sgd step");
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

enum class ScheduleKind { cosine, step };

/// Per-epoch learning rate.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  std::vector<std::size_t> milestones;  // step: epochs at which lr is multiplied by factor
  double factor = 0.1;

  double rate(double base, std::size_t epoch, std::size_t total_epochs) const {
    if (kind == ScheduleKind::cosine) {
      if (total_epochs == 0) return base;
      return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
    }
    double lr = base;
    for (std::size_t m : milestones)
      if (epoch >= m) lr *= factor;
    return lr;
  }
};

}  // namespace cmc
