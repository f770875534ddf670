#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/nn.hpp"

namespace slotalign::nn {

/// Linear warmup to `peak_lr` over `warmup_steps`, constant afterwards.
struct WarmupSchedule {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = 1000;

  double lr(std::int64_t step) const {
    if (warmup_steps <= 0) return peak_lr;
    return peak_lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
  }
};

/// Adam (beta1=0.9, beta2=0.999, eps=1e-8) driven by a WarmupSchedule.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, WarmupSchedule schedule, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : schedule_(schedule), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params) {
      moments_.push_back({&p, std::vector<double>(p.value.size(), 0.0),
                          std::vector<double>(p.value.size(), 0.0)});
    }
  }

  std::int64_t step_count() const { return step_; }
  const WarmupSchedule& schedule() const { return schedule_; }
  double current_lr() const { return schedule_.lr(step_); }

  /// Applies one update from the accumulated Parameter::grad values and
  /// returns the learning rate used.
  double step() {
    for (const auto& m : moments_)
      for (T g : m.param->grad.flat())
        if (!std::isfinite(static_cast<double>(g)))
          throw Error(ErrorKind::kNumeric, "non-finite gradient in " + m.param->name);
    ++step_;
    const double lr = schedule_.lr(step_);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto& m : moments_) {
      auto value = m.param->value.flat();
      const auto grad = m.param->grad.flat();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        m.first[i] = beta1_ * m.first[i] + (1.0 - beta1_) * g;
        m.second[i] = beta2_ * m.second[i] + (1.0 - beta2_) * g * g;
        const double mhat = m.first[i] / bc1;
        const double vhat = m.second[i] / bc2;
        value[i] = static_cast<T>(static_cast<double>(value[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
    return lr;
  }

 private:
  struct Moments {
    Parameter<T>* param;
    std::vector<double> first;
    std::vector<double> second;
  };
  WarmupSchedule schedule_;
  double beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace slotalign::nn
