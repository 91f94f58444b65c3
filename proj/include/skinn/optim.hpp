#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace skinn {

/**
 * Adam with bias correction. State buffers are sized on the first step and
 * must keep the same length afterwards; lr is public so a schedule can adjust
 * it between steps without touching the moment estimates.
 */
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("Adam::step: params/grads size mismatch");
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    } else if (m_.size() != params.size()) {
      throw std::invalid_argument("Adam::step: parameter count changed");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

  double lr;

 private:
  double beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace skinn
