#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "denoiserl/policy.hpp"

namespace denoiserl {

// Ascent-form optimizers: update() moves parameters uphill along the given
// gradient of the reward-style objective and bumps the parameter version.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void update(ParamVector& params, std::span<const double> ascent_grad) = 0;
  virtual const char* name() const = 0;
};

class GradientAscent final : public Optimizer {
 public:
  explicit GradientAscent(double learning_rate) : lr_(learning_rate) {}
  void update(ParamVector& params, std::span<const double> g) override {
    for (size_t i = 0; i < params.values.size(); ++i) params.values[i] += lr_ * g[i];
    ++params.version;
  }
  const char* name() const override { return "sgd"; }

 private:
  double lr_;
};

class AdamAscent final : public Optimizer {
 public:
  AdamAscent(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(ParamVector& params, std::span<const double> g) override {
    if (m_.empty()) {
      m_.assign(params.values.size(), 0.0);
      v_.assign(params.values.size(), 0.0);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.values.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
      params.values[i] += lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
    ++params.version;
  }
  const char* name() const override { return "adam"; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace denoiserl
